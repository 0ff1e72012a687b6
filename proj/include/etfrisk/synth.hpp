#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "etfrisk/csv.hpp"
#include "etfrisk/errors.hpp"
#include "etfrisk/ingest.hpp"
#include "etfrisk/taxonomy_io.hpp"
#include "etfrisk/types.hpp"

namespace etfrisk {

/// One top-level block of the planted structure: an asset class holding
/// `categories` level-1 categories.
struct SynthGroup {
    AssetClass asset_class = AssetClass::Equity;
    std::size_t categories = 2;
};

/// Returns follow a nested block model in correlation space:
///   corr = rho_within (same category), rho_group (same group),
///   rho_across (different groups), 1 on the diagonal,
/// with 0 <= rho_across <= rho_group <= rho_within <= 1.
/// rho_within = 1 makes the panel noise-free.
struct SynthSpec {
    std::uint64_t seed = 1;
    std::size_t n_etfs = 40;
    std::vector<SynthGroup> groups = {{AssetClass::Equity, 2}};
    std::size_t days = 500;
    double rho_within = 0.8;
    double rho_group = 0.1;
    double rho_across = 0.1;
    double vol_low = 0.005;   // daily volatility range per ETF
    double vol_high = 0.015;
    double missing_rate = 0.0;
    std::size_t securities_per_category = 8;
    double purity = 0.8;  // holdings weight in the ETF's own category
    std::string start_date = "2020-01-01";
};

struct SynthUniverse {
    std::vector<Etf> etfs;
    SecurityMaster securities;
    HoldingsTable holdings;
    ReturnsPanel returns;
    Taxonomy planted;
};

namespace detail {

inline std::chrono::sys_days parse_date(const std::string& iso) {
    int y = 0;
    unsigned m = 0, d = 0;
    if (std::sscanf(iso.c_str(), "%d-%u-%u", &y, &m, &d) != 3) throw ConfigError("bad start date '" + iso + "'");
    std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) throw ConfigError("bad start date '" + iso + "'");
    return std::chrono::sys_days{ymd};
}

inline std::string format_date(std::chrono::sys_days day) {
    const std::chrono::year_month_day ymd{day};
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", int(ymd.year()), unsigned(ymd.month()), unsigned(ymd.day()));
    return buf;
}

/// Weekdays from `start` on.
inline std::vector<std::string> business_days(const std::string& start, std::size_t count) {
    std::vector<std::string> out;
    auto day = parse_date(start);
    while (out.size() < count) {
        const unsigned wd = std::chrono::weekday{day}.c_encoding();
        if (wd != 0 && wd != 6) out.push_back(format_date(day));
        day += std::chrono::days{1};
    }
    return out;
}

inline std::string category_label(AssetClass ac, std::size_t k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2s%02zu", to_string(ac).c_str(), k + 1);
    std::string s = buf;
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

/// Level-1 category id as the organic builder names it.
inline std::string planted_category(AssetClass ac, const std::string& label) {
    return to_string(ac) + "." + label;
}

inline bool classified_by_region(AssetClass ac) {
    return ac != AssetClass::Equity && ac != AssetClass::Bond && ac != AssetClass::Commodity;
}

}  // namespace detail

inline SynthUniverse generate_synthetic_universe(const SynthSpec& spec) {
    std::size_t n_categories = 0;
    for (const auto& g : spec.groups) {
        if (g.categories == 0) throw ConfigError("every group needs at least one category");
        n_categories += g.categories;
    }
    if (n_categories == 0) throw ConfigError("no categories planted");
    if (n_categories > spec.n_etfs)
        throw ConfigError("infeasible spec: " + std::to_string(n_categories) + " categories for " +
                          std::to_string(spec.n_etfs) + " ETFs");
    for (std::size_t a = 0; a < spec.groups.size(); ++a)
        for (std::size_t b = 0; b < a; ++b)
            if (spec.groups[a].asset_class == spec.groups[b].asset_class)
                throw ConfigError("asset class used by two groups");
    if (!(0.0 <= spec.rho_across && spec.rho_across <= spec.rho_group && spec.rho_group <= spec.rho_within &&
          spec.rho_within <= 1.0))
        throw ConfigError("need 0 <= rho_across <= rho_group <= rho_within <= 1");
    if (spec.days < 3) throw ConfigError("need at least 3 days");
    if (!(spec.missing_rate >= 0.0 && spec.missing_rate < 1.0)) throw ConfigError("missing rate must lie in [0, 1)");
    if (!(spec.purity > 0.5 && spec.purity <= 1.0)) throw ConfigError("purity must lie in (0.5, 1]");
    if (spec.securities_per_category == 0) throw ConfigError("need at least one security per category");
    if (!(0.0 < spec.vol_low && spec.vol_low <= spec.vol_high)) throw ConfigError("bad volatility range");

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    SynthUniverse u;

    struct Category {
        std::size_t group;
        AssetClass ac;
        std::string label;
        std::string id;
        std::vector<std::string> securities;
    };
    std::vector<Category> cats;
    for (std::size_t g = 0; g < spec.groups.size(); ++g)
        for (std::size_t k = 0; k < spec.groups[g].categories; ++k) {
            const AssetClass ac = spec.groups[g].asset_class;
            const std::string label = detail::category_label(ac, k);
            cats.push_back({g, ac, label, detail::planted_category(ac, label), {}});
        }

    std::size_t sec_counter = 0;
    for (auto& c : cats)
        for (std::size_t s = 0; s < spec.securities_per_category; ++s) {
            char id[32];
            std::snprintf(id, sizeof(id), "SEC%05zu", ++sec_counter);
            Security sec;
            sec.id = id;
            sec.asset_class = c.ac;
            sec.market_cap = std::exp(22.0 + 1.5 * normal(rng));
            if (detail::classified_by_region(c.ac)) {
                sec.region = c.label;
            } else {
                sec.sector_weights[c.label] = 1.0;
                sec.region = "US";
            }
            if (c.ac == AssetClass::Bond) {
                sec.credit_rating = "A";
                sec.duration_years = 5.0;
            }
            c.securities.push_back(sec.id);
            u.securities.emplace(sec.id, std::move(sec));
        }

    TaxonomyLevel level1{"category", LevelKind::Binary, {}, {}, {}, {}};
    TaxonomyLevel top{"asset_class", LevelKind::Binary, {}, {}, {}, {}};
    std::vector<std::size_t> etf_category(spec.n_etfs);
    std::vector<Holding> holdings;
    for (std::size_t i = 0; i < spec.n_etfs; ++i) {
        const std::size_t c = i % cats.size();
        etf_category[i] = c;
        const auto& cat = cats[c];
        char id[32];
        std::snprintf(id, sizeof(id), "ETF%04zu", i + 1);
        Etf e;
        e.id = id;
        e.name = "Synthetic " + cat.id + " " + std::to_string(i + 1);
        e.asset_class = cat.ac;
        e.addv = std::round(std::exp(16.0 + normal(rng)));
        e.thirdparty_category = cat.label;
        if (detail::classified_by_region(cat.ac)) e.attributes["region"] = cat.label;

        // Own-category securities carry `purity`; the rest of the asset class the remainder.
        std::vector<std::string> others;
        for (const auto& o : cats)
            if (o.ac == cat.ac && o.id != cat.id) others.insert(others.end(), o.securities.begin(), o.securities.end());
        const double own_share = others.empty() ? 1.0 : spec.purity;
        std::vector<double> raw(cat.securities.size());
        double raw_sum = 0.0;
        for (auto& r : raw) raw_sum += (r = 0.5 + uniform(rng));
        for (std::size_t s = 0; s < cat.securities.size(); ++s)
            holdings.push_back({e.id, cat.securities[s], own_share * raw[s] / raw_sum});
        if (!others.empty()) {
            const std::size_t pick = std::min<std::size_t>(others.size(), 4);
            std::vector<std::size_t> idx(others.size());
            for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
            std::shuffle(idx.begin(), idx.end(), rng);
            std::vector<double> rest(pick);
            double rest_sum = 0.0;
            for (auto& r : rest) rest_sum += (r = 0.5 + uniform(rng));
            for (std::size_t k = 0; k < pick; ++k)
                holdings.push_back({e.id, others[idx[k]], (1.0 - own_share) * rest[k] / rest_sum});
        }
        level1.assignment[e.id] = cat.id;
        level1.parent_map[cat.id] = to_string(cat.ac);
        top.assignment[e.id] = to_string(cat.ac);
        u.etfs.push_back(std::move(e));
    }
    u.holdings = HoldingsTable(std::move(holdings));
    level1.rebuild_categories();
    top.rebuild_categories();
    u.planted.levels = {level1, top};
    u.planted.metadata["builder"] = "synthetic";
    u.planted.metadata["param.seed"] = std::to_string(spec.seed);

    // Nested block returns: market, group and category factors plus noise,
    // with variance shares fixed by the three correlation levels.
    const double w_market = std::sqrt(spec.rho_across);
    const double w_group = std::sqrt(spec.rho_group - spec.rho_across);
    const double w_category = std::sqrt(spec.rho_within - spec.rho_group);
    const double w_noise = std::sqrt(1.0 - spec.rho_within);
    const auto T = static_cast<Index>(spec.days);
    Vector market(T);
    Matrix group_f(static_cast<Index>(spec.groups.size()), T), cat_f(static_cast<Index>(cats.size()), T);
    for (Index s = 0; s < T; ++s) market(s) = normal(rng);
    for (Index g = 0; g < group_f.rows(); ++g)
        for (Index s = 0; s < T; ++s) group_f(g, s) = normal(rng);
    for (Index c = 0; c < cat_f.rows(); ++c)
        for (Index s = 0; s < T; ++s) cat_f(c, s) = normal(rng);

    ReturnsPanel& p = u.returns;
    p.dates = detail::business_days(spec.start_date, spec.days);
    for (const auto& e : u.etfs) p.etf_ids.push_back(e.id);
    p.values.resize(static_cast<Index>(spec.n_etfs), T);
    p.missing.setConstant(static_cast<Index>(spec.n_etfs), T, false);
    for (std::size_t i = 0; i < spec.n_etfs; ++i) {
        const auto& cat = cats[etf_category[i]];
        const double vol = spec.vol_low + (spec.vol_high - spec.vol_low) * uniform(rng);
        const double drift = 0.0002 * normal(rng);
        const Index r = static_cast<Index>(i);
        for (Index s = 0; s < T; ++s) {
            const double noise = normal(rng);
            const double z = w_market * market(s) + w_group * group_f(static_cast<Index>(cat.group), s) +
                              w_category * cat_f(static_cast<Index>(etf_category[i]), s) + w_noise * noise;
            p.values(r, s) = drift + vol * z;
        }
    }
    if (spec.missing_rate > 0.0)
        for (Index i = 0; i < p.rows(); ++i)
            for (Index s = 0; s < T; ++s)
                if (uniform(rng) < spec.missing_rate) {
                    p.values(i, s) = kNaN;
                    p.missing(i, s) = true;
                }
    p.validate();
    validate_taxonomy(u.planted);
    return u;
}

/// Writes etfs.csv, securities.csv, holdings.csv, returns.csv (missing
/// cells omitted) and planted_taxonomy.txt.
inline void write_synthetic_universe(const SynthUniverse& u, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream os(dir / name, std::ios::binary);
        if (!os) throw Error("cannot write " + (dir / name).string());
        return os;
    };
    auto opt = [](const std::optional<std::string>& s) { return s ? csv::quote(*s) : std::string(kMissingToken); };
    auto num = [](const std::optional<double>& v) { return v ? csv::format_double(*v) : std::string(kMissingToken); };
    {
        auto os = open("etfs.csv");
        for (std::size_t k = 0; k < kEtfColumns.size(); ++k) os << (k ? "," : "") << kEtfColumns[k];
        os << '\n';
        for (const auto& e : u.etfs) {
            os << csv::quote(e.id) << ',' << csv::quote(e.name) << ','
               << (e.asset_class ? to_string(*e.asset_class) : std::string(kMissingToken)) << ',' << num(e.addv) << ','
               << opt(e.thirdparty_category);
            for (const auto& key : kEtfAttributeKeys) os << ',' << opt(e.attribute(key));
            os << '\n';
        }
    }
    {
        auto os = open("securities.csv");
        for (std::size_t k = 0; k < kSecurityColumns.size(); ++k) os << (k ? "," : "") << kSecurityColumns[k];
        os << '\n';
        for (const auto& [id, s] : u.securities) {
            std::string sector;
            for (const auto& [path, w] : s.sector_weights)
                sector += (sector.empty() ? "" : ";") + path + (s.sector_weights.size() > 1 ? ":" + csv::format_double(w) : "");
            os << csv::quote(id) << ',' << to_string(s.asset_class) << ','
               << (sector.empty() ? std::string(kMissingToken) : csv::quote(sector)) << ',' << num(s.market_cap) << ','
               << opt(s.credit_rating) << ',' << num(s.duration_years) << ','
               << (s.style ? to_string(*s.style) : std::string(kMissingToken)) << ',' << opt(s.region) << '\n';
        }
    }
    {
        auto os = open("holdings.csv");
        os << "etf_id,security_id,weight\n";
        for (const auto& h : u.holdings.entries())
            os << csv::quote(h.etf_id) << ',' << csv::quote(h.security_id) << ',' << csv::format_double(h.weight) << '\n';
    }
    {
        auto os = open("returns.csv");
        write_returns(u.returns, os);
    }
    save_taxonomy(u.planted, (dir / "planted_taxonomy.txt").string());
}

}  // namespace etfrisk
