#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "etfrisk/csv.hpp"
#include "etfrisk/errors.hpp"
#include "etfrisk/types.hpp"

namespace etfrisk {

struct IngestConfig {
    /// Allowed |sum(weights) - 1| per ETF before a row set counts as broken.
    double weight_tolerance = 1e-6;
    /// Rescale broken rows to sum 1 instead of rejecting them.
    bool renormalize = false;
};

struct UniversePaths {
    std::string etfs;
    std::string securities;
    std::string holdings;
    std::string returns;

    static UniversePaths in_directory(const std::filesystem::path& dir) {
        return {(dir / "etfs.csv").string(), (dir / "securities.csv").string(),
                (dir / "holdings.csv").string(), (dir / "returns.csv").string()};
    }
};

inline const std::vector<std::string> kEtfColumns = {
    "id", "name", "asset_class", "addv", "thirdparty_category", "cap_tranche", "style", "region",
    "duration_bucket"};
inline const std::vector<std::string> kSecurityColumns = {
    "id", "asset_class", "sector", "market_cap", "credit_rating", "duration_years", "style", "region"};
inline const std::vector<std::string> kHoldingsColumns = {"etf_id", "security_id", "weight"};
inline const std::vector<std::string> kReturnsColumns = {"etf_id", "date", "return"};

struct ValidationReport {
    std::size_t n_etfs = 0;
    std::size_t n_securities = 0;
    std::size_t n_holdings = 0;
    std::size_t n_return_rows = 0;
    std::size_t n_missing_returns = 0;
    std::vector<std::string> renormalized;       // ETFs whose holdings were rescaled
    std::vector<std::string> without_holdings;   // ETFs in the master with no holdings
    std::vector<std::string> without_returns;    // ETFs in the master with no returns
    std::vector<std::string> unclassified_securities;  // no sector on file

    std::string to_string() const {
        std::ostringstream os;
        os << "etfs " << n_etfs << '\n'
           << "securities " << n_securities << '\n'
           << "holdings " << n_holdings << '\n'
           << "return_rows " << n_return_rows << '\n'
           << "missing_returns " << n_missing_returns << '\n';
        auto list = [&os](const char* key, const std::vector<std::string>& ids) {
            os << key << ' ' << ids.size();
            for (const auto& id : ids) os << ' ' << id;
            os << '\n';
        };
        list("renormalized", renormalized);
        list("without_holdings", without_holdings);
        list("without_returns", without_returns);
        list("unclassified_securities", unclassified_securities);
        return os.str();
    }
};

struct Universe {
    std::vector<Etf> etfs;  // sorted by id
    SecurityMaster securities;
    HoldingsTable holdings;
    ReturnsPanel returns;
    ValidationReport report;

    const Etf* find_etf(const std::string& id) const {
        auto it = std::lower_bound(etfs.begin(), etfs.end(), id,
                                   [](const Etf& e, const std::string& k) { return e.id < k; });
        return (it != etfs.end() && it->id == id) ? &*it : nullptr;
    }
};

namespace detail {

inline bool is_iso_date(const std::string& s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
    for (std::size_t k : {0, 1, 2, 3, 5, 6, 8, 9})
        if (s[k] < '0' || s[k] > '9') return false;
    int month = std::stoi(s.substr(5, 2));
    int day = std::stoi(s.substr(8, 2));
    return month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

/// "Tech" or "Tech:0.6;Health:0.4".
inline std::map<std::string, double> parse_sector_field(const csv::Table& t, const csv::Row& r,
                                                        std::size_t col) {
    const std::string& raw = r.fields[col];
    std::map<std::string, double> out;
    if (csv::is_missing(raw) || raw.empty()) return out;
    if (raw.find(':') == std::string::npos) {
        out[raw] = 1.0;
        return out;
    }
    std::stringstream ss(raw);
    std::string part;
    double sum = 0.0;
    while (std::getline(ss, part, ';')) {
        auto colon = part.rfind(':');
        if (colon == std::string::npos || colon == 0)
            throw InputError(t.file, r.line, t.header[col], "malformed weighted sector '" + part + "'");
        auto w = csv::parse_number(std::string_view(part).substr(colon + 1));
        if (!w || *w < 0.0 || *w > 1.0)
            throw InputError(t.file, r.line, t.header[col], "bad sector weight in '" + part + "'");
        if (!out.emplace(part.substr(0, colon), *w).second)
            throw InputError(t.file, r.line, t.header[col], "sector listed twice in '" + raw + "'");
        sum += *w;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw InputError(t.file, r.line, t.header[col], "sector weights sum to " + std::to_string(sum));
    return out;
}

}  // namespace detail

inline std::vector<Etf> load_etfs(const std::string& path) {
    auto t = csv::read_file(path);
    csv::require_header(t, kEtfColumns);
    std::vector<Etf> out;
    std::set<std::string> seen;
    for (const auto& r : t.rows) {
        Etf e;
        e.id = r.fields[0];
        if (e.id.empty() || csv::is_missing(e.id)) throw InputError(t.file, r.line, "id", "empty id");
        if (!seen.insert(e.id).second) throw InputError(t.file, r.line, "id", "duplicate ETF id '" + e.id + "'");
        e.name = r.fields[1];
        if (auto ac = csv::optional_string(r, 2)) {
            e.asset_class = parse_asset_class(*ac);
            if (!e.asset_class) throw InputError(t.file, r.line, "asset_class", "unknown asset class '" + *ac + "'");
        }
        e.addv = csv::optional_number(t, r, 3);
        if (e.addv && *e.addv < 0.0) throw InputError(t.file, r.line, "addv", "negative ADDV");
        e.thirdparty_category = csv::optional_string(r, 4);
        for (std::size_t k = 0; k < kEtfAttributeKeys.size(); ++k)
            if (auto v = csv::optional_string(r, 5 + k)) e.attributes[kEtfAttributeKeys[k]] = *v;
        out.push_back(std::move(e));
    }
    std::sort(out.begin(), out.end(), [](const Etf& a, const Etf& b) { return a.id < b.id; });
    return out;
}

inline SecurityMaster load_securities(const std::string& path) {
    auto t = csv::read_file(path);
    csv::require_header(t, kSecurityColumns);
    SecurityMaster out;
    for (const auto& r : t.rows) {
        Security s;
        s.id = r.fields[0];
        if (s.id.empty() || csv::is_missing(s.id)) throw InputError(t.file, r.line, "id", "empty id");
        auto ac = parse_asset_class(r.fields[1]);
        if (!ac) throw InputError(t.file, r.line, "asset_class", "unknown asset class '" + r.fields[1] + "'");
        s.asset_class = *ac;
        s.sector_weights = detail::parse_sector_field(t, r, 2);
        s.market_cap = csv::optional_number(t, r, 3);
        if (s.market_cap && !(*s.market_cap > 0.0))
            throw InputError(t.file, r.line, "market_cap", "market cap must be positive for '" + s.id + "'");
        s.credit_rating = csv::optional_string(r, 4);
        if (s.credit_rating && !rating_notch(*s.credit_rating))
            throw InputError(t.file, r.line, "credit_rating", "unknown rating '" + *s.credit_rating + "'");
        s.duration_years = csv::optional_number(t, r, 5);
        if (s.duration_years && *s.duration_years < 0.0)
            throw InputError(t.file, r.line, "duration_years", "negative duration for '" + s.id + "'");
        if (auto st = csv::optional_string(r, 6)) {
            s.style = parse_style(*st);
            if (!s.style) throw InputError(t.file, r.line, "style", "unknown style '" + *st + "'");
        }
        s.region = csv::optional_string(r, 7);
        std::string id = s.id;
        if (!out.emplace(id, std::move(s)).second)
            throw InputError(t.file, r.line, "id", "duplicate security id '" + id + "'");
    }
    return out;
}

inline HoldingsTable load_holdings(const std::string& path, const std::vector<Etf>& etfs,
                                   const SecurityMaster& securities, const IngestConfig& config,
                                   ValidationReport& report) {
    auto t = csv::read_file(path);
    csv::require_header(t, kHoldingsColumns);
    std::set<std::string> etf_ids;
    for (const auto& e : etfs) etf_ids.insert(e.id);
    std::map<std::pair<std::string, std::string>, std::size_t> seen;
    std::map<std::string, std::size_t> first_line;
    std::vector<Holding> entries;
    for (const auto& r : t.rows) {
        const auto& etf = r.fields[0];
        const auto& sec = r.fields[1];
        if (!etf_ids.count(etf)) throw InputError(t.file, r.line, "etf_id", "unknown ETF '" + etf + "'");
        if (!securities.count(sec))
            throw InputError(t.file, r.line, "security_id", "unknown security '" + sec + "'");
        if (!seen.emplace(std::make_pair(etf, sec), r.line).second)
            throw InputError(t.file, r.line, "security_id",
                             "duplicate holding (" + etf + ", " + sec + ")");
        first_line.try_emplace(etf, r.line);
        entries.push_back({etf, sec, csv::require_number(t, r, 2)});
    }
    HoldingsTable table(std::move(entries));
    std::vector<Holding> fixed;
    bool changed = false;
    for (const auto& id : table.etf_ids()) {
        double sum = table.row_sum(id);
        bool broken = std::abs(sum - 1.0) > config.weight_tolerance;
        if (broken && !config.renormalize)
            throw InputError(t.file, first_line.at(id), "weight",
                             "weights of ETF '" + id + "' sum to " + csv::format_double(sum));
        if (broken && !(sum > 0.0))
            throw InputError(t.file, first_line.at(id), "weight",
                             "cannot renormalize ETF '" + id + "' with weight sum " + csv::format_double(sum));
        for (const auto& h : table.rows(id))
            fixed.push_back({h.etf_id, h.security_id, broken ? h.weight / sum : h.weight});
        if (broken) {
            report.renormalized.push_back(id);
            changed = true;
        }
    }
    report.n_holdings = table.entries().size();
    return changed ? HoldingsTable(std::move(fixed)) : table;
}

inline ReturnsPanel load_returns(const std::string& path, const std::vector<Etf>& etfs,
                                 ValidationReport& report) {
    auto t = csv::read_file(path);
    csv::require_header(t, kReturnsColumns);
    std::set<std::string> known;
    for (const auto& e : etfs) known.insert(e.id);
    std::set<std::string> ids;
    std::set<std::string> dates;
    for (const auto& r : t.rows) {
        if (!known.count(r.fields[0]))
            throw InputError(t.file, r.line, "etf_id", "ETF '" + r.fields[0] + "' not in ETF master");
        if (!detail::is_iso_date(r.fields[1]))
            throw InputError(t.file, r.line, "date", "not an ISO-8601 date: '" + r.fields[1] + "'");
        ids.insert(r.fields[0]);
        dates.insert(r.fields[1]);
    }
    ReturnsPanel p;
    p.etf_ids.assign(ids.begin(), ids.end());
    p.dates.assign(dates.begin(), dates.end());
    p.values = Matrix::Constant(p.rows(), p.cols(), kNaN);
    p.missing.setConstant(p.rows(), p.cols(), true);
    std::map<std::string, Index> date_col;
    for (std::size_t k = 0; k < p.dates.size(); ++k) date_col[p.dates[k]] = static_cast<Index>(k);
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> filled;
    filled.setConstant(p.rows(), p.cols(), false);
    for (const auto& r : t.rows) {
        Index i = *p.row_of(r.fields[0]);
        Index s = date_col.at(r.fields[1]);
        if (filled(i, s))
            throw InputError(t.file, r.line, "date",
                             "duplicate return for (" + r.fields[0] + ", " + r.fields[1] + ")");
        filled(i, s) = true;
        auto v = csv::optional_number(t, r, 2);
        if (v) {
            p.values(i, s) = *v;
            p.missing(i, s) = false;
        }
    }
    report.n_return_rows = t.rows.size();
    report.n_missing_returns = static_cast<std::size_t>(p.missing.count());
    p.validate();
    return p;
}

/// Reads the four universe files and cross-validates them.
inline Universe load_universe(const UniversePaths& paths, const IngestConfig& config = {}) {
    Universe u;
    u.etfs = load_etfs(paths.etfs);
    u.securities = load_securities(paths.securities);
    u.holdings = load_holdings(paths.holdings, u.etfs, u.securities, config, u.report);
    u.returns = load_returns(paths.returns, u.etfs, u.report);
    u.report.n_etfs = u.etfs.size();
    u.report.n_securities = u.securities.size();
    for (const auto& e : u.etfs) {
        if (u.holdings.rows(e.id).empty()) u.report.without_holdings.push_back(e.id);
        if (!u.returns.row_of(e.id)) u.report.without_returns.push_back(e.id);
    }
    for (const auto& [id, s] : u.securities)
        if (s.sector_weights.empty()) u.report.unclassified_securities.push_back(id);
    return u;
}

/// Long-format returns (etf_id,date,return); missing cells are omitted.
inline void write_returns(const ReturnsPanel& p, std::ostream& os) {
    os << "etf_id,date,return\n";
    for (Index i = 0; i < p.rows(); ++i)
        for (Index s = 0; s < p.cols(); ++s)
            if (!p.missing(i, s))
                os << csv::quote(p.etf_ids[static_cast<std::size_t>(i)]) << ',' << p.dates[static_cast<std::size_t>(s)]
                   << ',' << csv::format_double(p.values(i, s)) << '\n';
}

}  // namespace etfrisk
