#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "etfrisk/csv.hpp"
#include "etfrisk/errors.hpp"
#include "etfrisk/types.hpp"

namespace etfrisk {

/// ETF x category exposures aggregated from constituent weights.
struct ExposureMatrix {
    std::vector<std::string> etf_ids;
    std::vector<std::string> category_ids;
    Matrix weights;   // N x K
    Vector coverage;  // holdings weight that carried the attribute, per ETF
    std::vector<std::string> empty_rows;  // ETFs with no holdings at all

    std::optional<Index> row_of(const std::string& etf_id) const {
        auto it = std::find(etf_ids.begin(), etf_ids.end(), etf_id);
        if (it == etf_ids.end()) return std::nullopt;
        return static_cast<Index>(it - etf_ids.begin());
    }

    void write_csv(std::ostream& os) const {
        os << "etf_id,category,weight\n";
        for (Index i = 0; i < weights.rows(); ++i)
            for (Index k = 0; k < weights.cols(); ++k)
                if (weights(i, k) != 0.0)
                    os << csv::quote(etf_ids[i]) << ',' << csv::quote(category_ids[k]) << ','
                       << csv::format_double(weights(i, k)) << '\n';
    }
};

struct ExposureOptions {
    /// Divide each row by its coverage instead of leaving unclassified
    /// weight out of the total.
    bool renormalize_coverage = false;
};

/// A categorical attribute of a security: category -> fraction, empty when
/// the security lacks the attribute.
using AttributeSelector = std::function<std::map<std::string, double>(const Security&)>;

/// W_iA = sum_a w_ia L_aA over constituents that carry the attribute.
/// If `categories` is given it fixes the column order and any other
/// category is an error; otherwise columns are the sorted observed ids.
inline ExposureMatrix compute_exposures(const HoldingsTable& holdings, const SecurityMaster& securities,
                                        const std::vector<std::string>& etf_ids,
                                        const AttributeSelector& attribute,
                                        const ExposureOptions& options = {},
                                        std::optional<std::vector<std::string>> categories = std::nullopt) {
    std::vector<std::map<std::string, double>> rows(etf_ids.size());
    std::vector<double> covered(etf_ids.size(), 0.0);
    ExposureMatrix out;
    out.etf_ids = etf_ids;
    for (std::size_t i = 0; i < etf_ids.size(); ++i) {
        auto held = holdings.rows(etf_ids[i]);
        if (held.empty()) out.empty_rows.push_back(etf_ids[i]);
        for (const auto& h : held) {
            auto sit = securities.find(h.security_id);
            if (sit == securities.end())
                throw PreconditionError("security '" + h.security_id + "' held by '" + h.etf_id +
                                        "' not in security master");
            auto lambda = attribute(sit->second);
            if (lambda.empty()) continue;
            for (const auto& [cat, frac] : lambda) rows[i][cat] += h.weight * frac;
            covered[i] += h.weight;
        }
    }
    if (categories) {
        out.category_ids = *categories;
    } else {
        std::vector<std::string> cats;
        for (const auto& r : rows)
            for (const auto& [c, w] : r) cats.push_back(c);
        std::sort(cats.begin(), cats.end());
        cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
        out.category_ids = std::move(cats);
    }
    std::map<std::string, Index> col;
    for (std::size_t k = 0; k < out.category_ids.size(); ++k) col[out.category_ids[k]] = static_cast<Index>(k);
    out.weights = Matrix::Zero(static_cast<Index>(etf_ids.size()), static_cast<Index>(out.category_ids.size()));
    out.coverage = Vector::Zero(static_cast<Index>(etf_ids.size()));
    for (std::size_t i = 0; i < etf_ids.size(); ++i) {
        const auto r = static_cast<Index>(i);
        for (const auto& [c, w] : rows[i]) {
            auto it = col.find(c);
            if (it == col.end()) throw PreconditionError("category '" + c + "' not in the supplied column list");
            out.weights(r, it->second) = w;
        }
        out.coverage(r) = covered[i];
        if (options.renormalize_coverage && covered[i] > 0.0) out.weights.row(r) /= covered[i];
    }
    return out;
}

inline ExposureMatrix compute_exposures(const HoldingsTable& holdings, const SecurityMaster& securities,
                                        const AttributeSelector& attribute, const ExposureOptions& options = {}) {
    return compute_exposures(holdings, securities, holdings.etf_ids(), attribute, options);
}

namespace attributes {

/// Sector path truncated to `depth` components ("Tech/Software/Apps" at
/// depth 2 is "Tech/Software"). Paths shorter than `depth` count as missing.
inline AttributeSelector sector(std::size_t depth = 1) {
    return [depth](const Security& s) {
        std::map<std::string, double> out;
        for (const auto& [path, w] : s.sector_weights) {
            std::size_t end = 0;
            std::size_t parts = 0;
            while (parts < depth && end != std::string::npos) {
                end = path.find('/', parts == 0 ? 0 : end + 1);
                ++parts;
            }
            if (parts < depth) continue;
            out[path.substr(0, end)] += w;
        }
        return out;
    };
}

/// Sector path restricted to those beginning with `prefix` + "/".
inline AttributeSelector sector_under(const std::string& prefix, std::size_t depth) {
    auto base = sector(depth);
    return [base, prefix](const Security& s) {
        auto all = base(s);
        std::map<std::string, double> out;
        for (const auto& [c, w] : all)
            if (c.size() > prefix.size() && c.compare(0, prefix.size(), prefix) == 0 && c[prefix.size()] == '/')
                out[c] = w;
        return out;
    };
}

inline AttributeSelector asset_class() {
    return [](const Security& s) { return std::map<std::string, double>{{to_string(s.asset_class), 1.0}}; };
}

inline AttributeSelector region() {
    return [](const Security& s) {
        return s.region ? std::map<std::string, double>{{*s.region, 1.0}} : std::map<std::string, double>{};
    };
}

inline AttributeSelector style() {
    return [](const Security& s) {
        return s.style ? std::map<std::string, double>{{to_string(*s.style), 1.0}} : std::map<std::string, double>{};
    };
}

}  // namespace attributes

enum class ThresholdMode { Binary, Weighted };

/// Outcome for one ETF: Broad, or category -> weight (a single entry of 1
/// in the binary case).
struct ClassAssignment {
    bool broad = true;
    std::map<std::string, double> weights;

    /// The unique category, or `broad_label` when Broad. Weighted outcomes
    /// with several categories return the heaviest one.
    std::string label(const std::string& broad_label) const {
        if (broad || weights.empty()) return broad_label;
        return std::max_element(weights.begin(), weights.end(),
                                [](const auto& a, const auto& b) { return a.second < b.second; })
            ->first;
    }
};

struct ThresholdedClassification {
    std::map<std::string, ClassAssignment> assignments;
    double threshold = 0.5;
    ThresholdMode mode = ThresholdMode::Binary;
};

struct ThresholdOptions {
    /// Added to W_* before comparing, for universes with exact 50/50 ties.
    double guard = 0.0;
    /// Rows whose attribute coverage is below this are Broad.
    double min_coverage = 0.5;
};

/// Zeroes exposures below W_* (comparison is >=). Rows with nothing left
/// are Broad; Weighted survivors are renormalized to sum 1.
inline ThresholdedClassification threshold_exposures(const ExposureMatrix& e, double wstar, ThresholdMode mode,
                                                     const ThresholdOptions& options = {}) {
    if (!(wstar > 0.0 && wstar <= 1.0)) throw ConfigError("W* must lie in (0, 1], got " + csv::format_double(wstar));
    const double t = wstar + options.guard;
    if (mode == ThresholdMode::Binary && !(t > 0.5))
        throw ConfigError("binary thresholding needs W* > 0.5 for a unique category, got " + csv::format_double(t));
    ThresholdedClassification out;
    out.threshold = t;
    out.mode = mode;
    for (Index i = 0; i < e.weights.rows(); ++i) {
        ClassAssignment a;
        if (e.coverage(i) >= options.min_coverage) {
            double total = 0.0;
            for (Index k = 0; k < e.weights.cols(); ++k)
                if (e.weights(i, k) >= t) {
                    a.weights[e.category_ids[k]] = e.weights(i, k);
                    total += e.weights(i, k);
                }
            if (!a.weights.empty()) {
                a.broad = false;
                if (mode == ThresholdMode::Binary) {
                    if (a.weights.size() > 1)
                        throw InvariantError("ETF '" + e.etf_ids[i] + "' has several exposures above " +
                                             csv::format_double(t) + " (row sums above 1?)");
                    a.weights.begin()->second = 1.0;
                } else {
                    for (auto& [c, w] : a.weights) w /= total;
                }
            }
        }
        out.assignments.emplace(e.etf_ids[i], std::move(a));
    }
    return out;
}

/// Interval buckets for a scalar attribute: value v is in bucket A iff
/// C(A-1) < v <= C(A), with the first bucket closed below and the last
/// one unbounded above.
struct TrancheSpec {
    std::vector<double> boundaries;
    std::vector<std::string> labels;

    void validate() const {
        if (labels.size() != boundaries.size() + 1)
            throw ConfigError("tranche spec needs one more label than boundaries");
        for (std::size_t k = 1; k < boundaries.size(); ++k)
            if (!(boundaries[k - 1] < boundaries[k])) throw ConfigError("tranche boundaries must increase strictly");
    }

    std::size_t tranche_of(double v) const {
        auto it = std::lower_bound(boundaries.begin(), boundaries.end(), v);
        return static_cast<std::size_t>(it - boundaries.begin());
    }

    const std::string& label_of(double v) const { return labels[tranche_of(v)]; }

    static TrancheSpec duration_buckets() { return {{1.0, 3.0, 10.0}, {"ultra-short", "short", "intermediate", "long"}}; }

    /// Small / mid / large by market cap in currency units.
    static TrancheSpec cap_tranches() { return {{2e9, 1e10}, {"small", "mid", "large"}}; }
};

using ScalarSelector = std::function<std::optional<double>(const Security&)>;

inline ExposureMatrix tranche_exposures(const HoldingsTable& holdings, const SecurityMaster& securities,
                                        const std::vector<std::string>& etf_ids, const ScalarSelector& value,
                                        const TrancheSpec& spec, const ExposureOptions& options = {}) {
    spec.validate();
    AttributeSelector bucket = [&](const Security& s) {
        auto v = value(s);
        if (!v) return std::map<std::string, double>{};
        return std::map<std::string, double>{{spec.label_of(*v), 1.0}};
    };
    return compute_exposures(holdings, securities, etf_ids, bucket, options, spec.labels);
}

namespace scalars {
inline ScalarSelector market_cap() {
    return [](const Security& s) { return s.market_cap; };
}
inline ScalarSelector duration() {
    return [](const Security& s) { return s.duration_years; };
}
}  // namespace scalars

struct CapFactors {
    std::vector<std::string> etf_ids;
    Vector level;     // sum w C_a
    Vector log_level; // sum w ln C_a
    Vector coverage;
};

inline CapFactors cap_factor(const HoldingsTable& holdings, const SecurityMaster& securities,
                             const std::vector<std::string>& etf_ids, const ExposureOptions& options = {}) {
    CapFactors out;
    out.etf_ids = etf_ids;
    const auto n = static_cast<Index>(etf_ids.size());
    out.level = Vector::Zero(n);
    out.log_level = Vector::Zero(n);
    out.coverage = Vector::Zero(n);
    for (Index i = 0; i < n; ++i) {
        for (const auto& h : holdings.rows(etf_ids[i])) {
            const auto& s = securities.at(h.security_id);
            if (!s.market_cap) continue;
            if (!(*s.market_cap > 0.0))
                throw InputError("non-positive market cap for security '" + s.id + "'");
            out.level(i) += h.weight * *s.market_cap;
            out.log_level(i) += h.weight * std::log(*s.market_cap);
            out.coverage(i) += h.weight;
        }
        if (options.renormalize_coverage && out.coverage(i) > 0.0) {
            out.level(i) /= out.coverage(i);
            out.log_level(i) /= out.coverage(i);
        }
    }
    return out;
}

enum class RatingMethod { LinearScore, DefaultRate };

inline const std::string kInvestmentGrade = "Investment-Grade";
inline const std::string kHighYield = "High-Yield";

/// Rating label -> numeric value, best rating first. Entries up to and
/// including `last_investment_grade` are investment grade.
class RatingTable {
public:
    RatingTable(std::vector<std::pair<std::string, double>> entries, std::size_t last_investment_grade)
        : entries_(std::move(entries)), last_ig_(last_investment_grade) {
        if (entries_.empty()) throw ConfigError("empty rating table");
        if (last_ig_ >= entries_.size()) throw ConfigError("investment-grade cutoff outside rating table");
    }

    /// Infers the investment-grade cutoff from S&P labels (BBB- and better).
    explicit RatingTable(std::vector<std::pair<std::string, double>> entries)
        : RatingTable(entries, infer_cutoff(entries)) {}

    std::optional<double> value_of(const std::string& label) const {
        for (const auto& [l, v] : entries_)
            if (l == label) return v;
        return std::nullopt;
    }

    /// Label whose value is closest to `x`; ties go to the better rating.
    std::size_t nearest(double x) const {
        std::size_t best = 0;
        for (std::size_t k = 1; k < entries_.size(); ++k)
            if (std::abs(entries_[k].second - x) < std::abs(entries_[best].second - x)) best = k;
        return best;
    }

    const std::string& group_of(std::size_t index) const {
        return index <= last_ig_ ? kInvestmentGrade : kHighYield;
    }

    const std::vector<std::pair<std::string, double>>& entries() const noexcept { return entries_; }
    std::size_t last_investment_grade() const noexcept { return last_ig_; }

    /// Letter-grade linear scores AAA..CCC -> start, start+1, ...
    static RatingTable linear_coarse(double start = 1.0) {
        std::vector<std::pair<std::string, double>> e;
        for (const char* l : {"AAA", "AA", "A", "BBB", "BB", "B", "CCC"}) e.emplace_back(l, start + double(e.size()));
        return RatingTable(std::move(e), 3);
    }

    /// Illustrative one-year default rates in percent. Not authoritative;
    /// use a table from a rating agency study for real work.
    static RatingTable sample_default_rates() {
        return RatingTable({{"AAA", 0.01}, {"AA", 0.02}, {"A", 0.06}, {"BBB", 0.20}, {"BB", 0.80}, {"B", 4.0}, {"CCC", 25.0}},
                           3);
    }

private:
    static std::size_t infer_cutoff(const std::vector<std::pair<std::string, double>>& entries) {
        std::optional<std::size_t> last;
        for (std::size_t k = 0; k < entries.size(); ++k) {
            auto notch = rating_notch(entries[k].first);
            if (!notch) throw ConfigError("cannot infer investment-grade cutoff: '" + entries[k].first +
                                          "' is not an S&P rating");
            if (*notch <= 9) last = k;  // BBB- is notch 9
        }
        if (!last) throw ConfigError("rating table has no investment-grade entry");
        return *last;
    }

    std::vector<std::pair<std::string, double>> entries_;
    std::size_t last_ig_;
};

struct RatingOptions {
    RatingMethod method = RatingMethod::DefaultRate;
    /// Map notches to letter grades (AA+ -> AA) before the table lookup.
    bool coarsen = false;
    bool renormalize_coverage = false;
};

struct RatingAverage {
    std::string etf_id;
    double value = 0.0;  // R_i
    double coverage = 0.0;
    std::optional<std::string> label;  // absent when no constituent is rated
    std::optional<std::string> group;
};

inline std::vector<RatingAverage> average_credit_rating(const HoldingsTable& holdings,
                                                        const SecurityMaster& securities,
                                                        const std::vector<std::string>& etf_ids,
                                                        const RatingTable& table, const RatingOptions& options = {}) {
    std::vector<RatingAverage> out;
    for (const auto& id : etf_ids) {
        RatingAverage r;
        r.etf_id = id;
        for (const auto& h : holdings.rows(id)) {
            const auto& s = securities.at(h.security_id);
            if (!s.credit_rating) continue;
            std::string label = options.coarsen ? coarse_rating(*s.credit_rating) : *s.credit_rating;
            auto v = table.value_of(label);
            if (!v) throw ConfigError("rating '" + label + "' of security '" + s.id + "' not in rating table");
            r.value += h.weight * *v;
            r.coverage += h.weight;
        }
        if (r.coverage > 0.0) {
            if (options.renormalize_coverage) r.value /= r.coverage;
            auto k = table.nearest(r.value);
            r.label = table.entries()[k].first;
            r.group = table.group_of(k);
        }
        out.push_back(std::move(r));
    }
    return out;
}

inline const std::string kAllDuration = "all-duration";

struct DurationSummary {
    std::vector<std::string> etf_ids;
    Vector average;                              // T_i
    std::vector<std::string> bucket_by_average;  // bucket of T_i ("NA" without coverage)
    ExposureMatrix exposures;
    ThresholdedClassification classification;

    /// Thresholded bucket, "all-duration" when Broad.
    std::string bucket_of(const std::string& etf_id) const {
        return classification.assignments.at(etf_id).label(kAllDuration);
    }
};

inline DurationSummary average_duration(const HoldingsTable& holdings, const SecurityMaster& securities,
                                        const std::vector<std::string>& etf_ids,
                                        const TrancheSpec& buckets = TrancheSpec::duration_buckets(),
                                        double wstar = 0.5, ThresholdMode mode = ThresholdMode::Weighted,
                                        const ThresholdOptions& threshold_options = {},
                                        const ExposureOptions& options = {}) {
    DurationSummary out;
    out.etf_ids = etf_ids;
    out.average = Vector::Zero(static_cast<Index>(etf_ids.size()));
    for (std::size_t i = 0; i < etf_ids.size(); ++i) {
        double covered = 0.0;
        for (const auto& h : holdings.rows(etf_ids[i])) {
            const auto& s = securities.at(h.security_id);
            if (!s.duration_years) continue;
            if (*s.duration_years < 0.0) throw InputError("negative duration for security '" + s.id + "'");
            out.average(static_cast<Index>(i)) += h.weight * *s.duration_years;
            covered += h.weight;
        }
        if (options.renormalize_coverage && covered > 0.0) out.average(static_cast<Index>(i)) /= covered;
        out.bucket_by_average.push_back(covered > 0.0 ? buckets.label_of(out.average(static_cast<Index>(i)))
                                                      : std::string(kMissingToken));
    }
    out.exposures = tranche_exposures(holdings, securities, etf_ids, scalars::duration(), buckets, options);
    out.classification = threshold_exposures(out.exposures, wstar, mode, threshold_options);
    return out;
}

/// label,value CSV for rating or duration tables.
inline void write_table_csv(std::ostream& os, const std::vector<std::pair<std::string, double>>& rows) {
    os << "label,value\n";
    for (const auto& [l, v] : rows) os << csv::quote(l) << ',' << csv::format_double(v) << '\n';
}

inline std::vector<std::pair<std::string, double>> read_table_csv(const std::string& path) {
    auto t = csv::read_file(path);
    csv::require_header(t, {"label", "value"});
    std::vector<std::pair<std::string, double>> out;
    for (const auto& r : t.rows) out.emplace_back(r.fields[0], csv::require_number(t, r, 1));
    return out;
}

}  // namespace etfrisk
