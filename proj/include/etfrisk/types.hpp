#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "etfrisk/errors.hpp"

namespace etfrisk {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Reserved token for a missing value in every CSV file.
inline constexpr std::string_view kMissingToken = "NA";

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

enum class AssetClass { Equity, Bond, Commodity, Currency, RealEstate, Volatility, Other, MultiAsset };

inline constexpr std::array<AssetClass, 8> kAllAssetClasses = {
    AssetClass::Equity,     AssetClass::Bond,       AssetClass::Commodity, AssetClass::Currency,
    AssetClass::RealEstate, AssetClass::Volatility, AssetClass::Other,     AssetClass::MultiAsset};

inline std::string to_string(AssetClass ac) {
    switch (ac) {
        case AssetClass::Equity: return "Equity";
        case AssetClass::Bond: return "Bond";
        case AssetClass::Commodity: return "Commodity";
        case AssetClass::Currency: return "Currency";
        case AssetClass::RealEstate: return "RealEstate";
        case AssetClass::Volatility: return "Volatility";
        case AssetClass::Other: return "Other";
        case AssetClass::MultiAsset: return "MultiAsset";
    }
    return "Other";
}

inline std::optional<AssetClass> parse_asset_class(std::string_view s) {
    for (AssetClass ac : kAllAssetClasses)
        if (to_string(ac) == s) return ac;
    return std::nullopt;
}

/// Category id used for ETFs of a class that fit no finer grouping.
inline std::string other_category(const std::string& asset_class) { return asset_class + " - Other"; }

enum class Style { Value, Growth, Blend };

inline std::string to_string(Style s) {
    switch (s) {
        case Style::Value: return "Value";
        case Style::Growth: return "Growth";
        case Style::Blend: return "Blend";
    }
    return "Blend";
}

inline std::optional<Style> parse_style(std::string_view s) {
    if (s == "Value") return Style::Value;
    if (s == "Growth") return Style::Growth;
    if (s == "Blend") return Style::Blend;
    return std::nullopt;
}

/// S&P long-term notches, best first.
inline constexpr std::array<std::string_view, 21> kRatingNotches = {
    "AAA", "AA+", "AA", "AA-", "A+", "A",  "A-",   "BBB+", "BBB", "BBB-", "BB+",
    "BB",  "BB-", "B+", "B",   "B-", "CCC+", "CCC", "CCC-", "CC",  "C"};

inline std::optional<std::size_t> rating_notch(std::string_view label) {
    for (std::size_t k = 0; k < kRatingNotches.size(); ++k)
        if (kRatingNotches[k] == label) return k;
    return std::nullopt;
}

/// Collapses a notch to the 7-step letter scale AAA, AA, A, BBB, BB, B, CCC
/// (CCC standing for everything below B).
inline std::string coarse_rating(std::string_view label) {
    auto notch = rating_notch(label);
    if (!notch) throw InputError("unknown credit rating '" + std::string(label) + "'");
    std::size_t k = *notch;
    if (k == 0) return "AAA";
    if (k <= 3) return "AA";
    if (k <= 6) return "A";
    if (k <= 9) return "BBB";
    if (k <= 12) return "BB";
    if (k <= 15) return "B";
    return "CCC";
}

struct Security {
    std::string id;
    AssetClass asset_class = AssetClass::Other;
    /// Category path -> fraction. Paths may be hierarchical ("Tech/Software").
    /// A binary classification is stored as a single entry of weight 1.
    std::map<std::string, double> sector_weights;
    std::optional<double> market_cap;
    std::optional<std::string> credit_rating;
    std::optional<double> duration_years;
    std::optional<Style> style;
    std::optional<std::string> region;
};

struct Etf {
    std::string id;
    std::string name;
    std::optional<AssetClass> asset_class;
    std::optional<double> addv;
    std::optional<std::string> thirdparty_category;
    /// cap_tranche, style, region, duration_bucket; absent keys are missing.
    std::map<std::string, std::string> attributes;

    std::optional<std::string> attribute(const std::string& key) const {
        auto it = attributes.find(key);
        if (it == attributes.end()) return std::nullopt;
        return it->second;
    }
};

inline const std::array<std::string, 4> kEtfAttributeKeys = {"cap_tranche", "style", "region",
                                                             "duration_bucket"};

using SecurityMaster = std::map<std::string, Security>;

struct Holding {
    std::string etf_id;
    std::string security_id;
    double weight = 0.0;
};

/// Sparse ETF -> constituent weights, kept sorted by (etf_id, security_id).
class HoldingsTable {
public:
    HoldingsTable() = default;

    explicit HoldingsTable(std::vector<Holding> entries) : entries_(std::move(entries)) {
        std::sort(entries_.begin(), entries_.end(), [](const Holding& a, const Holding& b) {
            return std::tie(a.etf_id, a.security_id) < std::tie(b.etf_id, b.security_id);
        });
        for (std::size_t k = 0; k < entries_.size(); ++k) {
            if (k > 0 && entries_[k].etf_id == entries_[k - 1].etf_id &&
                entries_[k].security_id == entries_[k - 1].security_id)
                throw InvariantError("duplicate holding (" + entries_[k].etf_id + ", " +
                                     entries_[k].security_id + ")");
            auto [it, inserted] = index_.try_emplace(entries_[k].etf_id, k, k);
            it->second.second = k + 1;
        }
    }

    std::span<const Holding> rows(const std::string& etf_id) const {
        auto it = index_.find(etf_id);
        if (it == index_.end()) return {};
        return std::span<const Holding>(entries_).subspan(it->second.first,
                                                          it->second.second - it->second.first);
    }

    std::vector<std::string> etf_ids() const {
        std::vector<std::string> ids;
        ids.reserve(index_.size());
        for (const auto& [id, range] : index_) ids.push_back(id);
        return ids;
    }

    double row_sum(const std::string& etf_id) const {
        double s = 0.0;
        for (const auto& h : rows(etf_id)) s += h.weight;
        return s;
    }

    const std::vector<Holding>& entries() const noexcept { return entries_; }
    bool empty() const noexcept { return entries_.empty(); }

private:
    std::vector<Holding> entries_;
    std::map<std::string, std::pair<std::size_t, std::size_t>> index_;
};

/// N x T returns with an explicit missing mask. Missing cells hold NaN.
struct ReturnsPanel {
    std::vector<std::string> etf_ids;
    std::vector<std::string> dates;
    Matrix values;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> missing;

    Index rows() const { return static_cast<Index>(etf_ids.size()); }
    Index cols() const { return static_cast<Index>(dates.size()); }

    bool is_missing(Index i, Index s) const { return missing(i, s); }

    std::optional<Index> row_of(const std::string& etf_id) const {
        auto it = std::lower_bound(etf_ids.begin(), etf_ids.end(), etf_id);
        if (it != etf_ids.end() && *it == etf_id) return static_cast<Index>(it - etf_ids.begin());
        // Panels built by hand may not be sorted.
        auto lin = std::find(etf_ids.begin(), etf_ids.end(), etf_id);
        if (lin != etf_ids.end()) return static_cast<Index>(lin - etf_ids.begin());
        return std::nullopt;
    }

    void validate() const {
        if (values.rows() != rows() || values.cols() != cols() || missing.rows() != rows() ||
            missing.cols() != cols())
            throw InvariantError("returns panel dimensions do not match id/date lists");
        for (std::size_t s = 1; s < dates.size(); ++s)
            if (!(dates[s - 1] < dates[s]))
                throw InvariantError("returns panel dates not strictly increasing at " + dates[s]);
    }

    /// Builds a panel from a dense matrix; NaN entries become missing.
    static ReturnsPanel from_matrix(std::vector<std::string> ids, std::vector<std::string> dates,
                                    Matrix values) {
        ReturnsPanel p;
        p.etf_ids = std::move(ids);
        p.dates = std::move(dates);
        p.missing = values.array().isNaN();
        p.values = std::move(values);
        p.validate();
        return p;
    }

    /// Restricts to the last `lookback` dates.
    ReturnsPanel tail(Index lookback) const {
        if (lookback > cols())
            throw PreconditionError("lookback " + std::to_string(lookback) +
                                    " longer than panel (" + std::to_string(cols()) + " days)");
        ReturnsPanel p;
        p.etf_ids = etf_ids;
        p.dates.assign(dates.end() - lookback, dates.end());
        p.values = values.rightCols(lookback);
        p.missing = missing.rightCols(lookback);
        return p;
    }

    ReturnsPanel select_rows(const std::vector<std::string>& ids) const {
        ReturnsPanel p;
        p.etf_ids = ids;
        p.dates = dates;
        p.values.resize(static_cast<Index>(ids.size()), cols());
        p.missing.resize(static_cast<Index>(ids.size()), cols());
        for (std::size_t k = 0; k < ids.size(); ++k) {
            auto r = row_of(ids[k]);
            if (!r) throw PreconditionError("ETF '" + ids[k] + "' not in returns panel");
            p.values.row(static_cast<Index>(k)) = values.row(*r);
            p.missing.row(static_cast<Index>(k)) = missing.row(*r);
        }
        return p;
    }
};

enum class LevelKind { Binary, Weighted };

/// One level of a taxonomy. Level 0 is the most granular.
struct TaxonomyLevel {
    std::string name;
    LevelKind kind = LevelKind::Binary;
    std::vector<std::string> categories;  // sorted, unique
    std::map<std::string, std::string> assignment;                       // Binary
    std::map<std::string, std::map<std::string, double>> weights;        // Weighted
    std::map<std::string, std::string> parent_map;  // empty on the top level

    bool operator==(const TaxonomyLevel&) const = default;

    bool has_category(const std::string& c) const {
        return std::binary_search(categories.begin(), categories.end(), c);
    }

    /// Category -> weight for one ETF, regardless of kind.
    std::map<std::string, double> weights_of(const std::string& etf_id) const {
        if (kind == LevelKind::Binary) {
            auto it = assignment.find(etf_id);
            if (it == assignment.end()) return {};
            return {{it->second, 1.0}};
        }
        auto it = weights.find(etf_id);
        return it == weights.end() ? std::map<std::string, double>{} : it->second;
    }

    std::vector<std::string> etf_ids() const {
        std::vector<std::string> ids;
        if (kind == LevelKind::Binary)
            for (const auto& [e, c] : assignment) ids.push_back(e);
        else
            for (const auto& [e, w] : weights) ids.push_back(e);
        return ids;
    }

    /// Members per category (binary levels only).
    std::map<std::string, std::vector<std::string>> members() const {
        std::map<std::string, std::vector<std::string>> out;
        for (const auto& c : categories) out[c];
        for (const auto& [e, c] : assignment) out[c].push_back(e);
        return out;
    }

    /// Re-derives the sorted category list from the assignment, keeping
    /// only categories that have members.
    void rebuild_categories() {
        std::vector<std::string> cats;
        if (kind == LevelKind::Binary)
            for (const auto& [e, c] : assignment) cats.push_back(c);
        else
            for (const auto& [e, w] : weights)
                for (const auto& [c, x] : w) cats.push_back(c);
        std::sort(cats.begin(), cats.end());
        cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
        categories = std::move(cats);
        for (auto it = parent_map.begin(); it != parent_map.end();)
            it = has_category(it->first) ? std::next(it) : parent_map.erase(it);
    }
};

struct Taxonomy {
    std::vector<TaxonomyLevel> levels;
    /// Build parameters and decisions; serialized with the taxonomy.
    std::map<std::string, std::string> metadata;

    bool operator==(const Taxonomy&) const = default;
};

/// Checks every taxonomy invariant; throws InvariantError on the first
/// violation.
inline void validate_taxonomy(const Taxonomy& t, double weight_tol = 1e-9) {
    if (t.levels.empty()) throw InvariantError("taxonomy has no levels");
    for (std::size_t k = 0; k < t.levels.size(); ++k) {
        const auto& lv = t.levels[k];
        const std::string where = "level " + std::to_string(k) + " (" + lv.name + ")";
        if (!std::is_sorted(lv.categories.begin(), lv.categories.end()) ||
            std::adjacent_find(lv.categories.begin(), lv.categories.end()) != lv.categories.end())
            throw InvariantError(where + ": categories not sorted/unique");
        if (lv.kind == LevelKind::Binary) {
            if (!lv.weights.empty()) throw InvariantError(where + ": binary level carries weights");
            for (const auto& [e, c] : lv.assignment)
                if (!lv.has_category(c))
                    throw InvariantError(where + ": ETF '" + e + "' assigned to unknown category '" +
                                         c + "'");
        } else {
            if (!lv.assignment.empty())
                throw InvariantError(where + ": weighted level carries a binary assignment");
            for (const auto& [e, w] : lv.weights) {
                double sum = 0.0;
                for (const auto& [c, x] : w) {
                    if (!lv.has_category(c))
                        throw InvariantError(where + ": ETF '" + e + "' weighted on unknown category '" +
                                             c + "'");
                    if (!(x >= 0.0))
                        throw InvariantError(where + ": negative weight for ETF '" + e + "'");
                    sum += x;
                }
                if (std::abs(sum - 1.0) > weight_tol)
                    throw InvariantError(where + ": weights of ETF '" + e + "' sum to " +
                                         std::to_string(sum));
            }
        }
        const bool top = k + 1 == t.levels.size();
        if (top) {
            if (!lv.parent_map.empty()) throw InvariantError(where + ": top level has a parent map");
            continue;
        }
        const auto& up = t.levels[k + 1];
        for (const auto& c : lv.categories) {
            auto it = lv.parent_map.find(c);
            if (it == lv.parent_map.end())
                throw InvariantError(where + ": category '" + c + "' has no parent");
            if (!up.has_category(it->second))
                throw InvariantError(where + ": category '" + c + "' maps to unknown parent '" +
                                     it->second + "'");
        }
        if (lv.parent_map.size() != lv.categories.size())
            throw InvariantError(where + ": parent map names categories that do not exist");
        if (lv.kind == LevelKind::Binary && up.kind == LevelKind::Binary) {
            for (const auto& [e, c] : lv.assignment) {
                auto it = up.assignment.find(e);
                if (it != up.assignment.end() && it->second != lv.parent_map.at(c))
                    throw InvariantError(where + ": ETF '" + e + "' is in '" + c +
                                         "' whose parent is '" + lv.parent_map.at(c) +
                                         "' but the next level assigns '" + it->second + "'");
            }
        }
    }
}

}  // namespace etfrisk
