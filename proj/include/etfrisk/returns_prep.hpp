#pragma once

#include <cmath>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "etfrisk/category_returns.hpp"
#include "etfrisk/csv.hpp"
#include "etfrisk/errors.hpp"
#include "etfrisk/types.hpp"

namespace etfrisk {

enum class FillAction { ClippedToNA, FilledCategoryAvg, Dropped };

inline std::string to_string(FillAction a) {
    switch (a) {
        case FillAction::ClippedToNA: return "clipped-to-NA";
        case FillAction::FilledCategoryAvg: return "filled-category-avg";
        case FillAction::Dropped: return "dropped";
    }
    return "dropped";
}

struct FillLogEntry {
    std::string etf_id;
    std::string date;
    FillAction action = FillAction::Dropped;
    double value_before = kNaN;
    double value_after = kNaN;
};

struct PrepOptions {
    /// Returns with |R| > R* are not trusted and become missing.
    double rstar = 0.1;
    /// Trading days kept from the end of the panel; 0 keeps everything.
    Index lookback = 0;
    /// Per asset class R* overrides (leveraged or volatility products).
    std::map<AssetClass, double> rstar_by_asset_class;
};

/// A returns panel after clipping and filling. Dropped ETFs stay in
/// `panel` with their gaps so callers can still use pairwise statistics.
struct CleanPanel {
    ReturnsPanel panel;
    std::vector<std::string> dropped;
    std::vector<FillLogEntry> log;
    Index lookback = 0;

    /// Only the ETFs with a complete history in the lookback.
    ReturnsPanel complete() const {
        std::vector<std::string> keep;
        for (const auto& id : panel.etf_ids)
            if (!std::binary_search(dropped.begin(), dropped.end(), id)) keep.push_back(id);
        return panel.select_rows(keep);
    }

    void write_log_csv(std::ostream& os) const {
        os << "etf_id,date,action,value_before,value_after\n";
        auto num = [](double v) { return std::isnan(v) ? std::string(kMissingToken) : csv::format_double(v); };
        for (const auto& e : log)
            os << csv::quote(e.etf_id) << ',' << e.date << ',' << to_string(e.action) << ',' << num(e.value_before)
               << ',' << num(e.value_after) << '\n';
    }
};

/// Clips untrusted returns to missing, fills gaps with the level-1
/// category average of the clipped panel on the same date, and drops ETFs
/// that still have gaps. `fill_level` should be the classification before
/// any asset-class splitting so that the averages exist.
inline CleanPanel preprocess_returns(const ReturnsPanel& input, const TaxonomyLevel& fill_level,
                                     const PrepOptions& options = {},
                                     const std::map<std::string, AssetClass>& asset_class_of = {}) {
    if (fill_level.kind != LevelKind::Binary) throw PreconditionError("fill classification must be binary");
    if (!(options.rstar > 0.0)) throw ConfigError("R* must be positive");
    input.validate();
    CleanPanel out;
    out.lookback = options.lookback == 0 ? input.cols() : options.lookback;
    out.panel = input.tail(out.lookback);
    auto& p = out.panel;

    for (Index i = 0; i < p.rows(); ++i) {
        const auto& id = p.etf_ids[static_cast<std::size_t>(i)];
        double limit = options.rstar;
        if (auto ac = asset_class_of.find(id); ac != asset_class_of.end())
            if (auto o = options.rstar_by_asset_class.find(ac->second); o != options.rstar_by_asset_class.end())
                limit = o->second;
        for (Index s = 0; s < p.cols(); ++s)
            if (!p.missing(i, s) && std::abs(p.values(i, s)) > limit) {
                out.log.push_back({id, p.dates[static_cast<std::size_t>(s)], FillAction::ClippedToNA, p.values(i, s), kNaN});
                p.values(i, s) = kNaN;
                p.missing(i, s) = true;
            }
    }

    const CategoryReturns averages = category_average_returns(p, fill_level);
    std::vector<FillLogEntry> fills;
    std::vector<std::pair<Index, Index>> cells;
    for (Index i = 0; i < p.rows(); ++i) {
        const auto& id = p.etf_ids[static_cast<std::size_t>(i)];
        std::optional<Index> cat;
        if (auto it = fill_level.assignment.find(id); it != fill_level.assignment.end()) cat = averages.row_of(it->second);
        bool complete = true;
        for (Index s = 0; s < p.cols(); ++s) {
            if (!p.missing(i, s)) continue;
            if (cat && std::isfinite(averages.values(*cat, s))) {
                fills.push_back({id, p.dates[static_cast<std::size_t>(s)], FillAction::FilledCategoryAvg, kNaN,
                                 averages.values(*cat, s)});
                cells.emplace_back(i, s);
            } else {
                complete = false;
            }
        }
        if (!complete) out.dropped.push_back(id);
    }
    for (std::size_t k = 0; k < fills.size(); ++k) {
        auto [i, s] = cells[k];
        p.values(i, s) = fills[k].value_after;
        p.missing(i, s) = false;
    }
    out.log.insert(out.log.end(), fills.begin(), fills.end());
    for (const auto& id : out.dropped) {
        Index i = *p.row_of(id);
        for (Index s = 0; s < p.cols(); ++s)
            if (p.missing(i, s)) out.log.push_back({id, p.dates[static_cast<std::size_t>(s)], FillAction::Dropped, kNaN, kNaN});
    }
    std::sort(out.dropped.begin(), out.dropped.end());
    return out;
}

}  // namespace etfrisk
