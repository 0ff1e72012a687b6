#pragma once

#include <map>
#include <string>
#include <vector>

#include "etfrisk/errors.hpp"
#include "etfrisk/types.hpp"

namespace etfrisk {

/// Per-category equal-weighted average returns; NaN where a category has
/// no non-missing member on a date.
struct CategoryReturns {
    std::vector<std::string> categories;
    Matrix values;  // K x T
    std::vector<std::string> empty;  // categories without any member in the panel

    std::optional<Index> row_of(const std::string& category) const {
        auto it = std::lower_bound(categories.begin(), categories.end(), category);
        if (it == categories.end() || *it != category) return std::nullopt;
        return static_cast<Index>(it - categories.begin());
    }
};

/// R_Bs = mean of the non-missing member returns of B on date s.
inline CategoryReturns category_average_returns(const ReturnsPanel& panel, const TaxonomyLevel& level) {
    if (level.kind != LevelKind::Binary) throw PreconditionError("category averages need a binary level");
    CategoryReturns out;
    out.categories = level.categories;
    const auto k = static_cast<Index>(out.categories.size());
    Matrix sum = Matrix::Zero(k, panel.cols());
    Matrix count = Matrix::Zero(k, panel.cols());
    std::vector<bool> any(out.categories.size(), false);
    for (Index i = 0; i < panel.rows(); ++i) {
        auto it = level.assignment.find(panel.etf_ids[static_cast<std::size_t>(i)]);
        if (it == level.assignment.end()) continue;
        auto row = out.row_of(it->second);
        if (!row) continue;
        any[static_cast<std::size_t>(*row)] = true;
        for (Index s = 0; s < panel.cols(); ++s)
            if (!panel.missing(i, s)) {
                sum(*row, s) += panel.values(i, s);
                count(*row, s) += 1.0;
            }
    }
    out.values = Matrix::Constant(k, panel.cols(), kNaN);
    for (Index b = 0; b < k; ++b) {
        if (!any[static_cast<std::size_t>(b)]) out.empty.push_back(out.categories[static_cast<std::size_t>(b)]);
        for (Index s = 0; s < panel.cols(); ++s)
            if (count(b, s) > 0.0) out.values(b, s) = sum(b, s) / count(b, s);
    }
    return out;
}

}  // namespace etfrisk
