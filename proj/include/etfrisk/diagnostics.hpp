#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "etfrisk/errors.hpp"
#include "etfrisk/types.hpp"

namespace etfrisk {

/// Regression of the strict lower triangle of a correlation matrix on
/// x = 1, y = beta_i + beta_j and z = beta_i beta_j (y and z demeaned).
struct StyleDiagnosticResult {
    double intercept = kNaN;
    double coef_y = kNaN;  // NaN when the column was dropped
    double coef_z = kNaN;
    double r_squared = kNaN;
    double mean_correlation = kNaN;
    Index n_pairs = 0;
    std::vector<std::string> dropped;  // "y" and/or "z"
    double max_residual_dot = 0.0;     // largest |regressor . residual|, relative
};

/// Column-dropping tolerance for the rank-revealing QR, relative to the
/// largest pivot.
inline constexpr double kRegressionRankTolerance = 1e-10;

inline StyleDiagnosticResult style_factor_diagnostic(const Matrix& psi, const Vector& style) {
    const Index n = psi.rows();
    if (psi.cols() != n || style.size() != n) throw PreconditionError("correlation matrix and style vector disagree in size");
    if (n < 3) throw PreconditionError("need at least 3 instruments");
    for (Index i = 0; i < n; ++i) {
        if (std::abs(psi(i, i) - 1.0) > 1e-12) throw PreconditionError("correlation matrix needs a unit diagonal");
        for (Index j = 0; j < i; ++j)
            if (std::abs(psi(i, j) - psi(j, i)) > 1e-12) throw PreconditionError("correlation matrix is not symmetric");
    }
    if (!style.allFinite()) throw PreconditionError("style factor has non-finite entries");

    StyleDiagnosticResult out;
    out.n_pairs = n * (n - 1) / 2;
    Vector target(out.n_pairs), y(out.n_pairs), z(out.n_pairs);
    Index row = 0;
    for (Index i = 1; i < n; ++i)
        for (Index j = 0; j < i; ++j, ++row) {
            target(row) = psi(i, j);
            y(row) = style(i) + style(j);
            z(row) = style(i) * style(j);
        }
    out.mean_correlation = target.mean();
    y.array() -= y.mean();
    z.array() -= z.mean();

    // A demeaned column is dropped when it is numerically zero relative to
    // the largest of the original columns; the intercept column has norm sqrt(P).
    const double scale = std::sqrt(double(out.n_pairs));
    std::vector<std::pair<std::string, Vector>> columns = {{"x", Vector::Ones(out.n_pairs)}};
    for (auto* c : {&y, &z}) {
        const std::string name = c == &y ? "y" : "z";
        if (c->norm() <= kRegressionRankTolerance * scale * std::max(1.0, style.cwiseAbs().maxCoeff() * style.cwiseAbs().maxCoeff()))
            out.dropped.push_back(name);
        else
            columns.emplace_back(name, *c);
    }
    Matrix design(out.n_pairs, static_cast<Index>(columns.size()));
    for (std::size_t c = 0; c < columns.size(); ++c) design.col(static_cast<Index>(c)) = columns[c].second;

    Eigen::ColPivHouseholderQR<Matrix> qr(design);
    qr.setThreshold(kRegressionRankTolerance);
    if (qr.rank() < design.cols()) {
        // y and z collinear with each other: keep y, drop z
        design.conservativeResize(Eigen::NoChange, design.cols() - 1);
        out.dropped.push_back(columns.back().first);
        columns.pop_back();
        qr.compute(design);
    }
    const Vector coef = qr.solve(target);
    for (std::size_t c = 0; c < columns.size(); ++c) {
        const double v = coef(static_cast<Index>(c));
        if (columns[c].first == "x") out.intercept = v;
        if (columns[c].first == "y") out.coef_y = v;
        if (columns[c].first == "z") out.coef_z = v;
    }
    const Vector residual = target - design * coef;
    const double total = (target.array() - out.mean_correlation).matrix().squaredNorm();
    out.r_squared = total > 0.0 ? 1.0 - residual.squaredNorm() / total : 1.0;
    for (Index c = 0; c < design.cols(); ++c) {
        const double denom = std::max(design.col(c).norm() * std::max(target.norm(), 1e-300), 1e-300);
        out.max_residual_dot = std::max(out.max_residual_dot, std::abs(design.col(c).dot(residual)) / denom);
    }
    return out;
}

}  // namespace etfrisk
