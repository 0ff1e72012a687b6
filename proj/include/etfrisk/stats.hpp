#pragma once

#include <cmath>
#include <optional>

#include <Eigen/Eigenvalues>

#include "etfrisk/errors.hpp"
#include "etfrisk/types.hpp"

namespace etfrisk::stats {

struct Correlation {
    double value = kNaN;
    Index observations = 0;
};

/// Pearson correlation over the positions where both series are finite.
/// NaN when fewer than two such positions or either side is constant.
inline Correlation pearson_pairwise(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) {
    Correlation out;
    double sx = 0, sy = 0;
    Index n = 0;
    for (Index k = 0; k < x.size(); ++k)
        if (std::isfinite(x(k)) && std::isfinite(y(k))) {
            sx += x(k);
            sy += y(k);
            ++n;
        }
    out.observations = n;
    if (n < 2) return out;
    const double mx = sx / double(n), my = sy / double(n);
    double sxx = 0, syy = 0, sxy = 0;
    for (Index k = 0; k < x.size(); ++k)
        if (std::isfinite(x(k)) && std::isfinite(y(k))) {
            const double dx = x(k) - mx, dy = y(k) - my;
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
    if (sxx <= 0.0 || syy <= 0.0) return out;
    out.value = sxy / std::sqrt(sxx * syy);
    return out;
}

/// Row means and unbiased row standard deviations of an N x T matrix.
struct RowMoments {
    Vector mean;
    Vector stddev;
};

inline RowMoments row_moments(const Matrix& x) {
    if (x.cols() < 2) throw PreconditionError("need at least 2 observations, got " + std::to_string(x.cols()));
    RowMoments m;
    m.mean = x.rowwise().mean();
    Matrix centered = x.colwise() - m.mean;
    m.stddev = (centered.rowwise().squaredNorm() / double(x.cols() - 1)).cwiseSqrt();
    return m;
}

/// Z-scores each row: zero mean, unit (unbiased) variance.
inline Matrix standardize_rows(const Matrix& x, const RowMoments& m) {
    Matrix z = x.colwise() - m.mean;
    for (Index i = 0; i < z.rows(); ++i) z.row(i) /= m.stddev(i);
    return z;
}

/// Sample covariance of the rows of an N x T matrix (N x N, divisor T-1).
inline Matrix sample_covariance(const Matrix& x) {
    if (x.cols() < 2) throw PreconditionError("need at least 2 observations for a covariance");
    Matrix centered = x.colwise() - x.rowwise().mean();
    return centered * centered.transpose() / double(x.cols() - 1);
}

struct PrincipalComponent {
    double eigenvalue = 0.0;
    Vector vector;  // unit norm, entries summing to a non-negative value
};

/// Leading eigenpair of a symmetric matrix, sign-fixed so the entries sum
/// positive (ties broken by the first nonzero entry being positive).
inline PrincipalComponent first_principal_component(const Matrix& symmetric) {
    PrincipalComponent pc;
    if (symmetric.rows() == 1) {
        pc.eigenvalue = symmetric(0, 0);
        pc.vector = Vector::Ones(1);
        return pc;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetric);
    if (es.info() != Eigen::Success) throw Error("eigen-decomposition failed");
    const Index top = symmetric.rows() - 1;
    pc.eigenvalue = es.eigenvalues()(top);
    pc.vector = es.eigenvectors().col(top);
    double sum = pc.vector.sum();
    if (std::abs(sum) < 1e-12 * double(pc.vector.size())) {
        for (Index k = 0; k < pc.vector.size(); ++k)
            if (std::abs(pc.vector(k)) > 1e-12) {
                sum = pc.vector(k);
                break;
            }
    }
    if (sum < 0.0) pc.vector = -pc.vector;
    return pc;
}

/// Projects a symmetric matrix onto the PSD cone by zeroing negative
/// eigenvalues.
inline Matrix clip_to_psd(const Matrix& symmetric) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetric);
    if (es.info() != Eigen::Success) throw Error("eigen-decomposition failed");
    Vector ev = es.eigenvalues().cwiseMax(0.0);
    Matrix out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    return (out + out.transpose()) / 2.0;
}

}  // namespace etfrisk::stats
