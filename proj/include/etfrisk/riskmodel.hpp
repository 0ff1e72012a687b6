#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/QR>

#include "etfrisk/errors.hpp"
#include "etfrisk/exposure.hpp"
#include "etfrisk/stats.hpp"
#include "etfrisk/types.hpp"

namespace etfrisk {

inline constexpr Index kShortLookback = 21;
inline constexpr Index kLongLookback = 252;
/// Floor (and 1 - ceiling) for specific variances in correlation space.
inline constexpr double kSpecificFloor = 1e-8;

/// f_As = sum_i Omega_iA R_is.
inline Matrix compute_factor_returns(const Matrix& loadings, const Matrix& returns) {
    if (loadings.rows() != returns.rows())
        throw PreconditionError("loadings have " + std::to_string(loadings.rows()) + " rows, returns have " +
                                std::to_string(returns.rows()));
    if (returns.hasNaN()) throw PreconditionError("returns must be complete");
    return loadings.transpose() * returns;
}

/// Factor model for the returns of `etf_ids`, in correlation space (beta,
/// factor_cov, specific_var) plus the sample variances that scale it.
/// Model correlation: Psi = beta Phi beta^T + diag(specific_var), with a
/// unit diagonal; model covariance: Gamma = diag(sigma) Psi diag(sigma).
struct RiskModel {
    std::vector<std::string> etf_ids;
    std::vector<std::string> factor_ids;
    std::vector<std::string> factor_groups;  // parent category per factor, empty when ungrouped
    Matrix loadings;      // Omega, N x K
    Vector gamma;         // beta = Omega / gamma row-wise
    Matrix beta;          // N x K
    Matrix factor_cov;    // Phi, K x K
    Vector specific_var;  // xi^2, correlation space
    Vector total_var;     // sigma^2 over the lookback
    Index lookback = 0;
    std::vector<std::string> dropped;  // ETFs excluded from the build
    std::vector<std::string> log;

    Index size() const { return static_cast<Index>(etf_ids.size()); }

    std::optional<Index> index_of(const std::string& etf_id) const {
        auto it = std::find(etf_ids.begin(), etf_ids.end(), etf_id);
        if (it == etf_ids.end()) return std::nullopt;
        return static_cast<Index>(it - etf_ids.begin());
    }

    Matrix correlation_matrix() const {
        Matrix psi = beta * factor_cov * beta.transpose();
        psi = (psi + psi.transpose()).eval() / 2.0;
        psi.diagonal().setOnes();
        return psi;
    }
};

/// Psi_ij = sum_AB beta_iA Phi_AB beta_jB for i != j, and 1 on the diagonal.
inline double model_correlation(const RiskModel& m, Index i, Index j) {
    if (i < 0 || j < 0 || i >= m.size() || j >= m.size())
        throw PreconditionError("index out of the modeled universe");
    if (i == j) return 1.0;
    return m.beta.row(i).dot(m.factor_cov * m.beta.row(j).transpose());
}

inline Matrix model_covariance_matrix(const RiskModel& m) {
    const Vector sigma = m.total_var.cwiseSqrt();
    Matrix gamma = sigma.asDiagonal() * m.correlation_matrix() * sigma.asDiagonal();
    gamma = (gamma + gamma.transpose()).eval() / 2.0;
    gamma.diagonal() = m.total_var;
    return gamma;
}

namespace detail {

struct CorrelationModel {
    Matrix beta;
    Vector gamma;
    Vector specific;
};

/// Specific variances from the cross-sectional least-squares residual of
/// the standardized returns on the loadings, then per-row rescaling of the
/// loadings so that beta Phi beta^T + xi^2 has a unit diagonal. Specific
/// variances stay within [floor, 1 - floor]; a row with no factor variance
/// is pure specific risk.
inline CorrelationModel calibrate(const Matrix& z, const Matrix& loadings, const Matrix& factor_cov) {
    const Index n = z.rows();
    const double dof = double(z.cols() - 1);
    CorrelationModel out;
    out.beta = Matrix::Zero(n, loadings.cols());
    out.gamma = Vector::Ones(n);
    out.specific = Vector::Ones(n);
    if (loadings.cols() == 0) return out;
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(loadings);
    const Matrix residual = z - loadings * cod.solve(z);
    const Vector factor_var = (loadings * factor_cov).cwiseProduct(loadings).rowwise().sum();
    for (Index i = 0; i < n; ++i) {
        if (!(factor_var(i) > 0.0)) continue;
        const double xi2 = std::clamp(residual.row(i).squaredNorm() / dof, kSpecificFloor, 1.0 - kSpecificFloor);
        out.specific(i) = xi2;
        out.gamma(i) = std::sqrt(factor_var(i) / (1.0 - xi2));
        out.beta.row(i) = loadings.row(i) / out.gamma(i);
    }
    return out;
}

/// Loadings from a grouping of the rows of z: each column is the first
/// principal component of the group's correlation block, or its indicator.
inline Matrix block_loadings(const Matrix& z, const std::vector<Index>& group_of, Index groups, bool principal) {
    Matrix omega = Matrix::Zero(z.rows(), groups);
    std::vector<std::vector<Index>> members(static_cast<std::size_t>(groups));
    for (Index i = 0; i < z.rows(); ++i) members[static_cast<std::size_t>(group_of[i])].push_back(i);
    for (Index a = 0; a < groups; ++a) {
        const auto& idx = members[static_cast<std::size_t>(a)];
        if (!principal) {
            for (Index i : idx) omega(i, a) = 1.0;
            continue;
        }
        Matrix block(static_cast<Index>(idx.size()), z.cols());
        for (std::size_t r = 0; r < idx.size(); ++r) block.row(static_cast<Index>(r)) = z.row(idx[r]);
        const Matrix corr = block * block.transpose() / double(z.cols() - 1);
        const Vector pc = stats::first_principal_component(corr).vector;
        for (std::size_t r = 0; r < idx.size(); ++r) omega(idx[r], a) = pc(static_cast<Index>(r));
    }
    return omega;
}

/// A grouping of the factors at one level into the categories of the next.
struct Grouping {
    std::vector<Index> group_of;
    Index groups = 0;
};

inline void require_top_fits(Index factors, Index periods) {
    if (factors >= periods - 1)
        throw PreconditionError("top level too large for lookback (" + std::to_string(factors) +
                                " factors, T = " + std::to_string(periods) + ")");
}

/// Covariance of the factor returns f (K x T). Without further groupings it
/// is the sample covariance (PSD-clipped). Otherwise the factor returns are
/// themselves modeled one level up with block principal components, and
/// the recursion ends in a sample covariance at the top.
inline Matrix factor_covariance(const Matrix& f, const std::vector<Grouping>& upper, std::size_t level = 0) {
    const Index k = f.rows();
    if (level == upper.size()) {
        require_top_fits(k, f.cols());
        return stats::clip_to_psd(stats::sample_covariance(f));
    }
    const auto moments = stats::row_moments(f);
    const Grouping& g = upper[level];
    std::vector<Index> active;
    for (Index a = 0; a < k; ++a)
        if (moments.stddev(a) > 0.0) active.push_back(a);
    const Index n = static_cast<Index>(active.size());
    Matrix z(n, f.cols());
    std::vector<Index> remap(static_cast<std::size_t>(g.groups), -1);
    std::vector<Index> group_of(static_cast<std::size_t>(n));
    Index used = 0;
    for (Index r = 0; r < n; ++r) {
        const Index a = active[static_cast<std::size_t>(r)];
        z.row(r) = (f.row(a).array() - moments.mean(a)) / moments.stddev(a);
        auto& slot = remap[static_cast<std::size_t>(g.group_of[a])];
        if (slot < 0) slot = used++;
        group_of[static_cast<std::size_t>(r)] = slot;
    }
    std::vector<Grouping> next;
    for (std::size_t l = level + 1; l < upper.size(); ++l) {
        // groups at this level were renumbered; carry the next level's map along
        Grouping h;
        h.groups = upper[l].groups;
        if (l == level + 1) {
            h.group_of.assign(static_cast<std::size_t>(used), 0);
            for (Index old = 0; old < g.groups; ++old)
                if (remap[static_cast<std::size_t>(old)] >= 0)
                    h.group_of[static_cast<std::size_t>(remap[static_cast<std::size_t>(old)])] = upper[l].group_of[old];
        } else {
            h.group_of = upper[l].group_of;
        }
        next.push_back(std::move(h));
    }
    const Matrix omega = block_loadings(z, group_of, used, true);
    const Matrix upper_cov = factor_covariance(omega.transpose() * z, next, 0);
    const auto cm = calibrate(z, omega, upper_cov);
    Matrix psi = cm.beta * upper_cov * cm.beta.transpose();
    psi = (psi + psi.transpose()).eval() / 2.0;
    psi.diagonal().setOnes();
    Matrix phi = Matrix::Zero(k, k);
    for (Index r = 0; r < n; ++r)
        for (Index c = 0; c < n; ++c) {
            const Index a = active[static_cast<std::size_t>(r)], b = active[static_cast<std::size_t>(c)];
            phi(a, b) = moments.stddev(a) * psi(r, c) * moments.stddev(b);
        }
    return phi;
}

struct PreparedReturns {
    std::vector<std::string> etf_ids;
    Matrix z;  // standardized over the lookback
    Vector variance;
    Index lookback = 0;
};

/// Selects `wanted` rows of the panel's last `lookback` days (0 = all),
/// drops zero-variance rows, and standardizes the rest.
inline PreparedReturns prepare_returns(const ReturnsPanel& panel, Index lookback, const std::vector<std::string>& wanted,
                                       RiskModel& model) {
    const ReturnsPanel window = panel.tail(lookback == 0 ? panel.cols() : lookback);
    if (window.cols() < 2) throw PreconditionError("need at least 2 days of returns");
    PreparedReturns out;
    out.lookback = window.cols();
    std::vector<Index> rows;
    for (const auto& id : wanted) {
        auto r = window.row_of(id);
        if (!r) {
            model.dropped.push_back(id);
            model.log.push_back("dropped " + id + ": no returns");
            continue;
        }
        if (window.missing.row(*r).any())
            throw PreconditionError("returns for '" + id + "' have gaps in the lookback; run returns prep first");
        rows.push_back(*r);
        out.etf_ids.push_back(id);
    }
    Matrix x(static_cast<Index>(rows.size()), window.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) x.row(static_cast<Index>(k)) = window.values.row(rows[k]);
    const auto moments = stats::row_moments(x);
    std::vector<Index> keep;
    std::vector<std::string> ids;
    for (Index i = 0; i < x.rows(); ++i) {
        if (moments.stddev(i) > 0.0 && x.row(i).maxCoeff() > x.row(i).minCoeff()) {
            keep.push_back(i);
            ids.push_back(out.etf_ids[static_cast<std::size_t>(i)]);
        } else {
            model.dropped.push_back(out.etf_ids[static_cast<std::size_t>(i)]);
            model.log.push_back("dropped " + out.etf_ids[static_cast<std::size_t>(i)] + ": zero variance");
        }
    }
    out.etf_ids = ids;
    out.z.resize(static_cast<Index>(keep.size()), x.cols());
    out.variance.resize(static_cast<Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
        const Index i = keep[k];
        out.z.row(static_cast<Index>(k)) = (x.row(i).array() - moments.mean(i)) / moments.stddev(i);
        out.variance(static_cast<Index>(k)) = moments.stddev(i) * moments.stddev(i);
    }
    std::sort(model.dropped.begin(), model.dropped.end());
    return out;
}

/// Groupings of the factors at every level above the first, from the
/// parent maps of a taxonomy (or a single explicit map).
inline std::vector<Grouping> groupings_from_parents(const std::vector<std::string>& factor_ids,
                                                    const std::vector<const std::map<std::string, std::string>*>& parents) {
    std::vector<Grouping> out;
    std::vector<std::string> current = factor_ids;
    for (const auto* parent : parents) {
        std::vector<std::string> next;
        for (const auto& c : current) {
            auto it = parent->find(c);
            if (it == parent->end()) throw PreconditionError("category '" + c + "' has no parent");
            next.push_back(it->second);
        }
        std::vector<std::string> uniq = next;
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        Grouping g;
        g.groups = static_cast<Index>(uniq.size());
        for (const auto& p : next)
            g.group_of.push_back(static_cast<Index>(std::lower_bound(uniq.begin(), uniq.end(), p) - uniq.begin()));
        out.push_back(std::move(g));
        current = std::move(uniq);
    }
    return out;
}

inline void finish(RiskModel& m, const PreparedReturns& prep, Matrix omega, const std::vector<Grouping>& upper) {
    m.etf_ids = prep.etf_ids;
    m.lookback = prep.lookback;
    m.total_var = prep.variance;
    const Matrix f = compute_factor_returns(omega, prep.z);
    m.factor_cov = factor_covariance(f, upper);
    const auto cm = calibrate(prep.z, omega, m.factor_cov);
    m.loadings = std::move(omega);
    m.beta = cm.beta;
    m.gamma = cm.gamma;
    m.specific_var = cm.specific;
    Index floored = 0;
    for (Index i = 0; i < m.specific_var.size(); ++i)
        if (m.specific_var(i) <= kSpecificFloor) ++floored;
    if (floored > 0)
        m.log.push_back(std::to_string(floored) + " of " + std::to_string(m.specific_var.size()) +
                        " specific variances at the floor");
}

}  // namespace detail

struct HeteroticOptions {
    Index lookback = kLongLookback;  // 0 = whole panel
    /// Block first principal components as loadings; off gives indicator
    /// loadings with the same nested factor covariance.
    bool principal_components = true;
};

/// Heterotic build on a binary taxonomy: level-1 categories are the
/// factors; each higher level groups the factors of the level below.
inline RiskModel build_heterotic(const Taxonomy& taxonomy, const ReturnsPanel& panel, const HeteroticOptions& options = {}) {
    if (taxonomy.levels.empty()) throw PreconditionError("taxonomy has no levels");
    for (const auto& l : taxonomy.levels)
        if (l.kind != LevelKind::Binary) throw PreconditionError("heterotic build needs a binary taxonomy");
    const TaxonomyLevel& first = taxonomy.levels.front();
    RiskModel m;
    std::vector<std::string> wanted;
    for (const auto& [e, c] : first.assignment) wanted.push_back(e);
    for (const auto& id : panel.etf_ids)
        if (!first.assignment.count(id)) m.log.push_back("ignored " + id + ": not classified");
    const auto prep = detail::prepare_returns(panel, options.lookback, wanted, m);
    if (prep.etf_ids.empty()) throw PreconditionError("no ETF left to model");

    std::set<std::string> used;
    for (const auto& id : prep.etf_ids) used.insert(first.assignment.at(id));
    m.factor_ids.assign(used.begin(), used.end());
    for (const auto& c : first.categories)
        if (!used.count(c)) m.log.push_back("skipped empty category " + c);
    std::vector<Index> group_of;
    for (const auto& id : prep.etf_ids)
        group_of.push_back(static_cast<Index>(
            std::lower_bound(m.factor_ids.begin(), m.factor_ids.end(), first.assignment.at(id)) - m.factor_ids.begin()));
    Matrix omega = detail::block_loadings(prep.z, group_of, static_cast<Index>(m.factor_ids.size()),
                                          options.principal_components);

    std::vector<const std::map<std::string, std::string>*> parents;
    for (std::size_t l = 0; l + 1 < taxonomy.levels.size(); ++l) parents.push_back(&taxonomy.levels[l].parent_map);
    const auto upper = detail::groupings_from_parents(m.factor_ids, parents);
    for (const auto& f : m.factor_ids) {
        auto it = first.parent_map.find(f);
        m.factor_groups.push_back(it == first.parent_map.end() ? std::string() : it->second);
    }
    detail::finish(m, prep, std::move(omega), upper);
    return m;
}

struct GeneralOptions {
    Index lookback = kLongLookback;
    /// Parent category per factor; when given, the factor covariance is
    /// modeled one level up instead of taken as the sample covariance.
    std::optional<std::map<std::string, std::string>> factor_parents;
    double row_sum_tolerance = 1e-9;
};

/// General build with the loadings identified with an exposure matrix
/// whose rows sum to 1.
inline RiskModel build_general(const ExposureMatrix& w, const ReturnsPanel& panel, const GeneralOptions& options = {}) {
    for (Index i = 0; i < w.weights.rows(); ++i) {
        const double s = w.weights.row(i).sum();
        if (std::abs(s - 1.0) > options.row_sum_tolerance)
            throw PreconditionError("exposure row of '" + w.etf_ids[static_cast<std::size_t>(i)] + "' sums to " +
                                    csv::format_double(s) + ", expected 1");
    }
    RiskModel m;
    const auto prep = detail::prepare_returns(panel, options.lookback, w.etf_ids, m);
    if (prep.etf_ids.empty()) throw PreconditionError("no ETF left to model");
    std::vector<Index> cols;
    for (Index k = 0; k < w.weights.cols(); ++k) {
        bool any = false;
        for (const auto& id : prep.etf_ids)
            if (w.weights(*w.row_of(id), k) != 0.0) any = true;
        if (any)
            cols.push_back(k);
        else
            m.log.push_back("skipped empty factor " + w.category_ids[static_cast<std::size_t>(k)]);
    }
    Matrix omega(static_cast<Index>(prep.etf_ids.size()), static_cast<Index>(cols.size()));
    for (std::size_t r = 0; r < prep.etf_ids.size(); ++r) {
        const Index src = *w.row_of(prep.etf_ids[r]);
        for (std::size_t c = 0; c < cols.size(); ++c) omega(static_cast<Index>(r), static_cast<Index>(c)) = w.weights(src, cols[c]);
    }
    for (Index k : cols) m.factor_ids.push_back(w.category_ids[static_cast<std::size_t>(k)]);
    std::vector<detail::Grouping> upper;
    if (options.factor_parents) {
        upper = detail::groupings_from_parents(m.factor_ids, {&*options.factor_parents});
        for (const auto& f : m.factor_ids) m.factor_groups.push_back(options.factor_parents->at(f));
    } else {
        m.factor_groups.assign(m.factor_ids.size(), std::string());
    }
    detail::finish(m, prep, std::move(omega), upper);
    return m;
}

/// Exposure matrix of a taxonomy level (indicator rows for binary levels).
inline ExposureMatrix exposure_from_level(const TaxonomyLevel& level) {
    ExposureMatrix w;
    w.category_ids = level.categories;
    w.etf_ids = level.etf_ids();
    w.weights = Matrix::Zero(static_cast<Index>(w.etf_ids.size()), static_cast<Index>(w.category_ids.size()));
    w.coverage = Vector::Ones(static_cast<Index>(w.etf_ids.size()));
    auto col = [&](const std::string& c) {
        return static_cast<Index>(std::lower_bound(w.category_ids.begin(), w.category_ids.end(), c) - w.category_ids.begin());
    };
    for (std::size_t i = 0; i < w.etf_ids.size(); ++i) {
        const Index r = static_cast<Index>(i);
        if (level.kind == LevelKind::Binary)
            w.weights(r, col(level.assignment.at(w.etf_ids[i]))) = 1.0;
        else
            for (const auto& [c, x] : level.weights.at(w.etf_ids[i])) w.weights(r, col(c)) = x;
    }
    return w;
}

struct ModelInverse {
    Matrix inverse;
    Index floored = 0;          // specific variances at the floor
    bool near_degenerate = false;  // more than half of them floored
};

/// Gamma^{-1} through the diagonal-plus-low-rank identity: with
/// Phi = L L^T and B = beta L,
/// (Xi + B B^T)^{-1} = Xi^{-1} - Xi^{-1} B (I + B^T Xi^{-1} B)^{-1} B^T Xi^{-1},
/// and Gamma^{-1} = D^{-1} (Xi + B B^T)^{-1} D^{-1} with D = diag(sigma).
inline ModelInverse invert_model(const RiskModel& m) {
    ModelInverse out;
    const Index n = m.size();
    if ((m.specific_var.array() < kSpecificFloor * (1.0 - 1e-12)).any())
        throw PreconditionError("specific variances must be at least the floor");
    for (Index i = 0; i < n; ++i)
        if (m.specific_var(i) <= kSpecificFloor) ++out.floored;
    out.near_degenerate = 2 * out.floored > n;

    Eigen::SelfAdjointEigenSolver<Matrix> es(m.factor_cov);
    if (es.info() != Eigen::Success) throw Error("eigen-decomposition of the factor covariance failed");
    const Matrix root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    const Matrix b = m.beta * root;
    const Vector xi_inv = m.specific_var.cwiseInverse();
    const Matrix xb = xi_inv.asDiagonal() * b;
    Matrix core = b.transpose() * xb;
    core.diagonal().array() += 1.0;
    Eigen::LLT<Matrix> llt(core);
    if (llt.info() != Eigen::Success) throw Error("low-rank core is not positive definite");
    Matrix psi_inv = -xb * llt.solve(xb.transpose());
    psi_inv.diagonal() += xi_inv;
    const Vector d_inv = m.total_var.cwiseSqrt().cwiseInverse();
    out.inverse = d_inv.asDiagonal() * psi_inv * d_inv.asDiagonal();
    out.inverse = (out.inverse + out.inverse.transpose()).eval() / 2.0;
    return out;
}

}  // namespace etfrisk
