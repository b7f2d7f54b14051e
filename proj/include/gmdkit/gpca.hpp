#pragma once

#include <vector>

#include <gmdkit/gmd.hpp>

namespace gmdkit {

/// Per-component and cumulative proportions of ||X||^2_{Q,R}.
struct VarianceReport
{
    Vector per_component;
    Vector cumulative;
    double total_qr_norm_sq = 0.0;
};

/// Z = X R V; column k is the k-th generalized principal component.
Matrix gpc_scores(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& r,
                  const Eigen::Ref<const Matrix>& v);

/// d_k^2 / ||X||^2_{Q,R} for Q,R-orthonormal (unregularized) factors.
VarianceReport variance_explained(const GMDFactors& f, const Eigen::Ref<const Matrix>& x,
                                  const QuadraticOperator& q, const QuadraticOperator& r);

struct RegularizedVariance
{
    double value = 0.0;
    /// Indices of factor columns that were all zero and left out of the projections.
    std::vector<Index> dropped;
    bool ridged = false;
};

/// Cumulative variance explained by the span of the given (possibly
/// non-orthogonal) factors:
///   P_U = U (U^T Q U)^{-1} U^T,  P_V = V (V^T R V)^{-1} V^T,
///   X_k = P_U Q X R P_V,  value = tr(Q X_k R X_k^T) / tr(Q X R X^T).
/// The Gram inverses get a 1e-12 ridge when their condition number exceeds 1e12.
RegularizedVariance cumulative_variance_regularized(const Eigen::Ref<const Matrix>& u,
                                                    const Eigen::Ref<const Matrix>& v,
                                                    const Eigen::Ref<const Matrix>& x,
                                                    const QuadraticOperator& q,
                                                    const QuadraticOperator& r);

/// Running cumulative_variance_regularized over the first 1..K columns.
/// Per-component shares are successive differences and may be non-monotone.
VarianceReport regularized_variance_report(const Eigen::Ref<const Matrix>& u,
                                           const Eigen::Ref<const Matrix>& v,
                                           const Eigen::Ref<const Matrix>& x,
                                           const QuadraticOperator& q, const QuadraticOperator& r);

} // namespace gmdkit
