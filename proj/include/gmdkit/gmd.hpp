#pragma once

#include <cstdint>
#include <vector>

#include <gmdkit/quadops.hpp>

namespace gmdkit {

/// Left factors U (n x K), GMD values D, right factors V (p x K).
///
/// U^T Q U = I and V^T R V = I up to solver tolerance, D is non-negative and
/// non-increasing. Zero factors (d = 0, zero columns) are emitted when the
/// residual has no energy left in the Q,R geometry.
struct GMDFactors
{
    Matrix U;
    Vector D;
    Matrix V;
    std::vector<int> iterations;
    std::vector<bool> converged;
    std::vector<std::uint64_t> seeds;

    Index rank() const noexcept { return D.size(); }
};

struct GMDOptions
{
    double tol = 1e-9;
    int max_iter = 1000;
    std::uint64_t seed = 0;
    int max_reseeds = 5;
};

/// Power-method GMD: alternates u <- X R v / ||X R v||_Q and
/// v <- X^T Q u / ||X^T Q u||_R, then deflates the dense residual.
///
/// A factor is converged when both the relative change of d and the R-norm
/// change of v fall below tol. Each factor k draws its start from a stream
/// seeded by (seed, k, attempt); degenerate starts are redrawn up to
/// max_reseeds times before a zero factor is recorded.
GMDFactors gmd_power(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                     const QuadraticOperator& r, Index k, const GMDOptions& opts = {});

/// Factorization Q = Q_half Q_half^T with Q_half of full column rank, the
/// matching left inverses, and the transformed data Q_half^T X R_half.
struct WhitenedForm
{
    Matrix q_half;
    Matrix r_half;
    Matrix x_tilde;
    Matrix q_left_pinv;
    Matrix r_left_pinv;
};

inline constexpr Index max_oracle_dim = 2000;

/// Eigenvalues at or below rel_cutoff * lambda_max are dropped.
void half_factor(const QuadraticOperator& m, Matrix& half, Matrix& left_pinv,
                 double rel_cutoff = 1e-10);

WhitenedForm whiten(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                    const QuadraticOperator& r);

/// Exact GMD through the dense eigendecomposition of Q and R and the SVD of
/// the whitened data. Used as a reference for gmd_power.
GMDFactors gmd_oracle(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                      const QuadraticOperator& r, Index k);

/// sum_{j < k} u_j d_j v_j^T
Matrix reconstruct(const GMDFactors& f, Index k);

/// Flip (u, v) so that the largest-magnitude entry of v is positive.
void apply_sign_convention(Eigen::Ref<Vector> u, Eigen::Ref<Vector> v);

} // namespace gmdkit
