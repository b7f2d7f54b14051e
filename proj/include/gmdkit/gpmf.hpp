#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <gmdkit/gmd.hpp>

namespace gmdkit {

// Penalized regression building blocks --------------------------------------

/// sign(x) (|x| - t)_+
double soft_threshold(double x, double t);
Vector soft_threshold(const Eigen::Ref<const Vector>& x, double t);
Vector soft_threshold(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& t);

struct LassoOptions
{
    double tol = 1e-10;
    int max_sweeps = 10000;
};

struct LassoResult
{
    Vector v;
    int sweeps = 0;
    bool converged = true;
};

/// Minimizes 1/2 ||y - v||_R^2 + lambda ||v||_1.
///
/// Diagonal R is solved in closed form by soft-thresholding y at lambda / R_jj.
/// Otherwise cyclic coordinate descent runs full sweeps alternated with sweeps
/// over the current active set, until the largest coordinate change drops
/// below tol * max(1, |v|_inf). Coordinates with R_jj = 0 stay at zero.
LassoResult rnorm_lasso(const Eigen::Ref<const Vector>& y, const QuadraticOperator& r, double lambda,
                        const LassoOptions& opts = {}, const Vector* warm_start = nullptr);

double lasso_objective(const Eigen::Ref<const Vector>& v, const Eigen::Ref<const Vector>& y,
                       const QuadraticOperator& r, double lambda);

/// Omega = Gamma Lambda^2 Gamma^T split into its range and null space.
///
/// omega_inv_half = Lambda^{-1} Gamma_k^T (k x p), omega_half = Lambda Gamma_k^T,
/// null_basis = Gamma_null^T ((p-k) x p), with k the number of eigenvalues above
/// 1e-10 * lambda_max.
struct OmegaFactorization
{
    Matrix omega_inv_half;
    Matrix null_basis;
    Matrix omega_half;
    Index rank = 0;

    Index dim() const noexcept { return omega_half.cols(); }
};

OmegaFactorization omega_factorize(const QuadraticOperator& omega);

enum class OmegaSolver { proximal_gradient, secular };

struct OmegaOptions
{
    double tol = 1e-8;
    int max_iter = 5000;
    bool record_objective = false;
    OmegaSolver solver = OmegaSolver::proximal_gradient;
};

struct OmegaResult
{
    Vector v;
    Vector w;
    Vector eta;
    int iterations = 0;
    bool converged = false;
    double lipschitz = 0.0;
    std::vector<double> objective_trace;
};

/// Minimizes 1/2 ||y - v||_R^2 + lambda ||v||_Omega in the (w, eta)
/// parameterization v = omega_inv_half^T w + null_basis^T eta: proximal
/// gradient (accelerated, restarted group soft-threshold) steps on w pair with an exact
/// least-squares solve for eta.
OmegaResult omega_norm_regression(const Eigen::Ref<const Vector>& y, const QuadraticOperator& r,
                                  const OmegaFactorization& fac, double lambda,
                                  const OmegaOptions& opts = {}, const Vector* warm_w = nullptr);

/// Exact minimizer of the same problem. eta is eliminated in closed form,
/// leaving min 1/2 w^T H w - g^T w + lambda |w|; with H = W diag(h) W^T the
/// solution is w = (H + mu I)^{-1} g where mu |w| = lambda, a scalar equation
/// solved by bisection. The decomposition of H is cached per (R, Omega).
OmegaResult omega_norm_regression_exact(const Eigen::Ref<const Vector>& y, const QuadraticOperator& r,
                                        const OmegaFactorization& fac, double lambda);

double omega_seminorm(const Eigen::Ref<const Vector>& v, const OmegaFactorization& fac);

double omega_objective(const Eigen::Ref<const Vector>& v, const Eigen::Ref<const Vector>& y,
                       const QuadraticOperator& r, const OmegaFactorization& fac, double lambda);

// Penalties -----------------------------------------------------------------

enum class PenaltyKind { none, lasso, omega };

const char* to_string(PenaltyKind k);

struct PenaltySpec
{
    PenaltyKind kind = PenaltyKind::none;
    double lambda = 0.0;
    std::shared_ptr<const QuadraticOperator> omega;
    std::shared_ptr<const OmegaFactorization> omega_fac;

    static PenaltySpec none() { return {}; }
    static PenaltySpec lasso(double lambda);
    /// Factorizes omega once; the factorization is shared by copies.
    static PenaltySpec omega_norm(double lambda, std::shared_ptr<const QuadraticOperator> omega);

    PenaltySpec with_lambda(double l) const;
    void validate(Index dim) const;
    /// P(x): ||x||_1, ||x||_Omega or 0.
    double value(const Eigen::Ref<const Vector>& x) const;
};

struct PenalizedFit
{
    Vector coef;
    bool converged = true;
    /// Only set for the Omega penalty: the range-space coordinates.
    Vector w;
};

/// argmin 1/2 ||y - x||_M^2 + lambda P(x); P = 0 returns y.
PenalizedFit penalized_regression(const Eigen::Ref<const Vector>& y, const QuadraticOperator& m,
                                  const PenaltySpec& pen, const Vector* warm = nullptr);

/// Same with explicit solver settings. For the Omega penalty `warm` holds w.
PenalizedFit penalized_regression_with(const Eigen::Ref<const Vector>& y, const QuadraticOperator& m,
                                       const PenaltySpec& pen, const Vector* warm,
                                       const LassoOptions& lasso_opts, const OmegaOptions& omega_opts);

// GPMF ------------------------------------------------------------------------

struct GPMFOptions
{
    double tol = 1e-7;
    int max_outer = 500;
    int stall_limit = 50;
    std::uint64_t seed = 0;
    GMDOptions init{};
    LassoOptions lasso{};
    OmegaOptions omega{};
};

struct SingleFactor
{
    Vector u;
    double d = 0.0;
    Vector v;
    int outer_iterations = 0;
    bool converged = false;
    bool zero = false;
    bool stalled = false;
    std::vector<double> objective_trace;
};

/// u^T Q X R v - lambda_v P1(v) - lambda_u P2(u)
double gpmf_objective(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                      const QuadraticOperator& r, const Eigen::Ref<const Vector>& u,
                      const Eigen::Ref<const Vector>& v, const PenaltySpec& pen_u,
                      const PenaltySpec& pen_v);

/// Block-coordinate ascent for one penalized factor, started from the leading
/// GMD factor of x (or from `init_v` when given). Each half-step solves the
/// penalized regression and rescales to unit Q-/R-norm; a regression that
/// returns a zero-norm solution makes the whole factor zero.
SingleFactor gpmf_single_factor(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                                const QuadraticOperator& r, const PenaltySpec& pen_u,
                                const PenaltySpec& pen_v, const GPMFOptions& opts = {},
                                const Vector* init_u = nullptr, const Vector* init_v = nullptr);

struct GPMFResult
{
    GMDFactors factors;
    std::vector<double> lambda_u;
    std::vector<double> lambda_v;
    std::vector<bool> zero;
    std::vector<Index> nonzero_u;
    std::vector<Index> nonzero_v;
    /// u^T Omega u / v^T Omega v for Omega penalties, NaN otherwise.
    std::vector<double> smooth_u;
    std::vector<double> smooth_v;
    PenaltyKind kind_u = PenaltyKind::none;
    PenaltyKind kind_v = PenaltyKind::none;
};

/// Count of entries with |x| > 1e-12.
Index count_nonzero(const Eigen::Ref<const Vector>& x);

/// Fills the per-factor diagnostics of `res` for factor j.
void record_factor(GPMFResult& res, Index j, const SingleFactor& sf, const PenaltySpec& pen_u,
                   const PenaltySpec& pen_v);

GPMFResult make_gpmf_result(Index n, Index p, Index k);

/// Greedy deflation: fit a single factor, subtract u d v^T, repeat. A zero
/// factor leaves the residual unchanged. Later factors are not Q,R-orthogonal
/// to earlier ones.
GPMFResult gpmf(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                const QuadraticOperator& r, Index k, const PenaltySpec& pen_u,
                const PenaltySpec& pen_v, const GPMFOptions& opts = {});

} // namespace gmdkit
