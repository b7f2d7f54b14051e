#pragma once

#include <optional>
#include <vector>

#include <gmdkit/gpmf.hpp>

namespace gmdkit {

/// Which factor of a single-factor fit carries the penalty being selected.
enum class Side { u, v };

struct BICReport
{
    std::vector<double> lambdas;
    std::vector<double> scores;
    std::vector<double> df;
    Index chosen = 0;
    /// Set when every grid value produced a zero fit.
    bool all_zero = false;
    Side side = Side::v;
    PenaltyKind kind = PenaltyKind::lasso;

    double chosen_lambda() const { return lambdas.at(static_cast<std::size_t>(chosen)); }
};

/// log(||X - d u v_hat^T||^2_{Q,R} / np) + log(np)/np * df.
/// The residual norm is floored at 1e-12 * np before the log.
double bic_score(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                 const QuadraticOperator& r, const Eigen::Ref<const Vector>& u, double d,
                 const Eigen::Ref<const Vector>& v_hat, double df);

/// Number of entries with |v| > 1e-12.
Index lasso_df(const Eigen::Ref<const Vector>& v_hat);

/// (p - rank(Omega)) + 1 if the range-space part w is nonzero.
double omega_df(const Eigen::Ref<const Vector>& w, const OmegaFactorization& fac);

/// Smallest lambda whose penalized regression of y in the M-norm is zero
/// (lasso) or has a zero range-space part (Omega).
double lambda_max(const Eigen::Ref<const Vector>& y, const QuadraticOperator& m, const PenaltySpec& pen);

/// `count` log-spaced values from min_ratio * lmax up to lmax, ascending.
std::vector<double> default_lambda_grid(double lmax, int count = 30, double min_ratio = 1e-4);

enum class SelectStrategy { post_convergence };

/// BIC over a lambda grid with the other factor and d held at a converged
/// unpenalized fit (u, d, v). For each lambda the penalized regression of the
/// chosen side is solved once; its solution, rescaled to unit norm in that
/// side's metric, is v_hat in the scored layer d u v_hat^T. Ties go to the
/// larger lambda.
BICReport select_penalty(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                         const QuadraticOperator& r, const Eigen::Ref<const Vector>& u, double d,
                         const Eigen::Ref<const Vector>& v, Side side, const PenaltySpec& pen,
                         const std::vector<double>& lambda_grid,
                         SelectStrategy strategy = SelectStrategy::post_convergence,
                         const LassoOptions& lasso_opts = {}, const OmegaOptions& omega_opts = {});

/// Penalty for one side of a multi-factor fit: a fixed lambda, or BIC over a grid
/// (an empty grid means default_lambda_grid from lambda_max).
struct SideSelection
{
    PenaltySpec pen;
    bool use_bic = false;
    std::vector<double> grid;
};

struct SelectedGPMF
{
    GPMFResult result;
    std::vector<BICReport> reports_u;
    std::vector<BICReport> reports_v;
};

/// GPMF with per-factor BIC selection: each factor starts from the leading GMD
/// factor of the residual, lambdas are chosen post-convergence, the penalized
/// factor is refit at the chosen lambdas, and the residual is deflated.
SelectedGPMF gpmf_select(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                         const QuadraticOperator& r, Index k, const SideSelection& sel_u,
                         const SideSelection& sel_v, const GPMFOptions& opts = {});

} // namespace gmdkit
