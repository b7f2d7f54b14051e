#include <gmdkit/model_select.hpp>

#include <gmdkit/random.hpp>

#include <cmath>

namespace gmdkit {

double bic_score(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                 const QuadraticOperator& r, const Eigen::Ref<const Vector>& u, double d,
                 const Eigen::Ref<const Vector>& v_hat, double df)
{
    if (!(df >= 0.0)) fail(ErrorKind::invalid_argument, "bic_score: df must be >= 0");
    if (u.size() != x.rows() || v_hat.size() != x.cols()) fail(ErrorKind::dimension, "bic_score: dimension mismatch");
    const double np = static_cast<double>(x.rows()) * static_cast<double>(x.cols());
    Matrix resid = x - d * u * v_hat.transpose();
    double rss = std::max(qr_norm_sq(resid, q, r), 1e-12 * np);
    return std::log(rss / np) + std::log(np) / np * df;
}

Index lasso_df(const Eigen::Ref<const Vector>& v_hat) { return count_nonzero(v_hat); }

double omega_df(const Eigen::Ref<const Vector>& w, const OmegaFactorization& fac)
{
    return static_cast<double>(fac.dim() - fac.rank) + (w.norm() > 0.0 ? 1.0 : 0.0);
}

double lambda_max(const Eigen::Ref<const Vector>& y, const QuadraticOperator& m, const PenaltySpec& pen)
{
    switch (pen.kind) {
        case PenaltyKind::none: return 0.0;
        case PenaltyKind::lasso: return m.apply(y).lpNorm<Eigen::Infinity>();
        case PenaltyKind::omega: {
            const auto& fac = *pen.omega_fac;
            // Residual after the unpenalized null-space fit, then the range-space gradient norm.
            Matrix nt = fac.null_basis.transpose();
            Vector resid = y;
            if (nt.cols() > 0) {
                Matrix rn = m.apply(nt);
                Matrix ntn = nt.transpose() * rn;
                Eigen::CompleteOrthogonalDecomposition<Matrix> cod(ntn);
                cod.setThreshold(1e-12);
                Vector eta = cod.solve(rn.transpose() * y);
                resid -= nt * eta;
            }
            return (fac.omega_inv_half * m.apply(resid)).norm();
        }
    }
    return 0.0;
}

std::vector<double> default_lambda_grid(double lmax, int count, double min_ratio)
{
    std::vector<double> grid;
    if (!(lmax > 0.0) || count < 1) return {0.0};
    if (count == 1) return {lmax};
    const double lo = std::log(lmax * min_ratio), hi = std::log(lmax);
    for (int i = 0; i < count; ++i)
        grid.push_back(std::exp(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1)));
    grid.back() = lmax;
    return grid;
}

BICReport select_penalty(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                         const QuadraticOperator& r, const Eigen::Ref<const Vector>& u, double d,
                         const Eigen::Ref<const Vector>& v, Side side, const PenaltySpec& pen,
                         const std::vector<double>& lambda_grid, SelectStrategy,
                         const LassoOptions& lasso_opts, const OmegaOptions& omega_opts)
{
    if (lambda_grid.empty()) fail(ErrorKind::invalid_argument, "select_penalty: empty lambda grid");
    BICReport rep;
    rep.side = side;
    rep.kind = pen.kind;
    // Work on the v side throughout; the u side is the same problem on X^T with Q and R swapped.
    const bool on_u = side == Side::u;
    const Matrix xt = on_u ? Matrix(x.transpose()) : Matrix();
    const Eigen::Ref<const Matrix> xs = on_u ? Eigen::Ref<const Matrix>(xt) : x;
    const QuadraticOperator& left = on_u ? r : q;
    const QuadraticOperator& right = on_u ? q : r;
    const Vector fixed = on_u ? Vector(v) : Vector(u);
    pen.validate(xs.cols());

    const Vector y = xs.transpose() * left.apply(fixed);
    rep.all_zero = true;
    Vector warm;
    double best = 0.0;
    for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
        const double lam = lambda_grid[i];
        PenalizedFit fit = penalized_regression_with(y, right, pen.with_lambda(lam), warm.size() ? &warm : nullptr,
                                                     lasso_opts, omega_opts);
        double df = 0.0;
        switch (pen.kind) {
            case PenaltyKind::none: df = static_cast<double>(xs.cols()); break;
            case PenaltyKind::lasso: df = static_cast<double>(lasso_df(fit.coef)); break;
            case PenaltyKind::omega: df = omega_df(fit.w, *pen.omega_fac); break;
        }
        if (count_nonzero(fit.coef) > 0) rep.all_zero = false;
        const double norm = q_norm_vec(fit.coef, right);
        const Vector scaled = norm > 0.0 ? Vector(fit.coef / norm) : Vector(Vector::Zero(fit.coef.size()));
        const double score = bic_score(xs, left, right, fixed, d, scaled, df);
        rep.lambdas.push_back(lam);
        rep.scores.push_back(score);
        rep.df.push_back(df);
        const double slack = 1e-12 * std::max(1.0, std::abs(best));
        if (i == 0 || score < best - slack ||
            (std::abs(score - best) <= slack && lam > rep.lambdas[static_cast<std::size_t>(rep.chosen)])) {
            if (i == 0 || score < best) best = score;
            rep.chosen = static_cast<Index>(i);
        }
        warm = pen.kind == PenaltyKind::omega ? fit.w : fit.coef;
    }
    return rep;
}

SelectedGPMF gpmf_select(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                         const QuadraticOperator& r, Index k, const SideSelection& sel_u,
                         const SideSelection& sel_v, const GPMFOptions& opts)
{
    if (k < 1) fail(ErrorKind::invalid_argument, "gpmf: K must be >= 1");
    if (k > std::min(x.rows(), x.cols())) fail(ErrorKind::invalid_argument, "gpmf: K exceeds min(n, p)");
    SelectedGPMF out;
    out.result = make_gpmf_result(x.rows(), x.cols(), k);
    out.result.kind_u = sel_u.pen.kind;
    out.result.kind_v = sel_v.pen.kind;
    Matrix xh = x;
    for (Index j = 0; j < k; ++j) {
        const std::uint64_t seed = derive_seed(opts.seed, static_cast<std::uint64_t>(j));
        GMDOptions go = opts.init;
        go.seed = seed;
        GMDFactors g = gmd_power(xh, q, r, 1, go);
        PenaltySpec pu = sel_u.pen, pv = sel_v.pen;
        if (g.D(0) == 0.0) {
            SingleFactor zero;
            zero.u = Vector::Zero(x.rows());
            zero.v = Vector::Zero(x.cols());
            zero.zero = true;
            zero.converged = true;
            record_factor(out.result, j, zero, pu, pv);
            continue;
        }
        const Vector u0 = g.U.col(0), v0 = g.V.col(0);
        const double d0 = g.D(0);
        auto choose = [&](const SideSelection& sel, Side side, PenaltySpec& pen, std::vector<BICReport>& sink) {
            if (!sel.use_bic || pen.kind == PenaltyKind::none) return;
            std::vector<double> grid = sel.grid;
            if (grid.empty()) {
                Vector y = side == Side::v ? Vector(xh.transpose() * q.apply(u0)) : Vector(xh * r.apply(v0));
                grid = default_lambda_grid(lambda_max(y, side == Side::v ? r : q, pen));
            }
            BICReport rep = select_penalty(xh, q, r, u0, d0, v0, side, pen, grid,
                                           SelectStrategy::post_convergence, opts.lasso, opts.omega);
            pen = pen.with_lambda(rep.chosen_lambda());
            sink.push_back(std::move(rep));
        };
        choose(sel_u, Side::u, pu, out.reports_u);
        choose(sel_v, Side::v, pv, out.reports_v);

        GPMFOptions o = opts;
        o.seed = seed;
        SingleFactor sf = gpmf_single_factor(xh, q, r, pu, pv, o, &u0, &v0);
        record_factor(out.result, j, sf, pu, pv);
        out.result.factors.seeds[static_cast<std::size_t>(j)] = seed;
        if (!sf.zero) xh.noalias() -= sf.d * sf.u * sf.v.transpose();
    }
    return out;
}

} // namespace gmdkit
