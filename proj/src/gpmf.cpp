#include <gmdkit/gpmf.hpp>

#include <gmdkit/random.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace gmdkit {

double soft_threshold(double x, double t)
{
    if (!(t >= 0.0)) fail(ErrorKind::invalid_argument, "soft_threshold: negative threshold");
    if (x > t) return x - t;
    if (x < -t) return x + t;
    return 0.0;
}

Vector soft_threshold(const Eigen::Ref<const Vector>& x, double t)
{
    Vector out(x.size());
    for (Index i = 0; i < x.size(); ++i) out(i) = soft_threshold(x(i), t);
    return out;
}

Vector soft_threshold(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& t)
{
    if (x.size() != t.size()) fail(ErrorKind::dimension, "soft_threshold: size mismatch");
    Vector out(x.size());
    for (Index i = 0; i < x.size(); ++i) out(i) = soft_threshold(x(i), t(i));
    return out;
}

// ---------------------------------------------------------------------------

double lasso_objective(const Eigen::Ref<const Vector>& v, const Eigen::Ref<const Vector>& y,
                       const QuadraticOperator& r, double lambda)
{
    Vector res = y - v;
    return 0.5 * res.dot(r.apply(res)) + lambda * v.lpNorm<1>();
}

LassoResult rnorm_lasso(const Eigen::Ref<const Vector>& y, const QuadraticOperator& r, double lambda,
                        const LassoOptions& opts, const Vector* warm_start)
{
    const Index p = y.size();
    if (r.dim() != p) fail(ErrorKind::dimension, "rnorm_lasso: operator dimension mismatch");
    if (!(lambda >= 0.0)) fail(ErrorKind::invalid_argument, "rnorm_lasso: lambda must be >= 0");
    const Vector diag = r.diagonal();
    LassoResult out;

    if (r.is_diagonal()) {
        out.v.resize(p);
        for (Index j = 0; j < p; ++j)
            out.v(j) = diag(j) > 0.0 ? soft_threshold(y(j), lambda / diag(j)) : 0.0;
        return out;
    }

    const auto& mat = r.matrix();
    const Vector b = r.apply(y);
    Vector v = (warm_start && warm_start->size() == p) ? *warm_start : Vector::Zero(p);
    for (Index j = 0; j < p; ++j)
        if (!(diag(j) > 0.0)) v(j) = 0.0;
    Vector rv = r.apply(v);

    auto update = [&](Index j) {
        const double rjj = diag(j);
        const double rho = b(j) - (rv(j) - rjj * v(j));
        const double nv = soft_threshold(rho, lambda) / rjj;
        const double delta = nv - v(j);
        if (delta != 0.0) {
            for (SparseRowMatrix::InnerIterator it(mat, j); it; ++it) rv(it.col()) += delta * it.value();
            v(j) = nv;
        }
        return std::abs(delta);
    };

    std::vector<Index> active;
    out.converged = false;
    while (out.sweeps < opts.max_sweeps) {
        double max_change = 0.0;
        for (Index j = 0; j < p; ++j)
            if (diag(j) > 0.0) max_change = std::max(max_change, update(j));
        ++out.sweeps;
        double thresh = opts.tol * std::max(1.0, v.lpNorm<Eigen::Infinity>());
        if (max_change < thresh) {
            out.converged = true;
            break;
        }
        active.clear();
        for (Index j = 0; j < p; ++j)
            if (v(j) != 0.0) active.push_back(j);
        while (out.sweeps < opts.max_sweeps) {
            double change = 0.0;
            for (Index j : active) change = std::max(change, update(j));
            ++out.sweeps;
            if (change < opts.tol * std::max(1.0, v.lpNorm<Eigen::Infinity>())) break;
        }
    }
    out.v = std::move(v);
    return out;
}

// ---------------------------------------------------------------------------

OmegaFactorization omega_factorize(const QuadraticOperator& omega)
{
    if (omega.dim() > max_oracle_dim)
        fail(ErrorKind::dimension, "omega_factorize refuses dimensions above " + std::to_string(max_oracle_dim));
    Eigen::SelfAdjointEigenSolver<Matrix> es(omega.dense());
    if (es.info() != Eigen::Success) fail(ErrorKind::numerical, "omega eigendecomposition failed");
    const Vector& lam = es.eigenvalues(); // ascending
    const Index p = lam.size();
    const double lmax = lam(p - 1);
    if (!(lmax > 0.0) || lam(0) < -1e-10 * lmax)
        fail(ErrorKind::not_psd, "Omega must be PSD with at least one positive eigenvalue");
    Index k = 0;
    for (Index i = 0; i < p; ++i)
        if (lam(i) > 1e-10 * lmax) ++k;
    OmegaFactorization f;
    f.rank = k;
    f.omega_inv_half.resize(k, p);
    f.omega_half.resize(k, p);
    f.null_basis.resize(p - k, p);
    for (Index c = 0; c < k; ++c) {
        Index src = p - 1 - c;
        double s = std::sqrt(lam(src));
        f.omega_half.row(c) = s * es.eigenvectors().col(src).transpose();
        f.omega_inv_half.row(c) = es.eigenvectors().col(src).transpose() / s;
    }
    for (Index c = 0; c < p - k; ++c) f.null_basis.row(c) = es.eigenvectors().col(p - k - 1 - c).transpose();
    return f;
}

double omega_seminorm(const Eigen::Ref<const Vector>& v, const OmegaFactorization& fac)
{
    return (fac.omega_half * v).norm();
}

double omega_objective(const Eigen::Ref<const Vector>& v, const Eigen::Ref<const Vector>& y,
                       const QuadraticOperator& r, const OmegaFactorization& fac, double lambda)
{
    Vector res = y - v;
    return 0.5 * res.dot(r.apply(res)) + lambda * omega_seminorm(v, fac);
}

namespace {

/// Least-squares fit of a residual on the columns of N^T in the R-norm.
/// Directions the R-norm cannot see are fitted in the Euclidean norm instead,
/// so they are taken from the data rather than set by the pseudo-inverse.
struct NullSpaceFit
{
    Matrix nt;
    Matrix rn;
    Matrix ntn_pinv;
    Matrix blind;
    Matrix blind_pinv;

    NullSpaceFit() = default;
    NullSpaceFit(const Matrix& null_t, const QuadraticOperator& r) : nt(null_t)
    {
        const Index m = nt.cols();
        if (m == 0) return;
        rn = r.apply(nt);
        Matrix ntn = nt.transpose() * rn;
        ntn = 0.5 * (ntn + ntn.transpose());
        Eigen::SelfAdjointEigenSolver<Matrix> es(ntn);
        const double top = std::max(es.eigenvalues().maxCoeff(), 0.0);
        ntn_pinv = Matrix::Zero(m, m);
        std::vector<Index> zero;
        for (Index i = 0; i < m; ++i) {
            const double ev = es.eigenvalues()(i);
            if (ev > 1e-12 * top && ev > 0.0)
                ntn_pinv += es.eigenvectors().col(i) * es.eigenvectors().col(i).transpose() / ev;
            else
                zero.push_back(i);
        }
        if (!zero.empty()) {
            blind.resize(m, static_cast<Index>(zero.size()));
            for (std::size_t j = 0; j < zero.size(); ++j) blind.col(static_cast<Index>(j)) = es.eigenvectors().col(zero[j]);
            Eigen::CompleteOrthogonalDecomposition<Matrix> cod(nt * blind);
            blind_pinv = cod.pseudoInverse();
        }
    }

    /// eta minimizing |resid - N^T eta|_R, ties broken in the Euclidean norm.
    Vector solve(const Vector& resid) const
    {
        if (nt.cols() == 0) return Vector(0);
        Vector eta = ntn_pinv * (rn.transpose() * resid);
        if (blind.size() > 0) eta += blind * (blind_pinv * (resid - nt * eta));
        return eta;
    }
};

} // namespace

OmegaResult omega_norm_regression(const Eigen::Ref<const Vector>& y, const QuadraticOperator& r,
                                  const OmegaFactorization& fac, double lambda,
                                  const OmegaOptions& opts, const Vector* warm_w)
{
    const Index p = y.size();
    if (r.dim() != p || fac.dim() != p)
        fail(ErrorKind::dimension, "omega_norm_regression: dimension mismatch");
    if (!(lambda >= 0.0)) fail(ErrorKind::invalid_argument, "omega_norm_regression: lambda must be >= 0");
    const Index k = fac.rank;

    const Matrix a = fac.omega_inv_half.transpose(); // p x k
    const Matrix nt = fac.null_basis.transpose();    // p x m
    const Matrix ra = r.apply(a);
    const Matrix rn = r.apply(nt);
    const Matrix ata = a.transpose() * ra;           // A^T R A
    const Matrix atn = a.transpose() * rn;           // A^T R N^T
    const Vector ry = r.apply(y);
    const Vector a_ry = a.transpose() * ry;

    OmegaResult out;
    const NullSpaceFit null_fit(nt, r);
    auto eta_for = [&](const Vector& w) -> Vector { return null_fit.solve(y - a * w); };
    auto objective = [&](const Vector& w, const Vector& eta) {
        Vector v = a * w + nt * eta;
        Vector res = y - v;
        return 0.5 * res.dot(r.apply(res)) + lambda * w.norm();
    };

    const Vector eta0 = eta_for(Vector::Zero(k));
    if ((a_ry - atn * eta0).norm() <= lambda) {
        out.converged = true;
        out.w = Vector::Zero(k);
        out.eta = eta0;
        out.v = nt * eta0;
        if (opts.record_objective) out.objective_trace.push_back(objective(out.w, eta0));
        return out;
    }

    // Reduced Hessian of the profiled smooth part.
    Matrix proj = a;
    for (Index j = 0; j < k; ++j) proj.col(j) -= nt * null_fit.solve(a.col(j));
    Matrix hess = proj.transpose() * r.apply(proj);
    hess = 0.5 * (hess + hess.transpose());
    double top = k > 0 ? Eigen::SelfAdjointEigenSolver<Matrix>(hess, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff() : 0.0;
    out.lipschitz = top > 0.0 ? 1.01 * top : 1.0;

    auto prox_step = [&](const Vector& z, double lip) -> Vector {
        Vector wt = z + (a_ry - ata * z - atn * eta_for(z)) / lip;
        double nwt = wt.norm();
        if (nwt == 0.0) return Vector::Zero(k);
        double shrink = 1.0 - lambda / (lip * nwt);
        return shrink > 0.0 ? Vector(shrink * wt) : Vector(Vector::Zero(k));
    };

    Vector w = (warm_w && warm_w->size() == k) ? *warm_w : Vector(fac.omega_half * y);
    Vector eta = eta_for(w);
    double obj = objective(w, eta);
    if (!std::isfinite(obj)) fail(ErrorKind::numerical, "omega_norm_regression: non-finite objective");
    if (opts.record_objective) out.objective_trace.push_back(obj);

    const double scale = std::max({1.0, lambda, a_ry.norm()});
    double lip = out.lipschitz;
    Vector z = w;
    double t = 1.0;
    for (out.iterations = 0; out.iterations < opts.max_iter;) {
        Vector w_new = prox_step(z, lip);
        Vector eta_new = eta_for(w_new);
        double obj_new = objective(w_new, eta_new);
        if (!std::isfinite(obj_new)) fail(ErrorKind::numerical, "omega_norm_regression: non-finite objective");
        ++out.iterations;
        const double mapping = lip * (w_new - z).norm();
        const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        if (obj_new > obj) {
            // Restart from the last accepted point.
            if (z == w) {
                if (mapping <= opts.tol * scale || obj_new <= obj + 1e-13 * (1.0 + std::abs(obj))) {
                    out.converged = true;
                    break;
                }
                lip *= 2.0;
            }
            z = w;
            t = 1.0;
            continue;
        }
        Vector step = w_new - w;
        w = std::move(w_new);
        eta = std::move(eta_new);
        obj = obj_new;
        if (opts.record_objective) out.objective_trace.push_back(obj);
        if (mapping <= opts.tol * scale) {
            out.converged = true;
            break;
        }
        z = w + ((t - 1.0) / t_new) * step;
        t = t_new;
    }
    out.lipschitz = lip;
    out.w = w;
    out.eta = eta;
    out.v = a * w + nt * eta;
    return out;
}

namespace {

struct ReducedOmega
{
    Matrix omega_half;
    SparseRowMatrix r;
    Matrix a;
    NullSpaceFit null_fit;
    Matrix r_reduced;
    Matrix eigvec;
    Vector eigval;
};

bool same_sparse(const SparseRowMatrix& a, const SparseRowMatrix& b)
{
    if (a.rows() != b.rows() || a.nonZeros() != b.nonZeros()) return false;
    const Index nnz = a.nonZeros();
    return std::equal(a.valuePtr(), a.valuePtr() + nnz, b.valuePtr()) &&
           std::equal(a.innerIndexPtr(), a.innerIndexPtr() + nnz, b.innerIndexPtr()) &&
           std::equal(a.outerIndexPtr(), a.outerIndexPtr() + a.outerSize() + 1, b.outerIndexPtr());
}

std::shared_ptr<const ReducedOmega> reduced_omega(const QuadraticOperator& r, const OmegaFactorization& fac)
{
    thread_local std::vector<std::shared_ptr<const ReducedOmega>> cache;
    for (const auto& c : cache)
        if (c->omega_half.rows() == fac.omega_half.rows() && c->omega_half.cols() == fac.omega_half.cols() &&
            c->omega_half == fac.omega_half && same_sparse(c->r, r.matrix()))
            return c;

    auto red = std::make_shared<ReducedOmega>();
    red->omega_half = fac.omega_half;
    red->r = r.matrix();
    red->a = fac.omega_inv_half.transpose();
    red->null_fit = NullSpaceFit(fac.null_basis.transpose(), r);
    red->r_reduced = r.dense();
    if (red->null_fit.nt.cols() > 0)
        red->r_reduced -= red->null_fit.rn * red->null_fit.ntn_pinv * red->null_fit.rn.transpose();
    Matrix h = red->a.transpose() * red->r_reduced * red->a;
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (h + h.transpose()));
    if (es.info() != Eigen::Success) fail(ErrorKind::numerical, "omega_norm_regression: eigensolver failed");
    red->eigvec = es.eigenvectors();
    red->eigval = es.eigenvalues().cwiseMax(0.0);
    if (cache.size() >= 8) cache.erase(cache.begin());
    cache.push_back(red);
    return red;
}

} // namespace

OmegaResult omega_norm_regression_exact(const Eigen::Ref<const Vector>& y, const QuadraticOperator& r,
                                        const OmegaFactorization& fac, double lambda)
{
    const Index p = y.size();
    if (r.dim() != p || fac.dim() != p)
        fail(ErrorKind::dimension, "omega_norm_regression: dimension mismatch");
    if (!(lambda >= 0.0)) fail(ErrorKind::invalid_argument, "omega_norm_regression: lambda must be >= 0");
    const auto red = reduced_omega(r, fac);
    const Index k = fac.rank;
    const Vector& h = red->eigval;
    Vector gt = red->eigvec.transpose() * (red->a.transpose() * (red->r_reduced * y));
    const double hmax = h.size() ? h.maxCoeff() : 0.0;
    for (Index i = 0; i < k; ++i)
        if (h(i) <= 1e-14 * hmax) gt(i) = 0.0;
    const double gnorm = gt.norm();

    OmegaResult out;
    out.converged = true;
    Vector wt = Vector::Zero(k);
    if (gnorm > lambda && hmax > 0.0) {
        if (lambda == 0.0) {
            for (Index i = 0; i < k; ++i)
                if (gt(i) != 0.0) wt(i) = gt(i) / h(i);
        } else {
            auto excess = [&](double mu) {
                return mu * (gt.array() / (h.array() + mu)).matrix().norm() - lambda;
            };
            double hmin = hmax;
            for (Index i = 0; i < k; ++i)
                if (gt(i) != 0.0) hmin = std::min(hmin, h(i));
            double lo = lambda * hmin / (gnorm - lambda);
            double hi = lambda * hmax / (gnorm - lambda);
            lo = std::max(lo * 0.5, std::numeric_limits<double>::min());
            hi = hi * 2.0 + std::numeric_limits<double>::min();
            for (out.iterations = 0; out.iterations < 200 && hi > lo * (1.0 + 4e-16); ++out.iterations) {
                const double mid = std::sqrt(lo * hi);
                (excess(mid) < 0.0 ? lo : hi) = mid;
            }
            const double mu = std::sqrt(lo * hi);
            wt = (gt.array() / (h.array() + mu)).matrix();
        }
    }
    out.w = red->eigvec * wt;
    Vector fit = red->a * out.w;
    out.eta = red->null_fit.solve(y - fit);
    if (out.eta.size() > 0) fit += red->null_fit.nt * out.eta;
    out.v = std::move(fit);
    if (!out.v.allFinite()) fail(ErrorKind::numerical, "omega_norm_regression: non-finite solution");
    return out;
}

// ---------------------------------------------------------------------------

const char* to_string(PenaltyKind k)
{
    switch (k) {
        case PenaltyKind::none: return "none";
        case PenaltyKind::lasso: return "lasso";
        case PenaltyKind::omega: return "omega";
    }
    return "none";
}

PenaltySpec PenaltySpec::lasso(double lambda)
{
    PenaltySpec p;
    p.kind = PenaltyKind::lasso;
    p.lambda = lambda;
    return p;
}

PenaltySpec PenaltySpec::omega_norm(double lambda, std::shared_ptr<const QuadraticOperator> omega)
{
    if (!omega) fail(ErrorKind::invalid_argument, "omega penalty needs an operator");
    PenaltySpec p;
    p.kind = PenaltyKind::omega;
    p.lambda = lambda;
    p.omega = std::move(omega);
    p.omega_fac = std::make_shared<const OmegaFactorization>(omega_factorize(*p.omega));
    return p;
}

PenaltySpec PenaltySpec::with_lambda(double l) const
{
    PenaltySpec p = *this;
    p.lambda = l;
    return p;
}

void PenaltySpec::validate(Index dim) const
{
    if (!(lambda >= 0.0)) fail(ErrorKind::invalid_argument, "penalty lambda must be >= 0");
    if (kind == PenaltyKind::omega) {
        if (!omega || !omega_fac) fail(ErrorKind::invalid_argument, "omega penalty needs an operator");
        if (omega->dim() != dim) fail(ErrorKind::dimension, "omega operator dimension mismatch");
    }
}

double PenaltySpec::value(const Eigen::Ref<const Vector>& x) const
{
    switch (kind) {
        case PenaltyKind::none: return 0.0;
        case PenaltyKind::lasso: return x.lpNorm<1>();
        case PenaltyKind::omega: return omega_seminorm(x, *omega_fac);
    }
    return 0.0;
}

PenalizedFit penalized_regression(const Eigen::Ref<const Vector>& y, const QuadraticOperator& m,
                                  const PenaltySpec& pen, const Vector* warm)
{
    return penalized_regression_with(y, m, pen, warm, LassoOptions{}, OmegaOptions{});
}

PenalizedFit penalized_regression_with(const Eigen::Ref<const Vector>& y, const QuadraticOperator& m,
                                       const PenaltySpec& pen, const Vector* warm,
                                       const LassoOptions& lasso_opts, const OmegaOptions& omega_opts)
{
    PenalizedFit fit;
    switch (pen.kind) {
        case PenaltyKind::none:
            fit.coef = y;
            break;
        case PenaltyKind::lasso: {
            auto res = rnorm_lasso(y, m, pen.lambda, lasso_opts, warm);
            fit.coef = std::move(res.v);
            fit.converged = res.converged;
            break;
        }
        case PenaltyKind::omega: {
            auto res = omega_opts.solver == OmegaSolver::secular
                           ? omega_norm_regression_exact(y, m, *pen.omega_fac, pen.lambda)
                           : omega_norm_regression(y, m, *pen.omega_fac, pen.lambda, omega_opts, warm);
            fit.coef = std::move(res.v);
            fit.w = std::move(res.w);
            fit.converged = res.converged;
            break;
        }
    }
    return fit;
}

// ---------------------------------------------------------------------------

double gpmf_objective(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                      const QuadraticOperator& r, const Eigen::Ref<const Vector>& u,
                      const Eigen::Ref<const Vector>& v, const PenaltySpec& pen_u,
                      const PenaltySpec& pen_v)
{
    double fit = q.apply(u).dot(x * r.apply(v));
    return fit - pen_v.lambda * pen_v.value(v) - pen_u.lambda * pen_u.value(u);
}

namespace {

struct HalfStep
{
    Vector unit;
    Vector warm;
    bool zero = false;
};

HalfStep penalized_half_step(const Vector& y, const QuadraticOperator& m, const PenaltySpec& pen,
                             const Vector* warm, const GPMFOptions& opts)
{
    HalfStep hs;
    PenalizedFit fit = penalized_regression_with(y, m, pen, warm, opts.lasso, opts.omega);
    const double ny = q_norm_vec(y, m);
    const double nfit = q_norm_vec(fit.coef, m);
    if (!(nfit > 1e-12 * ny) || nfit == 0.0) {
        hs.zero = true;
        return hs;
    }
    hs.unit = fit.coef / nfit;
    hs.warm = pen.kind == PenaltyKind::omega ? std::move(fit.w) : std::move(fit.coef);
    return hs;
}

} // namespace

SingleFactor gpmf_single_factor(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                                const QuadraticOperator& r, const PenaltySpec& pen_u,
                                const PenaltySpec& pen_v, const GPMFOptions& opts,
                                const Vector* init_u, const Vector* init_v)
{
    const Index n = x.rows(), p = x.cols();
    if (q.dim() != n || r.dim() != p) fail(ErrorKind::dimension, "gpmf: operator dimensions do not match the data");
    pen_u.validate(n);
    pen_v.validate(p);

    SingleFactor sf;
    auto make_zero = [&](SingleFactor& s) {
        s.u = Vector::Zero(n);
        s.v = Vector::Zero(p);
        s.d = 0.0;
        s.zero = true;
        s.converged = true;
    };

    Vector u, v;
    if (init_v) {
        v = *init_v;
        Vector y = x * r.apply(v);
        double nq = q_norm_vec(y, q);
        if (nq == 0.0) {
            make_zero(sf);
            return sf;
        }
        u = init_u ? *init_u : Vector(y / nq);
    } else {
        GMDOptions go = opts.init;
        go.seed = opts.seed;
        GMDFactors g = gmd_power(x, q, r, 1, go);
        if (g.D(0) == 0.0) {
            make_zero(sf);
            return sf;
        }
        u = g.U.col(0);
        v = g.V.col(0);
    }

    double obj = gpmf_objective(x, q, r, u, v, pen_u, pen_v);
    sf.objective_trace.push_back(obj);
    double best = obj;
    Vector best_u = u, best_v = v;
    int stall = 0;
    Vector warm_u, warm_v;

    for (sf.outer_iterations = 0; sf.outer_iterations < opts.max_outer;) {
        HalfStep hu = penalized_half_step(x * r.apply(v), q, pen_u, warm_u.size() ? &warm_u : nullptr, opts);
        if (hu.zero) {
            make_zero(sf);
            return sf;
        }
        u = std::move(hu.unit);
        warm_u = std::move(hu.warm);

        HalfStep hv = penalized_half_step(x.transpose() * q.apply(u), r, pen_v,
                                          warm_v.size() ? &warm_v : nullptr, opts);
        if (hv.zero) {
            make_zero(sf);
            return sf;
        }
        v = std::move(hv.unit);
        warm_v = std::move(hv.warm);
        ++sf.outer_iterations;

        double obj_new = gpmf_objective(x, q, r, u, v, pen_u, pen_v);
        if (!std::isfinite(obj_new)) fail(ErrorKind::numerical, "gpmf: non-finite objective");
        sf.objective_trace.push_back(obj_new);
        const double change = std::abs(obj_new - obj);
        obj = obj_new;
        if (obj > best + 1e-12 * std::max(1.0, std::abs(best))) {
            best = obj;
            best_u = u;
            best_v = v;
            stall = 0;
        } else if (++stall >= opts.stall_limit) {
            sf.stalled = true;
            u = best_u;
            v = best_v;
            break;
        }
        if (change <= opts.tol * std::max(1.0, std::abs(obj))) {
            sf.converged = true;
            if (obj < best) {
                u = best_u;
                v = best_v;
            }
            break;
        }
    }
    sf.d = q.apply(u).dot(x * r.apply(v));
    if (sf.d < 0.0) {
        u = -u;
        sf.d = -sf.d;
    }
    apply_sign_convention(u, v);
    sf.u = std::move(u);
    sf.v = std::move(v);
    return sf;
}

Index count_nonzero(const Eigen::Ref<const Vector>& x)
{
    Index c = 0;
    for (Index i = 0; i < x.size(); ++i)
        if (std::abs(x(i)) > 1e-12) ++c;
    return c;
}

GPMFResult make_gpmf_result(Index n, Index p, Index k)
{
    GPMFResult res;
    res.factors.U = Matrix::Zero(n, k);
    res.factors.V = Matrix::Zero(p, k);
    res.factors.D = Vector::Zero(k);
    res.factors.iterations.assign(static_cast<std::size_t>(k), 0);
    res.factors.converged.assign(static_cast<std::size_t>(k), false);
    res.factors.seeds.assign(static_cast<std::size_t>(k), 0);
    res.lambda_u.assign(static_cast<std::size_t>(k), 0.0);
    res.lambda_v.assign(static_cast<std::size_t>(k), 0.0);
    res.zero.assign(static_cast<std::size_t>(k), false);
    res.nonzero_u.assign(static_cast<std::size_t>(k), 0);
    res.nonzero_v.assign(static_cast<std::size_t>(k), 0);
    res.smooth_u.assign(static_cast<std::size_t>(k), std::numeric_limits<double>::quiet_NaN());
    res.smooth_v.assign(static_cast<std::size_t>(k), std::numeric_limits<double>::quiet_NaN());
    return res;
}

void record_factor(GPMFResult& res, Index j, const SingleFactor& sf, const PenaltySpec& pen_u,
                   const PenaltySpec& pen_v)
{
    const auto s = static_cast<std::size_t>(j);
    res.factors.U.col(j) = sf.u;
    res.factors.V.col(j) = sf.v;
    res.factors.D(j) = sf.d;
    res.factors.iterations[s] = sf.outer_iterations;
    res.factors.converged[s] = sf.converged && !sf.stalled;
    res.lambda_u[s] = pen_u.lambda;
    res.lambda_v[s] = pen_v.lambda;
    res.zero[s] = sf.zero;
    res.nonzero_u[s] = count_nonzero(sf.u);
    res.nonzero_v[s] = count_nonzero(sf.v);
    if (pen_u.kind == PenaltyKind::omega) res.smooth_u[s] = sf.u.dot(pen_u.omega->apply(sf.u));
    if (pen_v.kind == PenaltyKind::omega) res.smooth_v[s] = sf.v.dot(pen_v.omega->apply(sf.v));
    res.kind_u = pen_u.kind;
    res.kind_v = pen_v.kind;
}

GPMFResult gpmf(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                const QuadraticOperator& r, Index k, const PenaltySpec& pen_u,
                const PenaltySpec& pen_v, const GPMFOptions& opts)
{
    if (k < 1) fail(ErrorKind::invalid_argument, "gpmf: K must be >= 1");
    if (k > std::min(x.rows(), x.cols())) fail(ErrorKind::invalid_argument, "gpmf: K exceeds min(n, p)");
    GPMFResult res = make_gpmf_result(x.rows(), x.cols(), k);
    res.kind_u = pen_u.kind;
    res.kind_v = pen_v.kind;
    Matrix xh = x;
    for (Index j = 0; j < k; ++j) {
        GPMFOptions o = opts;
        o.seed = derive_seed(opts.seed, static_cast<std::uint64_t>(j));
        SingleFactor sf = gpmf_single_factor(xh, q, r, pen_u, pen_v, o);
        record_factor(res, j, sf, pen_u, pen_v);
        res.factors.seeds[static_cast<std::size_t>(j)] = o.seed;
        if (!sf.zero) xh.noalias() -= sf.d * sf.u * sf.v.transpose();
    }
    return res;
}

} // namespace gmdkit
