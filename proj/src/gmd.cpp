#include <gmdkit/gmd.hpp>

#include <gmdkit/random.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gmdkit {

void apply_sign_convention(Eigen::Ref<Vector> u, Eigen::Ref<Vector> v)
{
    if (v.size() == 0) return;
    Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v(imax) < 0.0) {
        u = -u;
        v = -v;
    }
}

namespace {

void check_dims(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                const QuadraticOperator& r, Index k)
{
    if (q.dim() != x.rows() || r.dim() != x.cols())
        fail(ErrorKind::dimension, "GMD: operator dimensions do not match the data");
    if (k < 0 || k > std::min(x.rows(), x.cols()))
        fail(ErrorKind::invalid_argument, "GMD: K must satisfy 0 <= K <= min(n, p)");
}

bool all_finite(const Vector& v) { return v.allFinite(); }

// Reorders factors so that D is non-increasing; stable for ties.
void sort_factors(GMDFactors& f)
{
    const Index k = f.D.size();
    std::vector<Index> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return f.D(a) > f.D(b); });
    if (std::is_sorted(order.begin(), order.end())) return;
    GMDFactors g = f;
    for (Index j = 0; j < k; ++j) {
        auto s = static_cast<std::size_t>(order[static_cast<std::size_t>(j)]);
        g.U.col(j) = f.U.col(static_cast<Index>(s));
        g.V.col(j) = f.V.col(static_cast<Index>(s));
        g.D(j) = f.D(static_cast<Index>(s));
        g.iterations[static_cast<std::size_t>(j)] = f.iterations[s];
        g.converged[static_cast<std::size_t>(j)] = f.converged[s];
        g.seeds[static_cast<std::size_t>(j)] = f.seeds[s];
    }
    f = std::move(g);
}

} // namespace

GMDFactors gmd_power(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                     const QuadraticOperator& r, Index k, const GMDOptions& opts)
{
    check_dims(x, q, r, k);
    const Index n = x.rows(), p = x.cols();
    GMDFactors f;
    f.U = Matrix::Zero(n, k);
    f.V = Matrix::Zero(p, k);
    f.D = Vector::Zero(k);
    f.iterations.assign(static_cast<std::size_t>(k), 0);
    f.converged.assign(static_cast<std::size_t>(k), false);
    f.seeds.assign(static_cast<std::size_t>(k), 0);

    if (!x.allFinite()) fail(ErrorKind::numerical, "GMD: data contains non-finite values");
    const double scale = qr_norm(x, q, r);
    if (scale == 0.0) return f;
    const double degenerate = 1e-13 * scale;

    Matrix xh = x;
    for (Index j = 0; j < k; ++j) {
        for (int attempt = 0; attempt <= opts.max_reseeds; ++attempt) {
            const std::uint64_t s = derive_seed(opts.seed, static_cast<std::uint64_t>(j),
                                                static_cast<std::uint64_t>(attempt));
            Rng rng(s);
            Vector v = standard_normal_vector(rng, p);
            double nv = q_norm_vec(v, r);
            if (!(nv > 0.0)) continue;
            v /= nv;

            Vector u(n);
            double d = 0.0;
            bool degenerate_run = false;
            bool converged = false;
            int it = 0;
            for (; it < opts.max_iter; ++it) {
                Vector y = xh * r.apply(v);
                double nq = q_norm_vec(y, q);
                if (!std::isfinite(nq)) fail(ErrorKind::numerical, "GMD: NaN during power iteration");
                if (nq <= degenerate) {
                    degenerate_run = true;
                    break;
                }
                u = y / nq;
                Vector z = xh.transpose() * q.apply(u);
                double nr = q_norm_vec(z, r);
                if (!std::isfinite(nr)) fail(ErrorKind::numerical, "GMD: NaN during power iteration");
                if (nr <= degenerate) {
                    degenerate_run = true;
                    break;
                }
                Vector v_new = z / nr;
                // d = u^T Q X R v_new = z^T R v_new = ||z||_R
                const double d_new = nr;
                const double dv = q_norm_vec(v_new - v, r);
                const double dd = std::abs(d_new - d) / d_new;
                v = std::move(v_new);
                d = d_new;
                if (dd < opts.tol && dv < opts.tol) {
                    converged = true;
                    ++it;
                    break;
                }
            }
            if (degenerate_run) continue;
            if (!all_finite(u) || !all_finite(v)) fail(ErrorKind::numerical, "GMD: NaN in factors");
            // Refresh u so that the pair satisfies d = u^T Q X R v exactly.
            Vector y = xh * r.apply(v);
            double nq = q_norm_vec(y, q);
            if (nq > degenerate) u = y / nq;
            d = u.dot(q.apply(y));
            if (d < 0.0) {
                u = -u;
                d = -d;
            }
            apply_sign_convention(u, v);
            f.U.col(j) = u;
            f.V.col(j) = v;
            f.D(j) = d;
            f.iterations[static_cast<std::size_t>(j)] = it;
            f.converged[static_cast<std::size_t>(j)] = converged;
            f.seeds[static_cast<std::size_t>(j)] = s;
            xh.noalias() -= d * u * v.transpose();
            break;
        }
        // A factor that stayed degenerate through every reseed remains zero.
    }
    sort_factors(f);
    return f;
}

void half_factor(const QuadraticOperator& m, Matrix& half, Matrix& left_pinv, double rel_cutoff)
{
    if (m.dim() > max_oracle_dim)
        fail(ErrorKind::dimension, "dense factorization refused above dimension " +
                                       std::to_string(max_oracle_dim));
    Eigen::SelfAdjointEigenSolver<Matrix> es(m.dense());
    if (es.info() != Eigen::Success) fail(ErrorKind::numerical, "eigendecomposition failed");
    const Vector& lam = es.eigenvalues(); // ascending
    const Index n = lam.size();
    const double lmax = lam(n - 1);
    if (lam(0) < -1e-10 * std::max(1.0, std::abs(lmax)))
        fail(ErrorKind::not_psd, "operator has a negative eigenvalue");
    Index l = 0;
    for (Index i = 0; i < n; ++i)
        if (lam(i) > rel_cutoff * lmax) ++l;
    half.resize(n, l);
    left_pinv.resize(n, l);
    // Descending eigenvalue order.
    for (Index c = 0; c < l; ++c) {
        Index src = n - 1 - c;
        double s = std::sqrt(lam(src));
        half.col(c) = es.eigenvectors().col(src) * s;
        left_pinv.col(c) = es.eigenvectors().col(src) / s;
    }
}

WhitenedForm whiten(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                    const QuadraticOperator& r)
{
    if (q.dim() != x.rows() || r.dim() != x.cols())
        fail(ErrorKind::dimension, "whiten: operator dimensions do not match the data");
    WhitenedForm w;
    half_factor(q, w.q_half, w.q_left_pinv);
    half_factor(r, w.r_half, w.r_left_pinv);
    w.x_tilde = w.q_half.transpose() * x * w.r_half;
    return w;
}

GMDFactors gmd_oracle(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                      const QuadraticOperator& r, Index k)
{
    check_dims(x, q, r, k);
    if (x.rows() > max_oracle_dim || x.cols() > max_oracle_dim)
        fail(ErrorKind::dimension, "gmd_oracle refuses dimensions above " + std::to_string(max_oracle_dim));
    WhitenedForm w = whiten(x, q, r);
    const Index n = x.rows(), p = x.cols();
    GMDFactors f;
    f.U = Matrix::Zero(n, k);
    f.V = Matrix::Zero(p, k);
    f.D = Vector::Zero(k);
    f.iterations.assign(static_cast<std::size_t>(k), 0);
    f.converged.assign(static_cast<std::size_t>(k), true);
    f.seeds.assign(static_cast<std::size_t>(k), 0);
    if (w.x_tilde.size() == 0) return f;

    Eigen::JacobiSVD<Matrix> svd(w.x_tilde, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Index avail = std::min<Index>(k, svd.singularValues().size());
    for (Index j = 0; j < avail; ++j) {
        double d = svd.singularValues()(j);
        if (d <= 0.0) break;
        Vector u = w.q_left_pinv * svd.matrixU().col(j);
        Vector v = w.r_left_pinv * svd.matrixV().col(j);
        apply_sign_convention(u, v);
        f.U.col(j) = u;
        f.V.col(j) = v;
        f.D(j) = d;
    }
    return f;
}

Matrix reconstruct(const GMDFactors& f, Index k)
{
    if (k < 0 || k > f.D.size()) fail(ErrorKind::invalid_argument, "reconstruct: k out of range");
    Matrix out = Matrix::Zero(f.U.rows(), f.V.rows());
    for (Index j = 0; j < k; ++j) out.noalias() += f.D(j) * f.U.col(j) * f.V.col(j).transpose();
    return out;
}

} // namespace gmdkit
