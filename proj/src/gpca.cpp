#include <gmdkit/gpca.hpp>

#include <algorithm>

namespace gmdkit {

Matrix gpc_scores(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& r,
                  const Eigen::Ref<const Matrix>& v)
{
    if (r.dim() != x.cols() || v.rows() != x.cols())
        fail(ErrorKind::dimension, "gpc_scores: dimension mismatch");
    return x * r.apply(v);
}

VarianceReport variance_explained(const GMDFactors& f, const Eigen::Ref<const Matrix>& x,
                                  const QuadraticOperator& q, const QuadraticOperator& r)
{
    VarianceReport rep;
    rep.total_qr_norm_sq = qr_norm_sq(x, q, r);
    if (rep.total_qr_norm_sq <= 0.0)
        fail(ErrorKind::numerical, "variance explained is undefined for ||X||_{Q,R} = 0");
    const Index k = f.D.size();
    rep.per_component = f.D.array().square() / rep.total_qr_norm_sq;
    rep.cumulative.resize(k);
    double acc = 0.0;
    for (Index j = 0; j < k; ++j) {
        acc += rep.per_component(j);
        rep.cumulative(j) = acc;
    }
    return rep;
}

namespace {

// Inverse of a symmetric positive (semi-)definite Gram matrix.
Matrix gram_inverse(const Matrix& g, bool& ridged)
{
    const Index k = g.rows();
    Eigen::SelfAdjointEigenSolver<Matrix> es(g);
    const Vector& lam = es.eigenvalues();
    const double lmax = lam.cwiseAbs().maxCoeff();
    const double lmin = lam.minCoeff();
    Matrix reg = g;
    if (lmax > 0.0 && !(lmin > lmax * 1e-12)) {
        ridged = true;
        reg.diagonal().array() += 1e-12 * std::max(lmax, 1e-300);
    }
    Eigen::LDLT<Matrix> ldlt(reg);
    return ldlt.solve(Matrix::Identity(k, k));
}

} // namespace

RegularizedVariance cumulative_variance_regularized(const Eigen::Ref<const Matrix>& u,
                                                    const Eigen::Ref<const Matrix>& v,
                                                    const Eigen::Ref<const Matrix>& x,
                                                    const QuadraticOperator& q,
                                                    const QuadraticOperator& r)
{
    if (u.rows() != x.rows() || v.rows() != x.cols() || u.cols() != v.cols())
        fail(ErrorKind::dimension, "cumulative_variance_regularized: dimension mismatch");
    RegularizedVariance out;
    const double total = qr_norm_sq(x, q, r);
    if (total <= 0.0) fail(ErrorKind::numerical, "variance explained is undefined for ||X||_{Q,R} = 0");

    std::vector<Index> keep_u, keep_v;
    for (Index j = 0; j < u.cols(); ++j) {
        bool zero = u.col(j).isZero(0.0) || v.col(j).isZero(0.0);
        if (zero)
            out.dropped.push_back(j);
        else {
            keep_u.push_back(j);
            keep_v.push_back(j);
        }
    }
    if (keep_u.empty()) return out;

    const Index k = static_cast<Index>(keep_u.size());
    Matrix uk(u.rows(), k), vk(v.rows(), k);
    for (Index j = 0; j < k; ++j) {
        uk.col(j) = u.col(keep_u[static_cast<std::size_t>(j)]);
        vk.col(j) = v.col(keep_v[static_cast<std::size_t>(j)]);
    }
    Matrix qu = q.apply(uk);
    Matrix rv = r.apply(vk);
    Matrix a = uk.transpose() * qu; // U^T Q U
    Matrix b = vk.transpose() * rv; // V^T R V
    a = 0.5 * (a + a.transpose()).eval();
    b = 0.5 * (b + b.transpose()).eval();
    Matrix m = qu.transpose() * x * rv; // U^T Q X R V
    Matrix ai = gram_inverse(a, out.ridged);
    Matrix bi = gram_inverse(b, out.ridged);
    // X_k = U A^{-1} M B^{-1} V^T, so tr(Q X_k R X_k^T) = tr(M B^{-1} M^T A^{-1}).
    double explained = (m * bi * m.transpose() * ai).trace();
    out.value = std::max(0.0, explained / total);
    return out;
}

VarianceReport regularized_variance_report(const Eigen::Ref<const Matrix>& u,
                                           const Eigen::Ref<const Matrix>& v,
                                           const Eigen::Ref<const Matrix>& x,
                                           const QuadraticOperator& q, const QuadraticOperator& r)
{
    VarianceReport rep;
    rep.total_qr_norm_sq = qr_norm_sq(x, q, r);
    const Index k = u.cols();
    rep.cumulative.resize(k);
    rep.per_component.resize(k);
    double prev = 0.0;
    for (Index j = 0; j < k; ++j) {
        double c = cumulative_variance_regularized(u.leftCols(j + 1), v.leftCols(j + 1), x, q, r).value;
        rep.cumulative(j) = std::max(c, prev);
        rep.per_component(j) = c - prev;
        prev = rep.cumulative(j);
    }
    return rep;
}

} // namespace gmdkit
