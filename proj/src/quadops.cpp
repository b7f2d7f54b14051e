#include <gmdkit/quadops.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

namespace gmdkit {

const char* to_string(OperatorKind k)
{
    switch (k) {
        case OperatorKind::identity: return "identity";
        case OperatorKind::laplacian: return "laplacian";
        case OperatorKind::kernel_smoother: return "kernel_smoother";
        case OperatorKind::ar_precision: return "ar_precision";
        case OperatorKind::custom: return "custom";
    }
    return "custom";
}

QuadraticOperator QuadraticOperator::identity(Index dim)
{
    if (dim < 1) fail(ErrorKind::dimension, "identity operator needs dim >= 1");
    QuadraticOperator op;
    op.dim_ = dim;
    op.kind_ = OperatorKind::identity;
    op.rank_hint_ = dim;
    op.mat_.resize(dim, dim);
    op.mat_.setIdentity();
    op.finalize();
    return op;
}

QuadraticOperator QuadraticOperator::from_lower(Index dim, std::span<const Entry> lower,
                                                OperatorKind kind,
                                                std::optional<Index> rank_hint)
{
    if (dim < 1) fail(ErrorKind::dimension, "operator dimension must be positive");
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(2 * lower.size());
    for (const auto& e : lower) {
        if (e.row < 0 || e.col < 0 || e.row >= dim || e.col >= dim)
            fail(ErrorKind::dimension, "operator entry out of range");
        if (e.row < e.col)
            fail(ErrorKind::invalid_argument, "from_lower expects row >= col");
        if (!std::isfinite(e.value)) fail(ErrorKind::numerical, "non-finite operator entry");
        trip.emplace_back(e.row, e.col, e.value);
        if (e.row != e.col) trip.emplace_back(e.col, e.row, e.value);
    }
    QuadraticOperator op;
    op.dim_ = dim;
    op.kind_ = kind;
    op.rank_hint_ = rank_hint;
    op.mat_.resize(dim, dim);
    op.mat_.setFromTriplets(trip.begin(), trip.end());
    op.finalize();
    if (kind == OperatorKind::identity) {
        bool ok = op.mat_.nonZeros() == dim;
        for (Index i = 0; ok && i < dim; ++i) ok = op.entry(i, i) == 1.0;
        if (!ok) fail(ErrorKind::invalid_argument, "identity kind requires identity entries");
    }
    return op;
}

QuadraticOperator QuadraticOperator::from_dense(const Matrix& dense, OperatorKind kind,
                                                std::optional<Index> rank_hint, double drop_tol)
{
    if (dense.rows() != dense.cols())
        fail(ErrorKind::dimension, "quadratic operator must be square");
    std::vector<Entry> lower;
    for (Index i = 0; i < dense.rows(); ++i)
        for (Index j = 0; j <= i; ++j) {
            double v = dense(i, j);
            if (v != 0.0 && std::abs(v) > drop_tol) lower.push_back({i, j, v});
        }
    return from_lower(dense.rows(), lower, kind, rank_hint);
}

void QuadraticOperator::finalize()
{
    mat_.makeCompressed();
    // setFromTriplets leaves column indices sorted within each row.
    diagonal_only_ = true;
    for (Index i = 0; i < mat_.outerSize() && diagonal_only_; ++i)
        for (SparseRowMatrix::InnerIterator it(mat_, i); it; ++it)
            if (it.col() != i && it.value() != 0.0) {
                diagonal_only_ = false;
                break;
            }
}

double QuadraticOperator::entry(Index i, Index j) const
{
    if (i < 0 || j < 0 || i >= dim_ || j >= dim_) fail(ErrorKind::dimension, "entry out of range");
    return mat_.coeff(i, j);
}

Vector QuadraticOperator::diagonal() const { return mat_.diagonal(); }

double QuadraticOperator::max_abs() const
{
    double m = 0.0;
    for (Index k = 0; k < mat_.nonZeros(); ++k) m = std::max(m, std::abs(mat_.valuePtr()[k]));
    return m;
}

Vector QuadraticOperator::apply(const Eigen::Ref<const Vector>& x) const
{
    if (x.size() != dim_)
        fail(ErrorKind::dimension, "apply: operator dim " + std::to_string(dim_) +
                                       " vs vector length " + std::to_string(x.size()));
    return mat_ * x;
}

Matrix QuadraticOperator::apply(const Eigen::Ref<const Matrix>& x) const
{
    if (x.rows() != dim_)
        fail(ErrorKind::dimension, "apply: operator dim " + std::to_string(dim_) +
                                       " vs matrix rows " + std::to_string(x.rows()));
    return mat_ * x;
}

Matrix QuadraticOperator::apply_right(const Eigen::Ref<const Matrix>& x) const
{
    if (x.cols() != dim_)
        fail(ErrorKind::dimension, "apply_right: operator dim " + std::to_string(dim_) +
                                       " vs matrix cols " + std::to_string(x.cols()));
    // M is symmetric, so X M = (M X^T)^T.
    Matrix xt = x.transpose();
    return (mat_ * xt).transpose();
}

std::vector<QuadraticOperator::Entry> QuadraticOperator::lower_entries() const
{
    std::vector<Entry> out;
    out.reserve(static_cast<std::size_t>(mat_.nonZeros() / 2 + dim_));
    for (Index i = 0; i < mat_.outerSize(); ++i)
        for (SparseRowMatrix::InnerIterator it(mat_, i); it; ++it)
            if (it.col() <= i) out.push_back({i, it.col(), it.value()});
    return out;
}

// ---------------------------------------------------------------------------

Matrix double_center(const Matrix& x)
{
    Matrix c = x;
    for (int pass = 0; pass < 2; ++pass) {
        c.colwise() -= c.rowwise().mean();
        c.rowwise() -= c.colwise().mean();
    }
    return c;
}

DataMatrix double_center(const DataMatrix& x) { return DataMatrix(double_center(x.values), true); }

// ---------------------------------------------------------------------------

namespace {

using Edge = std::pair<Index, Index>;

QuadraticOperator laplacian_from_edges(Index n, const std::set<Edge>& edges,
                                       std::optional<Index> rank_hint)
{
    std::vector<double> degree(static_cast<std::size_t>(n), 0.0);
    std::vector<QuadraticOperator::Entry> lower;
    lower.reserve(edges.size() + static_cast<std::size_t>(n));
    for (auto [a, b] : edges) {
        degree[static_cast<std::size_t>(a)] += 1.0;
        degree[static_cast<std::size_t>(b)] += 1.0;
        lower.push_back({std::max(a, b), std::min(a, b), -1.0});
    }
    for (Index i = 0; i < n; ++i)
        if (degree[static_cast<std::size_t>(i)] > 0.0)
            lower.push_back({i, i, degree[static_cast<std::size_t>(i)]});
    return QuadraticOperator::from_lower(n, lower, OperatorKind::laplacian, rank_hint);
}

// Number of connected components, union-find.
Index count_components(Index n, const std::set<Edge>& edges)
{
    std::vector<Index> parent(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) parent[static_cast<std::size_t>(i)] = i;
    auto find = [&](Index i) {
        while (parent[static_cast<std::size_t>(i)] != i) {
            auto& pi = parent[static_cast<std::size_t>(i)];
            pi = parent[static_cast<std::size_t>(pi)];
            i = pi;
        }
        return i;
    };
    Index comps = n;
    for (auto [a, b] : edges) {
        Index ra = find(a), rb = find(b);
        if (ra != rb) {
            parent[static_cast<std::size_t>(ra)] = rb;
            --comps;
        }
    }
    return comps;
}

double min_eigenvalue(const SparseRowMatrix& m)
{
    // Dense eigenvalues are affordable for every operator size the builders
    // are used with; larger smoothers fall back to power iteration on c*I - M.
    const Index n = m.rows();
    if (n <= 4000) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix(m), Eigen::EigenvaluesOnly);
        return es.eigenvalues()(0);
    }
    double bound = 0.0;
    for (Index i = 0; i < n; ++i) {
        double s = 0.0;
        for (SparseRowMatrix::InnerIterator it(m, i); it; ++it) s += std::abs(it.value());
        bound = std::max(bound, s);
    }
    Vector x = Vector::LinSpaced(n, 1.0, 2.0);
    x.normalize();
    double lam = 0.0;
    for (int it = 0; it < 3000; ++it) {
        Vector y = bound * x - m * x;
        lam = x.dot(y);
        double ny = y.norm();
        if (ny == 0.0) break;
        x = y / ny;
    }
    return bound - lam;
}

} // namespace

QuadraticOperator build_chain_laplacian(Index p)
{
    if (p < 2) fail(ErrorKind::dimension, "chain Laplacian needs p >= 2");
    std::set<Edge> edges;
    for (Index i = 0; i + 1 < p; ++i) edges.insert({i, i + 1});
    return laplacian_from_edges(p, edges, p - 1);
}

QuadraticOperator build_grid_laplacian(Index m1, Index m2)
{
    if (m1 < 2 || m2 < 2) fail(ErrorKind::dimension, "grid Laplacian needs m1, m2 >= 2");
    if (m1 > std::numeric_limits<std::int32_t>::max() / m2)
        fail(ErrorKind::dimension, "grid dimension overflow");
    const Index n = m1 * m2;
    std::set<Edge> edges;
    // node (r, c) -> r * m2 + c
    for (Index r = 0; r < m1; ++r)
        for (Index c = 0; c < m2; ++c) {
            Index i = r * m2 + c;
            if (c + 1 < m2) edges.insert({i, i + 1});
            if (r + 1 < m1) edges.insert({i, i + m2});
        }
    return laplacian_from_edges(n, edges, n - 1);
}

QuadraticOperator build_graph_laplacian(Index n, std::span<const std::pair<Index, Index>> edges)
{
    if (n < 1) fail(ErrorKind::dimension, "graph needs at least one vertex");
    std::set<Edge> uniq;
    for (auto [a, b] : edges) {
        if (a < 0 || b < 0 || a >= n || b >= n) fail(ErrorKind::dimension, "edge out of range");
        if (a == b) continue;
        uniq.insert({std::min(a, b), std::max(a, b)});
    }
    return laplacian_from_edges(n, uniq, n - count_components(n, uniq));
}

QuadraticOperator build_second_difference_gram(Index p)
{
    if (p < 3) fail(ErrorKind::dimension, "second differences need p >= 3");
    Matrix d = Matrix::Zero(p - 2, p);
    for (Index i = 0; i + 2 < p; ++i) {
        d(i, i) = 1.0;
        d(i, i + 1) = -2.0;
        d(i, i + 2) = 1.0;
    }
    return QuadraticOperator::from_dense(d.transpose() * d, OperatorKind::custom, p - 2);
}

Matrix kernel_smoother_weights(Index p, Index window)
{
    if (p < 2) fail(ErrorKind::dimension, "kernel smoother needs p >= 2");
    if (window < 1) fail(ErrorKind::invalid_argument, "kernel window must be positive");
    if (window >= p) fail(ErrorKind::invalid_argument, "kernel window must be smaller than p");
    const Index half = std::max<Index>(1, window / 2);
    Matrix s = Matrix::Zero(p, p);
    for (Index i = 0; i < p; ++i) {
        double total = 0.0;
        for (Index off = -half + 1; off <= half - 1; ++off) {
            Index j = i + off;
            if (j < 0 || j >= p) continue;
            double u = static_cast<double>(off) / static_cast<double>(half);
            double w = 0.75 * (1.0 - u * u);
            s(i, j) = w;
            total += w;
        }
        s.row(i) /= total;
    }
    return s;
}

QuadraticOperator build_kernel_smoother(Index p, Index window)
{
    Matrix s = kernel_smoother_weights(p, window);
    Matrix sym = 0.5 * (s + s.transpose());
    auto op = QuadraticOperator::from_dense(sym, OperatorKind::kernel_smoother);
    double lmin = min_eigenvalue(op.matrix());
    if (lmin < -1e-10) {
        sym.diagonal().array() += -lmin;
        op = QuadraticOperator::from_dense(sym, OperatorKind::kernel_smoother);
    }
    return op;
}

QuadraticOperator build_grid_kernel_smoother(Index m1, Index m2, Index window)
{
    auto a = build_kernel_smoother(m1, window);
    auto b = build_kernel_smoother(m2, window);
    const Index n = m1 * m2;
    std::vector<QuadraticOperator::Entry> lower;
    for (Index r1 = 0; r1 < m1; ++r1)
        for (SparseRowMatrix::InnerIterator ia(a.matrix(), r1); ia; ++ia)
            for (Index r2 = 0; r2 < m2; ++r2)
                for (SparseRowMatrix::InnerIterator ib(b.matrix(), r2); ib; ++ib) {
                    Index row = r1 * m2 + r2;
                    Index col = ia.col() * m2 + ib.col();
                    if (col <= row) lower.push_back({row, col, ia.value() * ib.value()});
                }
    return QuadraticOperator::from_lower(n, lower, OperatorKind::kernel_smoother);
}

Matrix ar_covariance(std::span<const Index> dims, double rho, ArMode mode)
{
    if (!(rho > -1.0 && rho < 1.0)) fail(ErrorKind::invalid_argument, "AR correlation must lie in (-1, 1)");
    if (dims.empty()) fail(ErrorKind::dimension, "AR operator needs at least one dimension");
    Index n = 1;
    for (Index d : dims) {
        if (d < 1) fail(ErrorKind::dimension, "AR dimensions must be positive");
        if (n > max_dense_ar_dim / d) fail(ErrorKind::dimension, "AR grid too large for dense inversion");
        n *= d;
    }
    if (mode == ArMode::chain && dims.size() != 1)
        fail(ErrorKind::dimension, "chain AR mode takes one dimension");
    // Flattened coordinates, last dimension fastest.
    std::vector<std::vector<Index>> coord(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        Index rem = i;
        auto& c = coord[static_cast<std::size_t>(i)];
        c.resize(dims.size());
        for (std::size_t k = dims.size(); k-- > 0;) {
            c[k] = rem % dims[k];
            rem /= dims[k];
        }
    }
    Matrix cov(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j <= i; ++j) {
            Index dist = 0;
            for (std::size_t k = 0; k < dims.size(); ++k)
                dist += std::abs(coord[static_cast<std::size_t>(i)][k] - coord[static_cast<std::size_t>(j)][k]);
            double v = std::pow(rho, static_cast<double>(dist));
            cov(i, j) = v;
            cov(j, i) = v;
        }
    return cov;
}

QuadraticOperator build_ar_precision(std::span<const Index> dims, double rho, ArMode mode)
{
    if (!(rho > -1.0 && rho < 1.0)) fail(ErrorKind::invalid_argument, "AR correlation must lie in (-1, 1)");
    if (mode == ArMode::chain) {
        if (dims.size() != 1) fail(ErrorKind::dimension, "chain AR mode takes one dimension");
        const Index p = dims[0];
        if (p < 1) fail(ErrorKind::dimension, "AR dimension must be positive");
        const double s = 1.0 / (1.0 - rho * rho);
        std::vector<QuadraticOperator::Entry> lower;
        for (Index i = 0; i < p; ++i) {
            bool end = (i == 0 || i == p - 1);
            double diag = (p == 1) ? 1.0 : (end ? s : (1.0 + rho * rho) * s);
            lower.push_back({i, i, diag});
            if (i > 0 && rho != 0.0) lower.push_back({i, i - 1, -rho * s});
        }
        return QuadraticOperator::from_lower(p, lower, OperatorKind::ar_precision, p);
    }
    Matrix cov = ar_covariance(dims, rho, mode);
    const Index n = cov.rows();
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) fail(ErrorKind::numerical, "AR covariance is not positive definite");
    Matrix prec = llt.solve(Matrix::Identity(n, n));
    prec = 0.5 * (prec + prec.transpose()).eval();
    double drop = 1e-12 * prec.cwiseAbs().maxCoeff();
    return QuadraticOperator::from_dense(prec, OperatorKind::ar_precision, n, drop);
}

// ---------------------------------------------------------------------------

double clamp_quadratic_form(double value, double scale)
{
    if (!std::isfinite(value)) fail(ErrorKind::numerical, "non-finite quadratic form");
    if (value >= 0.0) return value;
    if (value >= -1e-10 * std::max(1.0, scale)) return 0.0;
    fail(ErrorKind::not_psd, "quadratic form is negative (" + std::to_string(value) +
                                 "); operator is not PSD");
}

double qr_norm_sq(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                  const QuadraticOperator& r)
{
    if (q.dim() != x.rows() || r.dim() != x.cols())
        fail(ErrorKind::dimension, "qr_norm: operator dimensions do not match data");
    Matrix qx = q.apply(x);
    Matrix xr = r.apply_right(x);
    double tr = qx.cwiseProduct(xr).sum();
    return clamp_quadratic_form(tr, qx.norm() * xr.norm());
}

double qr_norm(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
               const QuadraticOperator& r)
{
    return std::sqrt(qr_norm_sq(x, q, r));
}

double qr_norm(const DataMatrix& x, const QuadraticOperator& q, const QuadraticOperator& r)
{
    return qr_norm(x.values, q, r);
}

double q_norm_vec(const Eigen::Ref<const Vector>& x, const QuadraticOperator& m)
{
    Vector mx = m.apply(x);
    double v = x.dot(mx);
    return std::sqrt(clamp_quadratic_form(v, x.norm() * mx.norm()));
}

} // namespace gmdkit
