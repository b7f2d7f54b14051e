#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <gmdkit/error.hpp>

namespace gmdkit {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

enum class OperatorKind { identity, laplacian, kernel_smoother, ar_precision, custom };

const char* to_string(OperatorKind k);

/// Symmetric positive semi-definite operator stored in compressed-row form.
///
/// Construction only accepts the lower triangle (diagonal included); the
/// stored matrix mirrors it, so entry(i,j) == entry(j,i) holds bit for bit.
/// Instances are immutable once built.
class QuadraticOperator
{
public:
    struct Entry
    {
        Index row;
        Index col;
        double value;
    };

    static QuadraticOperator identity(Index dim);

    /// Entries with row < col are rejected; duplicates are summed.
    static QuadraticOperator from_lower(Index dim, std::span<const Entry> lower,
                                        OperatorKind kind = OperatorKind::custom,
                                        std::optional<Index> rank_hint = std::nullopt);

    /// Uses the lower triangle of `dense`; entries with |x| <= drop_tol are not stored.
    static QuadraticOperator from_dense(const Matrix& dense,
                                        OperatorKind kind = OperatorKind::custom,
                                        std::optional<Index> rank_hint = std::nullopt,
                                        double drop_tol = 0.0);

    Index dim() const noexcept { return dim_; }
    OperatorKind kind() const noexcept { return kind_; }
    std::optional<Index> rank_hint() const noexcept { return rank_hint_; }
    const SparseRowMatrix& matrix() const noexcept { return mat_; }
    Index nnz() const noexcept { return mat_.nonZeros(); }

    double entry(Index i, Index j) const;
    Vector diagonal() const;
    /// True when no off-diagonal entry is stored.
    bool is_diagonal() const noexcept { return diagonal_only_; }
    double max_abs() const;
    Matrix dense() const { return Matrix(mat_); }

    Vector apply(const Eigen::Ref<const Vector>& x) const;
    /// M * X
    Matrix apply(const Eigen::Ref<const Matrix>& x) const;
    Vector apply(const Vector& x) const { return apply(Eigen::Ref<const Vector>(x)); }
    Matrix apply(const Matrix& x) const { return apply(Eigen::Ref<const Matrix>(x)); }
    /// X * M
    Matrix apply_right(const Eigen::Ref<const Matrix>& x) const;

    /// Row-major lower triangle, used by writers.
    std::vector<Entry> lower_entries() const;

private:
    QuadraticOperator() = default;
    void finalize();

    Index dim_ = 0;
    OperatorKind kind_ = OperatorKind::custom;
    std::optional<Index> rank_hint_;
    SparseRowMatrix mat_;
    bool diagonal_only_ = false;
};

/// Dense n x p data with a flag recording whether double-centering was applied.
struct DataMatrix
{
    Matrix values;
    bool centered = false;

    DataMatrix() = default;
    explicit DataMatrix(Matrix v, bool c = false) : values(std::move(v)), centered(c) {}

    Index n_rows() const noexcept { return values.rows(); }
    Index n_cols() const noexcept { return values.cols(); }
};

/// Alternating row/column mean removal; two passes.
DataMatrix double_center(const DataMatrix& x);
Matrix double_center(const Matrix& x);

// Builders -----------------------------------------------------------------

QuadraticOperator build_chain_laplacian(Index p);
QuadraticOperator build_grid_laplacian(Index m1, Index m2);

/// Laplacian of an undirected graph; self loops and duplicate edges are ignored.
QuadraticOperator build_graph_laplacian(Index n, std::span<const std::pair<Index, Index>> edges);

/// Gram matrix D^T D of the (p-2) x p second-difference operator.
QuadraticOperator build_second_difference_gram(Index p);

/// Local Epanechnikov averaging on p equally spaced points. Rows are normalized
/// to sum to one, the result is symmetrized and, if needed, shifted on the
/// diagonal to be PSD.
QuadraticOperator build_kernel_smoother(Index p, Index window);

/// Row-stochastic (unsymmetrized) smoother weights, exposed for tests.
Matrix kernel_smoother_weights(Index p, Index window);

/// Product smoother S_{m1} (x) S_{m2} on an m1 x m2 grid.
QuadraticOperator build_grid_kernel_smoother(Index m1, Index m2, Index window);

enum class ArMode { chain, grid_manhattan };

/// Covariance rho^d(i,j) with d the chain or Manhattan grid distance.
Matrix ar_covariance(std::span<const Index> dims, double rho, ArMode mode);

QuadraticOperator build_ar_precision(std::span<const Index> dims, double rho, ArMode mode);

inline constexpr Index max_dense_ar_dim = 10000;

// Norms ----------------------------------------------------------------------

/// sqrt(tr(Q X R X^T)), evaluated as sqrt(<QX, XR>).
double qr_norm(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
               const QuadraticOperator& r);
double qr_norm(const DataMatrix& x, const QuadraticOperator& q, const QuadraticOperator& r);

/// tr(Q X R X^T) with the same clamping as qr_norm.
double qr_norm_sq(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                  const QuadraticOperator& r);

/// sqrt(x^T M x)
double q_norm_vec(const Eigen::Ref<const Vector>& x, const QuadraticOperator& m);

/// Clamp a quadratic form evaluated in floating point: values in
/// [-1e-10 * scale, 0) become 0, anything below raises ErrorKind::not_psd.
double clamp_quadratic_form(double value, double scale);

} // namespace gmdkit
