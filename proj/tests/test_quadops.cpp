#include <gtest/gtest.h>

#include <gmdkit/quadops.hpp>
#include <gmdkit/random.hpp>

#include "oracles.hpp"
#include "support.hpp"

#include <array>

using namespace gmdkit;

namespace {

double quad_form_floor(const QuadraticOperator& op, Rng& rng)
{
    const Matrix m = oracle::dense(op);
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
        Vector x = standard_normal_vector(rng, op.dim());
        const double rel = x.dot(m * x) / (x.squaredNorm() * std::max(op.max_abs(), 1e-300));
        worst = std::min(worst, rel);
    }
    return worst;
}

} // namespace

TEST(ChainLaplacian, ThreeNodePath)
{
    Matrix expect(3, 3);
    expect << 1, -1, 0, -1, 2, -1, 0, -1, 1;
    QuadraticOperator l = build_chain_laplacian(3);
    EXPECT_EQ(oracle::dense(l), expect);
    EXPECT_EQ(l.rank_hint().value(), 2);
    EXPECT_EQ(l.kind(), OperatorKind::laplacian);
}

TEST(ChainLaplacian, SingleEdge)
{
    Matrix expect(2, 2);
    expect << 1, -1, -1, 1;
    EXPECT_EQ(oracle::dense(build_chain_laplacian(2)), expect);
}

TEST(ChainLaplacian, NullSpaceIsConstants)
{
    Matrix l = oracle::dense(build_chain_laplacian(5));
    EXPECT_LT((l * Vector::Ones(5)).norm(), 1e-15);
    Eigen::SelfAdjointEigenSolver<Matrix> es(l);
    EXPECT_NEAR(es.eigenvalues()(0), 0.0, 1e-12);
    EXPECT_GT(es.eigenvalues()(1), 1e-3);
    const Vector e0 = es.eigenvectors().col(0);
    EXPECT_NEAR(std::abs(e0.sum()) / std::sqrt(5.0), 1.0, 1e-12);
}

TEST(ChainLaplacian, RejectsTinyDimension)
{
    expect_kind(ErrorKind::dimension, [] { build_chain_laplacian(1); });
}

TEST(GridLaplacian, TwoByTwoIsFourCycle)
{
    Matrix l = oracle::dense(build_grid_laplacian(2, 2));
    EXPECT_EQ(l.diagonal(), Vector::Constant(4, 2.0));
    // Each vertex of the 4-cycle has exactly two neighbours.
    for (Index i = 0; i < 4; ++i) EXPECT_EQ((l.row(i).array() == -1.0).count(), 2);
    EXPECT_EQ(l(0, 3), 0.0);
}

TEST(GridLaplacian, SixteenBySixteen)
{
    QuadraticOperator l = build_grid_laplacian(16, 16);
    EXPECT_EQ(l.dim(), 256);
    EXPECT_EQ(l.rank_hint().value(), 255);
    EXPECT_LT((oracle::dense(l) * Vector::Ones(256)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(GridLaplacian, CornerAndEdgeDegrees)
{
    Matrix l = oracle::dense(build_grid_laplacian(2, 3));
    Vector deg = l.diagonal();
    std::vector<double> d(deg.data(), deg.data() + deg.size());
    std::sort(d.begin(), d.end());
    EXPECT_EQ(d, (std::vector<double>{2, 2, 2, 2, 3, 3}));
}

TEST(GridLaplacian, RejectsDegenerateGrid)
{
    expect_kind(ErrorKind::dimension, [] { build_grid_laplacian(1, 5); });
}

TEST(KernelSmoother, EpanechnikovRowWeights)
{
    Matrix w = kernel_smoother_weights(7, 5);
    const double side = 0.75 * (1.0 - 0.25), mid = 0.75;
    const double total = 2 * side + mid;
    EXPECT_NEAR(w(2, 1), side / total, 1e-15);
    EXPECT_NEAR(w(2, 2), mid / total, 1e-15);
    EXPECT_NEAR(w(2, 3), side / total, 1e-15);
    EXPECT_EQ(w(2, 0), 0.0);
    EXPECT_EQ(w(2, 4), 0.0);
}

TEST(KernelSmoother, TemporalSmootherDimension)
{
    QuadraticOperator s = build_kernel_smoother(200, 10);
    EXPECT_EQ(s.dim(), 200);
    EXPECT_EQ(s.kind(), OperatorKind::kernel_smoother);
    Eigen::SelfAdjointEigenSolver<Matrix> es(oracle::dense(s));
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10 * es.eigenvalues().maxCoeff());
}

TEST(KernelSmoother, RowsSumToOneBeforeSymmetrization)
{
    for (Index p : {3, 7, 20, 64})
        for (Index w : {1, 2, 3, 6}) {
            if (w >= p) continue;
            Matrix k = kernel_smoother_weights(p, w);
            EXPECT_LT((k.rowwise().sum() - Vector::Ones(p)).cwiseAbs().maxCoeff(), 1e-12) << p << " " << w;
        }
}

TEST(KernelSmoother, WindowMustBeSmallerThanDimension)
{
    expect_kind(ErrorKind::invalid_argument, [] { build_kernel_smoother(5, 5); });
}

TEST(ArPrecision, ZeroCorrelationIsIdentity)
{
    const std::array<Index, 1> d{3};
    EXPECT_LT((oracle::dense(build_ar_precision(d, 0.0, ArMode::chain)) - Matrix::Identity(3, 3)).norm(), 1e-15);
}

TEST(ArPrecision, ChainClosedForm)
{
    const double rho = 0.8, s = 1.0 / (1.0 - rho * rho);
    const std::array<Index, 1> d{3};
    Matrix p = oracle::dense(build_ar_precision(d, rho, ArMode::chain));
    Matrix expect(3, 3);
    expect << s, -rho * s, 0, -rho * s, (1 + rho * rho) * s, -rho * s, 0, -rho * s, s;
    EXPECT_LT((p - expect).cwiseAbs().maxCoeff(), 1e-12);
    // The closed form is the exact inverse of the AR(1) covariance.
    Matrix cov = ar_covariance(d, rho, ArMode::chain);
    EXPECT_LT((p * cov - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ArPrecision, GridCovarianceIsPsdWithUnitDiagonal)
{
    const std::array<Index, 2> d{16, 16};
    Matrix cov = ar_covariance(d, 0.9, ArMode::grid_manhattan);
    EXPECT_EQ(cov.rows(), 256);
    EXPECT_LT((cov.diagonal() - Vector::Ones(256)).cwiseAbs().maxCoeff(), 1e-15);
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
    // Manhattan neighbours two steps apart.
    EXPECT_NEAR(cov(0, 17), 0.81, 1e-15);
    Matrix prec = oracle::dense(build_ar_precision(d, 0.9, ArMode::grid_manhattan));
    EXPECT_LT((prec * cov - Matrix::Identity(256, 256)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(ArPrecision, RejectsInvalidCorrelationAndHugeGrids)
{
    const std::array<Index, 1> d{3};
    expect_kind(ErrorKind::invalid_argument, [&] { build_ar_precision(d, 1.0, ArMode::chain); });
    expect_kind(ErrorKind::invalid_argument, [&] { build_ar_precision(d, -1.5, ArMode::chain); });
    const std::array<Index, 2> big{101, 100};
    expect_kind(ErrorKind::dimension, [&] { build_ar_precision(big, 0.5, ArMode::grid_manhattan); });
}

TEST(Apply, IdentityAndNullSpace)
{
    Rng rng(1);
    Vector x = standard_normal_vector(rng, 6);
    EXPECT_EQ(QuadraticOperator::identity(6).apply(x), x);
    EXPECT_EQ(build_chain_laplacian(3).apply(Vector(Vector::Ones(3))), Vector::Zero(3));
}

TEST(Apply, SparseMatchesDense)
{
    Rng rng(2);
    std::vector<QuadraticOperator::Entry> lower;
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::uniform_int_distribution<Index> pick(0, 49);
    for (int t = 0; t < 200; ++t) {
        Index i = pick(rng), j = pick(rng);
        if (i < j) std::swap(i, j);
        lower.push_back({i, j, unif(rng)});
    }
    QuadraticOperator op = QuadraticOperator::from_lower(50, lower);
    Matrix dense = oracle::dense(op);
    Matrix x = standard_normal_matrix(rng, 50, 7);
    EXPECT_LT((op.apply(x) - dense * x).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((op.apply_right(x.transpose()) - x.transpose() * dense).cwiseAbs().maxCoeff(), 1e-12);
    Vector v = x.col(0);
    EXPECT_LT((op.apply(v) - dense * v).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Apply, DimensionMismatch)
{
    expect_kind(ErrorKind::dimension, [] { build_chain_laplacian(4).apply(Vector(Vector::Ones(3))); });
}

TEST(Apply, DistributesOverAddition)
{
    Rng rng(3);
    QuadraticOperator ops[] = {build_grid_laplacian(4, 5), build_kernel_smoother(20, 4),
                               oracle::op(oracle::random_pd(rng, 20))};
    for (const auto& op : ops) {
        Vector x = standard_normal_vector(rng, 20), y = standard_normal_vector(rng, 20);
        EXPECT_LT((op.apply(Vector(x + y)) - op.apply(x) - op.apply(y)).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Storage, ExactSymmetryFromLowerTriangle)
{
    Rng rng(4);
    QuadraticOperator op = oracle::op(oracle::random_pd(rng, 12));
    for (Index i = 0; i < 12; ++i)
        for (Index j = 0; j < 12; ++j) EXPECT_EQ(op.entry(i, j), op.entry(j, i));
}

TEST(Storage, RejectsUpperEntries)
{
    std::vector<QuadraticOperator::Entry> e{{0, 1, 1.0}};
    expect_kind(ErrorKind::invalid_argument, [&] { QuadraticOperator::from_lower(2, e); });
}

TEST(Storage, IdentityKindRequiresIdentityPattern)
{
    QuadraticOperator id = QuadraticOperator::identity(4);
    EXPECT_EQ(id.kind(), OperatorKind::identity);
    EXPECT_EQ(oracle::dense(id), Matrix::Identity(4, 4));
    std::vector<QuadraticOperator::Entry> e{{0, 0, 2.0}, {1, 1, 1.0}};
    expect_kind(ErrorKind::invalid_argument, [&] { QuadraticOperator::from_lower(2, e, OperatorKind::identity); });
}

TEST(Builders, RandomizedPsdCheck)
{
    Rng rng(5);
    const std::array<Index, 1> chain{30};
    const std::array<Index, 2> grid{5, 6};
    std::vector<QuadraticOperator> ops = {
        build_chain_laplacian(30),
        build_grid_laplacian(5, 6),
        build_kernel_smoother(30, 10),
        build_grid_kernel_smoother(5, 6, 3),
        build_second_difference_gram(30),
        build_ar_precision(chain, 0.8, ArMode::chain),
        build_ar_precision(grid, 0.9, ArMode::grid_manhattan),
        QuadraticOperator::identity(30),
    };
    std::vector<std::pair<Index, Index>> edges{{0, 1}, {1, 2}, {2, 0}, {3, 4}, {5, 29}};
    ops.push_back(build_graph_laplacian(30, edges));
    for (const auto& op : ops) EXPECT_GE(quad_form_floor(op, rng), -1e-10);
}

TEST(QrNorm, IdentityOnTwoByTwo)
{
    Matrix x = Matrix::Identity(2, 2);
    auto i2 = QuadraticOperator::identity(2);
    EXPECT_NEAR(qr_norm(x, i2, i2), std::sqrt(2.0), 1e-15);
}

TEST(QrNorm, RowsInNullSpaceGiveZero)
{
    Rng rng(6);
    Matrix x(4, 3);
    Vector c = standard_normal_vector(rng, 3);
    for (Index i = 0; i < 4; ++i) x.row(i) = c.transpose();
    EXPECT_EQ(qr_norm(x, build_chain_laplacian(4), QuadraticOperator::identity(3)), 0.0);
}

TEST(QrNorm, MatchesDenseTrace)
{
    Rng rng(7);
    for (int t = 0; t < 10; ++t) {
        Matrix x = standard_normal_matrix(rng, 8, 6);
        Matrix q = oracle::random_psd_rank(rng, 8, 5), r = oracle::random_pd(rng, 6);
        const double expect = std::sqrt(oracle::trace_qr(x, q, r));
        EXPECT_NEAR(qr_norm(x, oracle::op(q), oracle::op(r)), expect, 1e-10 * expect);
    }
}

TEST(QrNorm, FrobeniusAndHomogeneity)
{
    Rng rng(8);
    auto iq = QuadraticOperator::identity(9), ir = QuadraticOperator::identity(4);
    const QuadraticOperator q = oracle::op(oracle::random_pd(rng, 9)), r = oracle::op(oracle::random_pd(rng, 4));
    for (int t = 0; t < 10; ++t) {
        Matrix x = standard_normal_matrix(rng, 9, 4);
        EXPECT_NEAR(qr_norm(x, iq, ir), x.norm(), 1e-12 * x.norm());
        const double c = -3.7, base = qr_norm(x, q, r);
        EXPECT_NEAR(qr_norm(Matrix(c * x), q, r), std::abs(c) * base, 1e-12 * std::abs(c) * base);
    }
    DataMatrix dm(Matrix::Identity(9, 4));
    EXPECT_NEAR(qr_norm(dm, iq, ir), 2.0, 1e-15);
}

TEST(QrNorm, NegativeTraceRaisesNotPsd)
{
    std::vector<QuadraticOperator::Entry> e{{0, 0, -1.0}, {1, 1, 1.0}};
    QuadraticOperator bad = QuadraticOperator::from_lower(2, e);
    Matrix x(2, 1);
    x << 1, 0;
    expect_kind(ErrorKind::not_psd, [&] { qr_norm(x, bad, QuadraticOperator::identity(1)); });
    EXPECT_EQ(clamp_quadratic_form(-1e-12, 1.0), 0.0);
    expect_kind(ErrorKind::not_psd, [] { clamp_quadratic_form(-1e-9, 1.0); });
    expect_kind(ErrorKind::dimension, [&] { qr_norm(x, QuadraticOperator::identity(3), QuadraticOperator::identity(1)); });
}

TEST(QNormVec, Examples)
{
    Vector e1 = Vector::Unit(4, 0);
    EXPECT_EQ(q_norm_vec(e1, QuadraticOperator::identity(4)), 1.0);
    EXPECT_EQ(q_norm_vec(Vector::Ones(4), build_chain_laplacian(4)), 0.0);
    Rng rng(9);
    Matrix m = oracle::random_pd(rng, 10);
    Vector x = standard_normal_vector(rng, 10);
    EXPECT_NEAR(q_norm_vec(x, oracle::op(m)), std::sqrt(x.dot(m * x)), 1e-12);
}

TEST(DoubleCenter, RowAndColumnMeansVanish)
{
    Rng rng(10);
    Matrix x = standard_normal_matrix(rng, 13, 9).array() + 5.0;
    x.col(2).array() += 40.0;
    DataMatrix c = double_center(DataMatrix(x));
    EXPECT_TRUE(c.centered);
    EXPECT_LT(c.values.rowwise().mean().cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT(c.values.colwise().mean().cwiseAbs().maxCoeff(), 1e-8);
}

TEST(SecondDifference, GramOfDifferenceOperator)
{
    const Index p = 7;
    Matrix d = Matrix::Zero(p - 2, p);
    for (Index i = 0; i < p - 2; ++i) d.row(i).segment(i, 3) << 1, -2, 1;
    EXPECT_LT((oracle::dense(build_second_difference_gram(p)) - d.transpose() * d).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(GridKernelSmoother, KroneckerOfChainSmoothers)
{
    Matrix s1 = oracle::dense(build_kernel_smoother(5, 4)), s2 = oracle::dense(build_kernel_smoother(6, 4));
    Matrix g = oracle::dense(build_grid_kernel_smoother(5, 6, 4));
    ASSERT_EQ(g.rows(), 30);
    // Row-major pixel index r * m2 + c.
    double worst = 0.0;
    for (Index a = 0; a < 30; ++a)
        for (Index b = 0; b < 30; ++b)
            worst = std::max(worst, std::abs(g(a, b) - s1(a / 6, b / 6) * s2(a % 6, b % 6)));
    EXPECT_LT(worst, 1e-12);
}
