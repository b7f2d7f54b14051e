#include <gtest/gtest.h>

#include <gmdkit/gmd.hpp>

#include "oracles.hpp"
#include "support.hpp"

#include <numeric>

using namespace gmdkit;

namespace {

double rel_err(const Vector& a, const Vector& b) { return (a - b).cwiseAbs().maxCoeff() / b.cwiseAbs().maxCoeff(); }

} // namespace

TEST(GmdPower, DiagonalMatrixIsItsOwnSvd)
{
    Matrix x = Matrix::Zero(2, 2);
    x(0, 0) = 3;
    x(1, 1) = 2;
    auto i2 = QuadraticOperator::identity(2);
    GMDFactors f = gmd_power(x, i2, i2, 2);
    EXPECT_NEAR(f.D(0), 3.0, 1e-12);
    EXPECT_NEAR(f.D(1), 2.0, 1e-12);
    EXPECT_LT((f.U.cwiseAbs() - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((f.V - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(GmdPower, MatchesOracleOnRandomFullRankInstance)
{
    Rng rng(11);
    auto inst = oracle::random_instance(rng, 30, 20);
    auto q = oracle::op(inst.q), r = oracle::op(inst.r);
    GMDFactors p = gmd_power(inst.x, q, r, 5);
    GMDFactors o = gmd_oracle(inst.x, q, r, 5);
    EXPECT_LT(rel_err(p.D, o.D), 1e-8);
    for (Index k = 0; k < 5; ++k) {
        EXPECT_TRUE(p.converged[static_cast<std::size_t>(k)]);
        EXPECT_LT(oracle::max_principal_angle(p.V.col(k), o.V.col(k), inst.r), 1e-5);
        EXPECT_LT(oracle::max_principal_angle(p.U.col(k), o.U.col(k), inst.q), 1e-5);
    }
}

TEST(GmdPower, NonzeroValuesBoundedByRanks)
{
    Rng rng(12);
    Matrix x = standard_normal_matrix(rng, 256, 3) * standard_normal_matrix(rng, 3, 20);
    const QuadraticOperator q = build_grid_laplacian(16, 16), r = build_kernel_smoother(20, 5);
    GMDFactors f = gmd_power(x, q, r, 6);
    Index nonzero = 0;
    for (Index k = 0; k < f.D.size(); ++k)
        if (f.D(k) > 1e-8 * f.D(0)) ++nonzero;
    EXPECT_LE(nonzero, 3);
    EXPECT_GE(nonzero, 1);
}

TEST(GmdPower, Orthonormality)
{
    Rng rng(13);
    auto inst = oracle::random_instance(rng, 25, 18);
    GMDFactors f = gmd_power(inst.x, oracle::op(inst.q), oracle::op(inst.r), 6);
    EXPECT_LT((f.U.transpose() * inst.q * f.U - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((f.V.transpose() * inst.r * f.V - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-6);
    for (Index k = 0; k < 6; ++k) {
        EXPECT_GE(f.D(k), 0.0);
        if (k > 0) EXPECT_LE(f.D(k), f.D(k - 1));
        Index arg;
        f.V.col(k).cwiseAbs().maxCoeff(&arg);
        EXPECT_GT(f.V(arg, k), 0.0);
    }
}

TEST(GmdPower, MonotoneFitAndPythagoras)
{
    Rng rng(14);
    auto inst = oracle::random_instance(rng, 20, 15);
    auto q = oracle::op(inst.q), r = oracle::op(inst.r);
    GMDFactors f = gmd_power(inst.x, q, r, 15);
    const double total = qr_norm_sq(inst.x, q, r);
    double prev = total, energy = 0.0;
    for (Index k = 1; k <= 15; ++k) {
        const double resid = qr_norm_sq(Matrix(inst.x - reconstruct(f, k)), q, r);
        EXPECT_LE(resid, prev * (1 + 1e-12) + 1e-12);
        energy += f.D(k - 1) * f.D(k - 1);
        EXPECT_NEAR(energy + resid, total, 1e-8 * total);
        prev = resid;
    }
}

TEST(GmdPower, IdentityOperatorsGiveSingularValues)
{
    Rng rng(15);
    Matrix x = standard_normal_matrix(rng, 17, 11);
    auto iq = QuadraticOperator::identity(17), ir = QuadraticOperator::identity(11);
    GMDFactors f = gmd_power(x, iq, ir, 11);
    Vector s = oracle::singular_values(x);
    EXPECT_LT(rel_err(f.D, s), 1e-9);
}

TEST(GmdPower, RowPermutationInvariance)
{
    Rng rng(16);
    auto inst = oracle::random_instance(rng, 14, 9);
    std::vector<int> perm(14);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::PermutationMatrix<Eigen::Dynamic> pm(14);
    for (int i = 0; i < 14; ++i) pm.indices()(i) = perm[static_cast<std::size_t>(i)];
    Matrix xp = pm * inst.x, qp = pm * inst.q * pm.transpose();
    GMDOptions tight;
    tight.tol = 1e-14;
    tight.max_iter = 100000;
    GMDFactors a = gmd_power(inst.x, oracle::op(inst.q), oracle::op(inst.r), 4, tight);
    GMDFactors b = gmd_power(xp, oracle::op(qp), oracle::op(inst.r), 4, tight);
    EXPECT_LT((a.D - b.D).cwiseAbs().maxCoeff(), 1e-10);
    GMDFactors oa = gmd_oracle(inst.x, oracle::op(inst.q), oracle::op(inst.r), 4);
    GMDFactors ob = gmd_oracle(xp, oracle::op(qp), oracle::op(inst.r), 4);
    EXPECT_LT((oa.D - ob.D).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(GmdPower, DeterministicPerSeedAndSeedsRecorded)
{
    Rng rng(17);
    auto inst = oracle::random_instance(rng, 12, 10);
    GMDOptions o;
    o.seed = 99;
    GMDFactors a = gmd_power(inst.x, oracle::op(inst.q), oracle::op(inst.r), 3, o);
    GMDFactors b = gmd_power(inst.x, oracle::op(inst.q), oracle::op(inst.r), 3, o);
    EXPECT_EQ(a.U, b.U);
    EXPECT_EQ(a.V, b.V);
    EXPECT_EQ(a.D, b.D);
    EXPECT_EQ(a.seeds, b.seeds);
    EXPECT_EQ(a.seeds.size(), 3u);
}

TEST(GmdPower, ZeroDataGivesZeroFactors)
{
    auto iq = QuadraticOperator::identity(5), ir = QuadraticOperator::identity(4);
    GMDFactors f = gmd_power(Matrix::Zero(5, 4), iq, ir, 2);
    EXPECT_EQ(f.D, Vector::Zero(2));
    EXPECT_EQ(f.U, Matrix::Zero(5, 2));
    EXPECT_FALSE(f.converged[0]);
}

TEST(GmdPower, DataInNullSpaceOfQ)
{
    // Constant columns vanish under the chain Laplacian.
    Matrix x = Matrix::Ones(6, 3);
    GMDFactors f = gmd_power(x, build_chain_laplacian(6), QuadraticOperator::identity(3), 1);
    EXPECT_EQ(f.D(0), 0.0);
}

TEST(GmdPower, Errors)
{
    auto i3 = QuadraticOperator::identity(3), i4 = QuadraticOperator::identity(4);
    Matrix x = Matrix::Ones(3, 4);
    expect_kind(ErrorKind::dimension, [&] { gmd_power(x, i4, i4, 1); });
    expect_kind(ErrorKind::invalid_argument, [&] { gmd_power(x, i3, i4, 4); });
    x(0, 0) = std::nan("");
    expect_kind(ErrorKind::numerical, [&] { gmd_power(x, i3, i4, 1); });
}

TEST(GmdOracle, IdentityOperatorsMatchSvd)
{
    Rng rng(18);
    Matrix x = standard_normal_matrix(rng, 9, 7);
    auto iq = QuadraticOperator::identity(9), ir = QuadraticOperator::identity(7);
    GMDFactors f = gmd_oracle(x, iq, ir, 7);
    Eigen::BDCSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
    EXPECT_LT(rel_err(f.D, svd.singularValues()), 1e-12);
    for (Index k = 0; k < 7; ++k) {
        const double s = f.V.col(k).dot(svd.matrixV().col(k)) > 0 ? 1.0 : -1.0;
        EXPECT_LT((f.V.col(k) - s * svd.matrixV().col(k)).norm(), 1e-9);
        EXPECT_LT((f.U.col(k) - s * svd.matrixU().col(k)).norm(), 1e-9);
    }
}

TEST(GmdOracle, FullRankOperatorsGiveExactDecomposition)
{
    Rng rng(19);
    auto inst = oracle::random_instance(rng, 12, 8);
    GMDFactors f = gmd_oracle(inst.x, oracle::op(inst.q), oracle::op(inst.r), 8);
    EXPECT_LT((inst.x - reconstruct(f, 8)).norm() / inst.x.norm(), 1e-8);
}

TEST(GmdOracle, RankDeficientQReconstructsInQrNormOnly)
{
    Rng rng(20);
    Matrix x = standard_normal_matrix(rng, 10, 8);
    Matrix q = oracle::random_psd_rank(rng, 10, 6), r = oracle::random_pd(rng, 8);
    auto qo = oracle::op(q), ro = oracle::op(r);
    GMDFactors f = gmd_oracle(x, qo, ro, 6);
    Matrix resid = x - reconstruct(f, 6);
    EXPECT_LT(qr_norm(resid, qo, ro), 1e-8 * qr_norm(x, qo, ro));
    EXPECT_GT(resid.norm(), 1e-3 * x.norm());
}

TEST(GmdOracle, RefusesHugeDimensions)
{
    Matrix x = Matrix::Zero(max_oracle_dim + 1, 1);
    auto iq = QuadraticOperator::identity(max_oracle_dim + 1), ir = QuadraticOperator::identity(1);
    expect_kind(ErrorKind::dimension, [&] { gmd_oracle(x, iq, ir, 1); });
}

TEST(Whiten, FactorInvariants)
{
    Rng rng(21);
    Matrix q = oracle::random_psd_rank(rng, 9, 5);
    Matrix half, left;
    half_factor(oracle::op(q), half, left);
    EXPECT_EQ(half.cols(), 5);
    EXPECT_LT((half * half.transpose() - q).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((left.transpose() * half - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-8);
    Eigen::JacobiSVD<Matrix> svd(half);
    EXPECT_GT(svd.singularValues().minCoeff(), 1e-10 * svd.singularValues().maxCoeff());
}

TEST(Reconstruct, EdgeCases)
{
    Rng rng(22);
    Vector u = standard_normal_vector(rng, 7), v = standard_normal_vector(rng, 5);
    Matrix x = u * v.transpose();
    auto iq = QuadraticOperator::identity(7), ir = QuadraticOperator::identity(5);
    GMDFactors f = gmd_power(x, iq, ir, 1);
    EXPECT_EQ(reconstruct(f, 0), Matrix::Zero(7, 5));
    EXPECT_LT((reconstruct(f, 1) - x).cwiseAbs().maxCoeff(), 1e-8);
    expect_kind(ErrorKind::invalid_argument, [&] { reconstruct(f, 2); });
}
