#include <gtest/gtest.h>

#include <cmath>

#include "support/expect.hpp"
#include "support/oracles.hpp"
#include "trajex/error.hpp"
#include "trajex/linalg.hpp"

using namespace trajex;

TEST(Matrix, ShapeChecks) {
    EXPECT_TRAJEX_ERROR(Matrix(2, 2, Vector{1, 2, 3}), ErrorKind::ShapeMismatch);
    EXPECT_TRAJEX_ERROR(dot(Vector{1, 2}, Vector{1}), ErrorKind::DimensionMismatch);
    Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
    EXPECT_EQ(transpose(a), Matrix::from_rows({{1, 3}, {2, 4}}));
    EXPECT_EQ(matmul(a, Matrix::identity(2)), a);
    EXPECT_TRAJEX_ERROR(require_finite(Matrix(1, 1, NAN), "x"), ErrorKind::NonFinite);
}

TEST(FrobeniusNorm, Examples) {
    EXPECT_DOUBLE_EQ(frobenius_norm(Matrix::from_rows({{3, 0}, {0, 4}})), 5.0);
    EXPECT_EQ(frobenius_norm(Matrix(2, 2)), 0.0);
    EXPECT_DOUBLE_EQ(frobenius_norm(Matrix::from_rows({{1, 1}, {1, 1}})), 2.0);
    // No overflow for huge entries.
    EXPECT_DOUBLE_EQ(frobenius_norm(Matrix(1, 2, 1e200)), std::sqrt(2.0) * 1e200);
}

TEST(FullSvd, Examples) {
    auto s = full_svd(Matrix::from_rows({{3, 0}, {0, 4}})).singular_values;
    ASSERT_EQ(s.size(), 2u);
    EXPECT_NEAR(s[0], 4.0, 1e-15);
    EXPECT_NEAR(s[1], 3.0, 1e-15);
    s = full_svd(outer(2.0, Vector{1, 0}, Vector{0, 1})).singular_values;
    EXPECT_NEAR(s[0], 2.0, 1e-15);
    EXPECT_NEAR(s[1], 0.0, 1e-15);
}

TEST(FullSvd, MatchesGramJacobiOracle) {
    oracle::Gen g(8051);
    const Matrix m = g.matrix(8, 5);
    const auto s = full_svd(m).singular_values;
    const auto ref = oracle::gram_singular_values(m);
    ASSERT_EQ(s.size(), ref.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_NEAR(s[i], ref[i], 1e-8 * ref[i]) << i;
    }
}

TEST(FullSvd, WideMatchesTall) {
    oracle::Gen g(3);
    const Matrix m = g.matrix(5, 9);
    const auto a = full_svd(m).singular_values;
    const auto b = full_svd(transpose(m)).singular_values;
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12 * a[0]);
}

TEST(FullSvd, SizeCapAndBadInput) {
    EXPECT_TRAJEX_ERROR(full_svd(Matrix(10, 10), 99), ErrorKind::SizeExceeded);
    EXPECT_TRAJEX_ERROR(full_svd(Matrix()), ErrorKind::InvalidArgument);
    EXPECT_TRAJEX_ERROR(full_svd(Matrix(2, 2, INFINITY)), ErrorKind::NonFinite);
}

TEST(FullSvd, ThinSvdReconstructs) {
    oracle::Gen g(11);
    const Matrix m = g.matrix(7, 4);
    const ThinSvd svd = thin_svd(m);
    Matrix rec(7, 4);
    for (std::size_t j = 0; j < svd.singular_values.size(); ++j) {
        Vector u(7), v(4);
        for (std::size_t i = 0; i < 7; ++i) u[i] = svd.u(i, j);
        for (std::size_t i = 0; i < 4; ++i) v[i] = svd.v(i, j);
        rec += outer(svd.singular_values[j], u, v);
    }
    EXPECT_LT(max_abs_diff(rec, m), 1e-12);
}

TEST(TopTriplet, Diagonal) {
    const Rank1Factor f = top_singular_triplet(Matrix::from_rows({{3, 0}, {0, 4}}));
    EXPECT_NEAR(f.sigma, 4.0, 1e-12);
    EXPECT_NEAR(f.u[0], 0.0, 1e-9);
    EXPECT_NEAR(f.u[1], 1.0, 1e-12);
    EXPECT_NEAR(f.v[0], 0.0, 1e-9);
    EXPECT_NEAR(f.v[1], 1.0, 1e-12);
    EXPECT_FALSE(f.degenerate);
}

TEST(TopTriplet, ZeroMatrixConvention) {
    const Rank1Factor f = top_singular_triplet(Matrix(3, 2));
    EXPECT_TRUE(f.degenerate);
    EXPECT_EQ(f.sigma, 0.0);
    EXPECT_EQ(f.u, (Vector{1, 0, 0}));
    EXPECT_EQ(f.v, (Vector{1, 0}));
    EXPECT_EQ(rank1_reconstruct(f), Matrix(3, 2));
}

TEST(TopTriplet, OrthogonalToStartVector) {
    // M * ones = 0, so the perturbed start must kick in.
    const Matrix m = Matrix::from_rows({{1, -1}, {2, -2}});
    const Rank1Factor f = top_singular_triplet(m);
    EXPECT_NEAR(f.sigma, std::sqrt(10.0), 1e-10);
    EXPECT_LT(max_abs_diff(rank1_reconstruct(f), m), 1e-10);
}

TEST(TopTriplet, TinyAndHugeScales) {
    for (double scale : {1e-200, 1e-160, 1e150, 1e200}) {
        const Matrix m = scale * Matrix::from_rows({{3, 0}, {0, 4}});
        const Rank1Factor f = top_singular_triplet(m);
        EXPECT_NEAR(f.sigma / scale, 4.0, 1e-10) << scale;
    }
}

TEST(TopTriplet, MatchesFullSvdOn64x48) {
    oracle::Gen g(64048);
    const Matrix m = g.matrix(64, 48);
    const Rank1Factor f = top_singular_triplet(m);
    const double s1 = full_svd(m).singular_values[0];
    EXPECT_NEAR(f.sigma, s1, 1e-8 * s1);
}

TEST(TopTriplet, RankOneRoundTripAndSign) {
    oracle::Gen g(5);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t r = g.integer(1, 12), c = g.integer(1, 12);
        const Matrix m = outer(g.uniform(0.1, 10.0), g.unit(r), g.unit(c));
        const Rank1Factor f = top_singular_triplet(m);
        EXPECT_LT(max_abs_diff(rank1_reconstruct(f), m), 1e-9);
        EXPECT_NEAR(norm2(f.u), 1.0, 1e-9);
        EXPECT_NEAR(norm2(f.v), 1.0, 1e-9);
        for (double x : f.u) {
            if (std::abs(x) > 1e-12) {
                EXPECT_GT(x, 0.0);
                break;
            }
        }
    }
}

TEST(TopTriplet, SignConventionIsIdempotentUnderNegation) {
    oracle::Gen g(9);
    const Matrix m = g.matrix(6, 4);
    const Rank1Factor a = top_singular_triplet(m);
    const Rank1Factor b = top_singular_triplet(-1.0 * m);
    // -M has the same u with v flipped.
    for (std::size_t i = 0; i < a.u.size(); ++i) EXPECT_NEAR(a.u[i], b.u[i], 1e-9);
    for (std::size_t i = 0; i < a.v.size(); ++i) EXPECT_NEAR(a.v[i], -b.v[i], 1e-9);
}

TEST(TopTriplet, ExactTieReturnsConvergedSigma) {
    const Rank1Factor f = top_singular_triplet(Matrix::identity(3));
    EXPECT_NEAR(f.sigma, 1.0, 1e-12);
    EXPECT_NEAR(norm2(f.u), 1.0, 1e-12);
}

TEST(TopTriplet, Deterministic) {
    oracle::Gen g(77);
    const Matrix m = g.matrix(20, 13);
    EXPECT_EQ(top_singular_triplet(m), top_singular_triplet(m));
}

TEST(Rank1Reconstruct, OuterProduct) {
    Rank1Factor f{2.0, {1, 0}, {0, 1}, false};
    EXPECT_EQ(rank1_reconstruct(f), Matrix::from_rows({{0, 2}, {0, 0}}));
}

TEST(EnergyRatio, Examples) {
    EXPECT_NEAR(energy_ratio(Matrix::from_rows({{3, 0}, {0, 4}})), 4.0 / 7.0, 1e-12);
    EXPECT_NEAR(energy_ratio(outer(3.0, Vector{0.6, 0.8}, Vector{1, 0, 0})), 1.0, 1e-12);
    EXPECT_TRAJEX_ERROR(energy_ratio(Matrix(2, 3)), ErrorKind::DegenerateMatrix);
}

// Property sweep: Frobenius identity and best rank-1 residual.
TEST(LinalgProperties, FrobeniusIdentityAndEckartYoung) {
    oracle::Gen g(2024);
    for (int trial = 0; trial < 40; ++trial) {
        const Matrix m = g.matrix(g.integer(1, 30), g.integer(1, 30));
        const auto s = full_svd(m).singular_values;
        double sum_sq = 0.0, tail = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            sum_sq += s[i] * s[i];
            if (i > 0) {
                tail += s[i] * s[i];
                EXPECT_LE(s[i], s[i - 1]);
            }
            EXPECT_GE(s[i], 0.0);
        }
        const double f2 = std::pow(frobenius_norm(m), 2);
        EXPECT_LE(std::abs(f2 - sum_sq), 1e-9 * f2);
        if (s.size() > 1 && s[0] - s[1] > 1e-3 * s[0]) {
            const double res = std::pow(frobenius_norm(m - rank1_reconstruct(top_singular_triplet(m))), 2);
            EXPECT_NEAR(res, tail, 1e-8 * std::max(tail, 1e-300) + 1e-12 * f2);
        }
    }
}

TEST(TopTriplet, NearTieStillResolvesDirection) {
    // 1e-4 gap: plain power iteration would need tens of thousands of steps
    const Rank1Factor f = top_singular_triplet(Matrix::from_rows({{0.9999, 0, 0}, {0, 1, 0}, {0, 0, 0.3}}));
    EXPECT_NEAR(f.sigma, 1.0, 1e-14);
    EXPECT_NEAR(std::abs(f.u[1]), 1.0, 1e-12);
    EXPECT_NEAR(f.u[0], 0.0, 1e-9);
    EXPECT_NEAR(f.v[0], 0.0, 1e-9);
}
