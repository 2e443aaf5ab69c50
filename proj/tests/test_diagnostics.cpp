#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "support/expect.hpp"
#include "support/oracles.hpp"
#include "trajex/diagnostics.hpp"
#include "trajex/trajectory_lab.hpp"

using namespace trajex;

namespace {

const std::vector<std::pair<std::size_t, std::size_t>> kShapes{{5, 4}, {3, 6}, {4, 4}};

std::vector<Vector> scalar_samples(const std::vector<double>& y) {
    std::vector<Vector> s;
    for (double v : y) s.push_back({v});
    return s;
}

std::vector<double> sequence(double (*f)(double), std::size_t n) {
    std::vector<double> y;
    for (std::size_t t = 1; t <= n; ++t) y.push_back(f(static_cast<double>(t)));
    return y;
}

double square(double t) { return t * t; }
double saturating(double t) { return 1.0 - std::exp(-t / 5.0); }
double clipped(double t) { return std::min(t, 10.0); }

}  // namespace

TEST(AffineR2, QuadraticMatchesNormalEquations) {
    const auto y = sequence(square, 15);
    const double r2 = affine_window_r2(scalar_samples(y), 10);
    EXPECT_NEAR(r2, oracle::normal_equation_r2(y, 10), 1e-9);
    EXPECT_NEAR(r2, -3995.0 / 3387.0, 1e-9);
    EXPECT_LT(r2, 1.0);
}

TEST(AffineR2, SaturatingSequences) {
    const auto y = sequence(saturating, 15);
    EXPECT_NEAR(affine_window_r2(scalar_samples(y), 10), oracle::normal_equation_r2(y, 10), 1e-9);
    EXPECT_NEAR(affine_window_r2(scalar_samples(y), 10), -132.9462838803769, 1e-8);
    // Flat predicted window with a nonzero residual drops to -inf.
    const double flat = affine_window_r2(scalar_samples(sequence(clipped, 15)), 10);
    EXPECT_TRUE(std::isinf(flat) && flat < 0);
    EXPECT_TRUE(std::isinf(oracle::normal_equation_r2(sequence(clipped, 15), 10)));
}

TEST(AffineR2, ExactAffineIsOne) {
    std::vector<Vector> s;
    for (int t = 1; t <= 15; ++t) s.push_back({2.0 * t - 1.0, -0.5 * t, 3.0});
    EXPECT_NEAR(affine_window_r2(s, 10), 1.0, 1e-12);
    EXPECT_TRAJEX_ERROR(affine_window_r2(s, 15), ErrorKind::InsufficientCheckpoints);
}

TEST(AffineR2, ScaleInvariant) {
    oracle::Gen g(31);
    std::vector<Vector> s;
    for (int t = 0; t < 15; ++t) s.push_back({g.normal(), g.normal()});
    const double base = affine_window_r2(s, 10);
    for (auto& v : s) for (double& x : v) x *= 37.5;
    EXPECT_NEAR(affine_window_r2(s, 10), base, 1e-12 * std::max(1.0, std::abs(base)));
}

TEST(LinearR2, AnalyticLinearIsOne) {
    AnalyticLab lab;
    lab.dynamics.kind = DynamicsKind::linear;
    lab.shapes = {{6, 4}, {4, 9}};
    const R2Report rep = linear_r2(analytic_trajectory(lab), 10, 5);
    for (const auto& [name, r2] : rep.r2) EXPECT_NEAR(r2, 1.0, 1e-9) << name;
    EXPECT_EQ(rep.histogram.back(), 2u);
}

TEST(LinearR2, QuadraticPlantedMatchesOracle) {
    const Trajectory t = oracle::planted_trajectory(kShapes, 15, square, 99);
    const R2Report rep = linear_r2(t, 10, 5);
    const double expect = oracle::normal_equation_r2(sequence(square, 15), 10);
    for (const auto& [name, r2] : rep.r2) EXPECT_NEAR(r2, expect, 1e-9) << name;
    std::size_t total = 0;
    for (auto c : rep.histogram) total += c;
    EXPECT_EQ(total, rep.r2.size());
    EXPECT_EQ(rep.histogram[0], kShapes.size());  // below -0.5
}

TEST(LinearR2, InsufficientCheckpoints) {
    const Trajectory t = oracle::planted_trajectory(kShapes, 12, square, 1);
    EXPECT_TRAJEX_ERROR(linear_r2(t, 10, 5), ErrorKind::InsufficientCheckpoints);
}

TEST(LinearR2, CsvFormat) {
    R2Report rep;
    rep.r2 = {{"a", 1.0}, {"b", -0.75}};
    rep.bucket_edges = kDefaultR2Edges;
    rep.histogram = {1, 0, 0, 1};
    std::ostringstream os;
    write_r2_csv(rep, os);
    EXPECT_EQ(os.str(), "param,r2\na,1\nb,-0.75\nbuckets,(-inf -0.5)=1;[-0.5 0)=0;[0 0.5)=0;[0.5 1]=1\n");
}

TEST(Buckets, PartitionRealLine) {
    EXPECT_EQ(r2_bucket(-std::numeric_limits<double>::infinity(), kDefaultR2Edges), 0u);
    EXPECT_EQ(r2_bucket(-0.5, kDefaultR2Edges), 1u);
    EXPECT_EQ(r2_bucket(-1e-9, kDefaultR2Edges), 1u);
    EXPECT_EQ(r2_bucket(0.0, kDefaultR2Edges), 2u);
    EXPECT_EQ(r2_bucket(0.5, kDefaultR2Edges), 3u);
    EXPECT_EQ(r2_bucket(1.0, kDefaultR2Edges), 3u);
}

TEST(EnergySeries, LinearIsOneAndZeroDeltasAreGaps) {
    Trajectory t = oracle::planted_trajectory(kShapes, 6, [](double x) { return x; }, 5);
    t.base.tensors.emplace("frozen", Matrix(2, 2, 1.0));
    for (auto& c : t.checkpoints) c.tensors.emplace("frozen", Matrix(2, 2, 1.0));
    const auto series = energy_ratio_series(t);
    ASSERT_EQ(series.size(), 4u);
    for (const auto& s : series) {
        if (s.param_name == "frozen") {
            EXPECT_TRUE(s.points.empty());
            continue;
        }
        ASSERT_EQ(s.points.size(), 6u);
        for (const auto& p : s.points) EXPECT_NEAR(p.energy_ratio, 1.0, 1e-12);
    }
    std::ostringstream os;
    write_energy_csv(series, os);
    EXPECT_EQ(os.str().substr(0, 29), "param,checkpoint,energy_ratio");
}

TEST(Icer, PublishedValues) {
    EXPECT_NEAR(icer(250, 19.1, 24.2), 49.0, 0.1);
    EXPECT_NEAR(icer(250, 19.1, 23.1), 62.5, 0.1);
    EXPECT_NEAR(icer(250, 20.8, 28.3), 33.3, 0.1);
    EXPECT_TRAJEX_ERROR(icer(250, 20.0, 20.0), ErrorKind::NonPositiveImprovement);
    EXPECT_TRAJEX_ERROR(icer(250, 20.0, 19.0), ErrorKind::NonPositiveImprovement);
}

TEST(Icer, DecreasingInNewAverage) {
    double prev = std::numeric_limits<double>::infinity();
    for (double n = 19.2; n < 40; n += 0.7) {
        const double v = icer(250, 19.1, n);
        EXPECT_LT(v, prev);
        prev = v;
    }
}
