// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

#include "streetgs/gaussians.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "oracles.hpp"

namespace streetgs {
namespace {

ColoredPointCloud grid_points(double spacing, int n) {
    ColoredPointCloud c;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) c.push_back(Vec3(i * spacing, j * spacing, 0.0), Vec3(0.2, 0.4, 0.6));
    return c;
}

TEST(Init, ThreePointsOnALine) {
    ColoredPointCloud c;
    c.push_back(Vec3(0, 0, 0), Vec3(1, 0, 0));
    c.push_back(Vec3(1, 0, 0), Vec3(0, 1, 0));
    c.push_back(Vec3(3, 0, 0), Vec3(0, 0, 1));
    InitOptions opt;
    opt.neighbors = 2;
    const auto g = init_from_points(c, opt);
    ASSERT_EQ(g.size(), 3u);
    EXPECT_NEAR(g.scale(0).x(), 2.0, 1e-6);  // (1 + 3) / 2
    EXPECT_NEAR(g.scale(1).x(), 1.5, 1e-6);  // (1 + 2) / 2
    EXPECT_NEAR(g.scale(2).x(), 2.5, 1e-6);  // (2 + 3) / 2
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(g.opacity(i), 0.1, 1e-6);
        EXPECT_EQ(g.mean(i), c.positions[i]);
        EXPECT_EQ(g.raw_rotation(i).coeffs(), Quat::Identity().coeffs());
        const Vec3 col = sh::eval(g.sh_coeffs(i), 0, Vec3::UnitZ());
        EXPECT_LT((col - c.colors[i]).norm(), 1e-6);
        for (std::size_t k = 3; k < g.sh_coeffs(i).size(); ++k) EXPECT_EQ(g.sh_coeffs(i)[k], 0.0f);
    }
}

TEST(Init, RegularGridScale) {
    const auto g = init_from_points(grid_points(0.5, 6));
    // Interior points have four neighbours at 0.5; the three nearest average to 0.5.
    EXPECT_NEAR(g.scale(2 * 6 + 2).x(), 0.5, 1e-6);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(g.scale(i).x(), g.scale(i).z());
}

TEST(Init, KnnMatchesBruteForce) {
    Rng rng(8);
    ColoredPointCloud c;
    for (int i = 0; i < 400; ++i)
        c.push_back(Vec3(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-1, 1)), Vec3::Constant(0.5));
    const auto g = init_from_points(c);
    for (std::size_t i = 0; i < c.size(); ++i) {
        std::vector<double> d;
        for (std::size_t j = 0; j < c.size(); ++j)
            if (j != i) d.push_back((c.positions[i] - c.positions[j]).norm());
        std::sort(d.begin(), d.end());
        EXPECT_NEAR(g.scale(i).x(), (d[0] + d[1] + d[2]) / 3.0, 1e-5 * d[2]);
    }
}

TEST(Init, SinglePointUsesIsolatedScale) {
    ColoredPointCloud c;
    c.push_back(Vec3(1, 2, 3), Vec3(0.5, 0.5, 0.5));
    EXPECT_NEAR(init_from_points(c).scale(0).x(), 0.1, 1e-7);
}

TEST(Init, EmptyThrows) { EXPECT_THROW(init_from_points(ColoredPointCloud{}), EmptyCloud); }

TEST(Covariance, SymmetricPositiveDefinite) {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        auto g = oracle::random_cloud(rng, 1, 0);
        g.log_scales[0] = static_cast<float>(rng.uniform(-9, 3));
        const Mat3 s = g.covariance(0);
        EXPECT_LT((s - s.transpose()).norm(), 1e-12 * s.norm());
        Eigen::SelfAdjointEigenSolver<Mat3> eig(s);
        EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
    }
}

TEST(Covariance, ScaleOnlyIsDiagonal) {
    GaussianCloud g(0, 1);
    g.rotations = {1, 0, 0, 0};
    g.log_scales = {std::log(2.0f), std::log(3.0f), std::log(0.5f)};
    const Mat3 s = g.covariance(0);
    EXPECT_TRUE(s.isApprox(Vec3(4, 9, 0.25).asDiagonal().toDenseMatrix(), 1e-6));
}

TEST(Densify, NoOpBelowThreshold) {
    Rng rng(3), split_rng(4);
    const auto g = oracle::random_cloud(rng, 50, 3);
    GradStats stats(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) stats.accum[i] = 1e-5, stats.count[i] = 1;
    const auto r = densify_and_prune(g, stats, DensifyThresholds{}, split_rng);
    EXPECT_EQ(r.cloud.means, g.means);
    EXPECT_EQ(r.cloud.log_scales, g.log_scales);
    EXPECT_EQ(r.cloud.rotations, g.rotations);
    EXPECT_EQ(r.cloud.opacities, g.opacities);
    EXPECT_EQ(r.cloud.sh, g.sh);
}

TEST(Densify, PrunesTransparent) {
    GaussianCloud g(0, 3);
    g.rotations = {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0};
    g.opacities = {static_cast<float>(logit(0.5)), static_cast<float>(logit(0.001)), static_cast<float>(logit(0.2))};
    Rng rng(1);
    const auto r = densify_and_prune(g, GradStats(3), DensifyThresholds{}, rng);
    ASSERT_EQ(r.cloud.size(), 2u);
    EXPECT_EQ(r.origin, (std::vector<std::int64_t>{0, 2}));
}

TEST(Densify, ClonesSmall) {
    GaussianCloud g(0, 1);
    g.rotations = {1, 0, 0, 0};
    g.log_scales = {std::log(0.001f), std::log(0.001f), std::log(0.001f)};
    GradStats stats(1);
    stats.accum[0] = 1.0;
    stats.count[0] = 2;
    Rng rng(1);
    const auto r = densify_and_prune(g, stats, DensifyThresholds{}, rng);
    ASSERT_EQ(r.cloud.size(), 2u);
    EXPECT_EQ(r.cloud.mean(0), r.cloud.mean(1));
    EXPECT_EQ(r.origin, (std::vector<std::int64_t>{0, -1}));
}

TEST(Densify, SplitsLarge) {
    GaussianCloud g(0, 2);
    g.rotations = {1, 0, 0, 0, 1, 0, 0, 0};
    g.log_scales = {0, 0, 0, 0, 0, 0};
    g.means = {0, 0, 0, 5, 5, 5};
    GradStats stats(2);
    stats.accum[0] = 1.0;
    stats.count[0] = 1;
    Rng rng(9);
    const auto r = densify_and_prune(g, stats, DensifyThresholds{}, rng);
    ASSERT_EQ(r.cloud.size(), 3u);
    EXPECT_EQ(r.origin, (std::vector<std::int64_t>{1, -1, -1}));
    for (std::size_t j = 1; j < 3; ++j) {
        EXPECT_NEAR(r.cloud.scale(j).x(), 1.0 / 1.6, 1e-6);
        EXPECT_NE(r.cloud.mean(j), Vec3::Zero());
    }
}

TEST(Densify, ShapeMismatchThrows) {
    Rng rng(1);
    EXPECT_THROW(densify_and_prune(GaussianCloud(0, 3), GradStats(2), DensifyThresholds{}, rng), ShapeMismatch);
}

TEST(ResetOpacity, CapsOnlyLarger) {
    GaussianCloud g(0, 2);
    g.opacities = {static_cast<float>(logit(0.9)), static_cast<float>(logit(0.001))};
    reset_opacity(g, 0.01);
    EXPECT_NEAR(g.opacity(0), 0.01, 1e-7);
    EXPECT_NEAR(g.opacity(1), 0.001, 1e-8);
}

}  // namespace
}  // namespace streetgs
