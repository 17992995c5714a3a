// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

#include "streetgs/lidar.hpp"

#include <gtest/gtest.h>

#include <algorithm>

#include "oracles.hpp"

namespace streetgs {
namespace {

CameraView square_camera(int size = 100) { return oracle::camera(size, size, 100.0); }

TEST(Colorize, SolidImage) {
    Image red(100, 100, 3, 0.0);
    std::fill_n(red.data().begin(), 100 * 100, 1.0);
    PointSweep sweep{{Vec3(0, 0, 5), Vec3(0.3, -0.2, 2), Vec3(-1, 1, 10)}, 0};
    const auto cloud = colorize_sweep(sweep, square_camera(), red);
    ASSERT_EQ(cloud.size(), 3u);
    for (const auto& c : cloud.colors) EXPECT_EQ(c, Vec3(1, 0, 0));
    EXPECT_EQ(cloud.positions, sweep.points);
}

TEST(Colorize, DropsPointsBehindAndOutside) {
    Image img(100, 100, 3, 0.5);
    PointSweep sweep{{Vec3(0, 0, -5), Vec3(100, 0, 1), Vec3(0, 0, 3)}, 0};
    const auto cloud = colorize_sweep(sweep, square_camera(), img);
    ASSERT_EQ(cloud.size(), 1u);
    EXPECT_EQ(cloud.positions[0], Vec3(0, 0, 3));
}

TEST(Colorize, OnlyBehindCameraIsEmpty) {
    Image img(100, 100, 3, 0.5);
    PointSweep sweep{{Vec3(0, 0, -5), Vec3(1, 1, -1)}, 7};
    EXPECT_THROW(colorize_sweep(sweep, square_camera(), img), EmptyResult);
}

TEST(Colorize, NearestPixelOnCheckerboard) {
    Image img(100, 100, 3, 0.0);
    for (int y = 0; y < 100; ++y)
        for (int x = 0; x < 100; ++x)
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = ((x + y) % 2) ? 1.0 : 0.0;
    const auto view = square_camera();
    Rng rng(3);
    PointSweep sweep;
    for (int i = 0; i < 500; ++i) {
        const Vec2 px(rng.uniform(0, 99.49), rng.uniform(0, 99.49));
        sweep.points.push_back(unproject(view, px, rng.uniform(1, 20)));
    }
    const auto cloud = colorize_sweep(sweep, view, img);
    ASSERT_EQ(cloud.size(), sweep.points.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto p = project(view, cloud.positions[i]);
        const int x = static_cast<int>(std::round(p.pixel.x())), y = static_cast<int>(std::round(p.pixel.y()));
        EXPECT_EQ(cloud.colors[i].x(), img.at(0, y, x));
    }
}

TEST(Colorize, ShapeMismatchThrows) {
    EXPECT_THROW(colorize_sweep(PointSweep{{Vec3(0, 0, 1)}, 0}, square_camera(), Image(50, 100, 3)),
                 DimensionMismatch);
}

TEST(Downsample, CentroidAndMeanColor) {
    ColoredPointCloud c;
    c.push_back(Vec3(0.1, 0.1, 0.1), Vec3(1, 0, 0));
    c.push_back(Vec3(0.3, 0.2, 0.4), Vec3(0, 1, 0));
    const auto out = accumulate_and_downsample(c, 0.5);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_TRUE(out.positions[0].isApprox(Vec3(0.2, 0.15, 0.25)));
    EXPECT_TRUE(out.colors[0].isApprox(Vec3(0.5, 0.5, 0)));
}

TEST(Downsample, SingleVoxelCollapses) {
    ColoredPointCloud c;
    Rng rng(1);
    Vec3 sum = Vec3::Zero();
    for (int i = 0; i < 100; ++i) {
        const Vec3 p(rng.uniform(2.0, 2.99), rng.uniform(-0.99, -0.01), rng.uniform(0, 0.99));
        c.push_back(p, Vec3::Constant(0.25));
        sum += p;
    }
    const auto out = accumulate_and_downsample(c, 1.0);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_LT((out.positions[0] - sum / 100.0).norm(), 1e-12);
}

TEST(Downsample, NegativeCoordinatesUseFloor) {
    ColoredPointCloud c;
    c.push_back(Vec3(-0.1, 0, 0), Vec3::Zero());
    c.push_back(Vec3(0.1, 0, 0), Vec3::Zero());
    EXPECT_EQ(accumulate_and_downsample(c, 0.5).size(), 2u);
}

class DownsampleOracle : public ::testing::TestWithParam<double> {};

TEST_P(DownsampleOracle, MatchesHashGrid) {
    Rng rng(21);
    std::vector<ColoredPointCloud> sweeps(4);
    std::vector<Vec3> pts, cols;
    for (auto& s : sweeps)
        for (int i = 0; i < 3000; ++i) {
            const Vec3 p(rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-2, 4));
            const Vec3 col(rng.uniform(), rng.uniform(), rng.uniform());
            s.push_back(p, col);
            pts.push_back(p);
            cols.push_back(col);
        }
    const auto got = accumulate_and_downsample(std::span<const ColoredPointCloud>(sweeps), GetParam());
    auto want = oracle::voxel_downsample(pts, cols, GetParam());
    ASSERT_EQ(got.size(), want.size());
    std::vector<std::pair<Vec3, Vec3>> mine;
    for (std::size_t i = 0; i < got.size(); ++i) mine.push_back({got.positions[i], got.colors[i]});
    const auto by_voxel = [&](const auto& a, const auto& b) {
        return voxel_of(a.first, GetParam()) < voxel_of(b.first, GetParam());
    };
    std::sort(mine.begin(), mine.end(), by_voxel);
    std::sort(want.begin(), want.end(), by_voxel);
    for (std::size_t i = 0; i < mine.size(); ++i) {
        EXPECT_LT((mine[i].first - want[i].first).norm(), 1e-9);
        EXPECT_LT((mine[i].second - want[i].second).norm(), 1e-9);
    }
}

INSTANTIATE_TEST_SUITE_P(VoxelSizes, DownsampleOracle, ::testing::Values(0.5, 5.0));

TEST(Downsample, RejectsNonPositiveVoxel) {
    EXPECT_THROW(accumulate_and_downsample(ColoredPointCloud{}, 0.0), ConfigError);
}

TEST(RenderDepth, KeepsNearestOnCollision) {
    const auto view = square_camera();
    const std::vector<Vec3> pts{Vec3(0, 0, 9), Vec3(0, 0, 4), Vec3(0, 0, 6)};
    const auto d = render_depth(std::span<const Vec3>(pts), view, 0);
    EXPECT_EQ(d.valid_count(), 1u);
    EXPECT_DOUBLE_EQ(d.at(50, 50), 4.0);
}

TEST(RenderDepth, TopRowsMasked) {
    const auto view = square_camera();
    std::vector<Vec3> pts;
    for (int y = 0; y < 100; ++y) pts.push_back(unproject(view, Vec2(20, y), 3.0));
    const auto d = render_depth(std::span<const Vec3>(pts), view, 80);
    for (int y = 0; y < 80; ++y) EXPECT_FALSE(d.is_valid(y, 20));
    for (int y = 80; y < 100; ++y) EXPECT_TRUE(d.is_valid(y, 20));
    EXPECT_EQ(d.valid_count(), 20u);
}

TEST(RenderDepth, IgnoresBehindCamera) {
    const std::vector<Vec3> pts{Vec3(0, 0, -3)};
    EXPECT_EQ(render_depth(std::span<const Vec3>(pts), square_camera(), 0).valid_count(), 0u);
}

DepthMap brute_force_completion(const DepthMap& sparse, int k) {
    DepthMap out = sparse;
    for (int y = sparse.top_mask_rows; y < sparse.height; ++y)
        for (int x = 0; x < sparse.width; ++x) {
            if (sparse.is_valid(y, x)) continue;
            std::vector<std::pair<double, std::size_t>> all;
            for (int yy = sparse.top_mask_rows; yy < sparse.height; ++yy)
                for (int xx = 0; xx < sparse.width; ++xx)
                    if (sparse.is_valid(yy, xx))
                        all.push_back({double((xx - x) * (xx - x) + (yy - y) * (yy - y)), sparse.index(yy, xx)});
            std::sort(all.begin(), all.end());
            double num = 0, den = 0;
            for (int i = 0; i < std::min<int>(k, int(all.size())); ++i) {
                const double w = 1.0 / std::sqrt(all[i].first);
                num += w * sparse.values[all[i].second];
                den += w;
            }
            out.set(y, x, num / den);
        }
    return out;
}

TEST(CompleteDepth, MatchesBruteForce) {
    Rng rng(6);
    DepthMap sparse(40, 30, 10);
    for (int i = 0; i < 60; ++i)
        sparse.set(10 + static_cast<int>(rng.below(20)), static_cast<int>(rng.below(40)), rng.uniform(1, 50));
    const auto got = complete_depth(sparse, 8);
    const auto want = brute_force_completion(sparse, 8);
    for (int y = 0; y < 30; ++y)
        for (int x = 0; x < 40; ++x) {
            ASSERT_EQ(got.is_valid(y, x), want.is_valid(y, x));
            if (want.is_valid(y, x)) {
                EXPECT_NEAR(got.at(y, x), want.at(y, x), 1e-9 * want.at(y, x));
            }
        }
}

TEST(CompleteDepth, PropertiesHold) {
    Rng rng(7);
    DepthMap sparse(64, 48, 12);
    double lo = 1e9, hi = -1e9;
    for (int i = 0; i < 100; ++i) {
        const double v = rng.uniform(2, 80);
        sparse.set(12 + static_cast<int>(rng.below(36)), static_cast<int>(rng.below(64)), v);
    }
    for (std::size_t i = 0; i < sparse.values.size(); ++i)
        if (sparse.valid[i]) lo = std::min(lo, sparse.values[i]), hi = std::max(hi, sparse.values[i]);
    const auto dense = complete_depth(sparse);
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 64; ++x) {
            if (y < 12) {
                EXPECT_FALSE(dense.is_valid(y, x));
                continue;
            }
            ASSERT_TRUE(dense.is_valid(y, x));
            if (sparse.is_valid(y, x)) {
                EXPECT_EQ(dense.at(y, x), sparse.at(y, x));
            }
            EXPECT_GE(dense.at(y, x), lo);
            EXPECT_LE(dense.at(y, x), hi);
        }
}

TEST(CompleteDepth, ConstantStaysConstant) {
    DepthMap sparse(20, 20, 0);
    sparse.set(3, 3, 7.5);
    sparse.set(15, 12, 7.5);
    const auto dense = complete_depth(sparse);
    for (double v : dense.values) EXPECT_DOUBLE_EQ(v, 7.5);
}

TEST(CompleteDepth, EmptyThrows) {
    DepthMap sparse(10, 10, 2);
    EXPECT_THROW(complete_depth(sparse), NoValidPixels);
    sparse.set(1, 1, 3.0);  // above the mask
    EXPECT_THROW(complete_depth(sparse), NoValidPixels);
}

}  // namespace
}  // namespace streetgs
