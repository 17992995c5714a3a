// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

#include "streetgs/geometry.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"

namespace streetgs {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

CameraView trivial_camera() {
    Intrinsics k;
    k.fx = k.fy = 100.0;
    k.cx = k.cy = 50.0;
    k.width = k.height = 100;
    return CameraView(k, RigidPose{});
}

CameraView at(const Vec3& position, double yaw = 0.0) {
    RigidPose p;
    p.translation = position;
    p.rotation = yaw_rotation(yaw);
    return CameraView(trivial_camera().intrinsics(), p);
}

TEST(Project, OpticalAxis) {
    const auto p = project(trivial_camera(), Vec3(0, 0, 1));
    EXPECT_DOUBLE_EQ(p.pixel.x(), 50.0);
    EXPECT_DOUBLE_EQ(p.pixel.y(), 50.0);
    EXPECT_DOUBLE_EQ(p.depth, 1.0);
}

TEST(Project, OffAxis) {
    const auto p = project(trivial_camera(), Vec3(0.1, 0, 1));
    EXPECT_NEAR(p.pixel.x(), 60.0, 1e-12);
    EXPECT_DOUBLE_EQ(p.pixel.y(), 50.0);
}

TEST(Project, BehindCameraThrows) {
    EXPECT_THROW(project(trivial_camera(), Vec3(0, 0, -1)), BehindCamera);
    EXPECT_THROW(project(trivial_camera(), Vec3(1, 0, 0)), BehindCamera);
}

TEST(Unproject, AxisCase) {
    const Vec3 w = unproject(trivial_camera(), Vec2(50, 50), 2.0);
    EXPECT_TRUE(w.isApprox(Vec3(0, 0, 2)));
}

TEST(Unproject, NonPositiveDepthThrows) {
    EXPECT_THROW(unproject(trivial_camera(), Vec2(10, 10), 0.0), NonPositiveDepth);
    EXPECT_THROW(unproject(trivial_camera(), Vec2(10, 10), -3.0), NonPositiveDepth);
}

TEST(Unproject, RoundTripRandomPoses) {
    Rng rng(11);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        RigidPose pose;
        pose.rotation = Quat(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized();
        pose.translation = Vec3(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-5, 5));
        const CameraView view(trivial_camera().intrinsics(), pose);
        const Vec2 px(rng.uniform(0, 100), rng.uniform(0, 100));
        const double depth = std::exp(rng.uniform(std::log(0.1), std::log(1000.0)));
        const auto back = project(view, unproject(view, px, depth));
        worst = std::max({worst, (back.pixel - px).norm() / px.norm(), std::abs(back.depth - depth) / depth});
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(RigidPose, RejectsReflection) {
    Mat3 r = Mat3::Identity();
    r(2, 2) = -1.0;
    EXPECT_THROW(RigidPose::from_matrix(r, Vec3::Zero()), MalformedPose);
}

TEST(RigidPose, RejectsNonOrthonormal) {
    Mat3 r = Mat3::Identity();
    r(0, 1) = 1e-3;
    EXPECT_THROW(RigidPose::from_matrix(r, Vec3::Zero()), MalformedPose);
    r(0, 1) = 1e-8;
    EXPECT_NO_THROW(RigidPose::from_matrix(r, Vec3::Zero()));
}

TEST(CameraView, RenormalizesQuaternion) {
    RigidPose p;
    p.rotation = Quat(2.0, 0.0, 0.0, 0.0);
    const CameraView v(trivial_camera().intrinsics(), p);
    EXPECT_NEAR(v.pose().rotation.norm(), 1.0, 1e-12);
}

TEST(Intrinsics, ValidatesPrincipalPoint) {
    Intrinsics k = trivial_camera().intrinsics();
    k.cx = 100.0;
    EXPECT_THROW(k.validate(), DimensionMismatch);
    k.cx = 50.0;
    k.fy = 0.0;
    EXPECT_THROW(k.validate(), DimensionMismatch);
}

TEST(InterpolatePose, EndpointsExact) {
    RigidPose a, b;
    a.rotation = Quat(Eigen::AngleAxisd(0.3, Vec3(1, 2, 3).normalized()));
    a.translation = Vec3(1, 2, 3);
    b.rotation = Quat(Eigen::AngleAxisd(-1.1, Vec3(0, 1, 0)));
    b.translation = Vec3(-4, 0, 9);
    const auto p0 = interpolate_pose(a, b, 0.0);
    const auto p1 = interpolate_pose(a, b, 1.0);
    EXPECT_EQ(p0.translation, a.translation);
    EXPECT_EQ(p0.rotation.coeffs(), a.rotation.coeffs());
    EXPECT_EQ(p1.translation, b.translation);
    EXPECT_EQ(p1.rotation.coeffs(), b.rotation.coeffs());
}

TEST(InterpolatePose, LinearTranslation) {
    RigidPose a, b;
    b.translation = Vec3(2, 0, 0);
    const auto p = interpolate_pose(a, b, 0.25);
    EXPECT_TRUE(p.translation.isApprox(Vec3(0.5, 0, 0)));
}

TEST(InterpolatePose, ShortestArcWithAntipodalSign) {
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        RigidPose a, b;
        a.rotation = Quat(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized();
        b.rotation = Quat(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized();
        RigidPose b_neg = b;
        b_neg.rotation.coeffs() = -b.rotation.coeffs();
        const double total = rotation_angle_between(a.rotation, b.rotation);
        for (double u : {0.1, 0.5, 0.9}) {
            const auto p = interpolate_pose(a, b_neg, u);
            EXPECT_NEAR(p.rotation.norm(), 1.0, 1e-12);
            const double to_a = rotation_angle_between(a.rotation, p.rotation);
            EXPECT_LE(to_a, total + 1e-9);
            EXPECT_NEAR(to_a, u * total, 1e-7);
        }
    }
}

TEST(SamplePseudoViews, DegenerateCollapse) {
    const auto anchor = at(Vec3(1, 2, 3), 0.4);
    PseudoViewConfig cfg;
    cfg.delta_max = 0.0;
    cfg.count_per_event = 6;
    Rng rng(1);
    for (const auto& v : sample_pseudo_views(anchor, anchor, anchor, cfg, rng)) {
        EXPECT_EQ(v.pose().translation, anchor.pose().translation);
        EXPECT_EQ(v.pose().rotation.coeffs(), anchor.pose().rotation.coeffs());
        EXPECT_EQ(v.intrinsics(), anchor.intrinsics());
    }
}

TEST(SamplePseudoViews, Midpoint) {
    const auto v = make_pseudo_view(at(Vec3::Zero()), Vec3(10, 0, 0), 0.5, 0.0);
    EXPECT_TRUE(v.pose().translation.isApprox(Vec3(5, 0, 0)));
}

TEST(SamplePseudoViews, YawStatistics) {
    const auto anchor = at(Vec3::Zero(), 0.7);
    const auto prev = at(Vec3(-1, 0, 0));
    const auto next = at(Vec3(1, 0.5, 0));
    PseudoViewConfig cfg;
    cfg.delta_max = 30.0 * kDeg;
    cfg.count_per_event = 10000;
    Rng rng(5);
    const auto views = sample_pseudo_views(anchor, prev, next, cfg, rng);
    ASSERT_EQ(views.size(), 10000u);
    double sum_abs = 0.0;
    for (const auto& v : views) {
        const double yaw = yaw_offset(anchor.pose().rotation, v.pose().rotation);
        ASSERT_LE(std::abs(yaw), cfg.delta_max + 1e-12);
        sum_abs += std::abs(yaw);
        // position on one of the two segments
        const Vec3 p = v.pose().translation;
        const Vec3 to_prev = prev.center() - anchor.center(), to_next = next.center() - anchor.center();
        const bool on_prev = p.cross(to_prev).norm() < 1e-12 && p.dot(to_prev) > 0 && p.norm() < to_prev.norm();
        const bool on_next = p.cross(to_next).norm() < 1e-12 && p.dot(to_next) > 0 && p.norm() < to_next.norm();
        ASSERT_TRUE(on_prev || on_next);
    }
    // |U[-d, d]| has mean d/2 and standard deviation d / sqrt(12).
    const double mean = sum_abs / 10000.0;
    const double sigma = cfg.delta_max / std::sqrt(12.0) / std::sqrt(10000.0);
    EXPECT_NEAR(mean, cfg.delta_max / 2.0, 3.0 * sigma);
}

TEST(SamplePseudoViews, DeterministicGivenRng) {
    const auto anchor = at(Vec3::Zero());
    PseudoViewConfig cfg;
    Rng a(9), b(9);
    const auto va = sample_pseudo_views(anchor, at(Vec3(-1, 0, 0)), at(Vec3(1, 0, 0)), cfg, a);
    const auto vb = sample_pseudo_views(anchor, at(Vec3(-1, 0, 0)), at(Vec3(1, 0, 0)), cfg, b);
    ASSERT_EQ(va.size(), vb.size());
    for (std::size_t i = 0; i < va.size(); ++i) {
        EXPECT_EQ(va[i].pose().translation, vb[i].pose().translation);
        EXPECT_EQ(va[i].pose().rotation.coeffs(), vb[i].pose().rotation.coeffs());
    }
}

TEST(SamplePseudoViews, RejectsBadConfig) {
    PseudoViewConfig cfg;
    cfg.count_per_event = 0;
    Rng rng(1);
    EXPECT_THROW(sample_pseudo_views(at(Vec3::Zero()), at(Vec3::Zero()), at(Vec3::Zero()), cfg, rng), ConfigError);
    cfg.count_per_event = 1;
    cfg.delta_max = 4.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(SampleEvaluationViews, YawMultiples) {
    Rng rng(2);
    const auto views = sample_evaluation_views(at(Vec3::Zero()), at(Vec3(2, 0, 0)), 15 * kDeg, 30 * kDeg, 0.0, rng);
    ASSERT_EQ(views.size(), 4u);
    const double d = yaw_offset(at(Vec3::Zero()).pose().rotation, views[2].pose().rotation);
    EXPECT_GE(d, 15 * kDeg - 1e-12);
    EXPECT_LE(d, 30 * kDeg + 1e-12);
    EXPECT_NEAR(yaw_offset(at(Vec3::Zero()).pose().rotation, views[0].pose().rotation), -2 * d, 1e-9);
}

}  // namespace
}  // namespace streetgs
