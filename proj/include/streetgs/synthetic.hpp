// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <vector>

#include "streetgs/gaussians.hpp"
#include "streetgs/geometry.hpp"
#include "streetgs/guidance.hpp"
#include "streetgs/rasterizer.hpp"
#include "streetgs/rng.hpp"
#include "streetgs/scene_io.hpp"

namespace streetgs {

/// Procedural street: road with lane markings, sidewalks, two rows of building
/// facades with windows, and parked boxes. World frame is x forward along the
/// street, y left, z up. Surfaces are tiled with flat, nearly opaque Gaussians.
struct SyntheticOptions {
    int width = 64;
    int height = 48;
    double focal = 36.0;
    int train_views = 20;
    int test_views = 8;
    double view_spacing = 1.0;     ///< meters between consecutive training cameras
    double camera_height = 1.5;
    double camera_lateral = -1.5;  ///< y of the camera path
    double test_yaw_min_deg = 15.0;
    double test_yaw_max_deg = 30.0;
    double surfel_spacing = 0.5;
    double street_half_width = 4.0;
    double sidewalk_width = 2.0;
    double facade_height = 8.0;
    int boxes = 6;
    double lidar_range = 30.0;
    double lidar_max_height = 4.0;  ///< the sensor sees nothing above this height
    int lidar_points_per_m2 = 6;
    std::uint64_t seed = 1;
};

struct SyntheticScene {
    Intrinsics intrinsics;
    GaussianCloud ground_truth;
    std::vector<TrainingFrame> frames;  ///< training frames first, then held-out ones
    Split split;

    RenderOutput render_truth(const CameraView& view) const { return render(ground_truth, view); }

    DatasetManifest manifest() const {
        DatasetManifest m;
        m.intrinsics = intrinsics;
        m.frames = frames;
        m.split = split;
        m.lidar_to_camera = default_lidar_to_camera();
        m.drop_rate = double(split.test.size()) / double(frames.size());
        return m;
    }
};

/// Camera-to-world rotation for a camera looking along +x (world) with image
/// x to the right (-y world) and image y down (-z world), then yawed.
inline Quat street_camera_rotation(double yaw) {
    Mat3 r;
    r.col(0) = Vec3(0, -1, 0);
    r.col(1) = Vec3(0, 0, -1);
    r.col(2) = Vec3(1, 0, 0);
    return (yaw_rotation(yaw) * Quat(r)).normalized();
}

namespace detail {

struct SurfaceBuilder {
    GaussianCloud cloud{0};

    /// Tiles the rectangle origin + a*u + b*v, a in [0, len_u], b in [0, len_v].
    template <typename ColorFn>
    void rectangle(const Vec3& origin, const Vec3& u, const Vec3& v, double len_u, double len_v, double spacing,
                   ColorFn color) {
        const Vec3 n = u.cross(v).normalized();
        Mat3 rot;
        rot.col(0) = u.normalized();
        rot.col(1) = v.normalized();
        rot.col(2) = n;
        const Quat q(rot);
        const int nu = std::max(1, static_cast<int>(std::round(len_u / spacing)));
        const int nv = std::max(1, static_cast<int>(std::round(len_v / spacing)));
        const double du = len_u / nu, dv = len_v / nv;
        for (int i = 0; i < nu; ++i) {
            for (int j = 0; j < nv; ++j) {
                const double a = (i + 0.5) * du, b = (j + 0.5) * dv;
                const Vec3 p = origin + a * u.normalized() + b * v.normalized();
                const Vec3 c = color(a, b);
                const std::size_t k = cloud.size();
                cloud.resize(k + 1);
                for (int ax = 0; ax < 3; ++ax) cloud.means[3 * k + ax] = static_cast<float>(p[ax]);
                cloud.log_scales[3 * k + 0] = static_cast<float>(std::log(0.55 * du));
                cloud.log_scales[3 * k + 1] = static_cast<float>(std::log(0.55 * dv));
                cloud.log_scales[3 * k + 2] = static_cast<float>(std::log(0.02 * spacing));
                cloud.rotations[4 * k + 0] = static_cast<float>(q.w());
                cloud.rotations[4 * k + 1] = static_cast<float>(q.x());
                cloud.rotations[4 * k + 2] = static_cast<float>(q.y());
                cloud.rotations[4 * k + 3] = static_cast<float>(q.z());
                cloud.opacities[k] = static_cast<float>(logit(0.98));
                for (int ch = 0; ch < 3; ++ch)
                    cloud.sh[3 * k + ch] = static_cast<float>(sh::dc_from_color(std::clamp(c[ch], 0.0, 1.0)));
            }
        }
        rects.push_back({origin, u.normalized(), v.normalized(), len_u, len_v});
    }

    struct Rect {
        Vec3 origin, u, v;
        double len_u, len_v;
    };
    std::vector<Rect> rects;
};

inline Vec3 jitter_color(const Vec3& base, Rng& rng, double amount) {
    return (base + Vec3(rng.uniform(-amount, amount), rng.uniform(-amount, amount), rng.uniform(-amount, amount)))
        .cwiseMax(0.0)
        .cwiseMin(1.0);
}

}  // namespace detail

inline SyntheticScene make_street_scene(const SyntheticOptions& opt = {}) {
    Rng rng(opt.seed);
    detail::SurfaceBuilder b;
    const double x0 = -10.0;
    const double x1 = opt.view_spacing * opt.train_views + 30.0;
    const double len = x1 - x0;
    const double hw = opt.street_half_width;
    const double sp = opt.surfel_spacing;

    // Road with a dashed centre line and solid edge lines.
    b.rectangle(Vec3(x0, -hw, 0.0), Vec3::UnitX(), Vec3::UnitY(), len, 2 * hw, sp, [&](double a, double y) {
        const double yy = y - hw;
        const bool centre = std::abs(yy) < 0.2 && std::fmod(a, 4.0) < 2.0;
        const bool edge = std::abs(std::abs(yy) - (hw - 0.3)) < 0.2;
        const double g = 0.22 + 0.04 * std::sin(1.7 * a) * std::cos(2.3 * y);
        return centre || edge ? Vec3(0.92, 0.92, 0.85) : Vec3(g, g, g * 1.05);
    });
    // Sidewalks, raised slightly.
    for (double side : {-1.0, 1.0}) {
        const double y_in = side * hw, y_out = side * (hw + opt.sidewalk_width);
        b.rectangle(Vec3(x0, std::min(y_in, y_out), 0.15), Vec3::UnitX(), Vec3::UnitY(), len, opt.sidewalk_width, sp,
                    [&](double a, double) {
                        const bool seam = std::fmod(a, 1.5) < 0.3;
                        return seam ? Vec3(0.45, 0.45, 0.45) : Vec3(0.62, 0.6, 0.57);
                    });
    }
    // Facades: a sequence of buildings per side with their own colors and window grids.
    for (double side : {-1.0, 1.0}) {
        const double y = side * (hw + opt.sidewalk_width);
        double x = x0;
        while (x < x1) {
            const double w = std::min(x1 - x, rng.uniform(6.0, 11.0));
            const Vec3 base = detail::jitter_color(Vec3(rng.uniform(0.35, 0.85), rng.uniform(0.3, 0.7),
                                                        rng.uniform(0.25, 0.6)),
                                                   rng, 0.05);
            const Vec3 window(0.12, 0.18, 0.3 + 0.2 * rng.uniform());
            const double h = opt.facade_height * rng.uniform(0.75, 1.0);
            const double pitch = rng.uniform(1.6, 2.4);
            b.rectangle(Vec3(x, y, 0.0), Vec3::UnitX(), Vec3::UnitZ(), w, h, sp, [&](double a, double z) {
                const double fa = std::fmod(a, pitch), fz = std::fmod(z, 2.5);
                const bool win = z > 1.2 && fa > 0.4 && fa < pitch - 0.4 && fz > 0.7 && fz < 1.9;
                const bool door = z < 2.2 && std::abs(a - 0.5 * w) < 0.6;
                if (door) return Vec3(0.3, 0.2, 0.12);
                return win ? window : base;
            });
            x += w;
        }
    }
    // Parked boxes along both edges of the road.
    for (int i = 0; i < opt.boxes; ++i) {
        const double side = (i % 2 == 0) ? 1.0 : -1.0;
        const double cx = rng.uniform(2.0, opt.view_spacing * opt.train_views + 12.0);
        const double cy = side * (hw - 1.2);
        const double lx = rng.uniform(3.5, 4.5), ly = 1.8, lz = rng.uniform(1.3, 1.7);
        const Vec3 col = detail::jitter_color(Vec3(rng.uniform(), rng.uniform(), rng.uniform()), rng, 0.0);
        const double s = 0.6 * sp;
        auto shade = [col](double f) { return [col, f](double, double z) { return (col * (f * (0.85 + 0.1 * z))).eval(); }; };
        const Vec3 lo(cx - lx / 2, cy - ly / 2, 0.0), hi(cx + lx / 2, cy + ly / 2, lz);
        b.rectangle(Vec3(lo.x(), lo.y(), hi.z()), Vec3::UnitX(), Vec3::UnitY(), lx, ly, s, shade(1.0));        // top
        b.rectangle(Vec3(lo.x(), lo.y(), 0), Vec3::UnitZ(), Vec3::UnitX(), lz, lx, s,
                    [&](double z, double) { return (col * (0.7 + 0.1 * z)).eval(); });                          // -y side
        b.rectangle(Vec3(lo.x(), hi.y(), 0), Vec3::UnitX(), Vec3::UnitZ(), lx, lz, s, shade(0.8));             // +y side
        b.rectangle(Vec3(lo.x(), lo.y(), 0), Vec3::UnitY(), Vec3::UnitZ(), ly, lz, s, shade(0.6));             // back
        b.rectangle(Vec3(hi.x(), lo.y(), 0), Vec3::UnitZ(), Vec3::UnitY(), lz, ly, s,
                    [&](double z, double) { return (col * (0.9 + 0.05 * z)).eval(); });                         // front
    }

    SyntheticScene scene;
    scene.intrinsics = {opt.focal, opt.focal, 0.5 * opt.width - 0.5, 0.5 * opt.height - 0.5, opt.width, opt.height};
    scene.ground_truth = std::move(b.cloud);
    GaussianCloud& gt = scene.ground_truth;

    auto make_frame = [&](std::int64_t id, const Vec3& pos, double yaw) {
        TrainingFrame f;
        f.frame_id = id;
        f.pose.rotation = street_camera_rotation(yaw);
        f.pose.translation = pos;
        f.image = render(gt, CameraView(scene.intrinsics, f.pose)).color;
        return f;
    };

    const Eigen::Matrix4d lidar_to_camera = default_lidar_to_camera();
    for (int i = 0; i < opt.train_views; ++i) {
        const Vec3 pos(i * opt.view_spacing, opt.camera_lateral, opt.camera_height);
        TrainingFrame f = make_frame(i, pos, 0.0);
        const CameraView view(scene.intrinsics, f.pose);
        const RenderOutput truth = render(gt, view);

        // Surface samples within range and below the sensor's height limit,
        // removed when hidden behind nearer geometry in this camera.
        Rng lidar_rng(derive_seed(opt.seed, {static_cast<std::uint64_t>(i), 77}));
        auto pts = std::make_shared<std::vector<Vec3>>();
        const Mat3 r_wc = f.pose.rotation_matrix();
        const Mat3 perm = lidar_to_camera.topLeftCorner<3, 3>();
        for (const auto& rect : b.rects) {
            const double area = rect.len_u * rect.len_v;
            const int count = static_cast<int>(std::ceil(area * opt.lidar_points_per_m2));
            for (int k = 0; k < count; ++k) {
                const Vec3 p = rect.origin + lidar_rng.uniform() * rect.len_u * rect.u +
                               lidar_rng.uniform() * rect.len_v * rect.v;
                if ((p - pos).norm() > opt.lidar_range || p.z() > opt.lidar_max_height) continue;
                const Vec3 pc = f.pose.to_camera(p);
                if (pc.z() > 0.2) {
                    const auto& k_ = scene.intrinsics;
                    const int px = static_cast<int>(std::lround(k_.fx * pc.x() / pc.z() + k_.cx));
                    const int py = static_cast<int>(std::lround(k_.fy * pc.y() / pc.z() + k_.cy));
                    if (px >= 0 && py >= 0 && px < k_.width && py < k_.height) {
                        const double d = truth.depth.at(0, py, px);
                        if (truth.alpha.at(0, py, px) > 0.5 && pc.z() > d * 1.05 + 0.1) continue;
                    }
                }
                const Vec3 p_cam = r_wc.transpose() * (p - pos);
                pts->push_back(perm.transpose() * p_cam);
            }
        }
        f.lidar_points = std::move(pts);
        scene.frames.push_back(std::move(f));
        scene.split.train.push_back(i);
    }

    const double span = opt.view_spacing * (opt.train_views - 1);
    const double deg = std::numbers::pi / 180.0;
    for (int j = 0; j < opt.test_views; ++j) {
        const double x = span * (j + 0.5) / opt.test_views;
        const double yaw = (j % 2 == 0 ? 1.0 : -1.0) * rng.uniform(opt.test_yaw_min_deg, opt.test_yaw_max_deg) * deg;
        const std::int64_t id = opt.train_views + j;
        scene.frames.push_back(make_frame(id, Vec3(x, opt.camera_lateral, opt.camera_height), yaw));
        scene.split.test.push_back(id);
    }
    return scene;
}

/// Renders `truth` at any requested camera; used as an oracle guidance source.
inline OracleProvider::Renderer truth_renderer(std::shared_ptr<const GaussianCloud> truth) {
    return [truth](const CameraView& view) { return render(*truth, view).color; };
}

}  // namespace streetgs
