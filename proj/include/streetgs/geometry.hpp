// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "streetgs/error.hpp"
#include "streetgs/rng.hpp"

namespace streetgs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// Pinhole intrinsics in pixels.
struct Intrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;

    void validate() const {
        if (!(fx > 0.0) || !(fy > 0.0)) throw DimensionMismatch("focal lengths must be positive");
        if (width <= 0 || height <= 0) throw DimensionMismatch("image size must be positive");
        if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height))
            throw DimensionMismatch("principal point outside the image");
    }

    bool operator==(const Intrinsics&) const = default;
};

/// Rigid camera-to-world transform. World-to-camera is derived on demand.
struct RigidPose {
    Quat rotation = Quat::Identity();
    Vec3 translation = Vec3::Zero();

    Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }

    Mat3 world_to_camera_rotation() const { return rotation_matrix().transpose(); }
    Vec3 world_to_camera_translation() const { return -(world_to_camera_rotation() * translation); }

    Vec3 to_world(const Vec3& p_cam) const { return rotation * p_cam + translation; }
    Vec3 to_camera(const Vec3& p_world) const { return rotation.conjugate() * (p_world - translation); }

    /// Builds a pose from a camera-to-world rotation matrix. The matrix must be a
    /// proper rotation (orthonormal, det +1) within `tol`.
    static RigidPose from_matrix(const Mat3& r, const Vec3& t, double tol = 1e-6) {
        const double ortho_err = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
        const double det = r.determinant();
        if (!std::isfinite(ortho_err) || ortho_err > tol || std::abs(det - 1.0) > tol) {
            throw MalformedPose("rotation is not orthonormal with det +1 (orthonormality error " +
                                std::to_string(ortho_err) + ", det " + std::to_string(det) + ")");
        }
        RigidPose p;
        p.rotation = Quat(r).normalized();
        p.translation = t;
        return p;
    }
};

/// Geodesic angle (radians) between two rotations.
inline double rotation_angle_between(const Quat& a, const Quat& b) {
    const Mat3 rel = a.toRotationMatrix().transpose() * b.toRotationMatrix();
    const double c = std::clamp((rel.trace() - 1.0) * 0.5, -1.0, 1.0);
    return std::acos(c);
}

/// Intrinsics plus a camera-to-world pose; the quaternion is renormalized on construction.
class CameraView {
public:
    CameraView() = default;
    CameraView(const Intrinsics& k, const RigidPose& pose) : intrinsics_(k), pose_(pose) {
        intrinsics_.validate();
        pose_.rotation.normalize();
    }

    const Intrinsics& intrinsics() const noexcept { return intrinsics_; }
    const RigidPose& pose() const noexcept { return pose_; }
    int width() const noexcept { return intrinsics_.width; }
    int height() const noexcept { return intrinsics_.height; }
    Vec3 center() const { return pose_.translation; }

private:
    Intrinsics intrinsics_{};
    RigidPose pose_{};
};

struct Projection {
    Vec2 pixel;
    double depth = 0.0;
};

/// Pinhole projection; pixel (x, y) samples continuous coordinate (x, y).
inline Projection project(const CameraView& view, const Vec3& point_world) {
    const Vec3 pc = view.pose().to_camera(point_world);
    if (!(pc.z() > 0.0)) throw BehindCamera("camera-frame depth " + std::to_string(pc.z()));
    const auto& k = view.intrinsics();
    return {Vec2(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy), pc.z()};
}

inline Vec3 unproject(const CameraView& view, const Vec2& pixel, double depth) {
    if (!(depth > 0.0)) throw NonPositiveDepth("depth " + std::to_string(depth));
    const auto& k = view.intrinsics();
    const Vec3 pc((pixel.x() - k.cx) / k.fx * depth, (pixel.y() - k.cy) / k.fy * depth, depth);
    return view.pose().to_world(pc);
}

/// Shortest-arc spherical linear interpolation. u = 0 and u = 1 return the
/// endpoints unchanged.
inline Quat slerp(const Quat& a, const Quat& b, double u) {
    if (u <= 0.0) return a;
    if (u >= 1.0) return b;
    Eigen::Vector4d qa = a.coeffs();
    Eigen::Vector4d qb = b.coeffs();
    double d = qa.dot(qb);
    if (d < 0.0) {
        qb = -qb;
        d = -d;
    }
    Eigen::Vector4d out;
    if (d > 1.0 - 1e-12) {
        out = (1.0 - u) * qa + u * qb;
    } else {
        const double theta = std::acos(std::clamp(d, -1.0, 1.0));
        const double s = std::sin(theta);
        out = (std::sin((1.0 - u) * theta) / s) * qa + (std::sin(u * theta) / s) * qb;
    }
    Quat q;
    q.coeffs() = out.normalized();
    return q;
}

inline RigidPose interpolate_pose(const RigidPose& a, const RigidPose& b, double u) {
    if (u == 0.0) return a;
    if (u == 1.0) return b;
    RigidPose p;
    p.translation = (1.0 - u) * a.translation + u * b.translation;
    p.rotation = slerp(a.rotation, b.rotation, u);
    return p;
}

/// Rotation by `theta` radians about the world up (z) axis.
inline Quat yaw_rotation(double theta) { return Quat(Eigen::AngleAxisd(theta, Vec3::UnitZ())); }

/// Yaw angle of `rotated` relative to `base`, assuming they differ by a world-z rotation.
inline double yaw_offset(const Quat& base, const Quat& rotated) {
    const Quat rel = rotated * base.conjugate();
    return 2.0 * std::atan2(rel.z(), rel.w());
}

struct PseudoViewConfig {
    double delta_max = 15.0 * std::numbers::pi / 180.0;  ///< yaw bound in radians
    int count_per_event = 4;
    int cadence = 10;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(delta_max >= 0.0 && delta_max <= std::numbers::pi)) throw ConfigError("delta_max must lie in [0, pi]");
        if (count_per_event < 1) throw ConfigError("pseudo view count must be >= 1");
        if (cadence < 1) throw ConfigError("pseudo view cadence must be >= 1");
    }
};

/// One pseudo view: position at fraction `u` from the anchor toward `neighbor`,
/// orientation = anchor orientation yawed by `yaw` about world z.
inline CameraView make_pseudo_view(const CameraView& anchor, const Vec3& neighbor_position, double u, double yaw) {
    RigidPose pose;
    pose.translation = anchor.pose().translation + u * (neighbor_position - anchor.pose().translation);
    pose.rotation = yaw == 0.0 ? anchor.pose().rotation : (yaw_rotation(yaw) * anchor.pose().rotation).normalized();
    return CameraView(anchor.intrinsics(), pose);
}

/// Samples `cfg.count_per_event` pseudo views around `anchor`. Each picks the
/// previous or next neighbour with probability 1/2, an interpolation fraction
/// u ~ U(0, 1) and a yaw ~ U[-delta, delta].
inline std::vector<CameraView> sample_pseudo_views(const CameraView& anchor, const CameraView& prev,
                                                   const CameraView& next, const PseudoViewConfig& cfg, Rng& rng) {
    cfg.validate();
    std::vector<CameraView> views;
    views.reserve(cfg.count_per_event);
    for (int i = 0; i < cfg.count_per_event; ++i) {
        const bool use_next = rng.uniform() < 0.5;
        const double u = rng.uniform_open();
        const double yaw = cfg.delta_max == 0.0 ? 0.0 : rng.uniform(-cfg.delta_max, cfg.delta_max);
        views.push_back(make_pseudo_view(anchor, (use_next ? next : prev).pose().translation, u, yaw));
    }
    return views;
}

/// Evaluation-style novel views: one interpolated position (plus optional
/// jitter) and yaw offsets of +-delta and +-2 delta with delta ~ U[delta_lo, delta_hi].
inline std::vector<CameraView> sample_evaluation_views(const CameraView& anchor, const CameraView& neighbor,
                                                       double delta_lo, double delta_hi, double position_jitter,
                                                       Rng& rng) {
    const double u = rng.uniform();
    const double delta = rng.uniform(delta_lo, delta_hi);
    Vec3 jitter = Vec3::Zero();
    if (position_jitter > 0.0) jitter = Vec3(rng.normal(), rng.normal(), 0.0) * position_jitter;
    std::vector<CameraView> views;
    for (double mult : {-2.0, -1.0, 1.0, 2.0}) {
        CameraView v = make_pseudo_view(anchor, neighbor.pose().translation, u, mult * delta);
        RigidPose p = v.pose();
        p.translation += jitter;
        views.emplace_back(v.intrinsics(), p);
    }
    return views;
}

}  // namespace streetgs
