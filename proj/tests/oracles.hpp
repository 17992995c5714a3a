// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

// Reference implementations used only by the tests. None of these call into
// the library code they check, apart from plain data types.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "streetgs/gaussians.hpp"
#include "streetgs/geometry.hpp"
#include "streetgs/image.hpp"
#include "streetgs/lidar.hpp"
#include "streetgs/rng.hpp"

namespace oracle {

using streetgs::Vec3;

// ---------------------------------------------------------------------------
// Real spherical harmonics from associated Legendre functions.

inline double factorial(int n) { return std::tgamma(n + 1.0); }

/// Real SH Y_l^m at unit direction d, with the Condon-Shortley phase.
inline double real_sh(int l, int m, const Vec3& d) {
    const double theta = std::acos(std::clamp(d.z(), -1.0, 1.0));
    const double phi = std::atan2(d.y(), d.x());
    const int am = std::abs(m);
    const double k = std::sqrt((2.0 * l + 1.0) / (4.0 * std::numbers::pi) * factorial(l - am) / factorial(l + am));
    // std::assoc_legendre omits the (-1)^m phase.
    const double p = (am % 2 ? -1.0 : 1.0) * std::assoc_legendre(l, am, std::cos(theta));
    if (m == 0) return k * p;
    if (m > 0) return std::sqrt(2.0) * k * std::cos(am * phi) * p;
    return std::sqrt(2.0) * k * std::sin(am * phi) * p;
}

/// SH color with coefficient index k = l^2 + l + m, plus the 0.5 offset.
inline Vec3 sh_color(const std::vector<double>& coeffs, int degree, const Vec3& dir) {
    const Vec3 d = dir.normalized();
    Vec3 rgb(0.5, 0.5, 0.5);
    for (int l = 0; l <= degree; ++l)
        for (int m = -l; m <= l; ++m) {
            const int k = l * l + l + m;
            const double y = real_sh(l, m, d);
            for (int c = 0; c < 3; ++c) rgb[c] += y * coeffs[3 * k + c];
        }
    return rgb;
}

// ---------------------------------------------------------------------------
// Brute-force splatting: every pixel visits every Gaussian, no tiles, no culling.

struct Settings {
    double near_plane = 0.2;
    double low_pass = 0.3;
    double frustum_slack = 1.3;
    double min_alpha = 1.0 / 255.0;
    double max_alpha = 0.99;
    double min_transmittance = 1e-4;
};

struct Rendered {
    std::vector<double> color;  ///< 3 x H x W
    std::vector<double> depth;  ///< H x W
    std::vector<double> alpha;  ///< H x W
};

struct Projected {
    bool ok = false;
    double u = 0, v = 0, depth = 0;
    double ia = 0, ib = 0, ic = 0;  // inverse covariance entries
    double opacity = 0;
    Vec3 color;
};

inline Projected project_gaussian(const streetgs::GaussianCloud& g, std::size_t i, const streetgs::CameraView& view,
                                  const Settings& s) {
    Projected out;
    const auto& k = view.intrinsics();
    const auto& pose = view.pose();
    const Vec3 mu(g.means[3 * i], g.means[3 * i + 1], g.means[3 * i + 2]);
    // world -> camera with the inverse rotation applied explicitly
    const Eigen::Matrix3d rc = pose.rotation.normalized().toRotationMatrix();
    const Vec3 pc = rc.transpose() * (mu - pose.translation);
    if (!(pc.z() > s.near_plane)) return out;
    const double opacity = 1.0 / (1.0 + std::exp(-double(g.opacities[i])));
    if (opacity < s.min_alpha) return out;

    double qw = g.rotations[4 * i], qx = g.rotations[4 * i + 1], qy = g.rotations[4 * i + 2],
           qz = g.rotations[4 * i + 3];
    const double qn = std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
    qw /= qn, qx /= qn, qy /= qn, qz /= qn;
    const Eigen::Matrix3d r = Eigen::Quaterniond(qw, qx, qy, qz).toRotationMatrix();
    Eigen::Matrix3d sig = Eigen::Matrix3d::Zero();
    for (int a = 0; a < 3; ++a) {
        const double sc = std::exp(double(g.log_scales[3 * i + a]));
        sig += sc * sc * r.col(a) * r.col(a).transpose();
    }
    const Eigen::Matrix3d sig_cam = rc.transpose() * sig * rc;

    const double z = pc.z();
    const double lx = s.frustum_slack * 0.5 * k.width / k.fx, ly = s.frustum_slack * 0.5 * k.height / k.fy;
    const double tx = std::clamp(pc.x() / z, -lx, lx) * z, ty = std::clamp(pc.y() / z, -ly, ly) * z;
    Eigen::Matrix<double, 2, 3> jac;
    jac << k.fx / z, 0, -k.fx * tx / (z * z), 0, k.fy / z, -k.fy * ty / (z * z);
    const Eigen::Matrix2d cov = jac * sig_cam * jac.transpose();
    const double a = cov(0, 0) + s.low_pass, b = cov(0, 1), c = cov(1, 1) + s.low_pass;
    const double det = a * c - b * b;
    if (!(det > 0)) return out;

    out.ok = true;
    out.u = k.fx * pc.x() / z + k.cx;
    out.v = k.fy * pc.y() / z + k.cy;
    out.depth = z;
    out.ia = c / det;
    out.ib = -b / det;
    out.ic = a / det;
    out.opacity = opacity;
    std::vector<double> coeffs(g.sh_coeffs(i).begin(), g.sh_coeffs(i).end());
    const Vec3 raw = sh_color(coeffs, g.active_sh_degree, mu - pose.translation);
    for (int ch = 0; ch < 3; ++ch) out.color[ch] = std::clamp(raw[ch], 0.0, 1.0);
    return out;
}

inline Rendered render(const streetgs::GaussianCloud& g, const streetgs::CameraView& view, const Settings& s = {}) {
    const int w = view.width(), h = view.height();
    std::vector<Projected> proj(g.size());
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < g.size(); ++i) {
        proj[i] = project_gaussian(g, i, view, s);
        if (proj[i].ok) order.push_back(i);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::pair(proj[a].depth, a) < std::pair(proj[b].depth, b);
    });
    Rendered out;
    out.color.assign(3 * std::size_t(w) * h, 0.0);
    out.depth.assign(std::size_t(w) * h, 0.0);
    out.alpha.assign(std::size_t(w) * h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double t = 1.0, dsum = 0.0;
            Vec3 col = Vec3::Zero();
            for (auto i : order) {
                const auto& p = proj[i];
                const double dx = x - p.u, dy = y - p.v;
                const double power = -0.5 * (p.ia * dx * dx + 2.0 * p.ib * dx * dy + p.ic * dy * dy);
                if (power > 0) continue;
                const double alpha = std::min(s.max_alpha, p.opacity * std::exp(power));
                if (alpha < s.min_alpha) continue;
                if (t * (1.0 - alpha) < s.min_transmittance) break;
                col += p.color * alpha * t;
                dsum += p.depth * alpha * t;
                t *= 1.0 - alpha;
            }
            const std::size_t pix = std::size_t(y) * w + x;
            for (int c = 0; c < 3; ++c) out.color[c * std::size_t(w) * h + pix] = col[c];
            out.alpha[pix] = 1.0 - t;
            out.depth[pix] = t < 1.0 ? dsum / (1.0 - t) : 0.0;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Hash-grid voxel downsampling.

struct Voxel {
    Vec3 pos = Vec3::Zero();
    Vec3 col = Vec3::Zero();
    double n = 0;
};

inline std::vector<std::pair<Vec3, Vec3>> voxel_downsample(const std::vector<Vec3>& pts, const std::vector<Vec3>& cols,
                                                           double size) {
    std::unordered_map<std::string, Voxel> grid;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto ix = static_cast<long long>(std::floor(pts[i].x() / size));
        const auto iy = static_cast<long long>(std::floor(pts[i].y() / size));
        const auto iz = static_cast<long long>(std::floor(pts[i].z() / size));
        auto& v = grid[std::to_string(ix) + "/" + std::to_string(iy) + "/" + std::to_string(iz)];
        v.pos += pts[i];
        v.col += cols[i];
        v.n += 1;
    }
    std::vector<std::pair<Vec3, Vec3>> out;
    for (const auto& [key, v] : grid) out.push_back({v.pos / v.n, v.col / v.n});
    return out;
}

// ---------------------------------------------------------------------------
// SSIM evaluated window by window (no separable filtering).

inline double ssim(const streetgs::Image& a, const streetgs::Image& b) {
    const double c1 = 1e-4, c2 = 9e-4;
    double g[11][11], gs = 0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) gs += g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5);
    double total = 0;
    for (int c = 0; c < a.channels(); ++c)
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x) {
                double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
                for (int i = 0; i < 11; ++i)
                    for (int j = 0; j < 11; ++j) {
                        const int py = y + i - 5, px = x + j - 5;
                        if (py < 0 || px < 0 || py >= a.height() || px >= a.width()) continue;
                        const double wt = g[i][j] / gs, va = a.at(c, py, px), vb = b.at(c, py, px);
                        mx += wt * va, my += wt * vb, xx += wt * va * va, yy += wt * vb * vb, xy += wt * va * vb;
                    }
                const double sx = xx - mx * mx, sy = yy - my * my, sxy = xy - mx * my;
                total += (2 * mx * my + c1) * (2 * sxy + c2) / ((mx * mx + my * my + c1) * (sx + sy + c2));
            }
    return total / double(a.size());
}

// ---------------------------------------------------------------------------
// Finite differences.

/// Central difference of f with respect to a float parameter; the step actually
/// representable in float is used as the denominator.
inline double central_difference(float& param, double eps, const std::function<double()>& f) {
    const float saved = param;
    const float hi = static_cast<float>(double(saved) + eps);
    const float lo = static_cast<float>(double(saved) - eps);
    param = hi;
    const double fh = f();
    param = lo;
    const double fl = f();
    param = saved;
    return (fh - fl) / (double(hi) - double(lo));
}

inline double central_difference(double& param, double eps, const std::function<double()>& f) {
    const double saved = param;
    param = saved + eps;
    const double fh = f();
    param = saved - eps;
    const double fl = f();
    param = saved;
    return (fh - fl) / (2.0 * eps);
}

inline bool close_relative(double analytic, double numeric, double rel) {
    return std::abs(analytic - numeric) <= rel * std::max(std::abs(analytic), std::abs(numeric));
}

// ---------------------------------------------------------------------------
// Random scenes.

/// Up to `max_n` Gaussians in front of an identity-pose camera looking down +z.
inline streetgs::GaussianCloud random_cloud(streetgs::Rng& rng, int max_n, int degree, double depth_lo = 2.0,
                                            double depth_hi = 6.0, double spread = 0.6) {
    const int n = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_n)));
    streetgs::GaussianCloud g(3, static_cast<std::size_t>(n));
    g.active_sh_degree = degree;
    for (int i = 0; i < n; ++i) {
        const double z = rng.uniform(depth_lo, depth_hi);
        g.means[3 * i] = static_cast<float>(rng.uniform(-spread, spread) * z);
        g.means[3 * i + 1] = static_cast<float>(rng.uniform(-spread, spread) * z);
        g.means[3 * i + 2] = static_cast<float>(z);
        for (int a = 0; a < 3; ++a) g.log_scales[3 * i + a] = static_cast<float>(std::log(rng.uniform(0.08, 0.4)));
        for (int a = 0; a < 4; ++a) g.rotations[4 * i + a] = static_cast<float>(rng.normal());
        const double o = rng.uniform(0.1, 0.85);
        g.opacities[i] = static_cast<float>(std::log(o / (1.0 - o)));
        auto c = g.sh_coeffs(i);
        for (int k = 0; k < 3; ++k) c[k] = static_cast<float>(rng.uniform(-1.2, 1.2));
        for (std::size_t k = 3; k < c.size(); ++k) c[k] = static_cast<float>(rng.uniform(-0.15, 0.15));
    }
    return g;
}

inline streetgs::CameraView camera(int w, int h, double focal) {
    streetgs::Intrinsics k;
    k.fx = k.fy = focal;
    k.cx = 0.5 * w;
    k.cy = 0.5 * h;
    k.width = w;
    k.height = h;
    return streetgs::CameraView(k, streetgs::RigidPose{});
}

}  // namespace oracle
