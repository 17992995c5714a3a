// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <thread>
#include <vector>

#include "streetgs/error.hpp"
#include "streetgs/gaussians.hpp"
#include "streetgs/geometry.hpp"
#include "streetgs/image.hpp"
#include "streetgs/sh.hpp"

namespace streetgs {

inline constexpr int kTileSize = 16;
inline constexpr double kMinAlpha = 1.0 / 255.0;
inline constexpr double kMaxAlpha = 0.99;
inline constexpr double kMinTransmittance = 1e-4;

struct RenderOptions {
    int workers = 1;             ///< tile-parallel workers; 1 gives the canonical reduction order
    double near_plane = 0.2;     ///< Gaussians closer than this (camera z) are skipped
    double low_pass = 0.3;       ///< px^2 added to the projected covariance diagonal
    double frustum_slack = 1.3;  ///< screen-space clamp of x/z, y/z for the Jacobian
};

/// A Gaussian after projection to the image plane.
struct Splat {
    double u = 0.0, v = 0.0;           ///< projected mean, pixels
    double conic_a = 0.0, conic_b = 0.0, conic_c = 0.0;  ///< inverse 2D covariance
    double opacity = 0.0;
    double ext_x = 0.0, ext_y = 0.0;   ///< half extent of the alpha >= 1/255 region, pixels
    double depth = 0.0;                ///< camera-frame z
    Vec3 color = Vec3::Zero();
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  ///< touched tile range [x0, x1) x [y0, y1)
    bool visible = false;
};

/// Per-frame rasterization state kept for the backward pass.
struct RenderContext {
    std::size_t gaussian_count = 0;
    int width = 0, height = 0;
    int tiles_x = 0, tiles_y = 0;
    int active_sh_degree = 0;
    std::vector<Splat> splats;
    std::vector<std::uint32_t> order;                     ///< visible Gaussians, front to back
    std::vector<std::vector<std::uint32_t>> tile_lists;  ///< per tile, front to back
};

struct RenderOutput {
    Image color;  ///< 3 x H x W in [0, 1]
    Image depth;  ///< 1 x H x W, alpha-normalized expected depth, 0 where alpha = 0
    Image alpha;  ///< 1 x H x W accumulated opacity
    RenderContext context;
};

/// Gradients of a scalar loss with respect to every stored Gaussian parameter.
struct GradientBuffer {
    std::vector<double> means, log_scales, rotations, opacities, sh;
    std::vector<double> screen;  ///< d loss / d projected mean (pixels), 2 per Gaussian
    std::vector<std::uint8_t> visible;

    GradientBuffer() = default;
    GradientBuffer(std::size_t n, int sh_stride) { reset(n, sh_stride); }

    void reset(std::size_t n, int sh_stride) {
        means.assign(3 * n, 0.0);
        log_scales.assign(3 * n, 0.0);
        rotations.assign(4 * n, 0.0);
        opacities.assign(n, 0.0);
        sh.assign(static_cast<std::size_t>(sh_stride) * n, 0.0);
        screen.assign(2 * n, 0.0);
        visible.assign(n, 0);
    }

    std::size_t size() const noexcept { return opacities.size(); }

    /// this += scale * other (parameter partials only; visibility is OR-ed).
    void add(const GradientBuffer& other, double scale = 1.0) {
        if (other.size() != size() || other.sh.size() != sh.size())
            throw ShapeMismatch("gradient buffers of different sizes");
        auto axpy = [scale](std::vector<double>& y, const std::vector<double>& x) {
            for (std::size_t i = 0; i < y.size(); ++i) y[i] += scale * x[i];
        };
        axpy(means, other.means);
        axpy(log_scales, other.log_scales);
        axpy(rotations, other.rotations);
        axpy(opacities, other.opacities);
        axpy(sh, other.sh);
        axpy(screen, other.screen);
        for (std::size_t i = 0; i < visible.size(); ++i) visible[i] |= other.visible[i];
    }

    bool all_zero() const {
        auto zero = [](const std::vector<double>& v) {
            return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
        };
        return zero(means) && zero(log_scales) && zero(rotations) && zero(opacities) && zero(sh);
    }

    bool all_finite() const {
        auto finite = [](const std::vector<double>& v) {
            return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
        };
        return finite(means) && finite(log_scales) && finite(rotations) && finite(opacities) && finite(sh);
    }
};

namespace detail {

/// Rotation matrix of a unit quaternion (w, x, y, z).
inline Mat3 quat_to_matrix(double w, double x, double y, double z) {
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),    //
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

/// Quantities shared by the projection and its adjoint.
struct ProjectionTerms {
    Vec3 p_cam;
    double rx = 0.0, ry = 0.0;  // clamped x/z, y/z
    bool rx_clamped = false, ry_clamped = false;
    Eigen::Matrix<double, 2, 3> jw;  // J * W
    Mat3 rot;                        // R(q / |q|)
    Vec3 scale;
    Mat3 m;       // R * diag(scale)
    Mat3 sigma3;  // M M^T
    double s00 = 0.0, s01 = 0.0, s11 = 0.0;
    Eigen::Vector4d qn;
    double qnorm = 1.0;
    Vec3 dir;          // unit view direction (mean - camera center)
    double dir_len = 1.0;
    Vec3 raw_color;
};

inline ProjectionTerms compute_projection(const GaussianCloud& cloud, std::size_t i, const Mat3& w, const Vec3& t,
                                          const Vec3& campos, const Intrinsics& k, const RenderOptions& opt,
                                          int sh_degree) {
    ProjectionTerms pt;
    const Vec3 mu = cloud.mean(i);
    pt.p_cam = w * mu + t;
    const double z = pt.p_cam.z();
    const double limx = opt.frustum_slack * (0.5 * k.width) / k.fx;
    const double limy = opt.frustum_slack * (0.5 * k.height) / k.fy;
    const double xz = pt.p_cam.x() / z, yz = pt.p_cam.y() / z;
    pt.rx = std::clamp(xz, -limx, limx);
    pt.ry = std::clamp(yz, -limy, limy);
    pt.rx_clamped = pt.rx != xz;
    pt.ry_clamped = pt.ry != yz;
    Eigen::Matrix<double, 2, 3> j;
    j << k.fx / z, 0.0, -k.fx * pt.rx / z,  //
        0.0, k.fy / z, -k.fy * pt.ry / z;
    pt.jw = j * w;

    Eigen::Vector4d q(cloud.rotations[4 * i], cloud.rotations[4 * i + 1], cloud.rotations[4 * i + 2],
                      cloud.rotations[4 * i + 3]);
    pt.qnorm = q.norm();
    pt.qn = q / pt.qnorm;
    pt.rot = quat_to_matrix(pt.qn[0], pt.qn[1], pt.qn[2], pt.qn[3]);
    pt.scale = cloud.scale(i);
    pt.m = pt.rot * pt.scale.asDiagonal();
    pt.sigma3 = pt.m * pt.m.transpose();
    const Eigen::Matrix2d s2 = pt.jw * pt.sigma3 * pt.jw.transpose();
    pt.s00 = s2(0, 0) + opt.low_pass;
    pt.s01 = s2(0, 1);
    pt.s11 = s2(1, 1) + opt.low_pass;

    const Vec3 view = mu - campos;
    pt.dir_len = view.norm();
    pt.dir = view / pt.dir_len;
    pt.raw_color = sh::eval_raw(cloud.sh_coeffs(i), sh_degree, pt.dir);
    return pt;
}

/// Front-to-back blending of one pixel. Calls `visit(id, alpha, transmittance_before, gauss)`
/// for each contributing splat and returns the final transmittance.
template <typename Visit>
double composite_pixel(const RenderContext& ctx, const std::vector<std::uint32_t>& list, double px, double py,
                       Visit&& visit) {
    double trans = 1.0;
    for (const auto id : list) {
        const Splat& s = ctx.splats[id];
        const double dx = px - s.u, dy = py - s.v;
        if (std::abs(dx) > s.ext_x || std::abs(dy) > s.ext_y) continue;
        const double power = -0.5 * (s.conic_a * dx * dx + s.conic_c * dy * dy) - s.conic_b * dx * dy;
        if (power > 0.0) continue;
        const double gauss = std::exp(power);
        const double alpha = std::min(kMaxAlpha, s.opacity * gauss);
        if (alpha < kMinAlpha) continue;
        const double next = trans * (1.0 - alpha);
        if (next < kMinTransmittance) break;
        visit(id, alpha, trans, gauss);
        trans = next;
    }
    return trans;
}

/// Splats of a tile list whose vertical extent covers pixel row `py`, order kept.
inline void row_candidates(const RenderContext& ctx, const std::vector<std::uint32_t>& list, int py,
                           std::vector<std::uint32_t>& row) {
    row.clear();
    for (const auto id : list) {
        const Splat& s = ctx.splats[id];
        if (std::abs(py - s.v) <= s.ext_y) row.push_back(id);
    }
}

template <typename Fn>
void for_each_tile_range(int tiles, int workers, Fn&& fn) {
    workers = std::clamp(workers, 1, std::max(1, tiles));
    if (workers == 1) {
        fn(0, 0, tiles);
        return;
    }
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) {
        const int begin = tiles * w / workers, end = tiles * (w + 1) / workers;
        threads.emplace_back([&fn, w, begin, end] { fn(w, begin, end); });
    }
    for (auto& th : threads) th.join();
}

}  // namespace detail

/// Projects, culls, depth-sorts and alpha-composites the cloud into `view`.
inline RenderOutput render(const GaussianCloud& cloud, const CameraView& view, const RenderOptions& opt = {}) {
    if (!cloud.consistent()) throw ShapeMismatch("inconsistent Gaussian cloud");
    const auto& k = view.intrinsics();
    const int width = k.width, height = k.height;

    RenderOutput out;
    out.color = Image(width, height, 3);
    out.depth = Image(width, height, 1);
    out.alpha = Image(width, height, 1);
    RenderContext& ctx = out.context;
    ctx.gaussian_count = cloud.size();
    ctx.width = width;
    ctx.height = height;
    ctx.tiles_x = (width + kTileSize - 1) / kTileSize;
    ctx.tiles_y = (height + kTileSize - 1) / kTileSize;
    ctx.active_sh_degree = cloud.active_sh_degree;
    ctx.splats.assign(cloud.size(), Splat{});
    ctx.tile_lists.assign(static_cast<std::size_t>(ctx.tiles_x) * ctx.tiles_y, {});

    const Mat3 w = view.pose().world_to_camera_rotation();
    const Vec3 t = view.pose().world_to_camera_translation();
    const Vec3 campos = view.center();

    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3 pc = w * cloud.mean(i) + t;
        if (!(pc.z() > opt.near_plane)) continue;
        const double opacity = cloud.opacity(i);
        if (opacity < kMinAlpha) continue;

        const auto pt = detail::compute_projection(cloud, i, w, t, campos, k, opt, cloud.active_sh_degree);
        const double det = pt.s00 * pt.s11 - pt.s01 * pt.s01;
        if (!(det > 0.0)) continue;

        Splat& s = ctx.splats[i];
        s.u = k.fx * pc.x() / pc.z() + k.cx;
        s.v = k.fy * pc.y() / pc.z() + k.cy;
        s.conic_a = pt.s11 / det;
        s.conic_b = -pt.s01 / det;
        s.conic_c = pt.s00 / det;
        s.opacity = opacity;
        s.depth = pc.z();
        for (int c = 0; c < 3; ++c) s.color[c] = std::clamp(pt.raw_color[c], 0.0, 1.0);
        // Outside these bounds the Mahalanobis distance alone puts alpha below 1/255.
        const double cutoff = 2.0 * std::log(255.0 * opacity) * (1.0 + 1e-9) + 1e-12;
        s.ext_x = std::sqrt(cutoff * pt.s00);
        s.ext_y = std::sqrt(cutoff * pt.s11);

        // Beyond this radius opacity * falloff < 1/255, so the tile cull never drops a contribution.
        const double mid = 0.5 * (pt.s00 + pt.s11);
        const double lambda_max = mid + std::sqrt(std::max(0.1, mid * mid - det));
        const double sigmas = std::max(3.0, std::sqrt(2.0 * std::log(255.0 * opacity)));
        const double radius = std::ceil(sigmas * std::sqrt(lambda_max)) + 1.0;
        const double fx0 = std::floor((s.u - radius) / kTileSize), fx1 = std::floor((s.u + radius) / kTileSize) + 1;
        const double fy0 = std::floor((s.v - radius) / kTileSize), fy1 = std::floor((s.v + radius) / kTileSize) + 1;
        s.x0 = static_cast<int>(std::clamp(fx0, 0.0, double(ctx.tiles_x)));
        s.x1 = static_cast<int>(std::clamp(fx1, 0.0, double(ctx.tiles_x)));
        s.y0 = static_cast<int>(std::clamp(fy0, 0.0, double(ctx.tiles_y)));
        s.y1 = static_cast<int>(std::clamp(fy1, 0.0, double(ctx.tiles_y)));
        s.visible = s.x0 < s.x1 && s.y0 < s.y1;
        if (s.visible) ctx.order.push_back(static_cast<std::uint32_t>(i));
    }

    std::stable_sort(ctx.order.begin(), ctx.order.end(), [&](std::uint32_t a, std::uint32_t b) {
        return ctx.splats[a].depth < ctx.splats[b].depth;
    });
    for (const auto id : ctx.order) {
        const Splat& s = ctx.splats[id];
        for (int ty = s.y0; ty < s.y1; ++ty)
            for (int tx = s.x0; tx < s.x1; ++tx) ctx.tile_lists[static_cast<std::size_t>(ty) * ctx.tiles_x + tx].push_back(id);
    }

    detail::for_each_tile_range(ctx.tiles_x * ctx.tiles_y, opt.workers, [&](int, int begin, int end) {
        std::vector<std::uint32_t> row;
        for (int tile = begin; tile < end; ++tile) {
            const int tx = tile % ctx.tiles_x, ty = tile / ctx.tiles_x;
            const auto& list = ctx.tile_lists[tile];
            for (int py = ty * kTileSize; py < std::min(height, (ty + 1) * kTileSize); ++py) {
                detail::row_candidates(ctx, list, py, row);
                for (int px = tx * kTileSize; px < std::min(width, (tx + 1) * kTileSize); ++px) {
                    Vec3 color = Vec3::Zero();
                    double depth_sum = 0.0;
                    const double trans = detail::composite_pixel(
                        ctx, row, px, py, [&](std::uint32_t id, double alpha, double tr, double) {
                            const Splat& s = ctx.splats[id];
                            color += s.color * (alpha * tr);
                            depth_sum += s.depth * alpha * tr;
                        });
                    const double acc = 1.0 - trans;
                    for (int c = 0; c < 3; ++c) out.color.at(c, py, px) = color[c];
                    out.alpha.at(0, py, px) = acc;
                    out.depth.at(0, py, px) = acc > 0.0 ? depth_sum / acc : 0.0;
                }
            }
        }
    });
    return out;
}

/// Analytic gradients of a scalar loss given d loss / d color and d loss / d depth
/// of a previous `render` of the same cloud and view.
inline GradientBuffer render_backward(const GaussianCloud& cloud, const CameraView& view, const RenderOutput& output,
                                      const Image& d_color, const Image& d_depth, const RenderOptions& opt = {}) {
    const RenderContext& ctx = output.context;
    const auto& k = view.intrinsics();
    if (ctx.gaussian_count != cloud.size() || ctx.width != k.width || ctx.height != k.height ||
        ctx.splats.size() != cloud.size() || ctx.active_sh_degree != cloud.active_sh_degree)
        throw MismatchedForward("render context does not match the cloud or view");
    if (d_color.width() != k.width || d_color.height() != k.height || d_color.channels() != 3 ||
        d_depth.width() != k.width || d_depth.height() != k.height || d_depth.channels() != 1)
        throw MismatchedForward("upstream gradient shape does not match the render");

    const std::size_t n = cloud.size();
    // Screen-space partials: u, v, conic a, b, c, opacity, r, g, b, depth.
    constexpr int kScreen = 10;
    const int tiles = ctx.tiles_x * ctx.tiles_y;
    const int workers = std::clamp(opt.workers, 1, std::max(1, tiles));
    std::vector<std::vector<double>> partial(workers, std::vector<double>(kScreen * n, 0.0));

    struct Contribution {
        std::uint32_t id;
        double alpha, trans, gauss;
    };

    detail::for_each_tile_range(tiles, workers, [&](int worker, int begin, int end) {
        auto& acc = partial[worker];
        std::vector<Contribution> contribs;
        std::vector<std::uint32_t> row;
        for (int tile = begin; tile < end; ++tile) {
            const int tx = tile % ctx.tiles_x, ty = tile / ctx.tiles_x;
            const auto& list = ctx.tile_lists[tile];
            for (int py = ty * kTileSize; py < std::min(ctx.height, (ty + 1) * kTileSize); ++py) {
                detail::row_candidates(ctx, list, py, row);
                for (int px = tx * kTileSize; px < std::min(ctx.width, (tx + 1) * kTileSize); ++px) {
                    const Vec3 g_color(d_color.at(0, py, px), d_color.at(1, py, px), d_color.at(2, py, px));
                    const double g_depth = d_depth.at(0, py, px);
                    if (g_color.isZero(0.0) && g_depth == 0.0) continue;

                    contribs.clear();
                    double depth_sum = 0.0;
                    const double t_final = detail::composite_pixel(
                        ctx, row, px, py, [&](std::uint32_t id, double alpha, double tr, double gauss) {
                            contribs.push_back({id, alpha, tr, gauss});
                            depth_sum += ctx.splats[id].depth * alpha * tr;
                        });
                    const double a_final = 1.0 - t_final;
                    // depth = depth_sum / a_final
                    const double g_dsum = a_final > 0.0 ? g_depth / a_final : 0.0;
                    const double g_afinal = a_final > 0.0 ? -g_depth * depth_sum / (a_final * a_final) : 0.0;

                    Vec3 suffix_color = Vec3::Zero();
                    double suffix_depth = 0.0;
                    for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
                        const Splat& s = ctx.splats[it->id];
                        double* a = acc.data() + kScreen * it->id;
                        const double w = it->alpha * it->trans;
                        const double inv = 1.0 / (1.0 - it->alpha);
                        for (int c = 0; c < 3; ++c) a[6 + c] += g_color[c] * w;
                        a[9] += g_dsum * w;

                        double g_alpha = 0.0;
                        for (int c = 0; c < 3; ++c)
                            g_alpha += g_color[c] * (s.color[c] * it->trans - suffix_color[c] * inv);
                        g_alpha += g_dsum * (s.depth * it->trans - suffix_depth * inv);
                        g_alpha += g_afinal * t_final * inv;

                        suffix_color += s.color * w;
                        suffix_depth += s.depth * w;

                        if (s.opacity * it->gauss >= kMaxAlpha) continue;  // clamped: no dependence
                        a[5] += g_alpha * it->gauss;
                        const double g_power = g_alpha * it->alpha;
                        const double dx = px - s.u, dy = py - s.v;
                        a[2] += -0.5 * dx * dx * g_power;
                        a[3] += -dx * dy * g_power;
                        a[4] += -0.5 * dy * dy * g_power;
                        const double g_dx = -(s.conic_a * dx + s.conic_b * dy) * g_power;
                        const double g_dy = -(s.conic_b * dx + s.conic_c * dy) * g_power;
                        a[0] -= g_dx;
                        a[1] -= g_dy;
                    }
                }
            }
        }
    });
    for (int wk = 1; wk < workers; ++wk)
        for (std::size_t j = 0; j < partial[0].size(); ++j) partial[0][j] += partial[wk][j];
    const auto& scr = partial[0];

    GradientBuffer grad(n, cloud.sh_stride());
    const Mat3 w = view.pose().world_to_camera_rotation();
    const Vec3 t = view.pose().world_to_camera_translation();
    const Vec3 campos = view.center();
    const int degree = cloud.active_sh_degree;
    const int ncoeff = sh::coeff_count(degree);

    for (const auto id : ctx.order) {
        const double* g = scr.data() + kScreen * id;
        grad.visible[id] = 1;
        grad.screen[2 * id] = g[0];
        grad.screen[2 * id + 1] = g[1];

        const auto pt = detail::compute_projection(cloud, id, w, t, campos, k, opt, degree);
        const Splat& s = ctx.splats[id];
        const double x = pt.p_cam.x(), y = pt.p_cam.y(), z = pt.p_cam.z();
        Vec3 g_pcam = Vec3::Zero();

        // projected mean
        g_pcam.x() += g[0] * k.fx / z;
        g_pcam.y() += g[1] * k.fy / z;
        g_pcam.z() += -g[0] * k.fx * x / (z * z) - g[1] * k.fy * y / (z * z);
        // expected depth
        g_pcam.z() += g[9];

        // conic -> 2D covariance: d Sigma2 = -C G C with G the symmetric-entry gradient.
        Eigen::Matrix2d conic;
        conic << s.conic_a, s.conic_b, s.conic_b, s.conic_c;
        Eigen::Matrix2d g_conic;
        g_conic << g[2], 0.5 * g[3], 0.5 * g[3], g[4];
        const Eigen::Matrix2d g_s2 = -conic * g_conic * conic;

        // Sigma2 = T Sigma3 T^T with T = J W
        const Mat3 g_sigma3 = pt.jw.transpose() * g_s2 * pt.jw;
        const Eigen::Matrix<double, 2, 3> g_jw = 2.0 * g_s2 * pt.jw * pt.sigma3;
        const Eigen::Matrix<double, 2, 3> g_j = g_jw * w.transpose();

        // J = [[fx/z, 0, -fx rx / z], [0, fy/z, -fy ry / z]]
        g_pcam.z() += g_j(0, 0) * (-k.fx / (z * z)) + g_j(1, 1) * (-k.fy / (z * z));
        g_pcam.z() += g_j(0, 2) * (k.fx * pt.rx / (z * z)) + g_j(1, 2) * (k.fy * pt.ry / (z * z));
        const double g_rx = g_j(0, 2) * (-k.fx / z);
        const double g_ry = g_j(1, 2) * (-k.fy / z);
        if (!pt.rx_clamped) {
            g_pcam.x() += g_rx / z;
            g_pcam.z() += -g_rx * x / (z * z);
        }
        if (!pt.ry_clamped) {
            g_pcam.y() += g_ry / z;
            g_pcam.z() += -g_ry * y / (z * z);
        }

        Vec3 g_mean = w.transpose() * g_pcam;

        // Sigma3 = M M^T, M = R diag(s)
        const Mat3 g_m = 2.0 * g_sigma3 * pt.m;
        Mat3 g_rot;
        for (int a = 0; a < 3; ++a) {
            double g_scale = 0.0;
            for (int r = 0; r < 3; ++r) {
                g_rot(r, a) = g_m(r, a) * pt.scale[a];
                g_scale += g_m(r, a) * pt.rot(r, a);
            }
            grad.log_scales[3 * id + a] = g_scale * pt.scale[a];
        }
        const double qw = pt.qn[0], qx = pt.qn[1], qy = pt.qn[2], qz = pt.qn[3];
        Eigen::Vector4d g_qn;
        g_qn[0] = 2.0 * (-qz * g_rot(0, 1) + qy * g_rot(0, 2) + qz * g_rot(1, 0) - qx * g_rot(1, 2) -
                         qy * g_rot(2, 0) + qx * g_rot(2, 1));
        g_qn[1] = 2.0 * (qy * g_rot(0, 1) + qz * g_rot(0, 2) + qy * g_rot(1, 0) - 2.0 * qx * g_rot(1, 1) -
                         qw * g_rot(1, 2) + qz * g_rot(2, 0) + qw * g_rot(2, 1) - 2.0 * qx * g_rot(2, 2));
        g_qn[2] = 2.0 * (-2.0 * qy * g_rot(0, 0) + qx * g_rot(0, 1) + qw * g_rot(0, 2) + qx * g_rot(1, 0) +
                         qz * g_rot(1, 2) - qw * g_rot(2, 0) + qz * g_rot(2, 1) - 2.0 * qy * g_rot(2, 2));
        g_qn[3] = 2.0 * (-2.0 * qz * g_rot(0, 0) - qw * g_rot(0, 1) + qx * g_rot(0, 2) + qw * g_rot(1, 0) -
                         2.0 * qz * g_rot(1, 1) + qy * g_rot(1, 2) + qx * g_rot(2, 0) + qy * g_rot(2, 1));
        const Eigen::Vector4d g_q = (g_qn - pt.qn * pt.qn.dot(g_qn)) / pt.qnorm;
        for (int a = 0; a < 4; ++a) grad.rotations[4 * id + a] = g_q[a];

        // opacity = sigmoid(logit)
        grad.opacities[id] = g[5] * s.opacity * (1.0 - s.opacity);

        // color = clamp(SH(dir) + 0.5)
        Vec3 g_rgb(g[6], g[7], g[8]);
        for (int c = 0; c < 3; ++c)
            if (pt.raw_color[c] < 0.0 || pt.raw_color[c] > 1.0) g_rgb[c] = 0.0;
        std::array<double, sh::kMaxCoeffs> basis{}, bx{}, by{}, bz{};
        sh::basis(degree, pt.dir, basis);
        const auto coeffs = cloud.sh_coeffs(id);
        double* g_sh = grad.sh.data() + id * cloud.sh_stride();
        for (int kk = 0; kk < ncoeff; ++kk)
            for (int c = 0; c < 3; ++c) g_sh[3 * kk + c] = g_rgb[c] * basis[kk];
        if (degree > 0) {
            sh::basis_gradient(degree, pt.dir, bx, by, bz);
            Vec3 g_dir = Vec3::Zero();
            for (int kk = 1; kk < ncoeff; ++kk) {
                double gk = 0.0;
                for (int c = 0; c < 3; ++c) gk += g_rgb[c] * coeffs[3 * kk + c];
                g_dir += gk * Vec3(bx[kk], by[kk], bz[kk]);
            }
            g_mean += (g_dir - pt.dir * pt.dir.dot(g_dir)) / pt.dir_len;
        }
        for (int a = 0; a < 3; ++a) grad.means[3 * id + a] = g_mean[a];
    }
    return grad;
}

}  // namespace streetgs
