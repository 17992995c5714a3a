// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <unordered_map>
#include <vector>

#include "streetgs/error.hpp"
#include "streetgs/geometry.hpp"
#include "streetgs/lidar.hpp"
#include "streetgs/rng.hpp"
#include "streetgs/sh.hpp"

namespace streetgs {

inline double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) noexcept { return std::log(p / (1.0 - p)); }

/// Columnar storage of Gaussian parameters (single precision, as checkpointed).
///   means       3 per Gaussian, meters
///   log_scales  3 per Gaussian, scale = exp(log_scale)
///   rotations   4 per Gaussian (w, x, y, z), normalized on use
///   opacities   1 per Gaussian, logit; opacity = sigmoid(logit)
///   sh          3 * (degree + 1)^2 per Gaussian, laid out [coeff][rgb]
struct GaussianCloud {
    int sh_degree = 3;
    int active_sh_degree = 0;
    std::vector<float> means;
    std::vector<float> log_scales;
    std::vector<float> rotations;
    std::vector<float> opacities;
    std::vector<float> sh;

    GaussianCloud() = default;
    explicit GaussianCloud(int degree, std::size_t n = 0) : sh_degree(degree) { resize(n); }

    std::size_t size() const noexcept { return opacities.size(); }
    bool empty() const noexcept { return opacities.empty(); }
    int sh_stride() const noexcept { return 3 * sh::coeff_count(sh_degree); }

    void resize(std::size_t n) {
        means.resize(3 * n, 0.0f);
        log_scales.resize(3 * n, 0.0f);
        rotations.resize(4 * n, 0.0f);
        opacities.resize(n, 0.0f);
        sh.resize(static_cast<std::size_t>(sh_stride()) * n, 0.0f);
    }

    /// All columns agree on the Gaussian count.
    bool consistent() const noexcept {
        const std::size_t n = size();
        return means.size() == 3 * n && log_scales.size() == 3 * n && rotations.size() == 4 * n &&
               sh.size() == static_cast<std::size_t>(sh_stride()) * n && sh_degree >= 0 &&
               sh_degree <= sh::kMaxDegree && active_sh_degree >= 0 && active_sh_degree <= sh_degree;
    }

    Vec3 mean(std::size_t i) const { return {means[3 * i], means[3 * i + 1], means[3 * i + 2]}; }
    Vec3 scale(std::size_t i) const {
        return {std::exp(double(log_scales[3 * i])), std::exp(double(log_scales[3 * i + 1])),
                std::exp(double(log_scales[3 * i + 2]))};
    }
    Quat raw_rotation(std::size_t i) const {
        return Quat(rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2], rotations[4 * i + 3]);
    }
    double opacity(std::size_t i) const { return sigmoid(opacities[i]); }
    std::span<const float> sh_coeffs(std::size_t i) const {
        return {sh.data() + i * sh_stride(), static_cast<std::size_t>(sh_stride())};
    }
    std::span<float> sh_coeffs(std::size_t i) {
        return {sh.data() + i * sh_stride(), static_cast<std::size_t>(sh_stride())};
    }

    /// World-space covariance R S S^T R^T.
    Mat3 covariance(std::size_t i) const {
        const Mat3 r = raw_rotation(i).normalized().toRotationMatrix();
        const Mat3 m = r * scale(i).asDiagonal();
        return m * m.transpose();
    }

    /// Appends Gaussian `i` of `src` (same SH degree).
    void push_back_from(const GaussianCloud& src, std::size_t i) {
        means.insert(means.end(), src.means.begin() + 3 * i, src.means.begin() + 3 * i + 3);
        log_scales.insert(log_scales.end(), src.log_scales.begin() + 3 * i, src.log_scales.begin() + 3 * i + 3);
        rotations.insert(rotations.end(), src.rotations.begin() + 4 * i, src.rotations.begin() + 4 * i + 4);
        opacities.push_back(src.opacities[i]);
        const auto c = src.sh_coeffs(i);
        sh.insert(sh.end(), c.begin(), c.end());
    }

    bool operator==(const GaussianCloud&) const = default;
};

/// Counts a NaN or Inf anywhere in the parameters.
inline bool all_finite(const GaussianCloud& cloud) {
    auto finite = [](const std::vector<float>& v) {
        return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
    };
    return finite(cloud.means) && finite(cloud.log_scales) && finite(cloud.rotations) && finite(cloud.opacities) &&
           finite(cloud.sh);
}

namespace detail {

/// Uniform-grid k-nearest-neighbour distances (excluding the query point itself).
inline std::vector<double> mean_knn_distance(const std::vector<Vec3>& pts, int k) {
    const std::size_t n = pts.size();
    std::vector<double> out(n, 0.0);
    if (n < 2) return out;
    Vec3 lo = pts[0], hi = pts[0];
    for (const auto& p : pts) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Vec3 extent = (hi - lo).cwiseMax(1e-9);
    const double volume = extent.x() * extent.y() * extent.z();
    double cell = std::cbrt(volume / static_cast<double>(n)) * 2.0;
    cell = std::max({cell, extent.maxCoeff() / 256.0, 1e-6});

    auto key_of = [&](const Vec3& p) {
        const Eigen::Vector3i c = ((p - lo) / cell).array().floor().cast<int>();
        return c;
    };
    auto hash = [](int x, int y, int z) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(x)) << 42) ^
               (static_cast<std::uint64_t>(static_cast<std::uint32_t>(y)) << 21) ^
               static_cast<std::uint64_t>(static_cast<std::uint32_t>(z));
    };
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> grid;
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = key_of(pts[i]);
        grid[hash(c.x(), c.y(), c.z())].push_back(static_cast<std::uint32_t>(i));
    }
    const int kk = std::min<int>(k, static_cast<int>(n) - 1);
    const Eigen::Vector3i max_cell = key_of(hi);
    const int max_ring = max_cell.maxCoeff() + 1;

    std::vector<double> best;
    for (std::size_t i = 0; i < n; ++i) {
        best.assign(kk, std::numeric_limits<double>::infinity());
        const auto c = key_of(pts[i]);
        for (int ring = 0; ring <= max_ring; ++ring) {
            for (int dx = -ring; dx <= ring; ++dx)
                for (int dy = -ring; dy <= ring; ++dy)
                    for (int dz = -ring; dz <= ring; ++dz) {
                        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
                        auto it = grid.find(hash(c.x() + dx, c.y() + dy, c.z() + dz));
                        if (it == grid.end()) continue;
                        for (auto j : it->second) {
                            if (j == i) continue;
                            const double d = (pts[j] - pts[i]).norm();
                            if (d < best.back()) {
                                best.back() = d;
                                std::sort(best.begin(), best.end());
                            }
                        }
                    }
            // Every point outside the searched cube is at least ring * cell away.
            if (best.back() <= ring * cell) break;
        }
        double sum = 0.0;
        for (double d : best) sum += d;
        out[i] = sum / kk;
    }
    return out;
}

}  // namespace detail

struct InitOptions {
    double opacity0 = 0.1;
    int sh_degree = 3;
    int neighbors = 3;
    double isolated_scale = 0.1;  ///< scale for a lone point with no neighbours
    double min_scale = 1e-4;
};

/// One Gaussian per colored point: mean at the point, DC color equal to the
/// point color, isotropic scale = mean distance to the nearest `neighbors` points.
inline GaussianCloud init_from_points(const ColoredPointCloud& cloud, const InitOptions& opt = {}) {
    if (cloud.empty()) throw EmptyCloud("cannot initialize Gaussians from an empty point cloud");
    const std::size_t n = cloud.size();
    GaussianCloud g(opt.sh_degree, n);
    const auto dist = detail::mean_knn_distance(cloud.positions, opt.neighbors);
    const float opacity_logit = static_cast<float>(logit(opt.opacity0));
    for (std::size_t i = 0; i < n; ++i) {
        const double s = n == 1 ? opt.isolated_scale : std::max(dist[i], opt.min_scale);
        for (int a = 0; a < 3; ++a) {
            g.means[3 * i + a] = static_cast<float>(cloud.positions[i][a]);
            g.log_scales[3 * i + a] = static_cast<float>(std::log(s));
        }
        g.rotations[4 * i] = 1.0f;
        g.opacities[i] = opacity_logit;
        auto coeffs = g.sh_coeffs(i);
        for (int c = 0; c < 3; ++c) coeffs[c] = static_cast<float>(sh::dc_from_color(cloud.colors[i][c]));
    }
    return g;
}

/// Running statistics of screen-space positional gradients (NDC units).
struct GradStats {
    std::vector<double> accum;
    std::vector<std::uint32_t> count;

    explicit GradStats(std::size_t n = 0) : accum(n, 0.0), count(n, 0) {}
    std::size_t size() const noexcept { return accum.size(); }
    void reset(std::size_t n) {
        accum.assign(n, 0.0);
        count.assign(n, 0);
    }
    double mean(std::size_t i) const { return count[i] ? accum[i] / count[i] : 0.0; }
    bool operator==(const GradStats&) const = default;
};

struct DensifyThresholds {
    double grad_threshold = 2e-4;
    double min_opacity = 0.005;
    double percent_dense = 0.01;
    double scene_extent = 1.0;
    double split_factor = 1.6;
    int split_count = 2;
};

/// `origin[i]` is the pre-densification index of output Gaussian i, or -1 for
/// Gaussians created by cloning/splitting.
struct DensifyResult {
    GaussianCloud cloud;
    std::vector<std::int64_t> origin;
};

/// Adaptive density control: clone small / split large Gaussians whose mean
/// screen gradient exceeds the threshold, then prune near-transparent ones.
inline DensifyResult densify_and_prune(const GaussianCloud& cloud, const GradStats& stats,
                                       const DensifyThresholds& thr, Rng& rng) {
    const std::size_t n = cloud.size();
    if (stats.size() != n) throw ShapeMismatch("gradient statistics do not match the cloud");

    GaussianCloud staged(cloud.sh_degree);
    staged.active_sh_degree = cloud.active_sh_degree;
    std::vector<std::int64_t> origin;

    const double size_limit = thr.percent_dense * thr.scene_extent;
    std::vector<std::size_t> clones, splits;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(stats.mean(i) >= thr.grad_threshold)) continue;
        (cloud.scale(i).maxCoeff() <= size_limit ? clones : splits).push_back(i);
    }
    std::vector<std::uint8_t> drop(n, 0);
    for (auto i : splits) drop[i] = 1;

    for (std::size_t i = 0; i < n; ++i) {
        if (drop[i]) continue;
        staged.push_back_from(cloud, i);
        origin.push_back(static_cast<std::int64_t>(i));
    }
    for (auto i : clones) {
        staged.push_back_from(cloud, i);
        origin.push_back(-1);
    }
    const float log_shrink = static_cast<float>(std::log(thr.split_factor));
    for (auto i : splits) {
        const Mat3 r = cloud.raw_rotation(i).normalized().toRotationMatrix();
        const Vec3 s = cloud.scale(i);
        for (int k = 0; k < thr.split_count; ++k) {
            const Vec3 offset = r * Vec3(rng.normal() * s.x(), rng.normal() * s.y(), rng.normal() * s.z());
            staged.push_back_from(cloud, i);
            const std::size_t j = staged.size() - 1;
            for (int a = 0; a < 3; ++a) {
                staged.means[3 * j + a] = static_cast<float>(cloud.means[3 * i + a] + offset[a]);
                staged.log_scales[3 * j + a] = cloud.log_scales[3 * i + a] - log_shrink;
            }
            origin.push_back(-1);
        }
    }

    DensifyResult result{GaussianCloud(cloud.sh_degree), {}};
    result.cloud.active_sh_degree = cloud.active_sh_degree;
    for (std::size_t j = 0; j < staged.size(); ++j) {
        if (staged.opacity(j) < thr.min_opacity) continue;
        result.cloud.push_back_from(staged, j);
        result.origin.push_back(origin[j]);
    }
    return result;
}

/// Caps every opacity at `max_opacity` (periodic opacity reset).
inline void reset_opacity(GaussianCloud& cloud, double max_opacity = 0.01) {
    const float cap = static_cast<float>(logit(max_opacity));
    for (auto& o : cloud.opacities) o = std::min(o, cap);
}

}  // namespace streetgs
