// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <tuple>
#include <vector>

#include "streetgs/error.hpp"
#include "streetgs/geometry.hpp"
#include "streetgs/image.hpp"

namespace streetgs {

/// LiDAR points in the world frame (ego motion already applied).
struct PointSweep {
    std::vector<Vec3> points;
    std::int64_t source_frame = -1;
};

struct ColoredPointCloud {
    std::vector<Vec3> positions;
    std::vector<Vec3> colors;  ///< RGB in [0, 1]

    std::size_t size() const noexcept { return positions.size(); }
    bool empty() const noexcept { return positions.empty(); }
    void push_back(const Vec3& p, const Vec3& c) {
        positions.push_back(p);
        colors.push_back(c);
    }
    bool operator==(const ColoredPointCloud&) const = default;
};

/// Nearest pixel of a projected point, or false when it falls outside the image.
inline bool nearest_pixel(const CameraView& view, const Vec2& pixel, int& x, int& y) {
    const double fx = std::round(pixel.x());
    const double fy = std::round(pixel.y());
    if (!(fx >= 0.0 && fy >= 0.0 && fx < view.width() && fy < view.height())) return false;
    x = static_cast<int>(fx);
    y = static_cast<int>(fy);
    return true;
}

/// Assigns each point the color of the pixel it projects to. Points behind the
/// camera or outside the image are dropped.
inline ColoredPointCloud colorize_sweep(const PointSweep& sweep, const CameraView& view, const Image& image) {
    if (image.width() != view.width() || image.height() != view.height() || image.channels() != 3)
        throw DimensionMismatch("image does not match camera intrinsics");
    ColoredPointCloud out;
    for (const auto& p : sweep.points) {
        const Vec3 pc = view.pose().to_camera(p);
        if (!(pc.z() > 0.0)) continue;
        const auto proj = project(view, p);
        int x, y;
        if (!nearest_pixel(view, proj.pixel, x, y)) continue;
        out.push_back(p, Vec3(image.at(0, y, x), image.at(1, y, x), image.at(2, y, x)));
    }
    if (out.empty()) throw EmptyResult("no LiDAR point of frame " + std::to_string(sweep.source_frame) +
                                       " projects into its image");
    return out;
}

using VoxelKey = std::array<std::int64_t, 3>;

inline VoxelKey voxel_of(const Vec3& p, double voxel_size) {
    return {static_cast<std::int64_t>(std::floor(p.x() / voxel_size)),
            static_cast<std::int64_t>(std::floor(p.y() / voxel_size)),
            static_cast<std::int64_t>(std::floor(p.z() / voxel_size))};
}

/// Concatenates the clouds in order and replaces every occupied voxel by the
/// centroid of its positions and the mean of its colors. Output is ordered by voxel key.
inline ColoredPointCloud accumulate_and_downsample(std::span<const ColoredPointCloud> clouds, double voxel_size) {
    if (!(voxel_size > 0.0)) throw ConfigError("voxel size must be positive");
    struct Acc {
        Vec3 pos = Vec3::Zero();
        Vec3 col = Vec3::Zero();
        std::size_t n = 0;
    };
    std::map<VoxelKey, Acc> voxels;
    for (const auto& c : clouds)
        for (std::size_t i = 0; i < c.size(); ++i) {
            auto& a = voxels[voxel_of(c.positions[i], voxel_size)];
            a.pos += c.positions[i];
            a.col += c.colors[i];
            ++a.n;
        }
    ColoredPointCloud out;
    out.positions.reserve(voxels.size());
    out.colors.reserve(voxels.size());
    for (const auto& [key, a] : voxels) {
        const double inv = 1.0 / static_cast<double>(a.n);
        out.push_back(a.pos * inv, (a.col * inv).cwiseMax(0.0).cwiseMin(1.0));
    }
    return out;
}

inline ColoredPointCloud accumulate_and_downsample(const ColoredPointCloud& cloud, double voxel_size) {
    return accumulate_and_downsample(std::span<const ColoredPointCloud>(&cloud, 1), voxel_size);
}

/// Z-buffered sparse depth: each pixel keeps the nearest point landing on it.
inline DepthMap render_depth(std::span<const Vec3> points, const CameraView& view, int top_mask_rows) {
    DepthMap depth(view.width(), view.height(), top_mask_rows);
    for (const auto& p : points) {
        const Vec3 pc = view.pose().to_camera(p);
        if (!(pc.z() > 0.0)) continue;
        const auto proj = project(view, p);
        int x, y;
        if (!nearest_pixel(view, proj.pixel, x, y)) continue;
        if (y < depth.top_mask_rows) continue;
        if (!depth.is_valid(y, x) || proj.depth < depth.at(y, x)) depth.set(y, x, proj.depth);
    }
    return depth;
}

inline DepthMap render_depth(const ColoredPointCloud& cloud, const CameraView& view, int top_mask_rows) {
    return render_depth(std::span<const Vec3>(cloud.positions), view, top_mask_rows);
}

inline DepthMap render_depth(const PointSweep& sweep, const CameraView& view, int top_mask_rows) {
    return render_depth(std::span<const Vec3>(sweep.points), view, top_mask_rows);
}

/// Densifies a sparse depth map below the masked rows: every invalid pixel gets
/// the inverse-distance weighted mean of its `neighbors` nearest valid pixels
/// (ties broken in row-major order). Valid pixels are kept as-is.
inline DepthMap complete_depth(const DepthMap& sparse, int neighbors = 8) {
    const int w = sparse.width, h = sparse.height, top = sparse.top_mask_rows;
    bool any = false;
    for (int y = top; y < h && !any; ++y)
        for (int x = 0; x < w; ++x)
            if (sparse.is_valid(y, x)) {
                any = true;
                break;
            }
    if (!any) throw NoValidPixels("depth map has no valid pixel below the mask");

    DepthMap out = sparse;
    struct Candidate {
        double dist2;
        std::size_t index;
        bool operator<(const Candidate& o) const { return std::tie(dist2, index) < std::tie(o.dist2, o.index); }
    };
    std::vector<Candidate> cands;
    const int max_ring = std::max(w, h - top);
    for (int y = top; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (sparse.is_valid(y, x)) continue;
            cands.clear();
            for (int r = 1; r <= max_ring; ++r) {
                for (int yy = y - r; yy <= y + r; ++yy) {
                    if (yy < top || yy >= h) continue;
                    const bool edge_row = (yy == y - r || yy == y + r);
                    for (int xx = x - r; xx <= x + r; xx += edge_row ? 1 : 2 * r) {
                        if (xx < 0 || xx >= w || !sparse.is_valid(yy, xx)) continue;
                        const double dx = xx - x, dy = yy - y;
                        cands.push_back({dx * dx + dy * dy, sparse.index(yy, xx)});
                    }
                }
                // Pixels beyond ring r are farther than r; stop once the k-th candidate is within r.
                if (static_cast<int>(cands.size()) >= neighbors) {
                    std::nth_element(cands.begin(), cands.begin() + (neighbors - 1), cands.end());
                    if (cands[neighbors - 1].dist2 <= double(r) * r) break;
                }
            }
            std::sort(cands.begin(), cands.end());
            const std::size_t k = std::min<std::size_t>(neighbors, cands.size());
            double num = 0.0, den = 0.0;
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (std::size_t i = 0; i < k; ++i) {
                const double v = sparse.values[cands[i].index];
                const double wgt = 1.0 / std::sqrt(cands[i].dist2);
                num += wgt * v;
                den += wgt;
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            out.set(y, x, std::clamp(num / den, lo, hi));
        }
    }
    return out;
}

}  // namespace streetgs
