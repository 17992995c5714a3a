// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "streetgs/error.hpp"
#include "streetgs/gaussians.hpp"
#include "streetgs/rasterizer.hpp"

namespace streetgs {

/// Per-group learning rates. The mean rate is supplied per step.
struct LearningRates {
    double log_scales = 5e-3;
    double rotations = 1e-3;
    double opacities = 5e-2;
    double sh_dc = 2.5e-3;
    double sh_rest = 2.5e-3 / 20.0;
    bool operator==(const LearningRates&) const = default;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
    bool operator==(const AdamConfig&) const = default;
};

/// First and second moments laid out exactly like the cloud columns.
struct AdamMoments {
    std::vector<double> m, v;
    void resize(std::size_t n) {
        m.resize(n, 0.0);
        v.resize(n, 0.0);
    }
    bool operator==(const AdamMoments&) const = default;
};

/// Adam over the five parameter columns of a GaussianCloud. The step counter is
/// shared across groups; freshly created Gaussians start from zero moments.
class GaussianAdam {
public:
    GaussianAdam() = default;
    GaussianAdam(const GaussianCloud& cloud, LearningRates lr = {}, AdamConfig cfg = {}) : lr_(lr), cfg_(cfg) {
        resize_to(cloud);
    }

    std::uint64_t step_count() const noexcept { return step_; }
    void set_step_count(std::uint64_t s) noexcept { step_ = s; }
    const LearningRates& rates() const noexcept { return lr_; }
    const AdamConfig& config() const noexcept { return cfg_; }

    AdamMoments means, log_scales, rotations, opacities, sh;

    /// Applies one update with mean learning rate `lr_means`.
    void step(GaussianCloud& cloud, const GradientBuffer& g, double lr_means) {
        if (g.size() != cloud.size() || g.sh.size() != cloud.sh.size() || means.m.size() != cloud.means.size())
            throw ShapeMismatch("optimizer state does not match the cloud");
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        update(cloud.means, g.means, means, [&](std::size_t) { return lr_means; }, bc1, bc2);
        update(cloud.log_scales, g.log_scales, log_scales, [&](std::size_t) { return lr_.log_scales; }, bc1, bc2);
        update(cloud.rotations, g.rotations, rotations, [&](std::size_t) { return lr_.rotations; }, bc1, bc2);
        update(cloud.opacities, g.opacities, opacities, [&](std::size_t) { return lr_.opacities; }, bc1, bc2);
        const std::size_t stride = static_cast<std::size_t>(cloud.sh_stride());
        update(cloud.sh, g.sh, sh, [&](std::size_t k) { return k % stride < 3 ? lr_.sh_dc : lr_.sh_rest; }, bc1, bc2);
    }

    /// Re-indexes moments after densify/prune. origin[j] is the source index of
    /// new Gaussian j, or -1 for a newly created one.
    void remap(const std::vector<std::int64_t>& origin, int sh_stride) {
        remap_group(means, origin, 3);
        remap_group(log_scales, origin, 3);
        remap_group(rotations, origin, 4);
        remap_group(opacities, origin, 1);
        remap_group(sh, origin, static_cast<std::size_t>(sh_stride));
    }

    /// Zeroes the opacity moments (used after an opacity reset).
    void reset_opacity_moments() {
        std::fill(opacities.m.begin(), opacities.m.end(), 0.0);
        std::fill(opacities.v.begin(), opacities.v.end(), 0.0);
    }

    bool operator==(const GaussianAdam&) const = default;

private:
    void resize_to(const GaussianCloud& c) {
        means.resize(c.means.size());
        log_scales.resize(c.log_scales.size());
        rotations.resize(c.rotations.size());
        opacities.resize(c.opacities.size());
        sh.resize(c.sh.size());
    }

    template <typename Rate>
    void update(std::vector<float>& param, const std::vector<double>& grad, AdamMoments& mo, Rate rate, double bc1,
                double bc2) const {
        for (std::size_t k = 0; k < param.size(); ++k) {
            const double gk = grad[k];
            mo.m[k] = cfg_.beta1 * mo.m[k] + (1.0 - cfg_.beta1) * gk;
            mo.v[k] = cfg_.beta2 * mo.v[k] + (1.0 - cfg_.beta2) * gk * gk;
            const double mhat = mo.m[k] / bc1;
            const double vhat = mo.v[k] / bc2;
            param[k] = static_cast<float>(param[k] - rate(k) * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
    }

    static void remap_group(AdamMoments& mo, const std::vector<std::int64_t>& origin, std::size_t width) {
        AdamMoments out;
        out.resize(origin.size() * width);
        for (std::size_t j = 0; j < origin.size(); ++j) {
            if (origin[j] < 0) continue;
            const std::size_t src = static_cast<std::size_t>(origin[j]) * width;
            for (std::size_t a = 0; a < width; ++a) {
                out.m[j * width + a] = mo.m[src + a];
                out.v[j * width + a] = mo.v[src + a];
            }
        }
        mo = std::move(out);
    }

    LearningRates lr_{};
    AdamConfig cfg_{};
    std::uint64_t step_ = 0;
};

}  // namespace streetgs
