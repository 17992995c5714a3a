// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "streetgs/error.hpp"
#include "streetgs/geometry.hpp"
#include "streetgs/image.hpp"
#include "streetgs/rng.hpp"

namespace streetgs {

/// Noise-strength schedule for guidance generation. The upper bound of the
/// strength draw anneals linearly from s_max_start to s_max_end.
struct StrengthSchedule {
    double s_min = 0.2;
    double s_max_start = 0.6;
    double s_max_end = 0.4;
    int t_max = 10;
    int t_min = 0;
    std::uint64_t total_iters = 50000;

    void validate() const {
        if (!(0.0 <= s_min && s_min <= s_max_end && s_max_end <= s_max_start && s_max_start <= 1.0))
            throw ConfigError("strength schedule needs 0 <= s_min <= s_max_end <= s_max_start <= 1");
        if (t_min < 0 || t_min > t_max) throw ConfigError("noise levels need 0 <= t_min <= t_max");
    }

    double s_max(std::uint64_t iter) const {
        if (total_iters == 0) return s_max_start;
        const double u = std::min(1.0, static_cast<double>(iter) / static_cast<double>(total_iters));
        return std::lerp(s_max_start, s_max_end, u);
    }

    int level(double s) const { return std::clamp(static_cast<int>(std::lround(s * t_max)), t_min, t_max); }
};

struct StrengthSample {
    double s = 0.0;
    int t = 0;
};

inline StrengthSample sample_strength(const StrengthSchedule& sched, std::uint64_t iter, Rng& rng) {
    const double s = std::lerp(sched.s_min, sched.s_max(iter), rng.uniform());
    return {s, sched.level(s)};
}

struct GuidanceRequest {
    std::string request_id;
    Image rendered;
    Image ref_prev;
    Image ref_next;
    DepthMap depth_target;
    DepthMap depth_prev;
    DepthMap depth_next;
    double strength = 0.0;
    int t = 0;
    int t_max = 10;
    int t_min = 0;
    std::uint64_t seed = 0;
    std::optional<CameraView> view;  ///< pseudo-view camera, for providers that can render it

    void validate() const {
        if (rendered.channels() != 3) throw ShapeMismatch("rendered image must have 3 channels");
        require_same_shape(rendered, ref_prev, "ref_prev");
        require_same_shape(rendered, ref_next, "ref_next");
        for (const DepthMap* d : {&depth_target, &depth_prev, &depth_next})
            if (d->width != rendered.width() || d->height != rendered.height())
                throw ShapeMismatch("depth map does not match the rendered image");
        if (!(strength >= 0.0 && strength <= 1.0)) throw ConfigError("strength must lie in [0, 1]");
        if (t < 0 || t > t_max || t_min < 0 || t_min > t_max) throw ConfigError("noise level out of range");
    }
};

struct GuidanceResponse {
    std::string request_id;
    Image guidance;
    std::string provider_id;
    int noise_level_used = 0;

    bool operator==(const GuidanceResponse&) const = default;
};

/// A denoiser that maps a noisy pseudo-view render at level t back to level
/// t_min, conditioned on the reference frames and depths in `req`. Must be
/// deterministic given its inputs and safe to call from several threads.
class GuidanceProvider {
public:
    virtual ~GuidanceProvider() = default;
    virtual std::string id() const = 0;
    virtual Image denoise(const Image& noisy, int t, const GuidanceRequest& req) = 0;
};

class IdentityProvider final : public GuidanceProvider {
public:
    std::string id() const override { return "identity"; }
    Image denoise(const Image& noisy, int, const GuidanceRequest&) override { return noisy; }
};

/// Blend w(t) * smooth(mean(ref_prev, ref_next)) + (1 - w(t)) * noisy with
/// w(t) = t / t_max. The smoothing is a joint bilateral filter whose range
/// kernel follows depth_target, so edges between depth layers survive.
class ToyProvider final : public GuidanceProvider {
public:
    explicit ToyProvider(int radius = 2, double sigma_space = 1.5, double sigma_depth_rel = 0.1)
        : radius_(radius), sigma_space_(sigma_space), sigma_depth_rel_(sigma_depth_rel) {}

    std::string id() const override { return "toy"; }

    static double blend_weight(int t, int t_max) { return t_max > 0 ? static_cast<double>(t) / t_max : 0.0; }

    Image denoise(const Image& noisy, int t, const GuidanceRequest& req) override {
        const double w = blend_weight(t, req.t_max);
        const Image smooth = smoothed_reference(req);
        Image out(noisy.width(), noisy.height(), noisy.channels());
        for (std::size_t i = 0; i < out.size(); ++i)
            out.data()[i] = std::clamp(w * smooth.data()[i] + (1.0 - w) * noisy.data()[i], 0.0, 1.0);
        return out;
    }

    Image smoothed_reference(const GuidanceRequest& req) const {
        const Image& a = req.ref_prev;
        const Image& b = req.ref_next;
        const DepthMap& d = req.depth_target;
        const int w = a.width(), h = a.height();
        Image out(w, h, 3);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const bool center_valid = d.is_valid(y, x);
                const double dc = center_valid ? d.at(y, x) : 0.0;
                double acc[3] = {0, 0, 0}, wsum = 0.0;
                for (int yy = std::max(0, y - radius_); yy <= std::min(h - 1, y + radius_); ++yy) {
                    for (int xx = std::max(0, x - radius_); xx <= std::min(w - 1, x + radius_); ++xx) {
                        const double ds2 = double((yy - y) * (yy - y) + (xx - x) * (xx - x));
                        double wt = std::exp(-ds2 / (2.0 * sigma_space_ * sigma_space_));
                        if (center_valid && d.is_valid(yy, xx)) {
                            const double rel = (d.at(yy, xx) - dc) / (sigma_depth_rel_ * dc);
                            wt *= std::exp(-0.5 * rel * rel);
                        }
                        for (int c = 0; c < 3; ++c) acc[c] += wt * 0.5 * (a.at(c, yy, xx) + b.at(c, yy, xx));
                        wsum += wt;
                    }
                }
                for (int c = 0; c < 3; ++c) out.at(c, y, x) = acc[c] / wsum;
            }
        }
        return out;
    }

private:
    int radius_;
    double sigma_space_;
    double sigma_depth_rel_;
};

/// Returns ground truth for the pseudo view: either a fixed image or a render
/// of a reference scene at the request's camera.
class OracleProvider final : public GuidanceProvider {
public:
    using Renderer = std::function<Image(const CameraView&)>;

    explicit OracleProvider(Image fixed) : fixed_(std::move(fixed)) {}
    explicit OracleProvider(Renderer renderer) : renderer_(std::move(renderer)) {}

    std::string id() const override { return "oracle"; }

    Image denoise(const Image&, int, const GuidanceRequest& req) override {
        if (renderer_) {
            if (!req.view) throw ProviderUnavailable("oracle provider needs the pseudo-view camera");
            return renderer_(*req.view);
        }
        return fixed_;
    }

private:
    Image fixed_;
    Renderer renderer_;
};

/// Wraps a provider and records every call (thread safe).
class CountingProvider final : public GuidanceProvider {
public:
    explicit CountingProvider(std::shared_ptr<GuidanceProvider> inner) : inner_(std::move(inner)) {}

    std::string id() const override { return inner_->id(); }

    Image denoise(const Image& noisy, int t, const GuidanceRequest& req) override {
        {
            std::lock_guard lock(mutex_);
            request_ids_.push_back(req.request_id);
            levels_.push_back(t);
        }
        calls_.fetch_add(1);
        return inner_->denoise(noisy, t, req);
    }

    std::size_t calls() const noexcept { return calls_.load(); }
    std::vector<std::string> request_ids() const {
        std::lock_guard lock(mutex_);
        return request_ids_;
    }
    std::vector<int> levels() const {
        std::lock_guard lock(mutex_);
        return levels_;
    }

private:
    std::shared_ptr<GuidanceProvider> inner_;
    std::atomic<std::size_t> calls_{0};
    mutable std::mutex mutex_;
    std::vector<std::string> request_ids_;
    std::vector<int> levels_;
};

struct NoiseOptions {
    double sigma_at_t_max = 0.5;  ///< pixel noise standard deviation at t = t_max
};

/// Adds seeded pixel noise with standard deviation sigma_at_t_max * t / t_max.
/// t = 0 returns the input unchanged.
inline Image add_level_noise(const Image& img, int t, int t_max, std::uint64_t seed, const NoiseOptions& opt = {}) {
    if (t == 0 || t_max == 0 || opt.sigma_at_t_max == 0.0) return img;
    const double sigma = opt.sigma_at_t_max * static_cast<double>(t) / t_max;
    Rng rng(seed);
    Image out = img;
    for (auto& v : out.data()) v += sigma * rng.normal();
    return out;
}

/// Noise the render to level t, let the provider denoise it, validate and clamp.
inline GuidanceResponse make_guidance(const GuidanceRequest& req, GuidanceProvider& provider,
                                      const NoiseOptions& noise = {}) {
    req.validate();
    const Image noisy = add_level_noise(req.rendered, req.t, req.t_max, req.seed, noise);
    Image out = provider.denoise(noisy, req.t, req);
    if (!out.same_shape(req.rendered)) throw ShapeMismatch("provider returned an image of the wrong shape");
    for (double v : out.data())
        if (!std::isfinite(v)) throw ProtocolError("provider returned a non-finite pixel");
    return {req.request_id, clamp01(std::move(out)), provider.id(), req.t};
}

}  // namespace streetgs
