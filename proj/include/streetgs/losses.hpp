// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "streetgs/error.hpp"
#include "streetgs/image.hpp"
#include "streetgs/rasterizer.hpp"

namespace streetgs {

struct LossWeights {
    double lambda_ssim = 0.2;
    double lambda_depth = 0.1;
    double lambda_pseudo = 0.5;
    double lambda_p_lpips = 0.5;
    double lambda_p_depth = 0.1;

    void validate() const {
        for (double v : {lambda_ssim, lambda_depth, lambda_pseudo, lambda_p_lpips, lambda_p_depth})
            if (!(v >= 0.0)) throw ConfigError("loss weights must be non-negative");
    }
};

/// Unweighted loss terms plus their weighted total.
struct LossReport {
    double total = 0.0;
    double recon_l1 = 0.0;
    double recon_ssim = 0.0;  ///< 1 - SSIM
    double recon_depth = 0.0;
    double pseudo_l1 = 0.0;
    double pseudo_perceptual = 0.0;
    double pseudo_depth = 0.0;

    double recon_total(const LossWeights& w) const {
        return recon_l1 + w.lambda_ssim * recon_ssim + w.lambda_depth * recon_depth;
    }
    double pseudo_total(const LossWeights& w) const {
        return pseudo_l1 + w.lambda_p_lpips * pseudo_perceptual + w.lambda_p_depth * pseudo_depth;
    }
    /// L = L_recon + lambda_pseudo * L_pseudo
    double compose(const LossWeights& w) const { return recon_total(w) + w.lambda_pseudo * pseudo_total(w); }

    bool operator==(const LossReport&) const = default;
};

namespace detail {

inline std::array<double, 11> ssim_window() {
    std::array<double, 11> g{};
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
        g[i] = std::exp(-((i - 5.0) * (i - 5.0)) / (2.0 * 1.5 * 1.5));
        sum += g[i];
    }
    for (auto& v : g) v /= sum;
    return g;
}

/// Zero-padded separable 11x11 Gaussian filter of one H x W plane. The kernel is
/// symmetric, so this is also its own adjoint.
inline std::vector<double> gaussian_blur(const double* in, int h, int w) {
    static const auto g = ssim_window();
    std::vector<double> tmp(static_cast<std::size_t>(h) * w, 0.0), out(tmp.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int o = -5; o <= 5; ++o) {
                const int xx = x + o;
                if (xx >= 0 && xx < w) s += g[o + 5] * in[static_cast<std::size_t>(y) * w + xx];
            }
            tmp[static_cast<std::size_t>(y) * w + x] = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int o = -5; o <= 5; ++o) {
                const int yy = y + o;
                if (yy >= 0 && yy < h) s += g[o + 5] * tmp[static_cast<std::size_t>(yy) * w + x];
            }
            out[static_cast<std::size_t>(y) * w + x] = s;
        }
    return out;
}

inline double sign(double v) noexcept { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace detail

/// Mean absolute difference; optionally writes d/d b.
inline double l1_loss(const Image& a, const Image& b, Image* grad_b = nullptr) {
    require_same_shape(a, b, "l1_loss");
    const double inv = 1.0 / static_cast<double>(a.size());
    double sum = 0.0;
    if (grad_b) *grad_b = Image(b.width(), b.height(), b.channels());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = b.data()[i] - a.data()[i];
        sum += std::abs(d);
        if (grad_b) grad_b->data()[i] = detail::sign(d) * inv;
    }
    return sum * inv;
}

/// Structural similarity (11x11 Gaussian window, sigma 1.5, C1 = 0.01^2, C2 = 0.03^2,
/// zero padding), averaged over pixels and channels. Optionally writes d SSIM / d b.
inline double ssim(const Image& a, const Image& b, Image* grad_b = nullptr) {
    require_same_shape(a, b, "ssim");
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const int h = a.height(), w = a.width();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const double inv_n = 1.0 / static_cast<double>(a.size());
    if (grad_b) *grad_b = Image(w, h, a.channels());

    double total = 0.0;
    std::vector<double> xx(plane), yy(plane), xy(plane);
    std::vector<double> d_mu(plane), d_eyy(plane), d_exy(plane);
    for (int c = 0; c < a.channels(); ++c) {
        const double* x = a.data().data() + c * plane;
        const double* y = b.data().data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mu_x = detail::gaussian_blur(x, h, w);
        const auto mu_y = detail::gaussian_blur(y, h, w);
        const auto e_xx = detail::gaussian_blur(xx.data(), h, w);
        const auto e_yy = detail::gaussian_blur(yy.data(), h, w);
        const auto e_xy = detail::gaussian_blur(xy.data(), h, w);
        for (std::size_t i = 0; i < plane; ++i) {
            const double mx = mu_x[i], my = mu_y[i];
            const double sxx = e_xx[i] - mx * mx, syy = e_yy[i] - my * my, sxy = e_xy[i] - mx * my;
            const double a1 = 2.0 * mx * my + c1, a2 = 2.0 * sxy + c2;
            const double b1 = mx * mx + my * my + c1, b2 = sxx + syy + c2;
            const double s = (a1 * a2) / (b1 * b2);
            total += s;
            if (grad_b) {
                d_mu[i] = (2.0 * mx * a2 - 2.0 * mx * a1) / (b1 * b2) - s * (2.0 * my / b1 - 2.0 * my / b2);
                d_eyy[i] = -s / b2;
                d_exy[i] = 2.0 * a1 / (b1 * b2);
            }
        }
        if (grad_b) {
            const auto t_mu = detail::gaussian_blur(d_mu.data(), h, w);
            const auto t_eyy = detail::gaussian_blur(d_eyy.data(), h, w);
            const auto t_exy = detail::gaussian_blur(d_exy.data(), h, w);
            double* g = grad_b->data().data() + c * plane;
            for (std::size_t i = 0; i < plane; ++i)
                g[i] = inv_n * (t_mu[i] + 2.0 * y[i] * t_eyy[i] + x[i] * t_exy[i]);
        }
    }
    return total * inv_n;
}

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) for images in [0, 1]; identical images report kPsnrCap.
inline double psnr(const Image& a, const Image& b) {
    require_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

/// Mean |rendered - target| over pixels where the target is valid and the
/// render has coverage. Optionally writes d/d rendered depth.
inline double depth_l1(const Image& rendered_depth, const Image& rendered_alpha, const DepthMap& target,
                       Image* grad = nullptr) {
    if (rendered_depth.width() != target.width || rendered_depth.height() != target.height ||
        !rendered_depth.same_shape(rendered_alpha))
        throw ShapeMismatch("depth_l1: rendered and target depth differ in size");
    std::size_t count = 0;
    double sum = 0.0;
    const std::size_t n = target.values.size();
    for (std::size_t i = 0; i < n; ++i)
        if (target.valid[i] && rendered_alpha.data()[i] > 0.0) {
            sum += std::abs(rendered_depth.data()[i] - target.values[i]);
            ++count;
        }
    if (grad) {
        *grad = Image(target.width, target.height, 1);
        if (count > 0)
            for (std::size_t i = 0; i < n; ++i)
                if (target.valid[i] && rendered_alpha.data()[i] > 0.0)
                    grad->data()[i] = detail::sign(rendered_depth.data()[i] - target.values[i]) / double(count);
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

/// Pluggable perceptual distance d(reference, candidate) >= 0 with gradient w.r.t. the candidate.
class PerceptualMetric {
public:
    virtual ~PerceptualMetric() = default;
    virtual std::string name() const = 0;
    virtual double evaluate(const Image& reference, const Image& candidate, Image* grad_candidate) const = 0;
};

/// Stand-in for a learned perceptual metric: L1 between Sobel gradient
/// magnitudes at three dyadic scales (2x2 average pooling between scales).
class GradientMagnitudeProxy final : public PerceptualMetric {
public:
    explicit GradientMagnitudeProxy(int scales = 3, double eps = 1e-6) : scales_(scales), eps_(eps) {}

    std::string name() const override { return "perceptual-proxy"; }

    double evaluate(const Image& reference, const Image& candidate, Image* grad_candidate) const override {
        require_same_shape(reference, candidate, "perceptual proxy");
        std::vector<Image> ref_pyr{reference}, cand_pyr{candidate};
        for (int s = 1; s < scales_; ++s) {
            ref_pyr.push_back(downsample(ref_pyr.back()));
            cand_pyr.push_back(downsample(cand_pyr.back()));
        }
        int used = 0;
        double total = 0.0;
        std::vector<Image> grads(cand_pyr.size());
        for (std::size_t s = 0; s < cand_pyr.size(); ++s) {
            const Image& r = ref_pyr[s];
            const Image& c = cand_pyr[s];
            grads[s] = Image(c.width(), c.height(), c.channels());
            if (c.width() < 3 || c.height() < 3) continue;
            ++used;
            total += scale_term(r, c, grad_candidate ? &grads[s] : nullptr);
        }
        if (used == 0) {
            if (grad_candidate) *grad_candidate = Image(candidate.width(), candidate.height(), candidate.channels());
            return 0.0;
        }
        if (grad_candidate) {
            // Propagate coarse-scale gradients back to full resolution.
            for (std::size_t s = grads.size() - 1; s > 0; --s) upsample_add(grads[s], grads[s - 1]);
            *grad_candidate = std::move(grads[0]);
            for (auto& v : grad_candidate->data()) v /= used;
        }
        return total / used;
    }

private:
    static Image downsample(const Image& in) {
        Image out(std::max(in.width() / 2, 0), std::max(in.height() / 2, 0), in.channels());
        for (int c = 0; c < in.channels(); ++c)
            for (int y = 0; y < out.height(); ++y)
                for (int x = 0; x < out.width(); ++x)
                    out.at(c, y, x) = 0.25 * (in.at(c, 2 * y, 2 * x) + in.at(c, 2 * y, 2 * x + 1) +
                                              in.at(c, 2 * y + 1, 2 * x) + in.at(c, 2 * y + 1, 2 * x + 1));
        return out;
    }

    /// fine += adjoint of downsample applied to coarse.
    static void upsample_add(const Image& coarse, Image& fine) {
        for (int c = 0; c < coarse.channels(); ++c)
            for (int y = 0; y < coarse.height(); ++y)
                for (int x = 0; x < coarse.width(); ++x) {
                    const double g = 0.25 * coarse.at(c, y, x);
                    fine.at(c, 2 * y, 2 * x) += g;
                    fine.at(c, 2 * y, 2 * x + 1) += g;
                    fine.at(c, 2 * y + 1, 2 * x) += g;
                    fine.at(c, 2 * y + 1, 2 * x + 1) += g;
                }
    }

    double magnitude(const Image& im, int c, int y, int x, double& gx, double& gy) const {
        gx = (im.at(c, y - 1, x + 1) + 2.0 * im.at(c, y, x + 1) + im.at(c, y + 1, x + 1)) -
             (im.at(c, y - 1, x - 1) + 2.0 * im.at(c, y, x - 1) + im.at(c, y + 1, x - 1));
        gy = (im.at(c, y + 1, x - 1) + 2.0 * im.at(c, y + 1, x) + im.at(c, y + 1, x + 1)) -
             (im.at(c, y - 1, x - 1) + 2.0 * im.at(c, y - 1, x) + im.at(c, y - 1, x + 1));
        return std::sqrt(gx * gx + gy * gy + eps_);
    }

    double scale_term(const Image& ref, const Image& cand, Image* grad) const {
        const int h = cand.height(), w = cand.width();
        const double inv = 1.0 / (double(h - 2) * (w - 2) * cand.channels());
        double sum = 0.0;
        for (int c = 0; c < cand.channels(); ++c)
            for (int y = 1; y < h - 1; ++y)
                for (int x = 1; x < w - 1; ++x) {
                    double rgx, rgy, cgx, cgy;
                    const double mr = magnitude(ref, c, y, x, rgx, rgy);
                    const double mc = magnitude(cand, c, y, x, cgx, cgy);
                    sum += std::abs(mc - mr);
                    if (!grad) continue;
                    const double dm = detail::sign(mc - mr) * inv;
                    if (dm == 0.0) continue;
                    const double dgx = dm * cgx / mc, dgy = dm * cgy / mc;
                    grad->at(c, y - 1, x + 1) += dgx;
                    grad->at(c, y, x + 1) += 2.0 * dgx;
                    grad->at(c, y + 1, x + 1) += dgx;
                    grad->at(c, y - 1, x - 1) -= dgx;
                    grad->at(c, y, x - 1) -= 2.0 * dgx;
                    grad->at(c, y + 1, x - 1) -= dgx;
                    grad->at(c, y + 1, x - 1) += dgy;
                    grad->at(c, y + 1, x) += 2.0 * dgy;
                    grad->at(c, y + 1, x + 1) += dgy;
                    grad->at(c, y - 1, x - 1) -= dgy;
                    grad->at(c, y - 1, x) -= 2.0 * dgy;
                    grad->at(c, y - 1, x + 1) -= dgy;
                }
        return sum * inv;
    }

    int scales_;
    double eps_;
};

/// A loss value with its gradient w.r.t. the rendered color and depth.
struct LossResult {
    LossReport report;
    Image d_color;
    Image d_depth;
};

/// L = |I - I~|_1 + lambda_ssim (1 - SSIM(I, I~)) + lambda_depth |D - D~|_1, all mean-reduced.
inline LossResult recon_loss(const RenderOutput& rendered, const Image& target_image, const DepthMap& target_depth,
                             const LossWeights& w) {
    require_same_shape(target_image, rendered.color, "recon_loss");
    LossResult out;
    Image g_l1, g_ssim;
    out.report.recon_l1 = l1_loss(target_image, rendered.color, &g_l1);
    out.report.recon_ssim = 1.0 - ssim(target_image, rendered.color, &g_ssim);
    out.report.recon_depth = depth_l1(rendered.depth, rendered.alpha, target_depth, &out.d_depth);
    out.d_color = std::move(g_l1);
    for (std::size_t i = 0; i < out.d_color.size(); ++i) out.d_color.data()[i] -= w.lambda_ssim * g_ssim.data()[i];
    for (auto& v : out.d_depth.data()) v *= w.lambda_depth;
    out.report.total = out.report.recon_total(w);
    return out;
}

/// Unweighted-by-lambda_pseudo pseudo-view loss:
/// |I_g - I~_p|_1 + lambda_p_lpips d_perc(I_g, I~_p) + lambda_p_depth |D_p - D~_p|_1.
/// `report.total` holds lambda_pseudo times that sum, and the returned gradients
/// are scaled the same way.
inline LossResult pseudo_loss(const RenderOutput& rendered, const Image& guidance, const DepthMap& pseudo_depth,
                              const LossWeights& w, const PerceptualMetric& perceptual) {
    require_same_shape(guidance, rendered.color, "pseudo_loss");
    LossResult out;
    Image g_perc;
    out.report.pseudo_l1 = l1_loss(guidance, rendered.color, &out.d_color);
    out.report.pseudo_perceptual = perceptual.evaluate(guidance, rendered.color, &g_perc);
    out.report.pseudo_depth = depth_l1(rendered.depth, rendered.alpha, pseudo_depth, &out.d_depth);
    for (std::size_t i = 0; i < out.d_color.size(); ++i) {
        out.d_color.data()[i] = w.lambda_pseudo * (out.d_color.data()[i] + w.lambda_p_lpips * g_perc.data()[i]);
    }
    for (auto& v : out.d_depth.data()) v *= w.lambda_pseudo * w.lambda_p_depth;
    out.report.total = out.report.compose(w);
    return out;
}

}  // namespace streetgs
