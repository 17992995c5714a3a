// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "streetgs/binary_io.hpp"
#include "streetgs/error.hpp"
#include "streetgs/gaussians.hpp"
#include "streetgs/geometry.hpp"
#include "streetgs/guidance.hpp"
#include "streetgs/lidar.hpp"
#include "streetgs/losses.hpp"
#include "streetgs/optimizer.hpp"
#include "streetgs/rasterizer.hpp"
#include "streetgs/rng.hpp"
#include "streetgs/scene_io.hpp"

namespace streetgs {

struct TrainConfig {
    std::uint64_t total_iters = 50000;
    std::uint64_t warmup_iters = 500;
    int pseudo_cadence = 10;
    int pseudo_count = 4;
    double lr_start = 1.6e-4;
    double lr_end = 1.6e-6;
    LearningRates rates;
    LossWeights weights;
    StrengthSchedule schedule;  ///< total_iters is taken from this config
    PseudoViewConfig pseudo;
    NoiseOptions noise;
    std::uint64_t seed = 0;

    bool densify = true;
    std::uint64_t densify_from = 500;
    std::uint64_t densify_until = 15000;
    std::uint64_t densify_interval = 100;
    std::uint64_t opacity_reset_interval = 3000;
    std::uint64_t sh_degree_interval = 1000;
    DensifyThresholds thresholds;  ///< scene_extent <= 0 means "from the training cameras"

    bool deterministic = true;
    int workers = 1;

    std::uint64_t eval_every = 0;        ///< 0 disables periodic evaluation
    std::uint64_t checkpoint_every = 0;  ///< 0 disables periodic checkpoints
    std::filesystem::path checkpoint_dir;

    RenderOptions render_options() const {
        RenderOptions o;
        o.workers = deterministic ? 1 : std::max(1, workers);
        return o;
    }

    void validate() const {
        if (total_iters > 0 && warmup_iters >= total_iters) throw ConfigError("warmup_iters must be < total_iters");
        if (pseudo_cadence < 1) throw ConfigError("pseudo cadence must be >= 1");
        if (pseudo_count < 1) throw ConfigError("pseudo count must be >= 1");
        if (!(lr_start > 0.0 && lr_end > 0.0 && lr_end <= lr_start)) throw ConfigError("need 0 < lr_end <= lr_start");
        if (densify_interval == 0 || sh_degree_interval == 0) throw ConfigError("intervals must be >= 1");
        weights.validate();
        schedule.validate();
        pseudo.validate();
    }
};

/// Exponential decay of the position learning rate from lr_start to lr_end.
inline double lr_at(std::uint64_t iter, const TrainConfig& cfg) {
    if (iter == 0 || cfg.total_iters == 0) return cfg.lr_start;
    if (iter >= cfg.total_iters) return cfg.lr_end;
    const double u = static_cast<double>(iter) / static_cast<double>(cfg.total_iters);
    return std::exp(std::lerp(std::log(cfg.lr_start), std::log(cfg.lr_end), u));
}

// ---------------------------------------------------------------------------
// Scene

struct SceneFrame {
    std::int64_t frame_id = 0;
    Image image;
    CameraView view;
    DepthMap depth;  ///< completed LiDAR depth (training frames only)
};

/// Everything the optimizer reads: training/test frames with their LiDAR depth
/// targets and the accumulated colored LiDAR cloud.
struct TrainingScene {
    Intrinsics intrinsics;
    std::vector<SceneFrame> train;  ///< ordered by frame id
    std::vector<SceneFrame> test;
    ColoredPointCloud lidar;
    int top_mask_rows = 0;

    /// Completed LiDAR depth at an arbitrary camera; all-invalid if nothing projects.
    DepthMap lidar_depth(const CameraView& view) const {
        if (lidar.empty()) return DepthMap(view.width(), view.height(), top_mask_rows);
        try {
            return complete_depth(render_depth(lidar, view, top_mask_rows));
        } catch (const NoValidPixels&) {
            return DepthMap(view.width(), view.height(), top_mask_rows);
        }
    }

    /// 1.1 x the largest camera distance from the mean training camera center.
    double camera_extent() const {
        if (train.empty()) return 1.0;
        Vec3 c = Vec3::Zero();
        for (const auto& f : train) c += f.view.center();
        c /= static_cast<double>(train.size());
        double r = 0.0;
        for (const auto& f : train) r = std::max(r, (f.view.center() - c).norm());
        return std::max(1.1 * r, 1e-3);
    }
};

struct SceneOptions {
    double voxel_size = 0.5;
    int top_mask_rows = 80;
};

/// Colorizes each training sweep with its own image, accumulates and
/// downsamples, then renders completed depth targets for the training frames.
inline TrainingScene build_scene(const DatasetManifest& m, const SceneOptions& opt = {}) {
    TrainingScene s;
    s.intrinsics = m.intrinsics;
    s.top_mask_rows = opt.top_mask_rows;
    std::vector<ColoredPointCloud> colored;
    for (auto id : m.split.train) {
        const auto& f = m.frame(id);
        const PointSweep sweep = load_sweep(m, f);
        if (sweep.points.empty()) continue;
        try {
            colored.push_back(colorize_sweep(sweep, m.view(f), f.image));
        } catch (const EmptyResult&) {
        }
    }
    if (!colored.empty()) s.lidar = accumulate_and_downsample(colored, opt.voxel_size);
    for (const auto& f : m.frames) {
        SceneFrame sf{f.frame_id, f.image, m.view(f), {}};
        const bool is_train = std::find(m.split.train.begin(), m.split.train.end(), f.frame_id) != m.split.train.end();
        if (is_train) {
            sf.depth = s.lidar_depth(sf.view);
            s.train.push_back(std::move(sf));
        } else {
            s.test.push_back(std::move(sf));
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// State and records

struct StepRecord {
    std::uint64_t iter = 0;
    double lr = 0.0;
    LossReport report;
    std::uint64_t gaussians = 0;
    bool pseudo = false;
    bool operator==(const StepRecord&) const = default;
};

struct EvalRecord {
    std::uint64_t iter = 0;
    double psnr = 0.0;
    double ssim = 0.0;
    double perceptual = 0.0;
    bool operator==(const EvalRecord&) const = default;
};

struct EventRecord {
    enum class Kind : std::uint32_t { pseudo_skipped = 0, densified = 1, opacity_reset = 2, sh_degree_up = 3 };
    std::uint64_t iter = 0;
    Kind kind = Kind::pseudo_skipped;
    std::string detail;
    bool operator==(const EventRecord&) const = default;
};

/// Mutable optimization state. Randomness is derived from (seed, iteration),
/// so the state needs no generator of its own to resume exactly.
struct TrainState {
    std::uint64_t iter = 0;
    GaussianCloud cloud;
    GaussianAdam adam;
    GradStats stats;
    std::vector<StepRecord> history;
    std::vector<EvalRecord> evals;
    std::vector<EventRecord> events;

    TrainState() = default;
    TrainState(GaussianCloud initial, const TrainConfig& cfg)
        : cloud(std::move(initial)), adam(cloud, cfg.rates), stats(cloud.size()) {}

    bool operator==(const TrainState&) const = default;
};

namespace detail {

enum : std::uint64_t { kTagEpoch = 1, kTagPseudo = 2, kTagStrength = 3, kTagNoise = 4, kTagDensify = 5 };

/// Adds this render's screen-space gradient norms (NDC units) to the statistics.
inline void accumulate_grad_stats(GradStats& stats, const GradientBuffer& g, int width, int height) {
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!g.visible[i]) continue;
        const double gx = g.screen[2 * i] * 0.5 * width;
        const double gy = g.screen[2 * i + 1] * 0.5 * height;
        stats.accum[i] += std::hypot(gx, gy);
        stats.count[i] += 1;
    }
}

}  // namespace detail

/// Recon pass on one training frame: render, loss, backward into `grads`.
inline LossReport accumulate_recon(const TrainState& state, const SceneFrame& frame, const TrainConfig& cfg,
                                   GradientBuffer& grads) {
    const RenderOptions ro = cfg.render_options();
    const RenderOutput out = render(state.cloud, frame.view, ro);
    const LossResult loss = recon_loss(out, frame.image, frame.depth, cfg.weights);
    grads = render_backward(state.cloud, frame.view, out, loss.d_color, loss.d_depth, ro);
    return loss.report;
}

/// One training-view step: recon loss, backward and a single Adam update at
/// the scheduled learning rate. Increments state.iter.
inline LossReport train_step(TrainState& state, const SceneFrame& frame, const TrainConfig& cfg) {
    GradientBuffer grads;
    const LossReport report = accumulate_recon(state, frame, cfg, grads);
    if (cfg.densify && state.iter < cfg.densify_until)
        detail::accumulate_grad_stats(state.stats, grads, frame.view.width(), frame.view.height());
    state.adam.step(state.cloud, grads, lr_at(state.iter, cfg));
    ++state.iter;
    return report;
}

enum class PseudoStatus { applied, refused, skipped, zero_weight };

struct PseudoOutcome {
    PseudoStatus status = PseudoStatus::refused;
    LossReport report;  ///< mean pseudo terms over the M views (recon terms zero)
    std::string detail;
};

/// Training frames adjacent (in frame order) to training frame `anchor`.
inline std::pair<std::size_t, std::size_t> adjacent_training_frames(const TrainingScene& scene, std::size_t anchor) {
    const std::size_t prev = anchor == 0 ? anchor : anchor - 1;
    const std::size_t next = anchor + 1 < scene.train.size() ? anchor + 1 : anchor;
    return {prev, next};
}

/// True when iteration `iter` carries a pseudo-view event.
inline bool pseudo_due(std::uint64_t iter, const TrainConfig& cfg) {
    return iter >= cfg.warmup_iters && iter % static_cast<std::uint64_t>(cfg.pseudo_cadence) == 0;
}

/// Builds the M guidance requests of a pseudo event at iteration `iter`.
inline std::vector<GuidanceRequest> build_pseudo_requests(const TrainState& state, const TrainingScene& scene,
                                                          std::size_t anchor, std::uint64_t iter,
                                                          const TrainConfig& cfg,
                                                          std::vector<RenderOutput>* renders = nullptr) {
    const auto [prev, next] = adjacent_training_frames(scene, anchor);
    PseudoViewConfig pcfg = cfg.pseudo;
    pcfg.count_per_event = cfg.pseudo_count;
    Rng view_rng(derive_seed(cfg.seed, {iter, detail::kTagPseudo}));
    const auto views =
        sample_pseudo_views(scene.train[anchor].view, scene.train[prev].view, scene.train[next].view, pcfg, view_rng);
    StrengthSchedule schedule = cfg.schedule;
    schedule.total_iters = cfg.total_iters;
    Rng strength_rng(derive_seed(cfg.seed, {iter, detail::kTagStrength}));
    const RenderOptions ro = cfg.render_options();
    std::vector<GuidanceRequest> reqs;
    for (std::size_t i = 0; i < views.size(); ++i) {
        RenderOutput out = render(state.cloud, views[i], ro);
        const auto st = sample_strength(schedule, iter, strength_rng);
        GuidanceRequest r;
        r.request_id = std::to_string(iter) + "-" + std::to_string(i);
        r.rendered = out.color;
        r.ref_prev = scene.train[prev].image;
        r.ref_next = scene.train[next].image;
        r.depth_target = scene.lidar_depth(views[i]);
        r.depth_prev = scene.train[prev].depth;
        r.depth_next = scene.train[next].depth;
        r.strength = st.s;
        r.t = st.t;
        r.t_max = cfg.schedule.t_max;
        r.t_min = cfg.schedule.t_min;
        r.seed = derive_seed(cfg.seed, {iter, detail::kTagNoise, i});
        r.view = views[i];
        reqs.push_back(std::move(r));
        if (renders) renders->push_back(std::move(out));
    }
    return reqs;
}

/// Pseudo-view event: M views around training frame `anchor`, guidance for
/// each (requests in flight concurrently), and lambda_pseudo / M weighted
/// pseudo-loss gradients added to `grads`. Provider errors skip the event.
inline PseudoOutcome accumulate_pseudo(const TrainState& state, const TrainingScene& scene, std::size_t anchor,
                                       std::uint64_t iter, const TrainConfig& cfg, GuidanceProvider& provider,
                                       GradientBuffer& grads) {
    PseudoOutcome outcome;
    if (!pseudo_due(iter, cfg)) return outcome;
    if (cfg.weights.lambda_pseudo == 0.0) {
        outcome.status = PseudoStatus::zero_weight;
        return outcome;
    }
    std::vector<RenderOutput> renders;
    const auto reqs = build_pseudo_requests(state, scene, anchor, iter, cfg, &renders);

    std::vector<std::future<GuidanceResponse>> pending;
    for (const auto& r : reqs)
        pending.push_back(std::async(std::launch::async, [&provider, &r, &cfg] { return make_guidance(r, provider, cfg.noise); }));
    std::vector<GuidanceResponse> responses;
    std::string failure;
    for (auto& f : pending) {
        try {
            responses.push_back(f.get());
        } catch (const Error& e) {
            if (failure.empty()) failure = e.what();
        }
    }
    if (!failure.empty()) {
        outcome.status = PseudoStatus::skipped;
        outcome.detail = failure;
        return outcome;
    }

    const GradientMagnitudeProxy perceptual;
    const RenderOptions ro = cfg.render_options();
    const double inv_m = 1.0 / static_cast<double>(reqs.size());
    for (std::size_t i = 0; i < reqs.size(); ++i) {
        const LossResult loss = pseudo_loss(renders[i], responses[i].guidance, reqs[i].depth_target, cfg.weights,
                                            perceptual);
        const GradientBuffer g =
            render_backward(state.cloud, *reqs[i].view, renders[i], loss.d_color, loss.d_depth, ro);
        grads.add(g, inv_m);
        outcome.report.pseudo_l1 += inv_m * loss.report.pseudo_l1;
        outcome.report.pseudo_perceptual += inv_m * loss.report.pseudo_perceptual;
        outcome.report.pseudo_depth += inv_m * loss.report.pseudo_depth;
    }
    outcome.report.total = outcome.report.compose(cfg.weights);
    outcome.status = PseudoStatus::applied;
    return outcome;
}

/// Stand-alone pseudo event at state.iter: refused during warm-up or off
/// cadence, and applied with its own optimizer step otherwise. A zero pseudo
/// weight leaves the cloud untouched.
inline PseudoOutcome pseudo_event(TrainState& state, const TrainingScene& scene, std::size_t anchor,
                                  const TrainConfig& cfg, GuidanceProvider& provider) {
    GradientBuffer grads(state.cloud.size(), state.cloud.sh_stride());
    PseudoOutcome out = accumulate_pseudo(state, scene, anchor, state.iter, cfg, provider, grads);
    if (out.status == PseudoStatus::applied) state.adam.step(state.cloud, grads, lr_at(state.iter, cfg));
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct ViewMetrics {
    std::int64_t frame_id = 0;
    double psnr = 0.0;
    double ssim = 0.0;
    double perceptual = 0.0;
};

struct EvalSummary {
    std::vector<ViewMetrics> views;
    ViewMetrics mean;
};

inline EvalSummary evaluate_views(const GaussianCloud& cloud, const std::vector<SceneFrame>& frames,
                                  const RenderOptions& ro = {}) {
    const GradientMagnitudeProxy perceptual;
    EvalSummary s;
    s.mean.frame_id = -1;
    for (const auto& f : frames) {
        const RenderOutput out = render(cloud, f.view, ro);
        ViewMetrics v{f.frame_id, psnr(f.image, out.color), ssim(f.image, out.color),
                      perceptual.evaluate(f.image, out.color, nullptr)};
        s.mean.psnr += v.psnr;
        s.mean.ssim += v.ssim;
        s.mean.perceptual += v.perceptual;
        s.views.push_back(v);
    }
    if (!frames.empty()) {
        const double n = static_cast<double>(frames.size());
        s.mean.psnr /= n;
        s.mean.ssim /= n;
        s.mean.perceptual /= n;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Training-state files: "SGDT" | u32 version | u64 seed | u64 total_iters |
// u64 iteration | u64 checkpoint length | checkpoint bytes | optimizer |
// densification statistics | step, eval and event records.

inline constexpr std::uint32_t kTrainStateVersion = 1;

namespace detail {

inline void append_doubles(std::string& out, const std::vector<double>& v) {
    binio::append<std::uint64_t>(out, v.size());
    binio::append_span<double>(out, v);
}

inline std::vector<double> read_doubles(binio::Reader& r) {
    const auto n = r.read<std::uint64_t>();
    if (n > r.remaining() / 8) throw IoError("truncated training state");
    std::vector<double> v(n);
    r.read_into<double>(v);
    return v;
}

inline void append_report(std::string& out, const LossReport& rep) {
    for (double v : {rep.total, rep.recon_l1, rep.recon_ssim, rep.recon_depth, rep.pseudo_l1, rep.pseudo_perceptual,
                     rep.pseudo_depth})
        binio::append<double>(out, v);
}

inline LossReport read_report(binio::Reader& r) {
    LossReport rep;
    for (double* v : {&rep.total, &rep.recon_l1, &rep.recon_ssim, &rep.recon_depth, &rep.pseudo_l1,
                      &rep.pseudo_perceptual, &rep.pseudo_depth})
        *v = r.read<double>();
    return rep;
}

}  // namespace detail

inline std::string encode_train_state(const TrainState& s, const TrainConfig& cfg) {
    std::string out = "SGDT";
    binio::append<std::uint32_t>(out, kTrainStateVersion);
    binio::append<std::uint64_t>(out, cfg.seed);
    binio::append<std::uint64_t>(out, cfg.total_iters);
    binio::append<std::uint64_t>(out, s.iter);

    std::string ck = "SGDC";
    binio::append<std::uint32_t>(ck, kCheckpointVersion);
    binio::append<std::uint64_t>(ck, s.cloud.size());
    binio::append<std::uint32_t>(ck, static_cast<std::uint32_t>(s.cloud.sh_degree));
    binio::append<std::uint32_t>(ck, static_cast<std::uint32_t>(s.cloud.active_sh_degree));
    binio::append<std::uint64_t>(ck, s.iter);
    ck += encode_cloud_columns(s.cloud);
    binio::append<std::uint64_t>(out, ck.size());
    out += ck;

    binio::append<std::uint64_t>(out, s.adam.step_count());
    for (const AdamMoments* m : {&s.adam.means, &s.adam.log_scales, &s.adam.rotations, &s.adam.opacities, &s.adam.sh}) {
        detail::append_doubles(out, m->m);
        detail::append_doubles(out, m->v);
    }
    detail::append_doubles(out, s.stats.accum);
    binio::append<std::uint64_t>(out, s.stats.count.size());
    binio::append_span<std::uint32_t>(out, s.stats.count);

    binio::append<std::uint64_t>(out, s.history.size());
    for (const auto& h : s.history) {
        binio::append<std::uint64_t>(out, h.iter);
        binio::append<double>(out, h.lr);
        detail::append_report(out, h.report);
        binio::append<std::uint64_t>(out, h.gaussians);
        binio::append<std::uint8_t>(out, h.pseudo ? 1 : 0);
    }
    binio::append<std::uint64_t>(out, s.evals.size());
    for (const auto& e : s.evals) {
        binio::append<std::uint64_t>(out, e.iter);
        for (double v : {e.psnr, e.ssim, e.perceptual}) binio::append<double>(out, v);
    }
    binio::append<std::uint64_t>(out, s.events.size());
    for (const auto& e : s.events) {
        binio::append<std::uint64_t>(out, e.iter);
        binio::append<std::uint32_t>(out, static_cast<std::uint32_t>(e.kind));
        binio::append<std::uint32_t>(out, static_cast<std::uint32_t>(e.detail.size()));
        out += e.detail;
    }
    return out;
}

inline TrainState decode_train_state(std::string_view bytes, const TrainConfig& cfg) {
    binio::Reader r(bytes);
    detail::check_magic(r, "SGDT", kTrainStateVersion, "training state");
    const auto seed = r.read<std::uint64_t>();
    const auto total = r.read<std::uint64_t>();
    if (seed != cfg.seed || total != cfg.total_iters)
        throw ConfigError("training state was written with a different seed or iteration budget");
    TrainState s;
    s.iter = r.read<std::uint64_t>();
    const auto ck_len = r.read<std::uint64_t>();
    if (ck_len > r.remaining()) throw IoError("truncated training state");
    s.cloud = decode_checkpoint(r.take(ck_len), "training state").cloud;
    s.adam = GaussianAdam(s.cloud, cfg.rates);
    s.adam.set_step_count(r.read<std::uint64_t>());
    for (AdamMoments* m : {&s.adam.means, &s.adam.log_scales, &s.adam.rotations, &s.adam.opacities, &s.adam.sh}) {
        const std::size_t expected = m->m.size();
        m->m = detail::read_doubles(r);
        m->v = detail::read_doubles(r);
        if (m->m.size() != expected || m->v.size() != expected) throw IoError("optimizer state does not match cloud");
    }
    s.stats.accum = detail::read_doubles(r);
    const auto nc = r.read<std::uint64_t>();
    if (nc != s.cloud.size() || s.stats.accum.size() != s.cloud.size()) throw IoError("statistics do not match cloud");
    s.stats.count.resize(nc);
    r.read_into<std::uint32_t>(s.stats.count);

    const auto nh = r.read<std::uint64_t>();
    if (nh > r.remaining() / 81) throw IoError("truncated training state");
    s.history.resize(nh);
    for (auto& h : s.history) {
        h.iter = r.read<std::uint64_t>();
        h.lr = r.read<double>();
        h.report = detail::read_report(r);
        h.gaussians = r.read<std::uint64_t>();
        h.pseudo = r.read<std::uint8_t>() != 0;
    }
    const auto ne = r.read<std::uint64_t>();
    if (ne > r.remaining() / 32) throw IoError("truncated training state");
    s.evals.resize(ne);
    for (auto& e : s.evals) {
        e.iter = r.read<std::uint64_t>();
        e.psnr = r.read<double>();
        e.ssim = r.read<double>();
        e.perceptual = r.read<double>();
    }
    const auto nev = r.read<std::uint64_t>();
    if (nev > r.remaining() / 16) throw IoError("truncated training state");
    s.events.resize(nev);
    for (auto& e : s.events) {
        e.iter = r.read<std::uint64_t>();
        e.kind = static_cast<EventRecord::Kind>(r.read<std::uint32_t>());
        e.detail = std::string(r.take(r.read<std::uint32_t>()));
    }
    if (r.remaining() != 0) throw IoError("trailing bytes in training state");
    return s;
}

inline void save_train_state(const TrainState& s, const TrainConfig& cfg, const std::filesystem::path& path) {
    detail::atomic_write(path, encode_train_state(s, cfg));
}

inline TrainState load_train_state(const std::filesystem::path& path, const TrainConfig& cfg) {
    return decode_train_state(detail::read_all(path), cfg);
}

// ---------------------------------------------------------------------------
// Trainer

/// Drives the full loop: shuffled training views per epoch, pseudo events on
/// cadence, densification, SH warm-up, evaluation and checkpoints.
class Trainer {
public:
    using ProgressFn = std::function<void(const StepRecord&)>;

    Trainer(const TrainingScene& scene, TrainConfig cfg, std::shared_ptr<GuidanceProvider> provider)
        : scene_(scene), cfg_(std::move(cfg)), provider_(std::move(provider)) {
        cfg_.validate();
        if (scene_.train.empty()) throw ConfigError("no training frames");
        if (cfg_.thresholds.scene_extent <= 0.0) cfg_.thresholds.scene_extent = scene_.camera_extent();
    }

    const TrainConfig& config() const noexcept { return cfg_; }
    TrainState& state() noexcept { return state_; }
    const TrainState& state() const noexcept { return state_; }

    void set_progress(ProgressFn fn) { progress_ = std::move(fn); }

    void initialize(GaussianCloud initial) {
        if (!initial.consistent()) throw ShapeMismatch("initial cloud is inconsistent");
        state_ = TrainState(std::move(initial), cfg_);
    }

    void resume(const std::filesystem::path& state_file) { state_ = load_train_state(state_file, cfg_); }

    /// Index (into scene.train) of the view trained at iteration `iter`.
    std::size_t frame_for(std::uint64_t iter) const {
        const std::size_t n = scene_.train.size();
        const std::uint64_t epoch = iter / n;
        if (epoch != order_epoch_ || order_.empty()) {
            order_.resize(n);
            for (std::size_t i = 0; i < n; ++i) order_[i] = i;
            Rng rng(derive_seed(cfg_.seed, {epoch, detail::kTagEpoch}));
            for (std::size_t i = n; i > 1; --i) std::swap(order_[i - 1], order_[rng.below(i)]);
            order_epoch_ = epoch;
        }
        return order_[iter % n];
    }

    /// One full iteration at state.iter.
    StepRecord iterate() {
        const std::uint64_t iter = state_.iter;
        const std::size_t anchor = frame_for(iter);
        const SceneFrame& frame = scene_.train[anchor];

        GradientBuffer grads;
        StepRecord rec;
        rec.iter = iter;
        rec.lr = lr_at(iter, cfg_);
        rec.report = accumulate_recon(state_, frame, cfg_, grads);
        if (cfg_.densify && iter < cfg_.densify_until)
            detail::accumulate_grad_stats(state_.stats, grads, frame.view.width(), frame.view.height());

        if (provider_ && pseudo_due(iter, cfg_) && cfg_.weights.lambda_pseudo > 0.0) {
            const PseudoOutcome p = accumulate_pseudo(state_, scene_, anchor, iter, cfg_, *provider_, grads);
            if (p.status == PseudoStatus::applied) {
                rec.pseudo = true;
                rec.report.pseudo_l1 = p.report.pseudo_l1;
                rec.report.pseudo_perceptual = p.report.pseudo_perceptual;
                rec.report.pseudo_depth = p.report.pseudo_depth;
            } else if (p.status == PseudoStatus::skipped) {
                state_.events.push_back({iter, EventRecord::Kind::pseudo_skipped, p.detail});
            }
        }
        rec.report.total = rec.report.compose(cfg_.weights);

        state_.adam.step(state_.cloud, grads, rec.lr);
        state_.iter = iter + 1;
        post_step(state_.iter);
        rec.gaussians = state_.cloud.size();
        state_.history.push_back(rec);
        if (progress_) progress_(rec);
        return rec;
    }

    /// Runs until state.iter == min(target, total_iters). Any error saves the
    /// current state (when a checkpoint directory is set) before propagating.
    void run_until(std::uint64_t target) {
        target = std::min(target, cfg_.total_iters);
        try {
            while (state_.iter < target) {
                iterate();
                const std::uint64_t it = state_.iter;
                if (cfg_.eval_every && it % cfg_.eval_every == 0) evaluate_now();
                if (cfg_.checkpoint_every && it % cfg_.checkpoint_every == 0) checkpoint();
            }
        } catch (...) {
            if (!cfg_.checkpoint_dir.empty()) {
                try {
                    std::filesystem::create_directories(cfg_.checkpoint_dir);
                    save_train_state(state_, cfg_, cfg_.checkpoint_dir / "state_error.sgdt");
                } catch (...) {
                }
            }
            throw;
        }
    }

    void run() { run_until(cfg_.total_iters); }

    EvalRecord evaluate_now() {
        const auto summary = evaluate_views(state_.cloud, scene_.test, cfg_.render_options());
        EvalRecord e{state_.iter, summary.mean.psnr, summary.mean.ssim, summary.mean.perceptual};
        state_.evals.push_back(e);
        return e;
    }

    /// Writes ckpt_<iter>.sgdc (cloud only) and state_<iter>.sgdt (full state).
    void checkpoint() const {
        if (cfg_.checkpoint_dir.empty()) return;
        std::filesystem::create_directories(cfg_.checkpoint_dir);
        const std::string stem = std::to_string(state_.iter);
        save_checkpoint(state_.cloud, state_.iter, cfg_.checkpoint_dir / ("ckpt_" + stem + ".sgdc"));
        save_train_state(state_, cfg_, cfg_.checkpoint_dir / ("state_" + stem + ".sgdt"));
    }

private:
    void post_step(std::uint64_t it) {
        if (cfg_.densify && it < cfg_.densify_until) {
            if (it > cfg_.densify_from && it % cfg_.densify_interval == 0) {
                Rng rng(derive_seed(cfg_.seed, {it, detail::kTagDensify}));
                const std::size_t before = state_.cloud.size();
                DensifyResult d = densify_and_prune(state_.cloud, state_.stats, cfg_.thresholds, rng);
                state_.adam.remap(d.origin, d.cloud.sh_stride());
                state_.cloud = std::move(d.cloud);
                state_.stats.reset(state_.cloud.size());
                state_.events.push_back({it, EventRecord::Kind::densified,
                                         std::to_string(before) + "->" + std::to_string(state_.cloud.size())});
            }
            if (cfg_.opacity_reset_interval && it % cfg_.opacity_reset_interval == 0) {
                reset_opacity(state_.cloud);
                state_.adam.reset_opacity_moments();
                state_.events.push_back({it, EventRecord::Kind::opacity_reset, {}});
            }
        }
        if (it % cfg_.sh_degree_interval == 0 && state_.cloud.active_sh_degree < state_.cloud.sh_degree) {
            ++state_.cloud.active_sh_degree;
            state_.events.push_back(
                {it, EventRecord::Kind::sh_degree_up, std::to_string(state_.cloud.active_sh_degree)});
        }
    }

    const TrainingScene& scene_;
    TrainConfig cfg_;
    std::shared_ptr<GuidanceProvider> provider_;
    TrainState state_;
    ProgressFn progress_;
    mutable std::vector<std::size_t> order_;
    mutable std::uint64_t order_epoch_ = 0;
};

struct TrainResult {
    GaussianCloud cloud;
    std::vector<StepRecord> history;
    std::vector<EvalRecord> evals;
    std::vector<EventRecord> events;
};

/// Convenience wrapper: train from `initial` for cfg.total_iters iterations.
inline TrainResult train(const TrainingScene& scene, const GaussianCloud& initial, const TrainConfig& cfg,
                         std::shared_ptr<GuidanceProvider> provider) {
    Trainer t(scene, cfg, std::move(provider));
    t.initialize(initial);
    t.run();
    auto& s = t.state();
    return {std::move(s.cloud), std::move(s.history), std::move(s.evals), std::move(s.events)};
}

/// Writes the step history as tab-separated text.
inline void write_history_tsv(std::ostream& os, const std::vector<StepRecord>& history) {
    os << "iter\tlr\ttotal\trecon_l1\trecon_ssim\trecon_depth\tpseudo_l1\tpseudo_perceptual\tpseudo_depth\tgaussians\t"
          "pseudo\n";
    os.precision(10);
    for (const auto& h : history) {
        const auto& r = h.report;
        os << h.iter << '\t' << h.lr << '\t' << r.total << '\t' << r.recon_l1 << '\t' << r.recon_ssim << '\t'
           << r.recon_depth << '\t' << r.pseudo_l1 << '\t' << r.pseudo_perceptual << '\t' << r.pseudo_depth << '\t'
           << h.gaussians << '\t' << (h.pseudo ? 1 : 0) << '\n';
    }
}

}  // namespace streetgs
