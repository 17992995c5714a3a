// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

// streetgs command-line tool.

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>
#include <thread>

#include "streetgs/config.hpp"
#include "streetgs/synthetic.hpp"
#include "streetgs/trainer.hpp"
#include "streetgs/wire.hpp"

namespace {

using namespace streetgs;
namespace fs = std::filesystem;

constexpr double kDeg = std::numbers::pi / 180.0;

std::vector<double> parse_list(const std::string& text, std::size_t expected, const char* what) {
    std::vector<double> v;
    std::istringstream is(text);
    for (double x; is >> x;) v.push_back(x);
    if (!is.eof() || v.size() != expected)
        throw ConfigError(std::string(what) + " needs " + std::to_string(expected) + " numbers");
    return v;
}

RigidPose parse_pose(const std::string& text) {
    const auto v = parse_list(text, 12, "--pose");
    Mat3 r;
    Vec3 t;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) r(i, j) = v[4 * i + j];
        t[i] = v[4 * i + 3];
    }
    return RigidPose::from_matrix(r, t);
}

Intrinsics parse_intrinsics(const std::string& text) {
    const auto v = parse_list(text, 6, "--intrinsics");
    Intrinsics k{v[0], v[1], v[2], v[3], static_cast<int>(v[4]), static_cast<int>(v[5])};
    k.validate();
    return k;
}

std::shared_ptr<GuidanceProvider> make_provider(const RunConfig& cfg) {
    const std::string& p = cfg.provider;
    if (p == "none") return nullptr;
    if (p == "identity") return std::make_shared<IdentityProvider>();
    if (p == "toy") return std::make_shared<ToyProvider>();
    if (p == "oracle") {
        if (cfg.oracle_checkpoint.empty()) throw ConfigError("the oracle provider needs oracle_checkpoint");
        auto truth = std::make_shared<const GaussianCloud>(load_checkpoint(cfg.oracle_checkpoint).cloud);
        return std::make_shared<OracleProvider>(truth_renderer(truth));
    }
    if (p.rfind("remote:", 0) == 0)
        return std::make_shared<wire::RemoteProvider>(wire::Endpoint::parse(p.substr(7)), cfg.provider_timeout);
    throw ConfigError("unknown provider '" + p + "'");
}

DatasetManifest load_manifest(const RunConfig& cfg, const fs::path& root) {
    DatasetManifest m = load_dataset(root);
    if (cfg.split_scheme) apply_split(m, cfg.drop_rate, *cfg.split_scheme, cfg.split_seed);
    return m;
}

void print_step(const StepRecord& r) {
    const auto& l = r.report;
    std::printf("iter %llu lr %.6e total %.6f recon_l1 %.6f recon_ssim %.6f recon_depth %.6f pseudo_l1 %.6f "
                "pseudo_perceptual %.6f pseudo_depth %.6f gaussians %llu%s\n",
                static_cast<unsigned long long>(r.iter), r.lr, l.total, l.recon_l1, l.recon_ssim, l.recon_depth,
                l.pseudo_l1, l.pseudo_perceptual, l.pseudo_depth, static_cast<unsigned long long>(r.gaussians),
                r.pseudo ? " pseudo" : "");
    std::fflush(stdout);
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    fs::path out;
    SyntheticOptions opt;
};

void run_synth(const SynthArgs& a) {
    const auto scene = make_street_scene(a.opt);
    write_dataset(a.out, scene.intrinsics, scene.frames, scene.split);
    save_checkpoint(scene.ground_truth, 0, a.out / "ground_truth.sgdc");
    std::printf("wrote %zu frames (%zu train, %zu test) and %zu ground-truth Gaussians to %s\n", scene.frames.size(),
                scene.split.train.size(), scene.split.test.size(), scene.ground_truth.size(), a.out.c_str());
}

struct IngestArgs {
    fs::path data_root, out;
    double voxel_size = 0.5;
    int top_mask = 80;
};

void run_ingest(const IngestArgs& a) {
    const DatasetManifest m = load_dataset(a.data_root);
    const TrainingScene scene = build_scene(m, {a.voxel_size, a.top_mask});
    save_point_cloud(scene.lidar, a.out);
    std::size_t valid = 0, total = 0;
    for (const auto& f : scene.train) {
        valid += f.depth.valid_count();
        total += f.depth.values.size();
    }
    std::printf("%zu colored points (voxel %.3g m) written to %s; completed depth covers %.1f%% of training pixels\n",
                scene.lidar.size(), a.voxel_size, a.out.c_str(), total ? 100.0 * valid / total : 0.0);
}

struct SampleArgs {
    fs::path data_root;
    std::int64_t anchor = 0;
    double delta_deg = 15.0;
    int count = 4;
    std::uint64_t seed = 0;
};

void run_sample_views(const SampleArgs& a) {
    const DatasetManifest m = load_dataset(a.data_root);
    const auto& train = m.split.train;
    const auto pos = std::find(train.begin(), train.end(), a.anchor);
    if (pos == train.end()) throw ConfigError("anchor " + std::to_string(a.anchor) + " is not a training frame");
    const std::size_t i = static_cast<std::size_t>(pos - train.begin());
    const auto& anchor = m.frame(train[i]);
    const auto& prev = m.frame(train[i == 0 ? i : i - 1]);
    const auto& next = m.frame(train[i + 1 < train.size() ? i + 1 : i]);
    PseudoViewConfig cfg;
    cfg.delta_max = a.delta_deg * kDeg;
    cfg.count_per_event = a.count;
    Rng rng(a.seed);
    const auto views = sample_pseudo_views(m.view(anchor), m.view(prev), m.view(next), cfg, rng);
    std::printf("# index tx ty tz qw qx qy qz yaw_deg\n");
    for (std::size_t k = 0; k < views.size(); ++k) {
        const auto& p = views[k].pose();
        std::printf("%zu %.9f %.9f %.9f %.9f %.9f %.9f %.9f %.6f\n", k, p.translation.x(), p.translation.y(),
                    p.translation.z(), p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z(),
                    yaw_offset(anchor.pose.rotation, p.rotation) / kDeg);
    }
}

struct RenderArgs {
    fs::path checkpoint, out, ply_out, depth_out, data_root;
    std::string pose, intrinsics;
    std::int64_t frame = -1;
};

void run_render(const RenderArgs& a) {
    const GaussianCloud cloud = load_checkpoint(a.checkpoint).cloud;
    if (!a.ply_out.empty()) write_ply(a.ply_out, cloud);
    if (a.out.empty()) return;

    std::optional<CameraView> view;
    if (!a.data_root.empty()) {
        const DatasetManifest m = load_dataset(a.data_root);
        if (!a.pose.empty())
            view = CameraView(a.intrinsics.empty() ? m.intrinsics : parse_intrinsics(a.intrinsics), parse_pose(a.pose));
        else if (a.frame >= 0)
            view = m.view(m.frame(a.frame));
    } else if (!a.pose.empty() && !a.intrinsics.empty()) {
        view = CameraView(parse_intrinsics(a.intrinsics), parse_pose(a.pose));
    }
    if (!view) throw ConfigError("render needs --pose with --intrinsics or --data-root, or --data-root with --frame");
    const RenderOutput out = render(cloud, *view);
    write_png(a.out, out.color);
    if (!a.depth_out.empty()) {
        Image d = out.depth;
        double far = 0.0;
        for (double v : d.data()) far = std::max(far, v);
        if (far > 0.0)
            for (auto& v : d.data()) v /= far;
        write_png(a.depth_out, d);
    }
}

struct EvalArgs {
    fs::path checkpoint, data_root, tsv;
    bool train_frames = false;
};

void run_eval(const EvalArgs& a) {
    const GaussianCloud cloud = load_checkpoint(a.checkpoint).cloud;
    const DatasetManifest m = load_dataset(a.data_root);
    std::vector<SceneFrame> frames;
    for (auto id : a.train_frames ? m.split.train : m.split.test) {
        const auto& f = m.frame(id);
        frames.push_back({f.frame_id, f.image, m.view(f), {}});
    }
    const EvalSummary s = evaluate_views(cloud, frames);
    std::printf("%8s %10s %8s %12s\n", "frame", "psnr", "ssim", "perceptual");
    for (const auto& v : s.views)
        std::printf("%8lld %10.4f %8.5f %12.6f\n", static_cast<long long>(v.frame_id), v.psnr, v.ssim, v.perceptual);
    std::printf("%8s %10.4f %8.5f %12.6f\n", "mean", s.mean.psnr, s.mean.ssim, s.mean.perceptual);
    if (!a.tsv.empty()) {
        std::ofstream o(a.tsv);
        if (!o) throw IoError("cannot write " + a.tsv.string());
        o << std::setprecision(10) << "frame\tpsnr\tssim\tperceptual\n";
        for (const auto& v : s.views) o << v.frame_id << '\t' << v.psnr << '\t' << v.ssim << '\t' << v.perceptual << '\n';
        o << "mean\t" << s.mean.psnr << '\t' << s.mean.ssim << '\t' << s.mean.perceptual << '\n';
    }
}

struct TrainArgs {
    fs::path data_root, config, out, resume, init;
    std::vector<std::string> settings;
    std::string provider;
    bool deterministic = false;
};

void run_train(const TrainArgs& a) {
    RunConfig cfg = a.config.empty() ? RunConfig{} : load_config(a.config);
    for (const auto& s : a.settings) apply_assignment(cfg, s);
    if (!a.provider.empty()) cfg.provider = a.provider;
    if (a.deterministic) cfg.train.deterministic = true;
    if (cfg.train.checkpoint_dir.empty()) cfg.train.checkpoint_dir = a.out;
    if (cfg.train.total_iters > 0 && cfg.train.warmup_iters >= cfg.train.total_iters)
        cfg.train.warmup_iters = cfg.train.total_iters - 1;

    const DatasetManifest m = load_manifest(cfg, a.data_root);
    const TrainingScene scene = build_scene(m, cfg.scene);
    std::printf("scene: %zu training frames, %zu test frames, %zu LiDAR points\n", scene.train.size(),
                scene.test.size(), scene.lidar.size());

    Trainer trainer(scene, cfg.train, make_provider(cfg));
    if (!a.resume.empty()) {
        trainer.resume(a.resume);
        std::printf("resumed at iteration %llu\n", static_cast<unsigned long long>(trainer.state().iter));
    } else if (!a.init.empty()) {
        trainer.initialize(load_checkpoint(a.init).cloud);
    } else {
        trainer.initialize(init_from_points(scene.lidar));
    }
    const std::uint64_t every = std::max<std::uint64_t>(1, cfg.log_every);
    trainer.set_progress([every, total = cfg.train.total_iters](const StepRecord& r) {
        if (r.iter % every == 0 || r.iter + 1 == total) print_step(r);
    });
    trainer.run();

    fs::create_directories(a.out);
    const auto& st = trainer.state();
    save_checkpoint(st.cloud, st.iter, a.out / "final.sgdc");
    save_train_state(st, trainer.config(), a.out / "final.sgdt");
    {
        std::ofstream h(a.out / "history.tsv");
        write_history_tsv(h, st.history);
    }
    {
        std::ofstream e(a.out / "events.tsv");
        e << "iter\tkind\tdetail\n";
        for (const auto& ev : st.events) e << ev.iter << '\t' << static_cast<int>(ev.kind) << '\t' << ev.detail << '\n';
    }
    if (!scene.test.empty()) {
        const auto s = evaluate_views(st.cloud, scene.test, trainer.config().render_options());
        std::printf("test psnr %.4f ssim %.5f perceptual %.6f\n", s.mean.psnr, s.mean.ssim, s.mean.perceptual);
    }
    std::printf("wrote %s\n", (a.out / "final.sgdc").c_str());
}

struct ProbeArgs {
    std::string endpoint;
    bool loopback = false;
    bool echo = false;
    int timeout_ms = 10000;
};

GuidanceRequest probe_request() {
    Rng rng(20260101);
    GuidanceRequest r;
    r.request_id = "probe-1";
    const int w = 32, h = 24;
    for (Image* img : {&r.rendered, &r.ref_prev, &r.ref_next}) {
        *img = Image(w, h, 3);
        for (auto& v : img->data()) v = static_cast<double>(rng.below(257)) / 256.0;
    }
    r.depth_target = DepthMap(w, h, 4);
    r.depth_prev = DepthMap(w, h, 4);
    r.depth_next = DepthMap(w, h, 4);
    for (int y = 4; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            r.depth_target.set(y, x, 2.0 + 0.25 * y);
            r.depth_prev.set(y, x, 2.0 + 0.25 * y);
            r.depth_next.set(y, x, 2.0 + 0.25 * y);
        }
    r.strength = 0.5;
    r.t = 5;
    r.seed = 7;
    Intrinsics k{20.0, 20.0, 15.5, 11.5, w, h};
    r.view = CameraView(k, RigidPose{});
    return r;
}

int run_probe(const ProbeArgs& a) {
    std::unique_ptr<wire::GuidanceServer> local;
    wire::Endpoint ep;
    if (a.loopback) {
        local = std::make_unique<wire::GuidanceServer>(std::make_shared<ToyProvider>(), a.echo);
        local->start();
        ep = local->endpoint();
    } else {
        if (a.endpoint.empty()) throw ConfigError("guidance-probe needs --endpoint or --loopback");
        ep = wire::Endpoint::parse(a.endpoint);
    }
    const auto req = probe_request();
    const auto resp = wire::round_trip(ep, req, std::chrono::milliseconds(a.timeout_ms));
    bool ok = resp.guidance.same_shape(req.rendered);
    for (double v : resp.guidance.data()) ok = ok && std::isfinite(v) && v >= 0.0 && v <= 1.0;
    std::printf("endpoint %s provider %s shape %dx%dx%d %s\n", ep.str().c_str(), resp.provider_id.c_str(),
                resp.guidance.channels(), resp.guidance.height(), resp.guidance.width(), ok ? "ok" : "INVALID");
    if (a.echo) {
        const bool exact = resp.guidance == req.rendered;
        std::printf("echo round trip %s\n", exact ? "byte-exact" : "DIFFERS");
        ok = ok && exact;
    }
    return ok ? 0 : 1;
}

struct ServeArgs {
    int port = 0;
    std::string provider = "toy";
    bool echo = false;
};

volatile std::sig_atomic_t g_stop = 0;

void run_serve(const ServeArgs& a) {
    RunConfig cfg;
    cfg.provider = a.provider;
    wire::GuidanceServer server(make_provider(cfg), a.echo, static_cast<std::uint16_t>(a.port));
    server.start();
    std::printf("listening on %s\n", server.endpoint().str().c_str());
    std::fflush(stdout);
    std::signal(SIGINT, [](int) { g_stop = 1; });
    std::signal(SIGTERM, [](int) { g_stop = 1; });
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse-view street scene reconstruction with Gaussian splats"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "Generate a procedural street dataset");
    c_synth->add_option("--out", synth.out, "Dataset directory")->required();
    c_synth->add_option("--width", synth.opt.width);
    c_synth->add_option("--height", synth.opt.height);
    c_synth->add_option("--focal", synth.opt.focal);
    c_synth->add_option("--train-views", synth.opt.train_views);
    c_synth->add_option("--test-views", synth.opt.test_views);
    c_synth->add_option("--seed", synth.opt.seed);

    IngestArgs ingest;
    auto* c_ingest = app.add_subcommand("ingest", "Colorize, accumulate and downsample LiDAR sweeps");
    c_ingest->add_option("--data-root", ingest.data_root)->required();
    c_ingest->add_option("--out", ingest.out, "Colored point cloud file")->required();
    c_ingest->add_option("--voxel-size", ingest.voxel_size)->check(CLI::PositiveNumber);
    c_ingest->add_option("--top-mask", ingest.top_mask)->check(CLI::NonNegativeNumber);

    SampleArgs sample;
    auto* c_sample = app.add_subcommand("sample-views", "Print pseudo-view poses around a training frame");
    c_sample->add_option("--data-root", sample.data_root)->required();
    c_sample->add_option("--anchor", sample.anchor, "Training frame id")->required();
    c_sample->add_option("--delta", sample.delta_deg, "Yaw bound in degrees");
    c_sample->add_option("--count", sample.count);
    c_sample->add_option("--seed", sample.seed);

    RenderArgs rend;
    auto* c_render = app.add_subcommand("render", "Render a checkpoint");
    c_render->add_option("--checkpoint", rend.checkpoint)->required();
    c_render->add_option("--out", rend.out, "PNG output");
    c_render->add_option("--depth-out", rend.depth_out, "Depth PNG, scaled to the farthest pixel");
    c_render->add_option("--ply-out", rend.ply_out, "ASCII PLY of means and colors");
    c_render->add_option("--pose", rend.pose, "12 numbers: row-major 3x4 camera-to-world");
    c_render->add_option("--intrinsics", rend.intrinsics, "fx fy cx cy width height");
    c_render->add_option("--data-root", rend.data_root);
    c_render->add_option("--frame", rend.frame, "Frame id from --data-root");

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "Score a checkpoint on held-out frames");
    c_eval->add_option("--checkpoint", ev.checkpoint)->required();
    c_eval->add_option("--data-root", ev.data_root)->required();
    c_eval->add_option("--tsv", ev.tsv, "Also write tab-separated metrics here");
    c_eval->add_flag("--train-frames", ev.train_frames, "Score the training frames instead");

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "Optimize a Gaussian cloud");
    c_train->add_option("--data-root", tr.data_root)->required();
    c_train->add_option("--config", tr.config, "key=value config file");
    c_train->add_option("--set", tr.settings, "key=value override, repeatable");
    c_train->add_option("--provider", tr.provider, "identity | toy | oracle | remote:HOST:PORT | none");
    c_train->add_flag("--deterministic", tr.deterministic);
    c_train->add_option("--out", tr.out, "Output directory")->required();
    c_train->add_option("--resume", tr.resume, "Training state file to continue from");
    c_train->add_option("--init", tr.init, "Checkpoint to start from instead of the LiDAR cloud");

    ProbeArgs probe;
    auto* c_probe = app.add_subcommand("guidance-probe", "Send one request to a guidance service and check the reply");
    c_probe->add_option("--endpoint", probe.endpoint, "HOST:PORT");
    c_probe->add_flag("--loopback", probe.loopback, "Probe an in-process server");
    c_probe->add_flag("--echo", probe.echo, "Expect the rendered image back unchanged");
    c_probe->add_option("--timeout-ms", probe.timeout_ms);

    ServeArgs serve;
    auto* c_serve = app.add_subcommand("serve", "Serve an in-process provider on loopback");
    c_serve->add_option("--port", serve.port);
    c_serve->add_option("--provider", serve.provider, "identity | toy");
    c_serve->add_flag("--echo", serve.echo);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*c_synth) run_synth(synth);
        if (*c_ingest) run_ingest(ingest);
        if (*c_sample) run_sample_views(sample);
        if (*c_render) run_render(rend);
        if (*c_eval) run_eval(ev);
        if (*c_train) run_train(tr);
        if (*c_probe) return run_probe(probe);
        if (*c_serve) run_serve(serve);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
