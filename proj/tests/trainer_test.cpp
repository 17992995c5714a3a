// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

#include "streetgs/trainer.hpp"

#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include <unistd.h>

#include "streetgs/synthetic.hpp"

namespace streetgs {
namespace {

struct Fixture {
    SyntheticScene synth;
    TrainingScene scene;
    GaussianCloud initial;
};

const Fixture& tiny() {
    static const Fixture f = [] {
        SyntheticOptions o;
        o.width = 24;
        o.height = 16;
        o.focal = 14.0;
        o.train_views = 5;
        o.test_views = 2;
        o.surfel_spacing = 1.0;
        o.lidar_points_per_m2 = 2;
        Fixture x;
        x.synth = make_street_scene(o);
        SceneOptions so;
        so.voxel_size = 1.0;
        so.top_mask_rows = 4;
        x.scene = build_scene(x.synth.manifest(), so);
        x.initial = init_from_points(x.scene.lidar);
        return x;
    }();
    return f;
}

TrainConfig small_config(std::uint64_t total) {
    TrainConfig c;
    c.total_iters = total;
    c.warmup_iters = std::min<std::uint64_t>(10, total - 1);
    c.densify_from = 10;
    c.densify_interval = 20;
    c.densify_until = total;
    c.opacity_reset_interval = 45;
    c.sh_degree_interval = 25;
    c.seed = 4;
    return c;
}

class FailingProvider final : public GuidanceProvider {
public:
    std::string id() const override { return "failing"; }
    Image denoise(const Image&, int, const GuidanceRequest&) override { throw ProviderUnavailable("down"); }
};

TEST(LearningRate, Endpoints) {
    TrainConfig c;
    c.total_iters = 30000;
    EXPECT_EQ(lr_at(0, c), 1.6e-4);
    EXPECT_EQ(lr_at(30000, c), 1.6e-6);
    EXPECT_EQ(lr_at(90000, c), 1.6e-6);
}

TEST(LearningRate, LogLinearAndDecreasing) {
    TrainConfig c;
    c.total_iters = 1000;
    EXPECT_NEAR(lr_at(500, c), std::sqrt(1.6e-4 * 1.6e-6), 1e-15);
    EXPECT_NEAR(lr_at(250, c), 1.6e-4 * std::pow(0.01, 0.25), 1e-15);
    for (std::uint64_t i = 1; i <= 1000; ++i) ASSERT_LE(lr_at(i, c), lr_at(i - 1, c));
}

TEST(TrainConfig, Validation) {
    TrainConfig c;
    c.total_iters = 100;
    c.warmup_iters = 100;
    EXPECT_THROW(c.validate(), ConfigError);
    c.warmup_iters = 10;
    c.lr_end = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c.lr_end = 1e-6;
    c.pseudo_count = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c.pseudo_count = 4;
    EXPECT_NO_THROW(c.validate());
}

TEST(BuildScene, SplitsFramesAndRendersDepth) {
    const auto& f = tiny();
    EXPECT_EQ(f.scene.train.size(), 5u);
    EXPECT_EQ(f.scene.test.size(), 2u);
    EXPECT_FALSE(f.scene.lidar.empty());
    for (const auto& fr : f.scene.train) {
        EXPECT_GT(fr.depth.valid_count(), 0u);
        for (int y = 0; y < 4; ++y) EXPECT_FALSE(fr.depth.is_valid(y, 0));
    }
    for (const auto& fr : f.scene.test) EXPECT_TRUE(fr.depth.values.empty());
}

TEST(PseudoEvent, RefusedDuringWarmupAndOffCadence) {
    const auto& f = tiny();
    auto counter = std::make_shared<CountingProvider>(std::make_shared<IdentityProvider>());
    TrainConfig c = small_config(600);
    c.warmup_iters = 500;
    TrainState s(f.initial, c);
    for (std::uint64_t it : {0u, 100u, 490u, 499u, 501u, 505u}) {
        s.iter = it;
        const auto before = s.cloud;
        EXPECT_EQ(pseudo_event(s, f.scene, 2, c, *counter).status, PseudoStatus::refused);
        EXPECT_EQ(s.cloud, before);
    }
    EXPECT_EQ(counter->calls(), 0u);
    s.iter = 510;
    EXPECT_EQ(pseudo_event(s, f.scene, 2, c, *counter).status, PseudoStatus::applied);
    EXPECT_EQ(counter->calls(), 4u);
}

TEST(PseudoEvent, ZeroWeightLeavesCloudUntouched) {
    const auto& f = tiny();
    auto counter = std::make_shared<CountingProvider>(std::make_shared<ToyProvider>());
    TrainConfig c = small_config(100);
    c.weights.lambda_pseudo = 0.0;
    TrainState s(f.initial, c);
    s.iter = 20;
    EXPECT_EQ(pseudo_event(s, f.scene, 1, c, *counter).status, PseudoStatus::zero_weight);
    EXPECT_EQ(s.cloud, f.initial);
    EXPECT_EQ(counter->calls(), 0u);
}

TEST(PseudoEvent, RequestsCarryScheduledStrength) {
    const auto& f = tiny();
    TrainConfig c = small_config(1000);
    TrainState s(f.initial, c);
    for (std::uint64_t it : {20u, 500u, 990u}) {
        const auto reqs = build_pseudo_requests(s, f.scene, 2, it, c);
        ASSERT_EQ(reqs.size(), 4u);
        StrengthSchedule sched = c.schedule;
        sched.total_iters = c.total_iters;
        for (const auto& r : reqs) {
            EXPECT_GE(r.strength, sched.s_min);
            EXPECT_LE(r.strength, sched.s_max(it));
            EXPECT_EQ(r.t, static_cast<int>(std::lround(r.strength * 10)));
            EXPECT_EQ(r.ref_prev, f.scene.train[1].image);
            EXPECT_EQ(r.ref_next, f.scene.train[3].image);
            EXPECT_TRUE(r.rendered.same_shape(f.scene.train[2].image));
        }
    }
}

TEST(PseudoEvent, AdjacentFramesClampAtEnds) {
    const auto& f = tiny();
    using Pair = std::pair<std::size_t, std::size_t>;
    EXPECT_EQ(adjacent_training_frames(f.scene, 0), Pair(0, 1));
    EXPECT_EQ(adjacent_training_frames(f.scene, 2), Pair(1, 3));
    EXPECT_EQ(adjacent_training_frames(f.scene, 4), Pair(3, 4));
}

TEST(Trainer, CadenceIsExact) {
    const auto& f = tiny();
    auto counter = std::make_shared<CountingProvider>(std::make_shared<IdentityProvider>());
    TrainConfig c = small_config(535);
    c.warmup_iters = 500;
    c.densify = false;
    Trainer t(f.scene, c, counter);
    t.initialize(f.initial);
    std::map<std::uint64_t, std::size_t> calls;
    std::size_t last = 0;
    t.set_progress([&](const StepRecord& r) {
        calls[r.iter] = counter->calls() - last;
        last = counter->calls();
    });
    t.run();
    for (std::uint64_t it = 0; it < 535; ++it) {
        const bool due = it >= 500 && it % 10 == 0;
        ASSERT_EQ(calls.at(it), due ? 4u : 0u) << "iteration " << it;
        ASSERT_EQ(t.state().history[it].pseudo, due);
    }
}

TEST(Trainer, ZeroPseudoWeightMatchesPlainSteps) {
    const auto& f = tiny();
    TrainConfig c = small_config(40);
    c.weights.lambda_pseudo = 0.0;
    c.densify = false;
    auto counter = std::make_shared<CountingProvider>(std::make_shared<ToyProvider>());
    Trainer t(f.scene, c, counter);
    t.initialize(f.initial);

    TrainState plain(f.initial, c);
    for (std::uint64_t it = 0; it < 40; ++it) {
        const auto rec = t.iterate();
        const auto report = train_step(plain, f.scene.train[t.frame_for(it)], c);
        if (plain.iter % c.sh_degree_interval == 0 && plain.cloud.active_sh_degree < plain.cloud.sh_degree)
            ++plain.cloud.active_sh_degree;
        EXPECT_EQ(rec.report.recon_l1, report.recon_l1);
    }
    EXPECT_EQ(t.state().cloud, plain.cloud);
    EXPECT_EQ(counter->calls(), 0u);
}

TEST(Trainer, StepTowardsBrighterTargetRaisesDc) {
    GaussianCloud g(0);
    g.resize(1);
    for (int ax = 0; ax < 3; ++ax) g.log_scales[ax] = std::log(0.5f);
    g.means[2] = 4.0f;
    g.rotations[0] = 1.0f;
    g.opacities[0] = static_cast<float>(logit(0.9));

    Intrinsics k{10.0, 10.0, 3.5, 3.5, 8, 8};
    TrainingScene scene;
    scene.intrinsics = k;
    SceneFrame fr{0, Image(8, 8, 3), CameraView(k, RigidPose{}), DepthMap(8, 8, 0)};
    std::fill(fr.image.data().begin(), fr.image.data().end(), 0.9);
    scene.train.push_back(fr);

    TrainConfig c = small_config(10);
    c.densify = false;
    TrainState s(g, c);
    const auto before = s.cloud.sh;
    train_step(s, scene.train[0], c);
    for (int ch = 0; ch < 3; ++ch) EXPECT_GT(s.cloud.sh[ch], before[ch]);
    EXPECT_EQ(s.iter, 1u);
}

TEST(Trainer, DeterministicAcrossRepeats) {
    const auto& f = tiny();
    const TrainConfig c = small_config(60);
    const auto oracle = std::make_shared<OracleProvider>(
        truth_renderer(std::make_shared<const GaussianCloud>(f.synth.ground_truth)));
    const auto a = train(f.scene, f.initial, c, oracle);
    const auto b = train(f.scene, f.initial, c, oracle);
    EXPECT_EQ(a.cloud, b.cloud);
    EXPECT_EQ(a.history, b.history);
    EXPECT_EQ(a.events, b.events);
    bool densified = false, pseudo = false;
    for (const auto& e : a.events) densified |= e.kind == EventRecord::Kind::densified;
    for (const auto& h : a.history) pseudo |= h.pseudo;
    EXPECT_TRUE(densified);
    EXPECT_TRUE(pseudo);
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
    const auto& f = tiny();
    const auto dir = std::filesystem::temp_directory_path() / ("streetgs_resume_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    TrainConfig c = small_config(60);
    c.checkpoint_dir = dir;
    c.checkpoint_every = 30;
    auto toy = std::make_shared<ToyProvider>();

    Trainer full(f.scene, c, toy);
    full.initialize(f.initial);
    full.run();

    Trainer resumed(f.scene, c, toy);
    resumed.resume(dir / "state_30.sgdt");
    EXPECT_EQ(resumed.state().iter, 30u);
    resumed.run();
    EXPECT_EQ(resumed.state(), full.state());
    std::filesystem::remove_all(dir);
}

TEST(Trainer, ZeroIterationsIsANoOp) {
    const auto& f = tiny();
    TrainConfig c = small_config(1);
    c.total_iters = 0;
    c.warmup_iters = 0;
    const auto r = train(f.scene, f.initial, c, nullptr);
    EXPECT_EQ(r.cloud, f.initial);
    EXPECT_TRUE(r.history.empty());
}

TEST(Trainer, ProviderFailureSkipsEvent) {
    const auto& f = tiny();
    TrainConfig c = small_config(25);
    c.densify = false;
    const auto r = train(f.scene, f.initial, c, std::make_shared<FailingProvider>());
    ASSERT_EQ(r.history.size(), 25u);
    std::size_t skipped = 0;
    for (const auto& e : r.events)
        if (e.kind == EventRecord::Kind::pseudo_skipped) ++skipped;
    EXPECT_EQ(skipped, 2u);  // iterations 10 and 20
    for (const auto& h : r.history) EXPECT_FALSE(h.pseudo);
}

TEST(Trainer, RejectsEmptySceneAndBadCloud) {
    TrainingScene empty;
    EXPECT_THROW(Trainer(empty, small_config(10), nullptr), ConfigError);
    const auto& f = tiny();
    Trainer t(f.scene, small_config(10), nullptr);
    GaussianCloud bad = f.initial;
    bad.opacities.pop_back();
    EXPECT_THROW(t.initialize(bad), ShapeMismatch);
}

TEST(TrainState, EncodeDecodeRoundTrip) {
    const auto& f = tiny();
    TrainConfig c = small_config(30);
    Trainer t(f.scene, c, std::make_shared<ToyProvider>());
    t.initialize(f.initial);
    t.run_until(22);
    t.evaluate_now();
    const std::string bytes = encode_train_state(t.state(), c);
    EXPECT_EQ(decode_train_state(bytes, c), t.state());
    EXPECT_THROW(decode_train_state(bytes.substr(0, bytes.size() - 3), c), IoError);
    TrainConfig other = c;
    other.seed = 99;
    EXPECT_THROW(decode_train_state(bytes, other), ConfigError);
}

TEST(Evaluate, GroundTruthScoresHigh) {
    const auto& f = tiny();
    const auto s = evaluate_views(f.synth.ground_truth, f.scene.test);
    ASSERT_EQ(s.views.size(), 2u);
    EXPECT_EQ(s.mean.psnr, 99.0);
    EXPECT_NEAR(s.mean.ssim, 1.0, 1e-12);
}

TEST(History, TsvHasOneRowPerStep) {
    std::vector<StepRecord> h(3);
    h[1].pseudo = true;
    std::ostringstream os;
    write_history_tsv(os, h);
    const std::string s = os.str();
    EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 4);
    EXPECT_EQ(s.substr(0, 5), "iter\t");
}

}  // namespace
}  // namespace streetgs
