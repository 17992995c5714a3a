// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>

#include "streetgs/error.hpp"
#include "streetgs/scene_io.hpp"
#include "streetgs/trainer.hpp"

namespace streetgs {

/// Everything a training run reads from its config file: optimizer settings,
/// scene construction, split override and guidance provider selection.
struct RunConfig {
    TrainConfig train;
    SceneOptions scene;
    std::optional<SplitScheme> split_scheme;  ///< unset keeps the dataset's split.txt
    double drop_rate = 0.5;
    std::uint64_t split_seed = 0;
    std::string provider = "identity";  ///< identity | toy | oracle | remote:HOST:PORT
    std::filesystem::path oracle_checkpoint;
    std::chrono::milliseconds provider_timeout{30000};
    std::uint64_t log_every = 100;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_value(std::string_view key, std::string_view v) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size())
        throw ConfigError("bad value '" + std::string(v) + "' for " + std::string(key));
    return out;
}

template <>
inline bool parse_value<bool>(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("bad boolean '" + std::string(v) + "' for " + std::string(key));
}

using Setter = std::function<void(RunConfig&, std::string_view key, std::string_view value)>;

template <typename T, typename Ref>
Setter field(Ref ref) {
    return [ref](RunConfig& c, std::string_view k, std::string_view v) { ref(c) = parse_value<T>(k, v); };
}

#define STREETGS_FIELD(key, type, expr) \
    {key, field<type>([](RunConfig& c) -> type& { return expr; })}

inline const std::map<std::string, Setter, std::less<>>& setters() {
    static const std::map<std::string, Setter, std::less<>> table{
        STREETGS_FIELD("total_iters", std::uint64_t, c.train.total_iters),
        STREETGS_FIELD("warmup_iters", std::uint64_t, c.train.warmup_iters),
        STREETGS_FIELD("pseudo_cadence", int, c.train.pseudo_cadence),
        STREETGS_FIELD("pseudo_count", int, c.train.pseudo_count),
        STREETGS_FIELD("lr_start", double, c.train.lr_start),
        STREETGS_FIELD("lr_end", double, c.train.lr_end),
        STREETGS_FIELD("lr_scales", double, c.train.rates.log_scales),
        STREETGS_FIELD("lr_rotations", double, c.train.rates.rotations),
        STREETGS_FIELD("lr_opacities", double, c.train.rates.opacities),
        STREETGS_FIELD("lr_sh_dc", double, c.train.rates.sh_dc),
        STREETGS_FIELD("lr_sh_rest", double, c.train.rates.sh_rest),
        STREETGS_FIELD("lambda_ssim", double, c.train.weights.lambda_ssim),
        STREETGS_FIELD("lambda_depth", double, c.train.weights.lambda_depth),
        STREETGS_FIELD("lambda_pseudo", double, c.train.weights.lambda_pseudo),
        STREETGS_FIELD("lambda_p_lpips", double, c.train.weights.lambda_p_lpips),
        STREETGS_FIELD("lambda_p_depth", double, c.train.weights.lambda_p_depth),
        STREETGS_FIELD("s_min", double, c.train.schedule.s_min),
        STREETGS_FIELD("s_max_start", double, c.train.schedule.s_max_start),
        STREETGS_FIELD("s_max_end", double, c.train.schedule.s_max_end),
        STREETGS_FIELD("t_max", int, c.train.schedule.t_max),
        STREETGS_FIELD("t_min", int, c.train.schedule.t_min),
        STREETGS_FIELD("noise_sigma", double, c.train.noise.sigma_at_t_max),
        STREETGS_FIELD("seed", std::uint64_t, c.train.seed),
        STREETGS_FIELD("densify", bool, c.train.densify),
        STREETGS_FIELD("densify_from", std::uint64_t, c.train.densify_from),
        STREETGS_FIELD("densify_until", std::uint64_t, c.train.densify_until),
        STREETGS_FIELD("densify_interval", std::uint64_t, c.train.densify_interval),
        STREETGS_FIELD("opacity_reset_interval", std::uint64_t, c.train.opacity_reset_interval),
        STREETGS_FIELD("sh_degree_interval", std::uint64_t, c.train.sh_degree_interval),
        STREETGS_FIELD("grad_threshold", double, c.train.thresholds.grad_threshold),
        STREETGS_FIELD("min_opacity", double, c.train.thresholds.min_opacity),
        STREETGS_FIELD("percent_dense", double, c.train.thresholds.percent_dense),
        STREETGS_FIELD("scene_extent", double, c.train.thresholds.scene_extent),
        STREETGS_FIELD("deterministic", bool, c.train.deterministic),
        STREETGS_FIELD("workers", int, c.train.workers),
        STREETGS_FIELD("eval_every", std::uint64_t, c.train.eval_every),
        STREETGS_FIELD("checkpoint_every", std::uint64_t, c.train.checkpoint_every),
        STREETGS_FIELD("voxel_size", double, c.scene.voxel_size),
        STREETGS_FIELD("top_mask_rows", int, c.scene.top_mask_rows),
        STREETGS_FIELD("drop_rate", double, c.drop_rate),
        STREETGS_FIELD("split_seed", std::uint64_t, c.split_seed),
        STREETGS_FIELD("log_every", std::uint64_t, c.log_every),
        {"delta_max_deg",
         [](RunConfig& c, std::string_view k, std::string_view v) {
             c.train.pseudo.delta_max = parse_value<double>(k, v) * std::numbers::pi / 180.0;
         }},
        {"split_scheme",
         [](RunConfig& c, std::string_view, std::string_view v) { c.split_scheme = parse_split_scheme(std::string(v)); }},
        {"provider", [](RunConfig& c, std::string_view, std::string_view v) { c.provider = std::string(v); }},
        {"oracle_checkpoint",
         [](RunConfig& c, std::string_view, std::string_view v) { c.oracle_checkpoint = std::string(v); }},
        {"checkpoint_dir",
         [](RunConfig& c, std::string_view, std::string_view v) { c.train.checkpoint_dir = std::string(v); }},
        {"provider_timeout_ms",
         [](RunConfig& c, std::string_view k, std::string_view v) {
             c.provider_timeout = std::chrono::milliseconds(parse_value<std::int64_t>(k, v));
         }},
    };
    return table;
}

#undef STREETGS_FIELD

}  // namespace detail

inline void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
    const auto& table = detail::setters();
    const auto it = table.find(detail::trim(key));
    if (it == table.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
    it->second(cfg, it->first, detail::trim(value));
}

/// Applies a "key=value" assignment.
inline void apply_assignment(RunConfig& cfg, std::string_view line) {
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(line) + "'");
    apply_setting(cfg, line.substr(0, eq), line.substr(eq + 1));
}

/// One key=value per line; blank lines and lines starting with '#' are ignored.
inline void apply_config(RunConfig& cfg, std::istream& in) {
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        const auto t = detail::trim(line);
        if (t.empty() || t.front() == '#') continue;
        try {
            apply_assignment(cfg, t);
        } catch (const ConfigError& e) {
            std::string_view what = e.what();
            what.remove_prefix(std::min(what.size(), std::string_view("ConfigError: ").size()));
            throw ConfigError("line " + std::to_string(n) + ": " + std::string(what));
        }
    }
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile(path.string());
    RunConfig cfg;
    apply_config(cfg, in);
    return cfg;
}

}  // namespace streetgs
