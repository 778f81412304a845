#include "rlhf_lab/config.hpp"

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <string_view>

namespace rlhf_lab {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& context,
                std::initializer_list<std::string_view> allowed) {
    if (!j.is_object()) throw ConfigError(context + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const auto& k : allowed) {
            if (key == k) {
                known = true;
                break;
            }
        }
        if (!known) throw ConfigError(context + ": unknown key \"" + key + "\"");
    }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("invalid value for key \"") + key + "\"");
    }
}

EnvSpec parse_env(const json& j) {
    check_keys(j, "env", {"prompts", "responses", "reward", "length", "prompt_dist"});
    EnvSpec spec;
    spec.n_prompts = get_or(j, "prompts", 4);
    spec.n_responses = get_or(j, "responses", 4);

    if (j.contains("reward")) {
        const json& r = j["reward"];
        check_keys(r, "env.reward", {"kind", "value", "mean", "stddev", "dim", "norm_bound"});
        const std::string kind = get_or<std::string>(r, "kind", "gaussian");
        if (kind == "constant") {
            spec.reward.kind = RewardGenKind::constant;
        } else if (kind == "gaussian") {
            spec.reward.kind = RewardGenKind::gaussian;
        } else if (kind == "linear") {
            spec.reward.kind = RewardGenKind::linear;
        } else {
            throw ConfigError("env.reward.kind: unknown kind \"" + kind + "\"");
        }
        spec.reward.value = get_or(r, "value", 0.0);
        spec.reward.mean = get_or(r, "mean", 0.0);
        spec.reward.stddev = get_or(r, "stddev", 1.0);
        spec.reward.dim = get_or(r, "dim", 3);
        spec.reward.norm_bound = get_or(r, "norm_bound", 1.0);
    }
    if (j.contains("length")) {
        const json& l = j["length"];
        check_keys(l, "env.length", {"min", "max"});
        spec.length.min_len = get_or(l, "min", 100);
        spec.length.max_len = get_or(l, "max", 900);
    }
    const std::string dist = get_or<std::string>(j, "prompt_dist", "uniform");
    if (dist == "uniform") {
        spec.prompt_dist = PromptDistKind::uniform;
    } else if (dist == "random") {
        spec.prompt_dist = PromptDistKind::random;
    } else {
        throw ConfigError("env.prompt_dist: unknown kind \"" + dist + "\"");
    }
    return spec;
}

// Structural validation failures surface as configuration errors here,
// whatever the underlying validate() throws.
template <typename Validatable>
void validate_block(const Validatable& v) {
    try {
        v.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
}

OptimOpts parse_optim(const json& j, const std::string& context, const OptimOpts& defaults) {
    check_keys(j, context, {"step_size", "max_iters", "tolerance", "l2_reg", "seed"});
    OptimOpts opts = defaults;
    opts.step_size = get_or(j, "step_size", defaults.step_size);
    opts.max_iters = get_or(j, "max_iters", defaults.max_iters);
    opts.tolerance = get_or(j, "tolerance", defaults.tolerance);
    opts.l2_reg = get_or(j, "l2_reg", defaults.l2_reg);
    opts.seed = get_or(j, "seed", defaults.seed);
    validate_block(opts);
    return opts;
}

json optim_json(const OptimOpts& o) {
    return {{"step_size", o.step_size},
            {"max_iters", o.max_iters},
            {"tolerance", o.tolerance},
            {"l2_reg", o.l2_reg},
            {"seed", o.seed}};
}

}  // namespace

ExperimentConfig parse_config_json(const json& j) {
    check_keys(j, "config",
               {"seed", "output", "env", "scorer", "offline", "loop", "explore", "dpo_optim",
                "reward_optim", "pref_optim", "correlation"});

    ExperimentConfig cfg;
    cfg.dpo_optim.tolerance = 1e-6;
    cfg.reward_optim.tolerance = 1e-7;
    cfg.pref_optim.tolerance = 1e-7;

    cfg.seed = get_or<std::uint64_t>(j, "seed", 0);
    cfg.output = get_or<std::string>(j, "output", "");
    if (j.contains("env")) cfg.env = parse_env(j["env"]);

    if (j.contains("scorer")) {
        const json& s = j["scorer"];
        check_keys(s, "scorer", {"mode", "length_bias"});
        const std::string mode = get_or<std::string>(s, "mode", "oracle");
        if (mode == "oracle") {
            cfg.scorer.mode = ScorerMode::oracle;
        } else if (mode == "fitted_bt") {
            cfg.scorer.mode = ScorerMode::fitted_bt;
        } else if (mode == "fitted_pairwise") {
            cfg.scorer.mode = ScorerMode::fitted_pairwise;
        } else {
            throw ConfigError("scorer.mode: unknown mode \"" + mode + "\"");
        }
        cfg.scorer.length_bias = get_or(s, "length_bias", 0.0);
    }

    if (j.contains("offline")) {
        const json& o = j["offline"];
        check_keys(o, "offline", {"size", "margin_threshold", "file"});
        cfg.offline.size = get_or(o, "size", 0);
        if (cfg.offline.size < 0) throw ConfigError("offline.size must be >= 0");
        if (o.contains("margin_threshold") && !o["margin_threshold"].is_null()) {
            cfg.offline.margin_threshold = o["margin_threshold"].get<double>();
        }
        cfg.offline.file = get_or<std::string>(o, "file", "");
    }

    if (j.contains("loop")) {
        const json& l = j["loop"];
        check_keys(l, "loop",
                   {"iterations", "batch_size", "rejection_n", "eta", "length_penalty", "temps",
                    "init_mode", "validation_evals"});
        cfg.loop.iterations = get_or(l, "iterations", cfg.loop.iterations);
        cfg.loop.batch_size = get_or(l, "batch_size", cfg.loop.batch_size);
        cfg.loop.rejection_n = get_or(l, "rejection_n", cfg.loop.rejection_n);
        cfg.loop.eta = get_or(l, "eta", cfg.loop.eta);
        cfg.loop.length_penalty = get_or(l, "length_penalty", cfg.loop.length_penalty);
        cfg.loop.temps = get_or(l, "temps", cfg.loop.temps);
        const std::string mode = get_or<std::string>(l, "init_mode", "continue_from_last");
        if (mode == "continue_from_last") {
            cfg.loop.init_mode = InitMode::continue_from_last;
        } else if (mode == "restart_from_ref") {
            cfg.loop.init_mode = InitMode::restart_from_ref;
        } else {
            throw ConfigError("loop.init_mode: unknown mode \"" + mode + "\"");
        }
        cfg.loop.validation_evals = get_or(l, "validation_evals", cfg.loop.validation_evals);
        validate_block(cfg.loop);
    }

    if (j.contains("explore")) {
        const json& e = j["explore"];
        check_keys(e, "explore",
                   {"beta", "ridge_lambda", "eta", "iterations", "batch_size", "candidate_temps",
                    "candidate_n", "tilt_scales"});
        cfg.explore.beta = get_or(e, "beta", cfg.explore.beta);
        cfg.explore.ridge_lambda = get_or(e, "ridge_lambda", cfg.explore.ridge_lambda);
        cfg.explore.eta = get_or(e, "eta", cfg.explore.eta);
        cfg.explore.iterations = get_or(e, "iterations", cfg.explore.iterations);
        cfg.explore.batch_size = get_or(e, "batch_size", cfg.explore.batch_size);
        cfg.explore.candidate_temps = get_or(e, "candidate_temps", cfg.explore.candidate_temps);
        cfg.explore.candidate_n = get_or(e, "candidate_n", cfg.explore.candidate_n);
        cfg.explore.tilt_scales = get_or(e, "tilt_scales", cfg.explore.tilt_scales);
        validate_block(cfg.explore);
    }

    if (j.contains("dpo_optim")) cfg.dpo_optim = parse_optim(j["dpo_optim"], "dpo_optim", cfg.dpo_optim);
    if (j.contains("reward_optim")) {
        cfg.reward_optim = parse_optim(j["reward_optim"], "reward_optim", cfg.reward_optim);
    }
    if (j.contains("pref_optim")) cfg.pref_optim = parse_optim(j["pref_optim"], "pref_optim", cfg.pref_optim);

    if (j.contains("correlation")) {
        const json& c = j["correlation"];
        check_keys(c, "correlation", {"prompts", "responses"});
        cfg.correlation.prompts = get_or(c, "prompts", cfg.correlation.prompts);
        cfg.correlation.responses = get_or(c, "responses", cfg.correlation.responses);
        if (cfg.correlation.prompts < 1) throw ConfigError("correlation.prompts must be >= 1");
        if (cfg.correlation.responses < 2) throw ConfigError("correlation.responses must be >= 2");
    }

    return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("cannot parse config file " + path.string() + ": " + e.what());
    }
    return parse_config_json(j);
}

json resolved_json(const ExperimentConfig& cfg) {
    const char* reward_kind = cfg.env.reward.kind == RewardGenKind::constant  ? "constant"
                              : cfg.env.reward.kind == RewardGenKind::gaussian ? "gaussian"
                                                                               : "linear";
    const char* scorer_mode = cfg.scorer.mode == ScorerMode::oracle      ? "oracle"
                              : cfg.scorer.mode == ScorerMode::fitted_bt ? "fitted_bt"
                                                                         : "fitted_pairwise";
    json j = {
        {"seed", cfg.seed},
        {"output", cfg.output},
        {"env",
         {{"prompts", cfg.env.n_prompts},
          {"responses", cfg.env.n_responses},
          {"reward",
           {{"kind", reward_kind},
            {"value", cfg.env.reward.value},
            {"mean", cfg.env.reward.mean},
            {"stddev", cfg.env.reward.stddev},
            {"dim", cfg.env.reward.dim},
            {"norm_bound", cfg.env.reward.norm_bound}}},
          {"length", {{"min", cfg.env.length.min_len}, {"max", cfg.env.length.max_len}}},
          {"prompt_dist",
           cfg.env.prompt_dist == PromptDistKind::uniform ? "uniform" : "random"}}},
        {"scorer", {{"mode", scorer_mode}, {"length_bias", cfg.scorer.length_bias}}},
        {"offline",
         {{"size", cfg.offline.size},
          {"margin_threshold", cfg.offline.margin_threshold
                                   ? json(*cfg.offline.margin_threshold)
                                   : json(nullptr)},
          {"file", cfg.offline.file}}},
        {"loop",
         {{"iterations", cfg.loop.iterations},
          {"batch_size", cfg.loop.batch_size},
          {"rejection_n", cfg.loop.rejection_n},
          {"eta", cfg.loop.eta},
          {"length_penalty", cfg.loop.length_penalty},
          {"temps", cfg.loop.temps},
          {"init_mode", cfg.loop.init_mode == InitMode::continue_from_last ? "continue_from_last"
                                                                           : "restart_from_ref"},
          {"validation_evals", cfg.loop.validation_evals}}},
        {"explore",
         {{"beta", cfg.explore.beta},
          {"ridge_lambda", cfg.explore.ridge_lambda},
          {"eta", cfg.explore.eta},
          {"iterations", cfg.explore.iterations},
          {"batch_size", cfg.explore.batch_size},
          {"candidate_temps", cfg.explore.candidate_temps},
          {"candidate_n", cfg.explore.candidate_n},
          {"tilt_scales", cfg.explore.tilt_scales}}},
        {"dpo_optim", optim_json(cfg.dpo_optim)},
        {"reward_optim", optim_json(cfg.reward_optim)},
        {"pref_optim", optim_json(cfg.pref_optim)},
        {"correlation",
         {{"prompts", cfg.correlation.prompts}, {"responses", cfg.correlation.responses}}},
    };
    return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string dump = resolved_json(cfg).dump();
    const std::uint64_t h = detail::fnv1a64(dump);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace rlhf_lab
