#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "rlhf_lab/env.hpp"
#include "rlhf_lab/explore.hpp"
#include "rlhf_lab/loop.hpp"
#include "rlhf_lab/optim.hpp"

namespace rlhf_lab {

enum class ScorerMode { oracle, fitted_bt, fitted_pairwise };

struct ScorerConfig {
    ScorerMode mode = ScorerMode::oracle;
    // Additive length-proportional term injected into the scorer; models a
    // length-biased reward without touching the oracle.
    double length_bias = 0.0;
};

struct OfflineConfig {
    int size = 0;  // records generated via the offline collection process
    std::optional<double> margin_threshold;
    std::string file;  // optional external JSONL dataset; overrides `size`
};

struct CorrelationConfig {
    int prompts = 500;
    int responses = 8;
};

// One config file per run; `--output` and `--seed` are the only CLI
// overrides. All randomness derives from `seed` via named sub-streams
// (see rng.hpp): "env", "offline", "format", "loop-sampling"/"loop-eval"
// and "explore-sampling" (keyed by iteration), "correlation", "compare".
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string output;
    EnvSpec env;
    ScorerConfig scorer;
    OfflineConfig offline;
    LoopConfig loop;
    LinearExploreConfig explore;
    OptimOpts dpo_optim;
    OptimOpts reward_optim;
    OptimOpts pref_optim;
    CorrelationConfig correlation;
};

// Strict parse: unknown keys anywhere are configuration errors naming the
// offending key; defaults are resolved for everything omitted.
ExperimentConfig parse_config_json(const nlohmann::json& j);
ExperimentConfig parse_config(const std::filesystem::path& path);

// Fully-resolved round-trippable form: parse_config_json(resolved_json(c))
// reproduces c, and resolved_json is a fixed point.
nlohmann::json resolved_json(const ExperimentConfig& cfg);

// FNV-1a over the resolved dump; recorded in checkpoints and reports.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace rlhf_lab
