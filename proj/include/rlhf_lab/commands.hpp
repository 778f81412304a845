#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "rlhf_lab/config.hpp"
#include "rlhf_lab/loop.hpp"
#include "rlhf_lab/serialize.hpp"

namespace rlhf_lab::commands {

// Each subcommand is a pure function of (config, output directory): it
// writes its artifacts under `out` and returns a one-line summary for the
// CLI to print. The CLI adds only argv parsing on top.

std::string gen_env(const ExperimentConfig& cfg, const std::filesystem::path& out);
std::string fit_reward(const ExperimentConfig& cfg, const std::filesystem::path& out);
std::string fit_pref_model(const ExperimentConfig& cfg, const std::filesystem::path& out);
std::string run_offline_dpo(const ExperimentConfig& cfg, const std::filesystem::path& out);
std::string run_iterative(const ExperimentConfig& cfg, const std::filesystem::path& out);
std::string run_theoretical(const ExperimentConfig& cfg, const std::filesystem::path& out);
std::string analyze_length_bias(const ExperimentConfig& cfg, const std::filesystem::path& out);
std::string compare(const std::vector<std::filesystem::path>& run_dirs);

// Shared assembly used by the run commands and by tests.
Environment build_env(const ExperimentConfig& cfg);
std::vector<PreferenceRecord> build_offline_dataset(const ExperimentConfig& cfg,
                                                    const Environment& env);
std::unique_ptr<ResponseRanker> build_ranker(const ExperimentConfig& cfg, const Environment& env,
                                             std::vector<PreferenceRecord> offline_records);

// Full argv handling: subcommand routing, --output/--seed overrides, error
// reporting. Returns the process exit status (0 ok, 1 runtime failure,
// 2 usage).
int cli_dispatch(const std::vector<std::string>& args);

}  // namespace rlhf_lab::commands
