#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rlhf_lab/env.hpp"
#include "rlhf_lab/loop.hpp"
#include "rlhf_lab/policy.hpp"
#include "rlhf_lab/reward_model.hpp"

namespace rlhf_lab {

inline constexpr int kSchemaVersion = 1;

// ---- environment -----------------------------------------------------------

nlohmann::json env_to_json(const Environment& env);
Environment env_from_json(const nlohmann::json& j);

// ---- policy checkpoints -----------------------------------------------------

struct Checkpoint {
    int version = kSchemaVersion;
    int iteration = 0;
    std::string config_hash;
    double temperature = 1.0;
    // Prompt id -> logits row, in environment order.
    std::vector<std::pair<std::string, std::vector<double>>> logits;
};

Checkpoint make_checkpoint(const Environment& env, const Policy& policy, int iteration,
                           std::string config_hash);

// Resolves prompt ids against the environment; unknown or missing prompts
// are lookup errors.
Policy checkpoint_policy(const Checkpoint& ckpt, const Environment& env);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- reward / preference models ---------------------------------------------

nlohmann::json reward_model_to_json(const Environment& env, const RewardModel& model);
RewardModel reward_model_from_json(const nlohmann::json& j, const Environment& env);

nlohmann::json pairwise_model_to_json(const Environment& env, const PairwisePrefModel& model);
PairwisePrefModel pairwise_model_from_json(const nlohmann::json& j, const Environment& env);

// ---- preference datasets (line-delimited JSON) -------------------------------

struct RawPreferenceRecord {
    std::string prompt_id;
    std::string chosen_id;
    std::string rejected_id;
    std::optional<double> margin;
};

struct IngestReport {
    std::vector<RawPreferenceRecord> records;
    int dropped_margin = 0;              // below the configured threshold
    int rejected_lines = 0;              // violate record invariants
    std::vector<int> malformed_lines;    // 1-based line numbers
};

// Reads one JSON object per line: prompt_id, chosen_id, rejected_id,
// optional margin. Exclusions are counted, never silent; a nonempty file
// whose every line is malformed is an ingestion error.
IngestReport ingest_preference_file(const std::filesystem::path& path,
                                    std::optional<double> margin_threshold = std::nullopt);

std::vector<PreferenceRecord> resolve_records(const Environment& env,
                                              std::span<const RawPreferenceRecord> raw);

void write_dataset_jsonl(const Environment& env, std::span<const PreferenceRecord> records,
                         std::ostream& os);

// ---- metrics ----------------------------------------------------------------

// Columns: iteration, j_true, kl_to_ref, mean_response_length,
// dataset_size, win_rate_vs_ref, suboptimality_gap.
void write_metrics_csv(std::span<const MetricRow> rows, std::ostream& os);

}  // namespace rlhf_lab
