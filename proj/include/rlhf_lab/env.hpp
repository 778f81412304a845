#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rlhf_lab/errors.hpp"
#include "rlhf_lab/rng.hpp"

namespace rlhf_lab {

using PromptIndex = std::size_t;
using ResponseIndex = std::size_t;

// sigma(z) with the branch arranged so that sigma(z) + sigma(-z) == 1.0
// bitwise: the >= 0 branch lands in [0.5, 1], and 1 - x is exact there
// (Sterbenz), so the two calls of an antisymmetric pair sum to exactly 1.
inline double stable_sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    return 1.0 - 1.0 / (1.0 + std::exp(z));
}

// -log(sigma(z)), stable for large |z|.
inline double log_sigmoid_neg(double z) {
    if (z >= 0.0) {
        return std::log1p(std::exp(-z));
    }
    return -z + std::log1p(std::exp(z));
}

struct RecordMeta {
    int iteration = 0;
    std::string source;
};

struct PreferenceRecord {
    PromptIndex prompt = 0;
    ResponseIndex chosen = 0;
    ResponseIndex rejected = 0;
    std::optional<RecordMeta> meta;
};

struct PreferenceLabel {
    int y = 0;  // 1: first response preferred, 0: second
};

enum class RewardGenKind { constant, gaussian, linear };

struct RewardGenSpec {
    RewardGenKind kind = RewardGenKind::gaussian;
    double value = 0.0;       // constant
    double mean = 0.0;        // gaussian
    double stddev = 1.0;      // gaussian
    int dim = 0;              // linear: feature dimension d
    double norm_bound = 1.0;  // linear: bound B on the generating weight norm
};

struct LengthGenSpec {
    int min_len = 100;
    int max_len = 900;
};

enum class PromptDistKind { uniform, random };

struct EnvSpec {
    int n_prompts = 1;
    int n_responses = 2;  // per prompt
    RewardGenSpec reward;
    LengthGenSpec length;
    PromptDistKind prompt_dist = PromptDistKind::uniform;
};

// Finite synthetic alignment environment: prompts with a sampling
// distribution d0, per-prompt response sets, a ground-truth reward table,
// integer response lengths, and (in linear mode) a feature map with the
// generating weight vector. Immutable after construction.
struct Environment {
    std::vector<std::string> prompt_ids;
    std::vector<double> prompt_dist;
    std::vector<std::vector<std::string>> response_ids;
    std::vector<std::vector<double>> true_reward;
    std::vector<std::vector<int>> lengths;
    // Linear mode only; empty otherwise.
    std::vector<std::vector<std::vector<double>>> features;
    std::vector<double> theta_star;

    std::size_t n_prompts() const { return prompt_ids.size(); }
    std::size_t n_responses(PromptIndex x) const { return response_ids[x].size(); }
    bool linear_mode() const { return !theta_star.empty(); }
    std::size_t feature_dim() const { return theta_star.size(); }

    double reward(PromptIndex x, ResponseIndex a) const { return true_reward[x][a]; }
    int length(PromptIndex x, ResponseIndex a) const { return lengths[x][a]; }
    const std::vector<double>& feature(PromptIndex x, ResponseIndex a) const {
        return features[x][a];
    }

    std::optional<PromptIndex> find_prompt(std::string_view id) const;
    std::optional<ResponseIndex> find_response(PromptIndex x, std::string_view id) const;

    void check_prompt(PromptIndex x) const;
    void check_pair(PromptIndex x, ResponseIndex a1, ResponseIndex a2) const;

    // Enforces the structural invariants; throws ConfigError on violation.
    void validate() const;
};

Environment make_synthetic_env(const EnvSpec& spec, std::uint64_t seed);

// P(a1 > a2 | x) under the Bradley-Terry oracle. Antisymmetric exactly:
// preference_probability(x,a1,a2) + preference_probability(x,a2,a1) == 1.
double preference_probability(const Environment& env, PromptIndex x, ResponseIndex a1,
                              ResponseIndex a2);

// One Bernoulli draw from the oracle; y=1 means a1 preferred.
PreferenceLabel sample_preference(const Environment& env, PromptIndex x, ResponseIndex a1,
                                  ResponseIndex a2, Rng& rng);

struct Policy;  // policy.hpp

struct OfflineDataset {
    std::vector<PreferenceRecord> records;
    int skipped = 0;  // prompts where distinct-response retries ran out
};

// Offline data collection: x ~ d0, a1 ~ behavior1, a2 ~ behavior2, label by
// the oracle, winner stored as chosen. Identical pairs are retried up to
// `max_retries` times, then skipped and counted.
OfflineDataset sample_offline_dataset(const Environment& env, const Policy& behavior1,
                                      const Policy& behavior2, std::size_t m, Rng& rng,
                                      int max_retries = 16);

}  // namespace rlhf_lab
