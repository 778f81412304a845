#pragma once

#include <memory>
#include <span>
#include <vector>

#include "rlhf_lab/dpo.hpp"
#include "rlhf_lab/env.hpp"
#include "rlhf_lab/policy.hpp"
#include "rlhf_lab/reward_model.hpp"

namespace rlhf_lab {

// score - lambda * length; the data-filtering penalty.
inline double apply_length_penalty(double score, int length, double lambda) {
    if (lambda < 0.0) throw ArgumentError("length penalty must be >= 0");
    return score - lambda * static_cast<double>(length);
}

// Ranks a set of sampled responses for one prompt. Pointwise scorers cover
// the reward-model path; the tournament ranker covers the pairwise model.
class ResponseRanker {
public:
    virtual ~ResponseRanker() = default;
    virtual std::vector<double> scores(PromptIndex x,
                                       std::span<const ResponseIndex> candidates) const = 0;
};

class PointwiseRanker final : public ResponseRanker {
public:
    explicit PointwiseRanker(ScoreFn fn) : fn_(std::move(fn)) {}
    std::vector<double> scores(PromptIndex x,
                               std::span<const ResponseIndex> candidates) const override;

private:
    ScoreFn fn_;
};

// Round-robin: score(i) = sum_j P(candidate_i > candidate_j). Quadratic in
// n, which is why the pointwise reward path is the default.
class TournamentRanker final : public ResponseRanker {
public:
    TournamentRanker(const Environment& env, const PairwisePrefModel& model)
        : env_(env), model_(model) {}
    std::vector<double> scores(PromptIndex x,
                               std::span<const ResponseIndex> candidates) const override;

private:
    const Environment& env_;
    const PairwisePrefModel& model_;
};

enum class InitMode { restart_from_ref, continue_from_last };

struct LoopConfig {
    int iterations = 3;          // T
    int batch_size = 64;         // m, prompts per iteration
    int rejection_n = 8;         // n
    double eta = 0.1;
    double length_penalty = 0.0;  // lambda
    std::vector<double> temps = {1.0, 0.7};
    InitMode init_mode = InitMode::continue_from_last;
    int validation_evals = 400;  // oracle-judged win-rate draws per checkpoint

    void validate() const {
        if (iterations < 1) throw ArgumentError("loop: iterations must be >= 1");
        if (batch_size < 0) throw ArgumentError("loop: batch_size must be >= 0");
        if (rejection_n < 2) throw ArgumentError("loop: rejection_n must be >= 2");
        if (!(eta > 0.0)) throw ArgumentError("loop: eta must be > 0");
        if (length_penalty < 0.0) throw ArgumentError("loop: length_penalty must be >= 0");
        if (validation_evals < 1) throw ArgumentError("loop: validation_evals must be >= 1");
    }
};

struct MetricRow {
    int iteration = 0;
    double j_true = 0.0;
    double kl_to_ref = 0.0;
    double mean_response_length = 0.0;
    std::size_t dataset_size = 0;
    double win_rate_vs_ref = 0.0;
    double suboptimality_gap = 0.0;
};

struct IterationState {
    int iteration = 0;
    std::vector<PreferenceRecord> dataset;  // D_off plus D_1..t, append-only
    Policy policy;
    std::vector<MetricRow> metrics;
    int dropped_total = 0;
};

struct BatchResult {
    std::vector<PreferenceRecord> records;
    int dropped = 0;  // best == worst pairs
};

// Algorithm-2 data collection: m prompts from d0; per prompt, n responses
// with the temperature split, ranked under the length-penalized scores;
// best/worst become (chosen, rejected). Pairs where best == worst are
// dropped and counted.
BatchResult collect_preference_batch(const Environment& env, const Policy& policy,
                                     const ResponseRanker& ranker, int m, int n,
                                     std::span<const double> temps, double lambda, Rng& rng);

// One fit-then-collect cycle. The DPO reference is always `ref`; the
// initial checkpoint follows cfg.init_mode. With an empty accumulated
// dataset the fit is skipped and the policy equals `ref` exactly.
IterationState run_iteration(IterationState state, const LoopConfig& cfg, const Environment& env,
                             const ResponseRanker& ranker, const Policy& ref,
                             const OptimOpts& dpo_opts, Rng& sample_rng, Rng& eval_rng);

// Oracle-judged head-to-head: one response from each policy per drawn
// prompt; identical draws score 0.5.
double win_rate(const Environment& env, const Policy& policy, const Policy& baseline,
                std::size_t n_eval, Rng& rng);

struct PipelineReport {
    std::vector<MetricRow> metrics;
    std::vector<Policy> checkpoints;  // checkpoint t at index t-1
    std::vector<int> dropped_per_iteration;
    std::vector<PreferenceRecord> dataset;
    std::size_t offline_size = 0;
    int best_iteration = 1;  // selected by validation win-rate, ties -> earlier
    double best_win_rate = 0.0;

    const Policy& best_policy() const {
        return checkpoints[static_cast<std::size_t>(best_iteration - 1)];
    }
    const Policy& final_policy() const { return checkpoints.back(); }
};

// Runs T iterations seeded with the offline records, then selects the best
// checkpoint by validation win-rate against `ref`. All randomness derives
// from `master_seed` via named streams ("loop-sampling"/"loop-eval", keyed
// by iteration), so reports are reproducible byte-for-byte.
PipelineReport run_pipeline(const Environment& env, const LoopConfig& cfg,
                            const ResponseRanker& ranker, const Policy& ref,
                            std::vector<PreferenceRecord> offline_records,
                            const OptimOpts& dpo_opts, std::uint64_t master_seed);

}  // namespace rlhf_lab
