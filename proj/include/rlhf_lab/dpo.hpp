#pragma once

#include <span>
#include <utility>
#include <vector>

#include "rlhf_lab/env.hpp"
#include "rlhf_lab/optim.hpp"
#include "rlhf_lab/policy.hpp"
#include "rlhf_lab/reward_model.hpp"

namespace rlhf_lab {

// Logits packing, prompt-major; mirrors flatten(RewardModel) for tabular.
std::vector<double> flatten_logits(const Policy& policy);
Policy with_logits(const Policy& like, std::span<const double> params);
void assign_logits(Policy& policy, std::span<const double> params);

// Direct preference optimization loss: weighted mean over records of
// -log sigma(eta * [log pi/ref at chosen - log pi/ref at rejected]).
// `weights` may be empty (all ones).
double dpo_loss(const Policy& policy, const Policy& ref, std::span<const PreferenceRecord> data,
                double eta, std::span<const double> weights = {});

// Gradient with respect to flatten_logits(policy). The per-prompt softmax
// normalizer cancels between chosen and rejected, so each record touches
// exactly two coordinates.
std::vector<double> dpo_grad(const Policy& policy, const Policy& ref,
                             std::span<const PreferenceRecord> data, double eta,
                             std::span<const double> weights = {});

// Descends dpo_loss from `init` with `ref` fixed.
FitResult<Policy> fit_dpo(std::span<const PreferenceRecord> data, const Policy& ref,
                          const Policy& init, double eta, const OptimOpts& opts,
                          std::span<const double> weights = {});

// Expands a temperature list into n per-sample slots, splitting n as evenly
// as possible (remainder to the earlier temperatures). The default
// {1.0, 0.7} with n=8 gives four samples at each temperature.
std::vector<double> expand_slot_temps(int n, std::span<const double> temps);

// Draws n responses for prompt x, slot i at temperature slots[i].
std::vector<ResponseIndex> sample_candidates(const Policy& policy, PromptIndex x,
                                             std::span<const double> slot_temps, Rng& rng);

struct BestWorst {
    ResponseIndex best = 0;
    ResponseIndex worst = 0;
};

// Rejection-sampling pair construction: sample n responses with the given
// temperature split, score them, and return the top and bottom scorer.
// Ties break toward the earlier sample.
BestWorst best_worst_of_n(const Policy& policy, const ScoreFn& score, PromptIndex x, int n,
                          std::span<const double> temps, Rng& rng);

// Exact distribution of the best_worst_of_n "best" output as a policy:
// P(best = a) enumerated over slot order statistics, including tie groups
// (first-occurrence winner rule, matching the sampler).
Policy best_of_n_policy(const Environment& env, const Policy& base, const ScoreFn& score, int n,
                        std::span<const double> temps);

// Mirror image for the lowest-scoring response.
Policy worst_of_n_policy(const Environment& env, const Policy& base, const ScoreFn& score, int n,
                         std::span<const double> temps);

}  // namespace rlhf_lab
