#pragma once

#include <functional>
#include <vector>

#include "rlhf_lab/env.hpp"

namespace rlhf_lab {

// Per-prompt softmax distribution over responses, parameterized by a logits
// table. Softmax keeps every response at strictly positive probability, so
// any policy is a valid DPO reference. Policies are immutable values.
struct Policy {
    std::vector<std::vector<double>> logits;  // [prompt][response]
    double temperature = 1.0;

    std::size_t n_prompts() const { return logits.size(); }
    std::size_t n_responses(PromptIndex x) const { return logits[x].size(); }

    std::vector<double> probs(PromptIndex x) const;
    std::vector<double> log_probs(PromptIndex x) const;
};

// Zero logits: uniform over each prompt's responses.
Policy uniform_policy(const Environment& env);

// Same logits, new sampling temperature. T=1 is the identity; T -> 0
// concentrates on the argmax logit.
Policy temperature_variant(const Policy& policy, double temp);

// Scalar score over (prompt, response); the common currency for true
// rewards, fitted models, and penalized variants.
using ScoreFn = std::function<double(PromptIndex, ResponseIndex)>;

ScoreFn true_reward_fn(const Environment& env);

// Closed-form maximizer of the KL-regularized objective:
// pi(a|x) proportional to ref(a|x) * exp(score(x,a)/eta).
Policy gibbs_policy(const Environment& env, const ScoreFn& score, const Policy& ref, double eta);

// KL(p(.|x) || q(.|x)). Zero iff the distributions coincide on x.
double kl_divergence(const Policy& p, const Policy& q, PromptIndex x);

// E_{x~d0} KL(p(.|x) || q(.|x)).
double mean_kl(const Policy& p, const Policy& q, const Environment& env);

// Exact KL-regularized value:
// J(pi) = sum_x d0(x) [ sum_a pi(a|x) r*(x,a) - eta * KL(pi||ref on x) ].
double policy_value(const Policy& policy, const Environment& env, const Policy& ref, double eta);

// Exact expected response length under the policy, over d0.
double mean_response_length(const Policy& policy, const Environment& env);

PromptIndex sample_prompt(const Environment& env, Rng& rng);
ResponseIndex sample_response(const Policy& policy, PromptIndex x, Rng& rng);

}  // namespace rlhf_lab
