#include "rlhf_lab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rlhf_lab {

namespace {

// log-softmax of logits/T with max subtraction.
std::vector<double> log_softmax_scaled(const std::vector<double>& logits, double temp) {
    std::vector<double> out(logits.size());
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = logits[i] / temp;
        hi = std::max(hi, out[i]);
    }
    double z = 0.0;
    for (const double v : out) z += std::exp(v - hi);
    const double log_z = hi + std::log(z);
    for (auto& v : out) v -= log_z;
    return out;
}

}  // namespace

std::vector<double> Policy::log_probs(PromptIndex x) const {
    return log_softmax_scaled(logits[x], temperature);
}

std::vector<double> Policy::probs(PromptIndex x) const {
    std::vector<double> out = log_probs(x);
    for (auto& v : out) v = std::exp(v);
    // One renormalization pass keeps the sum within 1e-12 of 1.
    double total = 0.0;
    for (const double v : out) total += v;
    for (auto& v : out) v /= total;
    return out;
}

Policy uniform_policy(const Environment& env) {
    Policy p;
    p.logits.resize(env.n_prompts());
    for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
        p.logits[x].assign(env.n_responses(x), 0.0);
    }
    return p;
}

Policy temperature_variant(const Policy& policy, double temp) {
    if (!(temp > 0.0)) throw ArgumentError("temperature must be > 0");
    Policy out = policy;
    out.temperature = temp;
    return out;
}

ScoreFn true_reward_fn(const Environment& env) {
    return [&env](PromptIndex x, ResponseIndex a) { return env.reward(x, a); };
}

Policy gibbs_policy(const Environment& env, const ScoreFn& score, const Policy& ref, double eta) {
    if (!(eta > 0.0)) throw ArgumentError("gibbs_policy: eta must be > 0");
    Policy out;
    out.logits.resize(env.n_prompts());
    for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
        const std::vector<double> ref_lp = ref.log_probs(x);
        out.logits[x].resize(ref_lp.size());
        for (ResponseIndex a = 0; a < ref_lp.size(); ++a) {
            out.logits[x][a] = ref_lp[a] + score(x, a) / eta;
        }
    }
    return out;
}

double kl_divergence(const Policy& p, const Policy& q, PromptIndex x) {
    if (x >= p.n_prompts() || x >= q.n_prompts() ||
        p.n_responses(x) != q.n_responses(x)) {
        throw LookupError("kl_divergence: prompt mismatch");
    }
    const std::vector<double> lp = p.log_probs(x);
    const std::vector<double> lq = q.log_probs(x);
    double kl = 0.0;
    for (std::size_t a = 0; a < lp.size(); ++a) {
        kl += std::exp(lp[a]) * (lp[a] - lq[a]);
    }
    return std::max(kl, 0.0);
}

double mean_kl(const Policy& p, const Policy& q, const Environment& env) {
    double acc = 0.0;
    for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
        acc += env.prompt_dist[x] * kl_divergence(p, q, x);
    }
    return acc;
}

double policy_value(const Policy& policy, const Environment& env, const Policy& ref, double eta) {
    double value = 0.0;
    for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
        const std::vector<double> p = policy.probs(x);
        double expected = 0.0;
        for (ResponseIndex a = 0; a < p.size(); ++a) {
            expected += p[a] * env.reward(x, a);
        }
        if (eta != 0.0) expected -= eta * kl_divergence(policy, ref, x);
        value += env.prompt_dist[x] * expected;
    }
    return value;
}

double mean_response_length(const Policy& policy, const Environment& env) {
    double acc = 0.0;
    for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
        const std::vector<double> p = policy.probs(x);
        double expected = 0.0;
        for (ResponseIndex a = 0; a < p.size(); ++a) {
            expected += p[a] * static_cast<double>(env.length(x, a));
        }
        acc += env.prompt_dist[x] * expected;
    }
    return acc;
}

PromptIndex sample_prompt(const Environment& env, Rng& rng) {
    return rng.discrete(env.prompt_dist);
}

ResponseIndex sample_response(const Policy& policy, PromptIndex x, Rng& rng) {
    const std::vector<double> p = policy.probs(x);
    return rng.discrete(p);
}

}  // namespace rlhf_lab
