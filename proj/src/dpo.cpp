#include "rlhf_lab/dpo.hpp"

#include <algorithm>
#include <cmath>

namespace rlhf_lab {

namespace {

void require_shapes_match(const Policy& policy, const Policy& ref) {
    if (policy.n_prompts() != ref.n_prompts()) {
        throw LookupError("dpo: policy and reference prompt counts differ");
    }
    for (PromptIndex x = 0; x < policy.n_prompts(); ++x) {
        if (policy.n_responses(x) != ref.n_responses(x)) {
            throw LookupError("dpo: policy and reference response counts differ");
        }
    }
}

void check_record(const Policy& policy, const PreferenceRecord& rec) {
    if (rec.prompt >= policy.n_prompts() || rec.chosen >= policy.n_responses(rec.prompt) ||
        rec.rejected >= policy.n_responses(rec.prompt)) {
        throw LookupError("dpo: record indices out of range");
    }
}

double weight_at(std::span<const double> weights, std::size_t i) {
    return weights.empty() ? 1.0 : weights[i];
}

double total_weight(std::span<const double> weights, std::size_t n) {
    if (weights.empty()) return static_cast<double>(n);
    double acc = 0.0;
    for (const double w : weights) acc += w;
    return acc;
}

std::vector<std::vector<double>> all_log_probs(const Policy& p) {
    std::vector<std::vector<double>> out(p.n_prompts());
    for (PromptIndex x = 0; x < p.n_prompts(); ++x) out[x] = p.log_probs(x);
    return out;
}

}  // namespace

std::vector<double> flatten_logits(const Policy& policy) {
    std::vector<double> out;
    for (const auto& row : policy.logits) out.insert(out.end(), row.begin(), row.end());
    return out;
}

void assign_logits(Policy& policy, std::span<const double> params) {
    std::size_t i = 0;
    for (auto& row : policy.logits) {
        for (auto& v : row) v = params[i++];
    }
}

Policy with_logits(const Policy& like, std::span<const double> params) {
    Policy p = like;
    assign_logits(p, params);
    return p;
}

double dpo_loss(const Policy& policy, const Policy& ref, std::span<const PreferenceRecord> data,
                double eta, std::span<const double> weights) {
    if (data.empty()) throw ArgumentError("dpo_loss: empty dataset");
    if (!(eta > 0.0)) throw ArgumentError("dpo_loss: eta must be > 0");
    require_shapes_match(policy, ref);

    const auto lp = all_log_probs(policy);
    const auto lr = all_log_probs(ref);

    double acc = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& rec = data[i];
        check_record(policy, rec);
        const double margin = eta * ((lp[rec.prompt][rec.chosen] - lr[rec.prompt][rec.chosen]) -
                                     (lp[rec.prompt][rec.rejected] - lr[rec.prompt][rec.rejected]));
        acc += weight_at(weights, i) * log_sigmoid_neg(margin);
    }
    return acc / total_weight(weights, data.size());
}

std::vector<double> dpo_grad(const Policy& policy, const Policy& ref,
                             std::span<const PreferenceRecord> data, double eta,
                             std::span<const double> weights) {
    if (data.empty()) throw ArgumentError("dpo_grad: empty dataset");
    if (!(eta > 0.0)) throw ArgumentError("dpo_grad: eta must be > 0");
    require_shapes_match(policy, ref);

    const auto lp = all_log_probs(policy);
    const auto lr = all_log_probs(ref);
    const double denom = total_weight(weights, data.size());

    std::vector<std::size_t> offset(policy.n_prompts(), 0);
    std::size_t total = 0;
    for (PromptIndex x = 0; x < policy.n_prompts(); ++x) {
        offset[x] = total;
        total += policy.n_responses(x);
    }

    std::vector<double> g(total, 0.0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& rec = data[i];
        check_record(policy, rec);
        const double margin = eta * ((lp[rec.prompt][rec.chosen] - lr[rec.prompt][rec.chosen]) -
                                     (lp[rec.prompt][rec.rejected] - lr[rec.prompt][rec.rejected]));
        const double coef = -stable_sigmoid(-margin) * weight_at(weights, i) / denom *
                            (eta / policy.temperature);
        g[offset[rec.prompt] + rec.chosen] += coef;
        g[offset[rec.prompt] + rec.rejected] -= coef;
    }
    return g;
}

FitResult<Policy> fit_dpo(std::span<const PreferenceRecord> data, const Policy& ref,
                          const Policy& init, double eta, const OptimOpts& opts,
                          std::span<const double> weights) {
    if (data.empty()) throw ArgumentError("fit_dpo: empty dataset");
    require_shapes_match(init, ref);

    Policy scratch = init;
    const LossFn loss = [&](std::span<const double> p) {
        assign_logits(scratch, p);
        return dpo_loss(scratch, ref, data, eta, weights);
    };
    const GradFn grad = [&](std::span<const double> p) {
        assign_logits(scratch, p);
        return dpo_grad(scratch, ref, data, eta, weights);
    };

    OptimResult res = minimize(flatten_logits(init), loss, grad, opts);
    FitResult<Policy> out;
    out.model = with_logits(init, res.params);
    out.converged = res.converged;
    out.iterations = res.iterations;
    out.final_loss = res.final_loss;
    out.grad_sup_norm = res.grad_sup_norm;
    return out;
}

std::vector<double> expand_slot_temps(int n, std::span<const double> temps) {
    if (n < 2) throw ArgumentError("rejection sampling requires n >= 2");
    if (temps.empty()) throw ArgumentError("temperature list is empty");
    for (const double t : temps) {
        if (!(t > 0.0)) throw ArgumentError("temperatures must be > 0");
    }
    const int k = static_cast<int>(temps.size());
    const int base = n / k;
    const int extra = n % k;
    std::vector<double> slots;
    slots.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < k; ++i) {
        const int count = base + (i < extra ? 1 : 0);
        for (int j = 0; j < count; ++j) slots.push_back(temps[static_cast<std::size_t>(i)]);
    }
    return slots;
}

std::vector<ResponseIndex> sample_candidates(const Policy& policy, PromptIndex x,
                                             std::span<const double> slot_temps, Rng& rng) {
    std::vector<ResponseIndex> out;
    out.reserve(slot_temps.size());
    double cached_temp = -1.0;
    std::vector<double> probs;
    for (const double t : slot_temps) {
        if (t != cached_temp) {
            probs = temperature_variant(policy, t).probs(x);
            cached_temp = t;
        }
        out.push_back(rng.discrete(probs));
    }
    return out;
}

BestWorst best_worst_of_n(const Policy& policy, const ScoreFn& score, PromptIndex x, int n,
                          std::span<const double> temps, Rng& rng) {
    const std::vector<double> slots = expand_slot_temps(n, temps);
    const std::vector<ResponseIndex> samples = sample_candidates(policy, x, slots, rng);

    BestWorst result{samples[0], samples[0]};
    double best_score = score(x, samples[0]);
    double worst_score = best_score;
    for (std::size_t i = 1; i < samples.size(); ++i) {
        const double s = score(x, samples[i]);
        if (s > best_score) {
            best_score = s;
            result.best = samples[i];
        }
        if (s < worst_score) {
            worst_score = s;
            result.worst = samples[i];
        }
    }
    return result;
}

namespace {

// Exact order-statistics enumeration shared by best/worst: with slot i
// distributed q_i, the winner is the first slot attaining the extreme
// score, so
//   P(pick = a) = sum_i q_i(a) * prod_{j<i} F_j(strict side of s_a)
//                              * prod_{j>i} F_j(weak side of s_a).
Policy extreme_of_n_policy(const Environment& env, const Policy& base, const ScoreFn& score,
                           int n, std::span<const double> temps, bool take_best) {
    const std::vector<double> slots = expand_slot_temps(n, temps);
    const std::size_t ns = slots.size();

    Policy out;
    out.logits.resize(env.n_prompts());
    for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
        const std::size_t k = env.n_responses(x);
        std::vector<std::vector<double>> q(ns);
        for (std::size_t i = 0; i < ns; ++i) {
            q[i] = temperature_variant(base, slots[i]).probs(x);
        }
        std::vector<double> s(k);
        for (ResponseIndex a = 0; a < k; ++a) s[a] = score(x, a);

        std::vector<double> picked(k, 0.0);
        for (ResponseIndex a = 0; a < k; ++a) {
            // F_strict: mass strictly on the losing side of s_a;
            // F_weak: mass on the losing side or tied.
            std::vector<double> f_strict(ns, 0.0), f_weak(ns, 0.0);
            for (std::size_t i = 0; i < ns; ++i) {
                for (ResponseIndex b = 0; b < k; ++b) {
                    const bool strictly_worse = take_best ? s[b] < s[a] : s[b] > s[a];
                    if (strictly_worse) f_strict[i] += q[i][b];
                    if (strictly_worse || s[b] == s[a]) f_weak[i] += q[i][b];
                }
            }
            double total = 0.0;
            for (std::size_t i = 0; i < ns; ++i) {
                double term = q[i][a];
                for (std::size_t j = 0; j < i; ++j) term *= f_strict[j];
                for (std::size_t j = i + 1; j < ns; ++j) term *= f_weak[j];
                total += term;
            }
            picked[a] = total;
        }

        out.logits[x].resize(k);
        for (ResponseIndex a = 0; a < k; ++a) {
            out.logits[x][a] = std::log(picked[a]);
        }
    }
    return out;
}

}  // namespace

Policy best_of_n_policy(const Environment& env, const Policy& base, const ScoreFn& score, int n,
                        std::span<const double> temps) {
    return extreme_of_n_policy(env, base, score, n, temps, true);
}

Policy worst_of_n_policy(const Environment& env, const Policy& base, const ScoreFn& score, int n,
                         std::span<const double> temps) {
    return extreme_of_n_policy(env, base, score, n, temps, false);
}

}  // namespace rlhf_lab
