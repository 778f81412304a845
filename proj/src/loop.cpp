#include "rlhf_lab/loop.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rlhf_lab {

std::vector<double> PointwiseRanker::scores(PromptIndex x,
                                            std::span<const ResponseIndex> candidates) const {
    std::vector<double> out;
    out.reserve(candidates.size());
    for (const ResponseIndex a : candidates) out.push_back(fn_(x, a));
    return out;
}

std::vector<double> TournamentRanker::scores(PromptIndex x,
                                             std::span<const ResponseIndex> candidates) const {
    std::vector<double> out(candidates.size(), 0.0);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        for (std::size_t j = 0; j < candidates.size(); ++j) {
            if (i == j) continue;
            out[i] += pairwise_pref_predict(env_, model_, x, candidates[i], candidates[j]);
        }
    }
    return out;
}

BatchResult collect_preference_batch(const Environment& env, const Policy& policy,
                                     const ResponseRanker& ranker, int m, int n,
                                     std::span<const double> temps, double lambda, Rng& rng) {
    if (m < 0) throw ArgumentError("collect_preference_batch: m must be >= 0");
    const std::vector<double> slots = expand_slot_temps(n, temps);

    BatchResult out;
    out.records.reserve(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const PromptIndex x = sample_prompt(env, rng);
        const std::vector<ResponseIndex> candidates = sample_candidates(policy, x, slots, rng);
        std::vector<double> scores = ranker.scores(x, candidates);
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            scores[c] = apply_length_penalty(scores[c], env.length(x, candidates[c]), lambda);
        }
        std::size_t best = 0, worst = 0;
        for (std::size_t c = 1; c < candidates.size(); ++c) {
            if (scores[c] > scores[best]) best = c;
            if (scores[c] < scores[worst]) worst = c;
        }
        if (candidates[best] == candidates[worst]) {
            ++out.dropped;
            continue;
        }
        PreferenceRecord rec;
        rec.prompt = x;
        rec.chosen = candidates[best];
        rec.rejected = candidates[worst];
        out.records.push_back(std::move(rec));
    }
    return out;
}

IterationState run_iteration(IterationState state, const LoopConfig& cfg, const Environment& env,
                             const ResponseRanker& ranker, const Policy& ref,
                             const OptimOpts& dpo_opts, Rng& sample_rng, Rng& eval_rng) {
    cfg.validate();
    const int t = state.iteration + 1;

    if (state.dataset.empty()) {
        state.policy = ref;
    } else {
        const Policy& init = cfg.init_mode == InitMode::restart_from_ref ? ref : state.policy;
        try {
            state.policy = fit_dpo(state.dataset, ref, init, cfg.eta, dpo_opts).model;
        } catch (const OptimizationError& e) {
            throw OptimizationError("iteration " + std::to_string(t) + ": " + e.what(),
                                    e.loss_trace());
        }
    }

    BatchResult batch = collect_preference_batch(env, state.policy, ranker, cfg.batch_size,
                                                 cfg.rejection_n, cfg.temps, cfg.length_penalty,
                                                 sample_rng);
    for (auto& rec : batch.records) {
        rec.meta = RecordMeta{t, "loop"};
        state.dataset.push_back(std::move(rec));
    }
    state.dropped_total += batch.dropped;

    const Policy optimum = gibbs_policy(env, true_reward_fn(env), ref, cfg.eta);
    MetricRow row;
    row.iteration = t;
    row.j_true = policy_value(state.policy, env, ref, cfg.eta);
    row.kl_to_ref = mean_kl(state.policy, ref, env);
    row.mean_response_length = mean_response_length(state.policy, env);
    row.dataset_size = state.dataset.size();
    row.win_rate_vs_ref = win_rate(env, state.policy, ref,
                                   static_cast<std::size_t>(cfg.validation_evals), eval_rng);
    row.suboptimality_gap = policy_value(optimum, env, ref, cfg.eta) - row.j_true +
                            cfg.eta * mean_kl(optimum, state.policy, env);
    state.metrics.push_back(row);

    state.iteration = t;
    return state;
}

double win_rate(const Environment& env, const Policy& policy, const Policy& baseline,
                std::size_t n_eval, Rng& rng) {
    if (n_eval < 1) throw ArgumentError("win_rate: n_eval must be >= 1");
    double wins = 0.0;
    for (std::size_t i = 0; i < n_eval; ++i) {
        const PromptIndex x = sample_prompt(env, rng);
        const ResponseIndex a = sample_response(policy, x, rng);
        const ResponseIndex b = sample_response(baseline, x, rng);
        if (a == b) {
            wins += 0.5;
            continue;
        }
        wins += sample_preference(env, x, a, b, rng).y;
    }
    return wins / static_cast<double>(n_eval);
}

PipelineReport run_pipeline(const Environment& env, const LoopConfig& cfg,
                            const ResponseRanker& ranker, const Policy& ref,
                            std::vector<PreferenceRecord> offline_records,
                            const OptimOpts& dpo_opts, std::uint64_t master_seed) {
    cfg.validate();

    PipelineReport report;
    report.offline_size = offline_records.size();

    IterationState state;
    state.policy = ref;
    state.dataset = std::move(offline_records);

    int dropped_before = 0;
    for (int t = 1; t <= cfg.iterations; ++t) {
        Rng sample_rng = stream_rng(master_seed, "loop-sampling", static_cast<std::uint64_t>(t));
        Rng eval_rng = stream_rng(master_seed, "loop-eval", static_cast<std::uint64_t>(t));
        state = run_iteration(std::move(state), cfg, env, ranker, ref, dpo_opts, sample_rng,
                              eval_rng);
        report.checkpoints.push_back(state.policy);
        report.dropped_per_iteration.push_back(state.dropped_total - dropped_before);
        dropped_before = state.dropped_total;
    }

    report.metrics = state.metrics;
    report.dataset = std::move(state.dataset);

    report.best_iteration = 1;
    report.best_win_rate = report.metrics[0].win_rate_vs_ref;
    for (int t = 2; t <= cfg.iterations; ++t) {
        const double w = report.metrics[static_cast<std::size_t>(t - 1)].win_rate_vs_ref;
        if (w > report.best_win_rate) {
            report.best_win_rate = w;
            report.best_iteration = t;
        }
    }
    return report;
}

}  // namespace rlhf_lab
