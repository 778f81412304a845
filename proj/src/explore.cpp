#include "rlhf_lab/explore.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "rlhf_lab/csv.hpp"

namespace rlhf_lab {

namespace {

void require_linear(const Environment& env) {
    if (!env.linear_mode()) {
        throw ModeError("operation requires an environment in linear mode");
    }
}

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

CovarianceAccumulator CovarianceAccumulator::initial(std::size_t dim, double ridge) {
    if (!(ridge > 0.0)) throw ArgumentError("covariance ridge must be > 0");
    CovarianceAccumulator acc;
    acc.ridge = ridge;
    acc.matrix = ridge * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim),
                                                   static_cast<Eigen::Index>(dim));
    return acc;
}

Eigen::VectorXd expected_feature(const Environment& env, const Policy& policy) {
    require_linear(env);
    const Eigen::Index d = static_cast<Eigen::Index>(env.feature_dim());
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
        const std::vector<double> p = policy.probs(x);
        for (ResponseIndex a = 0; a < p.size(); ++a) {
            mean += env.prompt_dist[x] * p[a] * to_eigen(env.feature(x, a));
        }
    }
    return mean;
}

CovarianceAccumulator covariance_update(CovarianceAccumulator acc, const Policy& pi1,
                                        const Policy& pi2, const Environment& env) {
    require_linear(env);
    const Eigen::Index d = static_cast<Eigen::Index>(env.feature_dim());
    if (acc.matrix.rows() != d) throw ArgumentError("covariance dimension mismatch");

    Eigen::MatrixXd increment = Eigen::MatrixXd::Zero(d, d);
    for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
        const std::vector<double> p1 = pi1.probs(x);
        const std::vector<double> p2 = pi2.probs(x);
        for (ResponseIndex a1 = 0; a1 < p1.size(); ++a1) {
            const Eigen::VectorXd f1 = to_eigen(env.feature(x, a1));
            for (ResponseIndex a2 = 0; a2 < p2.size(); ++a2) {
                const Eigen::VectorXd diff = f1 - to_eigen(env.feature(x, a2));
                increment.noalias() +=
                    (env.prompt_dist[x] * p1[a1] * p2[a2]) * (diff * diff.transpose());
            }
        }
    }
    acc.matrix += increment;
    // Exact symmetry keeps downstream factorizations clean.
    acc.matrix = 0.5 * (acc.matrix + acc.matrix.transpose()).eval();
    acc.history_count += 1;
    return acc;
}

double information_gain(const CovarianceAccumulator& acc, const Policy& pi1, const Policy& pi2,
                        const Environment& env, double beta) {
    require_linear(env);
    const Eigen::VectorXd delta = expected_feature(env, pi1) - expected_feature(env, pi2);
    if (delta.isZero(0.0)) return 0.0;
    const Eigen::LLT<Eigen::MatrixXd> llt(acc.matrix);
    if (llt.info() != Eigen::Success) {
        throw LabError("linear-algebra", "covariance matrix is not positive definite");
    }
    const Eigen::VectorXd solved = llt.solve(delta);
    const double quad = delta.dot(solved);
    return beta * std::sqrt(std::max(quad, 0.0));
}

std::vector<Policy> make_enhancer_candidates(const Environment& env, const Policy& main_agent,
                                             const Policy& ref, const CovarianceAccumulator& acc,
                                             const LinearExploreConfig& cfg) {
    std::vector<Policy> candidates;
    candidates.reserve(cfg.candidate_temps.size() + 2 + 2 * cfg.tilt_scales.size());
    for (const double t : cfg.candidate_temps) {
        candidates.push_back(temperature_variant(main_agent, t));
    }
    // Implicit reward of the main agent; per-prompt constants cancel in
    // the ranking.
    const ScoreFn implicit = [&env, &main_agent, &ref, eta = cfg.eta](PromptIndex x,
                                                                      ResponseIndex a) {
        return eta * (main_agent.log_probs(x)[a] - ref.log_probs(x)[a]);
    };
    const std::vector<double> temps = {1.0};
    candidates.push_back(best_of_n_policy(env, main_agent, implicit, cfg.candidate_n, temps));
    candidates.push_back(worst_of_n_policy(env, main_agent, implicit, cfg.candidate_n, temps));

    // Tilts along the least-covered feature direction. These stay diverse
    // even when the temperature grid collapses (uniform main agent).
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(acc.matrix);
    const Eigen::VectorXd least_covered = eig.eigenvectors().col(0);
    const ScoreFn along = [&env, least_covered](PromptIndex x, ResponseIndex a) {
        const auto& phi = env.feature(x, a);
        double dot = 0.0;
        for (std::size_t i = 0; i < phi.size(); ++i) {
            dot += least_covered[static_cast<Eigen::Index>(i)] * phi[i];
        }
        return dot;
    };
    const ScoreFn against = [along](PromptIndex x, ResponseIndex a) { return -along(x, a); };
    for (const double s : cfg.tilt_scales) {
        candidates.push_back(gibbs_policy(env, along, main_agent, 1.0 / s));
        candidates.push_back(gibbs_policy(env, against, main_agent, 1.0 / s));
    }
    return candidates;
}

EnhancerSelection select_enhancer(const Environment& env, const Policy& main_agent,
                                  std::span<const Policy> candidates,
                                  const CovarianceAccumulator& acc,
                                  const LinearExploreConfig& cfg) {
    EnhancerSelection best;
    best.policy = main_agent;
    best.gamma = 0.0;
    best.exhausted = true;
    for (const Policy& candidate : candidates) {
        const double gamma = information_gain(acc, main_agent, candidate, env, cfg.beta);
        const double kl_cost = cfg.eta * mean_kl(candidate, main_agent, env);
        if (kl_cost <= gamma && (best.exhausted || gamma > best.gamma)) {
            best.policy = candidate;
            best.gamma = gamma;
            best.exhausted = false;
        }
    }
    return best;
}

void ExploreTrace::write_csv(std::ostream& os) const {
    os << "iteration,gamma_selected,subopt_gap,min_eig,max_eig\n";
    for (const auto& row : rows) {
        os << row.iteration << ',' << csv_double(row.gamma_selected) << ','
           << csv_double(row.subopt_gap) << ',' << csv_double(row.min_eig) << ','
           << csv_double(row.max_eig) << '\n';
    }
}

ExploreTrace run_theoretical_loop(const Environment& env, const LinearExploreConfig& cfg,
                                  const Policy& ref, const OptimOpts& dpo_opts,
                                  std::uint64_t master_seed) {
    cfg.validate();
    require_linear(env);

    ExploreTrace trace;
    CovarianceAccumulator acc = CovarianceAccumulator::initial(env.feature_dim(), cfg.ridge_lambda);
    const Policy optimum = gibbs_policy(env, true_reward_fn(env), ref, cfg.eta);

    std::vector<PreferenceRecord> history;
    Policy main_agent = ref;

    for (int t = 1; t <= cfg.iterations; ++t) {
        if (!history.empty()) {
            try {
                main_agent = fit_dpo(history, ref, main_agent, cfg.eta, dpo_opts).model;
            } catch (const OptimizationError& e) {
                throw OptimizationError("explore iteration " + std::to_string(t) + ": " + e.what(),
                                        e.loss_trace());
            }
        }

        const std::vector<Policy> candidates =
            make_enhancer_candidates(env, main_agent, ref, acc, cfg);
        const EnhancerSelection selection = select_enhancer(env, main_agent, candidates, acc, cfg);

        Rng rng = stream_rng(master_seed, "explore-sampling", static_cast<std::uint64_t>(t));
        for (int i = 0; i < cfg.batch_size; ++i) {
            const PromptIndex x = sample_prompt(env, rng);
            const ResponseIndex a1 = sample_response(main_agent, x, rng);
            const ResponseIndex a2 = sample_response(selection.policy, x, rng);
            if (a1 == a2) {
                ++trace.skipped_pairs;
                continue;
            }
            const PreferenceLabel y = sample_preference(env, x, a1, a2, rng);
            PreferenceRecord rec;
            rec.prompt = x;
            rec.chosen = y.y == 1 ? a1 : a2;
            rec.rejected = y.y == 1 ? a2 : a1;
            rec.meta = RecordMeta{t, "explore"};
            history.push_back(std::move(rec));
        }

        acc = covariance_update(std::move(acc), main_agent, selection.policy, env);

        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(acc.matrix);
        ExploreTraceRow row;
        row.iteration = t;
        row.gamma_selected = selection.gamma;
        row.subopt_gap = policy_value(optimum, env, ref, cfg.eta) -
                         policy_value(main_agent, env, ref, cfg.eta) +
                         cfg.eta * mean_kl(optimum, main_agent, env);
        row.min_eig = eig.eigenvalues().minCoeff();
        row.max_eig = eig.eigenvalues().maxCoeff();
        row.dataset_size = history.size();
        row.exhausted = selection.exhausted;
        trace.rows.push_back(row);
        trace.main_checkpoints.push_back(main_agent);
    }
    return trace;
}

}  // namespace rlhf_lab
