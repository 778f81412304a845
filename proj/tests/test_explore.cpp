#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rlhf_lab/explore.hpp"
#include "test_util.hpp"

using namespace rlhf_lab;
using test_util::random_policy;

namespace {

Environment linear_env(int prompts, int responses, int dim, std::uint64_t seed) {
    EnvSpec spec;
    spec.n_prompts = prompts;
    spec.n_responses = responses;
    spec.reward.kind = RewardGenKind::linear;
    spec.reward.dim = dim;
    spec.reward.norm_bound = 1.0;
    return make_synthetic_env(spec, seed);
}

LinearExploreConfig small_explore(int iterations = 5, int batch = 60) {
    LinearExploreConfig cfg;
    cfg.iterations = iterations;
    cfg.batch_size = batch;
    return cfg;
}

OptimOpts fast_dpo_opts() {
    OptimOpts opts;
    opts.step_size = 5.0;
    opts.max_iters = 4000;
    opts.tolerance = 1e-6;
    opts.l2_reg = 1e-3;  // bounded-confidence fits keep KL(pi*||pi_t) tame
    return opts;
}

}  // namespace

TEST_CASE("expected feature map") {
    const Environment env = linear_env(4, 4, 3, 1);

    SUBCASE("deterministic policy on one prompt picks that feature vector") {
        Environment single = linear_env(1, 3, 3, 2);
        Policy point = uniform_policy(single);
        point.logits[0] = {0.0, 500.0, 0.0};
        const Eigen::VectorXd mean = expected_feature(single, point);
        const auto& phi = single.feature(0, 1);
        for (int i = 0; i < mean.size(); ++i) {
            CHECK(mean[i] == doctest::Approx(phi[static_cast<std::size_t>(i)]).epsilon(1e-9));
        }
    }
    SUBCASE("mirrored features under a uniform policy cancel") {
        Environment mirrored = linear_env(1, 2, 3, 3);
        mirrored.features[0][1] = mirrored.features[0][0];
        for (auto& v : mirrored.features[0][1]) v = -v;
        // Keep tabular rewards consistent with the mirrored feature.
        double dot = 0.0;
        for (std::size_t i = 0; i < mirrored.theta_star.size(); ++i) {
            dot += mirrored.theta_star[i] * mirrored.features[0][1][i];
        }
        mirrored.true_reward[0][1] = dot;
        const Eigen::VectorXd mean = expected_feature(mirrored, uniform_policy(mirrored));
        for (int i = 0; i < mean.size(); ++i) CHECK(std::abs(mean[i]) <= 1e-15);
    }
    SUBCASE("agrees with a Monte-Carlo estimate within three standard errors") {
        Rng rng(4);
        const Policy p = random_policy(env, rng);
        const Eigen::VectorXd exact = expected_feature(env, p);

        const int n = 100000;
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(exact.size());
        Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(exact.size());
        Rng mc(5);
        for (int i = 0; i < n; ++i) {
            const PromptIndex x = sample_prompt(env, mc);
            const ResponseIndex a = sample_response(p, x, mc);
            for (int k = 0; k < exact.size(); ++k) {
                const double v = env.feature(x, a)[static_cast<std::size_t>(k)];
                sum[k] += v;
                sum_sq[k] += v * v;
            }
        }
        for (int k = 0; k < exact.size(); ++k) {
            const double mean = sum[k] / n;
            const double var = sum_sq[k] / n - mean * mean;
            const double se = std::sqrt(var / n);
            CHECK(std::abs(mean - exact[k]) <= 3.0 * se + 1e-12);
        }
    }
    SUBCASE("tabular env is a mode error") {
        EnvSpec spec;
        spec.n_prompts = 2;
        spec.n_responses = 2;
        const Environment tab = make_synthetic_env(spec, 6);
        CHECK_THROWS_AS(expected_feature(tab, uniform_policy(tab)), ModeError);
    }
}

TEST_CASE("covariance accumulation") {
    const Environment env = linear_env(4, 4, 3, 11);

    SUBCASE("fresh accumulator is the ridge identity") {
        const auto acc = CovarianceAccumulator::initial(3, 0.5);
        CHECK(acc.matrix.isApprox(0.5 * Eigen::MatrixXd::Identity(3, 3)));
        CHECK(acc.history_count == 0);
    }
    SUBCASE("identical deterministic policies add nothing") {
        Policy point = uniform_policy(env);
        for (auto& row : point.logits) row[0] = 500.0;
        auto acc = CovarianceAccumulator::initial(3, 1.0);
        acc = covariance_update(std::move(acc), point, point, env);
        CHECK(acc.history_count == 1);
        CHECK((acc.matrix - Eigen::MatrixXd::Identity(3, 3)).norm() <= 1e-9);
    }
    SUBCASE("eigenvalues never decrease across updates") {
        Rng rng(12);
        auto acc = CovarianceAccumulator::initial(3, 1.0);
        Eigen::VectorXd prev = Eigen::VectorXd::Constant(3, 1.0);
        for (int step = 0; step < 5; ++step) {
            const Policy p1 = random_policy(env, rng);
            const Policy p2 = random_policy(env, rng);
            acc = covariance_update(std::move(acc), p1, p2, env);
            const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(acc.matrix);
            const Eigen::VectorXd now = eig.eigenvalues();
            for (int i = 0; i < 3; ++i) CHECK(now[i] >= prev[i] - 1e-10);
            CHECK(now.minCoeff() >= 1.0 - 1e-10);
            CHECK((acc.matrix - acc.matrix.transpose()).norm() <= 1e-10);
            prev = now;
        }
    }
}

TEST_CASE("information gain") {
    const Environment env = linear_env(4, 4, 3, 21);
    Rng rng(22);
    const Policy p1 = random_policy(env, rng);
    const Policy p2 = random_policy(env, rng);

    SUBCASE("identical policies have zero gain") {
        const auto acc = CovarianceAccumulator::initial(3, 1.0);
        CHECK(information_gain(acc, p1, p1, env, 1.0) == 0.0);
    }
    SUBCASE("scaled identity reduces to beta * norm / sqrt(lambda)") {
        const double lambda = 2.7;
        const auto acc = CovarianceAccumulator::initial(3, lambda);
        const Eigen::VectorXd delta = expected_feature(env, p1) - expected_feature(env, p2);
        const double expected = 1.3 * delta.norm() / std::sqrt(lambda);
        CHECK(information_gain(acc, p1, p2, env, 1.3) ==
              doctest::Approx(expected).epsilon(1e-10));
    }
    SUBCASE("gain is absolutely homogeneous in beta") {
        const auto acc = CovarianceAccumulator::initial(3, 1.0);
        const double g1 = information_gain(acc, p1, p2, env, 1.0);
        CHECK(information_gain(acc, p1, p2, env, 3.5) == doctest::Approx(3.5 * g1).epsilon(1e-12));
    }
    SUBCASE("updating along the measured direction strictly shrinks the gain") {
        auto acc = CovarianceAccumulator::initial(3, 1.0);
        const double before = information_gain(acc, p1, p2, env, 1.0);
        acc = covariance_update(std::move(acc), p1, p2, env);
        const double after = information_gain(acc, p1, p2, env, 1.0);
        CHECK(after < before);

        // Sherman-Morrison cross-check for a pure rank-one update in the
        // measured direction.
        const Eigen::VectorXd delta = expected_feature(env, p1) - expected_feature(env, p2);
        const Eigen::MatrixXd rank_one =
            Eigen::MatrixXd::Identity(3, 3) + delta * delta.transpose();
        const double denom = 1.0 + delta.squaredNorm();
        const double sm_quad = delta.squaredNorm() - std::pow(delta.squaredNorm(), 2) / denom;
        const Eigen::LLT<Eigen::MatrixXd> llt(rank_one);
        const double direct = delta.dot(llt.solve(delta));
        CHECK(direct == doctest::Approx(sm_quad).epsilon(1e-10));
    }
}

TEST_CASE("enhancer selection") {
    const Environment env = linear_env(4, 4, 3, 31);
    Rng rng(32);
    const Policy main_agent = random_policy(env, rng);
    LinearExploreConfig cfg = small_explore();

    SUBCASE("singleton candidate set returns the main agent") {
        const auto acc = CovarianceAccumulator::initial(3, 1.0);
        const std::vector<Policy> candidates{main_agent};
        const auto sel = select_enhancer(env, main_agent, candidates, acc, cfg);
        CHECK(sel.gamma == 0.0);
        CHECK(!sel.exhausted);
        CHECK(sel.policy.logits == main_agent.logits);
    }
    SUBCASE("fresh small-ridge accumulator lets a far candidate through") {
        cfg.ridge_lambda = 1e-4;
        const auto acc = CovarianceAccumulator::initial(3, cfg.ridge_lambda);
        Policy far = main_agent;
        for (auto& row : far.logits) {
            for (std::size_t i = 0; i < row.size(); ++i) row[i] = i == 0 ? 30.0 : -30.0;
        }
        const std::vector<Policy> candidates{far};
        const auto sel = select_enhancer(env, main_agent, candidates, acc, cfg);
        CHECK(!sel.exhausted);
        CHECK(sel.gamma > 0.0);
        CHECK(sel.policy.logits == far.logits);
        // The selected enhancer satisfies the budget, re-verified post hoc.
        CHECK(cfg.eta * mean_kl(sel.policy, main_agent, env) <= sel.gamma);
    }
    SUBCASE("generated candidates always satisfy the constraint when selected") {
        const Policy ref = uniform_policy(env);
        for (int round = 0; round < 10; ++round) {
            const Policy agent = random_policy(env, rng);
            auto acc = CovarianceAccumulator::initial(3, 1.0);
            for (int u = 0; u < round; ++u) {
                acc = covariance_update(std::move(acc), random_policy(env, rng),
                                        random_policy(env, rng), env);
            }
            const auto candidates = make_enhancer_candidates(env, agent, ref, acc, cfg);
            CHECK(candidates.size() == cfg.candidate_temps.size() + 2 + 2 * cfg.tilt_scales.size());
            const auto sel = select_enhancer(env, agent, candidates, acc, cfg);
            if (!sel.exhausted) {
                CHECK(cfg.eta * mean_kl(sel.policy, agent, env) <= sel.gamma + 1e-12);
            }
        }
    }
}

TEST_CASE("theoretical loop") {
    const Environment env = linear_env(5, 4, 3, 41);
    const Policy ref = uniform_policy(env);

    SUBCASE("first iteration's main agent is the reference") {
        const LinearExploreConfig cfg = small_explore(1, 20);
        const ExploreTrace trace = run_theoretical_loop(env, cfg, ref, fast_dpo_opts(), 5);
        REQUIRE(trace.rows.size() == 1);
        CHECK(trace.main_checkpoints[0].logits == ref.logits);
        CHECK(trace.rows[0].dataset_size <= 20);
    }
    SUBCASE("trace rows are complete and spectra bounded below by the ridge") {
        const LinearExploreConfig cfg = small_explore(4, 40);
        const ExploreTrace trace = run_theoretical_loop(env, cfg, ref, fast_dpo_opts(), 6);
        REQUIRE(trace.rows.size() == 4);
        for (const auto& row : trace.rows) {
            CHECK(std::isfinite(row.gamma_selected));
            CHECK(row.gamma_selected >= 0.0);
            CHECK(row.min_eig >= cfg.ridge_lambda - 1e-9);
            CHECK(row.max_eig >= row.min_eig);
            CHECK(std::isfinite(row.subopt_gap));
        }
    }
    SUBCASE("multi-seed medians: gap shrinks and gain never grows") {
        const LinearExploreConfig cfg = small_explore(5, 80);
        const int n_seeds = 20;
        std::vector<std::vector<double>> gammas(static_cast<std::size_t>(cfg.iterations));
        std::vector<double> first_gaps, last_gaps;
        for (int seed = 0; seed < n_seeds; ++seed) {
            const Environment e = linear_env(5, 4, 3, 100 + static_cast<std::uint64_t>(seed));
            const ExploreTrace trace =
                run_theoretical_loop(e, cfg, uniform_policy(e), fast_dpo_opts(),
                                     static_cast<std::uint64_t>(seed));
            for (int t = 0; t < cfg.iterations; ++t) {
                gammas[static_cast<std::size_t>(t)].push_back(
                    trace.rows[static_cast<std::size_t>(t)].gamma_selected);
            }
            first_gaps.push_back(trace.rows.front().subopt_gap);
            last_gaps.push_back(trace.rows.back().subopt_gap);
        }
        const auto median = [](std::vector<double> v) {
            std::sort(v.begin(), v.end());
            return v[v.size() / 2];
        };
        CHECK(median(last_gaps) < median(first_gaps));
        for (int t = 1; t < cfg.iterations; ++t) {
            CHECK(median(gammas[static_cast<std::size_t>(t)]) <=
                  median(gammas[static_cast<std::size_t>(t - 1)]) + 1e-9);
        }
    }
}
