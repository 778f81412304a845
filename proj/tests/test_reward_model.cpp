#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "rlhf_lab/env.hpp"
#include "rlhf_lab/reward_model.hpp"
#include "test_util.hpp"

using namespace rlhf_lab;
using test_util::fd_gradient;
using test_util::random_env;
using test_util::rel_err_inf;

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

std::vector<PreferenceRecord> random_records(const Environment& env, int count, Rng& rng) {
    std::vector<PreferenceRecord> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const PromptIndex x = rng.uniform_index(env.n_prompts());
        ResponseIndex a = rng.uniform_index(env.n_responses(x));
        ResponseIndex b = rng.uniform_index(env.n_responses(x));
        if (a == b) b = (b + 1) % env.n_responses(x);
        out.push_back({x, a, b, std::nullopt});
    }
    return out;
}

RewardModel random_model(const Environment& env, RewardModel::Kind kind, Rng& rng) {
    RewardModel m = zero_reward_model(env, kind);
    auto params = flatten(m);
    for (auto& v : params) v = rng.normal();
    return with_params(m, params);
}

// Oracle-labeled dataset compressed to one weighted record per ordered
// pair: draws per unordered pair, split by the empirical label counts.
std::pair<std::vector<PreferenceRecord>, std::vector<double>> labeled_pair_counts(
    const Environment& env, int draws_per_pair, Rng& rng) {
    std::vector<PreferenceRecord> records;
    std::vector<double> weights;
    for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
        for (ResponseIndex a = 0; a < env.n_responses(x); ++a) {
            for (ResponseIndex b = a + 1; b < env.n_responses(x); ++b) {
                int wins_a = 0;
                for (int i = 0; i < draws_per_pair; ++i) {
                    wins_a += sample_preference(env, x, a, b, rng).y;
                }
                if (wins_a > 0) {
                    records.push_back({x, a, b, std::nullopt});
                    weights.push_back(static_cast<double>(wins_a));
                }
                if (wins_a < draws_per_pair) {
                    records.push_back({x, b, a, std::nullopt});
                    weights.push_back(static_cast<double>(draws_per_pair - wins_a));
                }
            }
        }
    }
    return {std::move(records), std::move(weights)};
}

}  // namespace

TEST_CASE("bt nll closed forms") {
    const Environment env = random_env(3, 3, 1);
    const RewardModel zero = zero_reward_model(env, RewardModel::Kind::tabular);
    Rng rng(2);
    const auto data = random_records(env, 40, rng);

    SUBCASE("all-zero model costs ln 2 per pair") {
        CHECK(bt_nll(env, zero, data) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("score difference of ln 3 in favor of chosen costs -ln(3/4)") {
        RewardModel m = zero;
        m.table[0] = {std::log(3.0), 0.0, 0.0};
        const std::vector<PreferenceRecord> one{{0, 0, 1, std::nullopt}};
        CHECK(bt_nll(env, m, one) == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
    }
    SUBCASE("saturated margins make the loss vanish") {
        RewardModel m = zero;
        m.table[0] = {500.0, -500.0, 0.0};
        const std::vector<PreferenceRecord> one{{0, 0, 1, std::nullopt}};
        CHECK(bt_nll(env, m, one) <= 1e-12);
    }
    SUBCASE("empty dataset is an argument error") {
        CHECK_THROWS_AS(bt_nll(env, zero, {}), ArgumentError);
    }
}

TEST_CASE("bt gradient properties") {
    const Environment env = random_env(3, 3, 5);

    SUBCASE("zero model with a symmetric dataset has zero gradient") {
        std::vector<PreferenceRecord> data;
        for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
            data.push_back({x, 0, 1, std::nullopt});
            data.push_back({x, 1, 0, std::nullopt});
        }
        const RewardModel zero = zero_reward_model(env, RewardModel::Kind::tabular);
        for (const double g : bt_nll_grad(env, zero, data)) CHECK(g == 0.0);
    }
    SUBCASE("gradient on a chosen-response score is never positive") {
        Rng rng(6);
        const auto data = random_records(env, 1, rng);
        const RewardModel m = random_model(env, RewardModel::Kind::tabular, rng);
        const auto g = bt_nll_grad(env, m, data);
        std::size_t offset = 0;
        for (PromptIndex x = 0; x < data[0].prompt; ++x) offset += env.n_responses(x);
        CHECK(g[offset + data[0].chosen] <= 0.0);
        CHECK(g[offset + data[0].rejected] >= 0.0);
    }
    SUBCASE("matches central finite differences, tabular and linear") {
        const Environment lin = linear_env(3, 3, 4, 7);
        Rng rng(8);
        for (int trial = 0; trial < 20; ++trial) {
            for (const auto kind : {RewardModel::Kind::tabular, RewardModel::Kind::linear}) {
                const Environment& e = kind == RewardModel::Kind::linear ? lin : env;
                const RewardModel m = random_model(e, kind, rng);
                const auto data = random_records(e, 15, rng);
                const auto analytic = bt_nll_grad(e, m, data);
                const auto numeric = fd_gradient(
                    [&](std::span<const double> p) {
                        return bt_nll(e, with_params(m, p), data);
                    },
                    flatten(m));
                CHECK(rel_err_inf(analytic, numeric) <= 1e-5);
            }
        }
    }
}

TEST_CASE("bt reward recovery from oracle labels") {
    // Identifiability is per-prompt only: assert within-prompt score
    // differences, never raw scores.
    const Environment env = random_env(3, 2, 41, 0.5);
    Rng rng(42);
    const auto [records, weights] = labeled_pair_counts(env, 3333, rng);

    OptimOpts opts;
    opts.step_size = 4.0;
    opts.max_iters = 20000;
    opts.tolerance = 1e-8;
    const auto fit = fit_bt_reward(env, records, RewardModel::Kind::tabular, opts, weights);
    REQUIRE(fit.converged);

    for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
        for (ResponseIndex a = 0; a < env.n_responses(x); ++a) {
            for (ResponseIndex b = 0; b < env.n_responses(x); ++b) {
                const double fitted = fit.model.table[x][a] - fit.model.table[x][b];
                const double truth = env.reward(x, a) - env.reward(x, b);
                CHECK(std::abs(fitted - truth) <= 0.1);
            }
        }
    }

    SUBCASE("learned preference probabilities track the oracle") {
        for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
            const double learned = reward_pref_prob(env, fit.model, x, 0, 1);
            const double truth = preference_probability(env, x, 0, 1);
            CHECK(std::abs(learned - truth) <= 0.05);
        }
    }
}

TEST_CASE("strong regularization pulls parameters to zero") {
    const Environment env = random_env(2, 3, 3);
    Rng rng(4);
    const auto data = random_records(env, 60, rng);
    OptimOpts opts;
    opts.l2_reg = 1e6;
    opts.tolerance = 1e-10;
    const auto fit = fit_bt_reward(env, data, RewardModel::Kind::tabular, opts);
    for (const double v : flatten(fit.model)) CHECK(std::abs(v) <= 1e-5);
}

TEST_CASE("learned preference probability is exactly antisymmetric") {
    const Environment env = random_env(4, 4, 19);
    Rng rng(20);
    const RewardModel m = random_model(env, RewardModel::Kind::tabular, rng);
    const RewardModel zero = zero_reward_model(env, RewardModel::Kind::tabular);

    CHECK(reward_pref_prob(env, zero, 0, 0, 1) == 0.5);
    for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
        for (ResponseIndex a = 0; a < env.n_responses(x); ++a) {
            for (ResponseIndex b = 0; b < env.n_responses(x); ++b) {
                CHECK(reward_pref_prob(env, m, x, a, b) + reward_pref_prob(env, m, x, b, a) ==
                      1.0);
            }
        }
    }
}

TEST_CASE("pair instance formatting") {
    const Environment env = random_env(4, 4, 23);
    Rng data_rng(24);
    const auto records = random_records(env, 10000, data_rng);

    SUBCASE("fixed seed gives a deterministic swap sequence") {
        Rng a(1), b(1);
        for (int i = 0; i < 100; ++i) {
            CHECK(format_pair_instance(records[static_cast<std::size_t>(i)], a).swapped ==
                  format_pair_instance(records[static_cast<std::size_t>(i)], b).swapped);
        }
    }
    SUBCASE("swap frequency is a fair coin") {
        Rng rng(25);
        int swapped = 0;
        for (const auto& rec : records) swapped += format_pair_instance(rec, rng).swapped ? 1 : 0;
        const double freq = static_cast<double>(swapped) / records.size();
        CHECK(std::abs(freq - 0.5) <= 0.02);
    }
    SUBCASE("unswapping recovers the original record") {
        Rng rng(26);
        for (const auto& rec : records) {
            const PairInstance inst = format_pair_instance(rec, rng);
            CHECK(inst.label_a == !inst.swapped);
            const PreferenceRecord back = unswap_pair_instance(inst);
            CHECK(back.prompt == rec.prompt);
            CHECK(back.chosen == rec.chosen);
            CHECK(back.rejected == rec.rejected);
        }
    }
}

TEST_CASE("pairwise preference model") {
    const Environment env = linear_env(4, 4, 3, 31);
    Rng rng(32);

    SUBCASE("zero parameters predict one half") {
        PairwisePrefModel zero;
        zero.kind = RewardModel::Kind::linear;
        zero.theta.assign(env.feature_dim(), 0.0);
        CHECK(pairwise_pref_predict(env, zero, 0, 0, 1) == 0.5);
    }

    SUBCASE("pairwise gradient matches finite differences") {
        Policy behavior = uniform_policy(env);
        Rng sample_rng(33);
        const auto offline = sample_offline_dataset(env, behavior, behavior, 50, sample_rng);
        std::vector<PairInstance> instances;
        for (const auto& rec : offline.records) {
            instances.push_back(format_pair_instance(rec, sample_rng));
        }
        PairwisePrefModel m;
        m.kind = RewardModel::Kind::linear;
        m.theta.assign(env.feature_dim(), 0.0);
        for (auto& v : m.theta) v = rng.normal();

        const auto analytic = pairwise_nll_grad(env, m, instances);
        const auto numeric = fd_gradient(
            [&](std::span<const double> p) {
                return pairwise_nll(env, pairwise_with_params(m, p), instances);
            },
            flatten(m));
        CHECK(rel_err_inf(analytic, numeric) <= 1e-5);
    }

    SUBCASE("swap consistency is exact for random parameters") {
        PairwisePrefModel m;
        m.kind = RewardModel::Kind::linear;
        m.theta.assign(env.feature_dim(), 0.0);
        for (auto& v : m.theta) v = rng.normal();
        for (int i = 0; i < 10000; ++i) {
            const PromptIndex x = rng.uniform_index(env.n_prompts());
            ResponseIndex a = rng.uniform_index(env.n_responses(x));
            ResponseIndex b = rng.uniform_index(env.n_responses(x));
            if (a == b) b = (b + 1) % env.n_responses(x);
            const double p = pairwise_pref_predict(env, m, x, a, b);
            const double q = pairwise_pref_predict(env, m, x, b, a);
            CHECK(p + q == 1.0);
            CHECK(p > 0.0);
            CHECK(p < 1.0);
        }
    }

    SUBCASE("pairwise and BT models agree on held-out pair orderings") {
        Policy behavior = uniform_policy(env);
        Rng sample_rng(34);
        const auto train = sample_offline_dataset(env, behavior, behavior, 4000, sample_rng);

        std::vector<PairInstance> instances;
        Rng fmt_rng(35);
        for (const auto& rec : train.records) {
            instances.push_back(format_pair_instance(rec, fmt_rng));
        }

        OptimOpts opts;
        opts.step_size = 2.0;
        opts.max_iters = 20000;
        opts.tolerance = 1e-8;
        const auto pw = fit_pairwise_pref_model(env, instances, RewardModel::Kind::linear, opts);
        const auto bt = fit_bt_reward(env, train.records, RewardModel::Kind::linear, opts);

        int agree = 0, total = 0;
        double max_gap = 0.0;
        for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
            for (ResponseIndex a = 0; a < env.n_responses(x); ++a) {
                for (ResponseIndex b = a + 1; b < env.n_responses(x); ++b) {
                    const double p_pw = pairwise_pref_predict(env, pw.model, x, a, b);
                    const double p_bt = reward_pref_prob(env, bt.model, x, a, b);
                    agree += (p_pw > 0.5) == (p_bt > 0.5) ? 1 : 0;
                    ++total;
                    max_gap = std::max(max_gap, std::abs(p_pw - p_bt));
                }
            }
        }
        CHECK(static_cast<double>(agree) / total >= 0.95);
        CHECK(max_gap <= 0.05);
    }

    SUBCASE("missing features are a mode error") {
        const Environment tab = random_env(2, 3, 36);
        std::vector<PairInstance> one{{0, 0, 1, true, false}};
        OptimOpts opts;
        CHECK_THROWS_AS(fit_pairwise_pref_model(tab, one, RewardModel::Kind::linear, opts),
                        ModeError);
    }
}

TEST_CASE("length-reward correlation audit") {
    const Environment env = random_env(30, 6, 55);
    const Policy policy = uniform_policy(env);

    SUBCASE("reward equal to length correlates perfectly") {
        Rng rng(56);
        const ScoreFn len_score = [&env](PromptIndex x, ResponseIndex a) {
            return static_cast<double>(env.length(x, a));
        };
        const auto report = length_reward_correlation(env, len_score, policy, 200, 8, rng);
        CHECK(report.n_defined > 0);
        CHECK(report.mean_r == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("length-independent reward centers near zero") {
        Rng rng(57);
        // Scores drawn fresh per call: statistically independent of length.
        auto noise = std::make_shared<Rng>(58);
        const ScoreFn indep = [noise](PromptIndex, ResponseIndex) { return noise->normal(); };
        const auto report = length_reward_correlation(env, indep, policy, 2000, 8, rng);
        CHECK(std::abs(report.mean_r) <= 0.05);
    }
    SUBCASE("constant reward reports every coefficient missing") {
        Rng rng(59);
        const ScoreFn flat = [](PromptIndex, ResponseIndex) { return 1.0; };
        const auto report = length_reward_correlation(env, flat, policy, 100, 8, rng);
        CHECK(report.n_defined == 0);
        CHECK(report.n_missing == 100);
        for (const auto& row : report.rows) CHECK(!row.pearson_r.has_value());
    }
    SUBCASE("fewer than two samples per prompt is an argument error") {
        Rng rng(60);
        CHECK_THROWS_AS(
            length_reward_correlation(env, true_reward_fn(env), policy, 10, 1, rng),
            ArgumentError);
    }
    SUBCASE("csv serialization carries the documented columns") {
        Rng rng(61);
        const auto report = length_reward_correlation(env, true_reward_fn(env), policy, 5, 8, rng);
        std::ostringstream os;
        report.write_csv(os);
        const std::string text = os.str();
        CHECK(text.rfind("prompt_id,mean_length,pearson_r,n_missing\n", 0) == 0);
        CHECK(std::count(text.begin(), text.end(), '\n') == 6);
    }
}

TEST_CASE("linear bt fits from different starts coincide under regularization") {
    // Convexity invariant: in linear mode the regularized NLL has a unique
    // optimum, so any two starts land on the same parameters.
    const Environment env = linear_env(4, 4, 3, 71);
    Rng rng(72);
    const auto data = random_records(env, 300, rng);

    OptimOpts opts;
    opts.step_size = 1.0;
    opts.max_iters = 30000;
    opts.tolerance = 1e-8;
    opts.l2_reg = 1e-6;

    const auto from_zero = fit_bt_reward(env, data, RewardModel::Kind::linear, opts);
    REQUIRE(from_zero.converged);

    RewardModel warm = random_model(env, RewardModel::Kind::linear, rng);
    const LossFn loss = [&](std::span<const double> p) {
        return bt_nll(env, with_params(warm, p), data);
    };
    const GradFn grad = [&](std::span<const double> p) {
        return bt_nll_grad(env, with_params(warm, p), data);
    };
    const OptimResult res = minimize(flatten(warm), loss, grad, opts);
    REQUIRE(res.converged);

    const auto a = flatten(from_zero.model);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::abs(a[i] - res.params[i]) <= 1e-5);
    }
}
