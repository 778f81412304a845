#include <doctest.h>

#include <cmath>

#include "rlhf_lab/env.hpp"
#include "rlhf_lab/policy.hpp"

using namespace rlhf_lab;

namespace {

EnvSpec gaussian_spec(int prompts, int responses, double stddev = 1.0) {
    EnvSpec spec;
    spec.n_prompts = prompts;
    spec.n_responses = responses;
    spec.reward.kind = RewardGenKind::gaussian;
    spec.reward.stddev = stddev;
    return spec;
}

}  // namespace

TEST_CASE("degenerate spec yields uniform d0 and equal rewards") {
    EnvSpec spec;
    spec.n_prompts = 1;
    spec.n_responses = 2;
    spec.reward.kind = RewardGenKind::constant;
    spec.reward.value = 0.0;

    const Environment env = make_synthetic_env(spec, 7);
    CHECK(env.n_prompts() == 1);
    CHECK(env.prompt_dist[0] == 1.0);
    CHECK(env.reward(0, 0) == 0.0);
    CHECK(env.reward(0, 1) == 0.0);
}

TEST_CASE("same spec and seed give bitwise-identical environments") {
    const EnvSpec spec = gaussian_spec(5, 4);
    const Environment a = make_synthetic_env(spec, 123);
    const Environment b = make_synthetic_env(spec, 123);
    CHECK(a.prompt_ids == b.prompt_ids);
    CHECK(a.prompt_dist == b.prompt_dist);
    CHECK(a.true_reward == b.true_reward);
    CHECK(a.lengths == b.lengths);

    const Environment c = make_synthetic_env(spec, 124);
    CHECK(a.true_reward != c.true_reward);
}

TEST_CASE("linear mode generates bounded theta and consistent rewards") {
    EnvSpec spec = gaussian_spec(6, 4);
    spec.reward.kind = RewardGenKind::linear;
    spec.reward.dim = 4;
    spec.reward.norm_bound = 1.0;

    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Environment env = make_synthetic_env(spec, seed);
        REQUIRE(env.linear_mode());
        double norm2 = 0.0;
        for (const double t : env.theta_star) norm2 += t * t;
        CHECK(std::sqrt(norm2) <= 1.0);
        for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
            for (ResponseIndex a = 0; a < env.n_responses(x); ++a) {
                double phi2 = 0.0;
                for (const double v : env.feature(x, a)) phi2 += v * v;
                CHECK(std::isfinite(phi2));
                // validate() already pins <theta, phi> == r within 1e-12.
            }
        }
    }
}

TEST_CASE("invalid specs are configuration errors") {
    EnvSpec spec = gaussian_spec(0, 2);
    CHECK_THROWS_AS(make_synthetic_env(spec, 1), ConfigError);

    spec = gaussian_spec(2, 1);
    CHECK_THROWS_AS(make_synthetic_env(spec, 1), ConfigError);

    spec = gaussian_spec(2, 2);
    spec.reward.kind = RewardGenKind::linear;
    spec.reward.dim = 0;
    CHECK_THROWS_AS(make_synthetic_env(spec, 1), ConfigError);
}

TEST_CASE("preference probability closed forms") {
    EnvSpec spec;
    spec.n_prompts = 1;
    spec.n_responses = 3;
    spec.reward.kind = RewardGenKind::constant;
    Environment env = make_synthetic_env(spec, 0);

    SUBCASE("equal rewards give exactly one half") {
        CHECK(preference_probability(env, 0, 0, 1) == 0.5);
    }
    SUBCASE("gap of ln 3 gives 3/4") {
        env.true_reward[0] = {std::log(3.0), 0.0, 0.0};
        CHECK(preference_probability(env, 0, 0, 1) == doctest::Approx(0.75).epsilon(1e-12));
    }
    SUBCASE("gap of 20 saturates") {
        env.true_reward[0] = {20.0, 0.0, 0.0};
        CHECK(preference_probability(env, 0, 0, 1) == doctest::Approx(1.0).epsilon(1e-8));
    }
    SUBCASE("unknown ids are lookup errors") {
        CHECK_THROWS_AS(preference_probability(env, 5, 0, 1), LookupError);
        CHECK_THROWS_AS(preference_probability(env, 0, 0, 9), LookupError);
    }
}

TEST_CASE("oracle antisymmetry is exact and monotone") {
    const Environment env = make_synthetic_env(gaussian_spec(6, 5), 42);
    for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
        for (ResponseIndex a = 0; a < env.n_responses(x); ++a) {
            for (ResponseIndex b = 0; b < env.n_responses(x); ++b) {
                const double p = preference_probability(env, x, a, b);
                const double q = preference_probability(env, x, b, a);
                CHECK(p + q == 1.0);  // bitwise, not approximate
                CHECK(p > 0.0);
                CHECK(p < 1.0);
            }
        }
    }

    // Raising r*(x,a1) with r*(x,a2) fixed strictly raises the probability.
    Environment bumped = env;
    bumped.true_reward[0][0] += 0.3;
    CHECK(preference_probability(bumped, 0, 0, 1) > preference_probability(env, 0, 0, 1));
}

TEST_CASE("sampled preferences match the oracle rate") {
    EnvSpec spec;
    spec.n_prompts = 1;
    spec.n_responses = 2;
    spec.reward.kind = RewardGenKind::constant;
    const Environment equal = make_synthetic_env(spec, 0);

    SUBCASE("equal rewards hover at one half") {
        Rng rng(11);
        int ones = 0;
        const int n = 100000;
        for (int i = 0; i < n; ++i) ones += sample_preference(equal, 0, 0, 1, rng).y;
        CHECK(std::abs(static_cast<double>(ones) / n - 0.5) < 0.01);
    }
    SUBCASE("reward gap of 20 saturates the labels") {
        Environment env = equal;
        env.true_reward[0] = {20.0, 0.0};
        Rng rng(12);
        int ones = 0;
        const int n = 10000;
        for (int i = 0; i < n; ++i) ones += sample_preference(env, 0, 0, 1, rng).y;
        CHECK(static_cast<double>(ones) / n >= 0.999);
    }
    SUBCASE("fixed seed reproduces the label sequence") {
        Rng a(5), b(5);
        for (int i = 0; i < 200; ++i) {
            CHECK(sample_preference(equal, 0, 0, 1, a).y == sample_preference(equal, 0, 0, 1, b).y);
        }
    }
}

TEST_CASE("offline dataset collection") {
    SUBCASE("m = 0 gives an empty list") {
        const Environment env = make_synthetic_env(gaussian_spec(2, 3), 1);
        const Policy uniform = uniform_policy(env);
        Rng rng(0);
        const OfflineDataset ds = sample_offline_dataset(env, uniform, uniform, 0, rng);
        CHECK(ds.records.empty());
        CHECK(ds.skipped == 0);
    }

    SUBCASE("equal-reward symmetry: each response chosen about half the time") {
        EnvSpec spec;
        spec.n_prompts = 1;
        spec.n_responses = 2;
        spec.reward.kind = RewardGenKind::constant;
        const Environment env = make_synthetic_env(spec, 0);
        const Policy uniform = uniform_policy(env);
        Rng rng(3);
        const OfflineDataset ds = sample_offline_dataset(env, uniform, uniform, 10000, rng);
        REQUIRE(ds.records.size() > 9000);
        int chose_first = 0;
        for (const auto& rec : ds.records) chose_first += rec.chosen == 0 ? 1 : 0;
        const double freq = static_cast<double>(chose_first) / ds.records.size();
        CHECK(std::abs(freq - 0.5) < 0.02);
    }

    SUBCASE("large reward gap: high-reward response almost always chosen") {
        EnvSpec spec;
        spec.n_prompts = 1;
        spec.n_responses = 2;
        spec.reward.kind = RewardGenKind::constant;
        Environment env = make_synthetic_env(spec, 0);
        env.true_reward[0] = {20.0, 0.0};
        const Policy uniform = uniform_policy(env);
        Rng rng(4);
        const OfflineDataset ds = sample_offline_dataset(env, uniform, uniform, 1000, rng);
        int good = 0;
        for (const auto& rec : ds.records) good += rec.chosen == 0 ? 1 : 0;
        CHECK(static_cast<double>(good) / ds.records.size() >= 0.99);
    }

    SUBCASE("degenerate behavior policy exhausts retries and is counted") {
        const Environment env = make_synthetic_env(gaussian_spec(1, 2), 9);
        Policy point = uniform_policy(env);
        point.logits[0] = {50.0, 0.0};  // effectively deterministic
        Rng rng(5);
        const OfflineDataset ds = sample_offline_dataset(env, point, point, 200, rng);
        CHECK(ds.skipped > 150);
        for (const auto& rec : ds.records) CHECK(rec.chosen != rec.rejected);
        CHECK(ds.records.size() + static_cast<std::size_t>(ds.skipped) == 200);
    }
}
