#include "rlhf_lab/env.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rlhf_lab/policy.hpp"

namespace rlhf_lab {

std::optional<PromptIndex> Environment::find_prompt(std::string_view id) const {
    for (std::size_t i = 0; i < prompt_ids.size(); ++i) {
        if (prompt_ids[i] == id) return i;
    }
    return std::nullopt;
}

std::optional<ResponseIndex> Environment::find_response(PromptIndex x, std::string_view id) const {
    check_prompt(x);
    const auto& ids = response_ids[x];
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] == id) return i;
    }
    return std::nullopt;
}

void Environment::check_prompt(PromptIndex x) const {
    if (x >= n_prompts()) {
        throw LookupError("unknown prompt index " + std::to_string(x));
    }
}

void Environment::check_pair(PromptIndex x, ResponseIndex a1, ResponseIndex a2) const {
    check_prompt(x);
    const std::size_t k = n_responses(x);
    if (a1 >= k || a2 >= k) {
        throw LookupError("unknown response index for prompt " + prompt_ids[x]);
    }
}

void Environment::validate() const {
    if (prompt_ids.empty()) throw ConfigError("environment has no prompts");
    if (prompt_dist.size() != prompt_ids.size()) {
        throw ConfigError("prompt_dist size mismatch");
    }
    double total = 0.0;
    for (const double p : prompt_dist) {
        if (p < 0.0 || !std::isfinite(p)) throw ConfigError("prompt_dist entry invalid");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) {
        throw ConfigError("prompt_dist does not sum to 1");
    }
    for (PromptIndex x = 0; x < n_prompts(); ++x) {
        if (response_ids[x].size() < 2) {
            throw ConfigError("prompt " + prompt_ids[x] + " has fewer than 2 responses");
        }
        if (true_reward[x].size() != response_ids[x].size() ||
            lengths[x].size() != response_ids[x].size()) {
            throw ConfigError("per-response table size mismatch at prompt " + prompt_ids[x]);
        }
        for (const double r : true_reward[x]) {
            if (!std::isfinite(r)) throw ConfigError("non-finite reward");
        }
        for (const int len : lengths[x]) {
            if (len < 0) throw ConfigError("negative response length");
        }
    }
    if (linear_mode()) {
        const std::size_t d = feature_dim();
        if (features.size() != n_prompts()) throw ConfigError("feature table size mismatch");
        for (PromptIndex x = 0; x < n_prompts(); ++x) {
            if (features[x].size() != n_responses(x)) {
                throw ConfigError("feature table size mismatch at prompt " + prompt_ids[x]);
            }
            for (ResponseIndex a = 0; a < n_responses(x); ++a) {
                if (features[x][a].size() != d) {
                    throw ConfigError("feature dimension mismatch at (" + prompt_ids[x] + "," +
                                      response_ids[x][a] + ")");
                }
                // Tabular rewards are authoritative; the linear form must
                // reproduce them.
                double dot = 0.0;
                for (std::size_t i = 0; i < d; ++i) dot += theta_star[i] * features[x][a][i];
                if (std::abs(dot - true_reward[x][a]) > 1e-12) {
                    throw ConfigError("linear and tabular rewards disagree");
                }
            }
        }
    } else if (!features.empty()) {
        throw ConfigError("features present without a generating weight vector");
    }
}

Environment make_synthetic_env(const EnvSpec& spec, std::uint64_t seed) {
    if (spec.n_prompts < 1) throw ConfigError("env spec: n_prompts must be >= 1");
    if (spec.n_responses < 2) throw ConfigError("env spec: n_responses must be >= 2");
    if (spec.reward.kind == RewardGenKind::linear && spec.reward.dim < 1) {
        throw ConfigError("env spec: linear mode requires feature dimension >= 1");
    }
    if (spec.length.min_len < 0 || spec.length.max_len < spec.length.min_len) {
        throw ConfigError("env spec: invalid length range");
    }

    Rng rng(stream_seed(seed, "env-gen"));
    Environment env;
    const std::size_t np = static_cast<std::size_t>(spec.n_prompts);
    const std::size_t nr = static_cast<std::size_t>(spec.n_responses);

    env.prompt_ids.reserve(np);
    for (std::size_t x = 0; x < np; ++x) env.prompt_ids.push_back("p" + std::to_string(x));

    env.prompt_dist.assign(np, 1.0 / static_cast<double>(np));
    if (spec.prompt_dist == PromptDistKind::random) {
        // Dirichlet(1): normalized exponentials. Renormalize so the sum is
        // exactly 1 up to one final rounding.
        double total = 0.0;
        for (std::size_t x = 0; x < np; ++x) {
            env.prompt_dist[x] = -std::log(1.0 - rng.uniform());
            total += env.prompt_dist[x];
        }
        double acc = 0.0;
        for (std::size_t x = 0; x + 1 < np; ++x) {
            env.prompt_dist[x] /= total;
            acc += env.prompt_dist[x];
        }
        env.prompt_dist[np - 1] = 1.0 - acc;
    }

    env.response_ids.resize(np);
    env.true_reward.resize(np);
    env.lengths.resize(np);
    for (std::size_t x = 0; x < np; ++x) {
        for (std::size_t a = 0; a < nr; ++a) {
            env.response_ids[x].push_back("a" + std::to_string(a));
            env.lengths[x].push_back(rng.uniform_int(spec.length.min_len, spec.length.max_len));
        }
    }

    switch (spec.reward.kind) {
        case RewardGenKind::constant:
            for (std::size_t x = 0; x < np; ++x) {
                env.true_reward[x].assign(nr, spec.reward.value);
            }
            break;
        case RewardGenKind::gaussian:
            for (std::size_t x = 0; x < np; ++x) {
                for (std::size_t a = 0; a < nr; ++a) {
                    env.true_reward[x].push_back(spec.reward.mean +
                                                 spec.reward.stddev * rng.normal());
                }
            }
            break;
        case RewardGenKind::linear: {
            const std::size_t d = static_cast<std::size_t>(spec.reward.dim);
            // theta* drawn on the sphere of radius norm_bound * u^(1/d),
            // i.e. uniform in the ball: ||theta*|| <= B always holds.
            std::vector<double> theta(d);
            double norm2 = 0.0;
            for (auto& t : theta) {
                t = rng.normal();
                norm2 += t * t;
            }
            const double radius =
                spec.reward.norm_bound *
                std::pow(rng.uniform(), 1.0 / static_cast<double>(d)) / std::sqrt(norm2);
            for (auto& t : theta) t *= radius;
            env.theta_star = theta;

            env.features.resize(np);
            for (std::size_t x = 0; x < np; ++x) {
                for (std::size_t a = 0; a < nr; ++a) {
                    std::vector<double> phi(d);
                    for (auto& v : phi) v = rng.normal();
                    double dot = 0.0;
                    for (std::size_t i = 0; i < d; ++i) dot += theta[i] * phi[i];
                    env.features[x].push_back(std::move(phi));
                    env.true_reward[x].push_back(dot);
                }
            }
            break;
        }
    }

    env.validate();
    return env;
}

double preference_probability(const Environment& env, PromptIndex x, ResponseIndex a1,
                              ResponseIndex a2) {
    env.check_pair(x, a1, a2);
    return stable_sigmoid(env.reward(x, a1) - env.reward(x, a2));
}

PreferenceLabel sample_preference(const Environment& env, PromptIndex x, ResponseIndex a1,
                                  ResponseIndex a2, Rng& rng) {
    const double p = preference_probability(env, x, a1, a2);
    return PreferenceLabel{rng.bernoulli(p) ? 1 : 0};
}

OfflineDataset sample_offline_dataset(const Environment& env, const Policy& behavior1,
                                      const Policy& behavior2, std::size_t m, Rng& rng,
                                      int max_retries) {
    OfflineDataset out;
    out.records.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        const PromptIndex x = sample_prompt(env, rng);
        ResponseIndex a1 = sample_response(behavior1, x, rng);
        ResponseIndex a2 = sample_response(behavior2, x, rng);
        int tries = 0;
        while (a1 == a2 && tries < max_retries) {
            a1 = sample_response(behavior1, x, rng);
            a2 = sample_response(behavior2, x, rng);
            ++tries;
        }
        if (a1 == a2) {
            ++out.skipped;
            continue;
        }
        const PreferenceLabel y = sample_preference(env, x, a1, a2, rng);
        PreferenceRecord rec;
        rec.prompt = x;
        rec.chosen = y.y == 1 ? a1 : a2;
        rec.rejected = y.y == 1 ? a2 : a1;
        rec.meta = RecordMeta{0, "offline"};
        out.records.push_back(std::move(rec));
    }
    return out;
}

}  // namespace rlhf_lab
