#include "rlhf_lab/reward_model.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "rlhf_lab/csv.hpp"

namespace rlhf_lab {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

void require_nonempty(std::span<const PreferenceRecord> data) {
    if (data.empty()) throw ArgumentError("preference dataset is empty");
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

}  // namespace

double RewardModel::score(const Environment& env, PromptIndex x, ResponseIndex a) const {
    if (kind == Kind::tabular) {
        return table[x][a];
    }
    return dot(theta, env.feature(x, a));
}

ScoreFn RewardModel::score_fn(const Environment& env) const {
    return [this, &env](PromptIndex x, ResponseIndex a) { return score(env, x, a); };
}

RewardModel zero_reward_model(const Environment& env, RewardModel::Kind kind) {
    RewardModel m;
    m.kind = kind;
    if (kind == RewardModel::Kind::tabular) {
        m.table.resize(env.n_prompts());
        for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
            m.table[x].assign(env.n_responses(x), 0.0);
        }
    } else {
        if (!env.linear_mode()) {
            throw ModeError("linear reward model requires an environment with features");
        }
        m.theta.assign(env.feature_dim(), 0.0);
    }
    return m;
}

std::vector<double> flatten(const RewardModel& model) {
    if (model.kind == RewardModel::Kind::linear) return model.theta;
    std::vector<double> out;
    for (const auto& row : model.table) out.insert(out.end(), row.begin(), row.end());
    return out;
}

void assign_params(RewardModel& model, std::span<const double> params) {
    if (model.kind == RewardModel::Kind::linear) {
        model.theta.assign(params.begin(), params.end());
        return;
    }
    std::size_t i = 0;
    for (auto& row : model.table) {
        for (auto& v : row) v = params[i++];
    }
}

RewardModel with_params(const RewardModel& like, std::span<const double> params) {
    RewardModel m = like;
    assign_params(m, params);
    return m;
}

double bt_nll(const Environment& env, const RewardModel& model,
              std::span<const PreferenceRecord> data, std::span<const double> weights) {
    require_nonempty(data);
    double acc = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& rec = data[i];
        env.check_pair(rec.prompt, rec.chosen, rec.rejected);
        const double margin =
            model.score(env, rec.prompt, rec.chosen) - model.score(env, rec.prompt, rec.rejected);
        acc += weight_at(weights, i) * log_sigmoid_neg(margin);
    }
    return acc / total_weight(weights, data.size());
}

std::vector<double> bt_nll_grad(const Environment& env, const RewardModel& model,
                                std::span<const PreferenceRecord> data,
                                std::span<const double> weights) {
    require_nonempty(data);
    const double denom = total_weight(weights, data.size());

    if (model.kind == RewardModel::Kind::linear) {
        std::vector<double> g(model.theta.size(), 0.0);
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto& rec = data[i];
            const auto& fw = env.feature(rec.prompt, rec.chosen);
            const auto& fl = env.feature(rec.prompt, rec.rejected);
            const double margin = dot(model.theta, fw) - dot(model.theta, fl);
            // d/dmargin of -log sigma(margin) is -sigma(-margin).
            const double coef = -stable_sigmoid(-margin) * weight_at(weights, i) / denom;
            for (std::size_t k = 0; k < g.size(); ++k) g[k] += coef * (fw[k] - fl[k]);
        }
        return g;
    }

    // Tabular: gradient laid out like flatten(model).
    std::vector<std::size_t> offset(env.n_prompts(), 0);
    std::size_t total = 0;
    for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
        offset[x] = total;
        total += env.n_responses(x);
    }
    std::vector<double> g(total, 0.0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& rec = data[i];
        const double margin = model.table[rec.prompt][rec.chosen] -
                              model.table[rec.prompt][rec.rejected];
        const double coef = -stable_sigmoid(-margin) * weight_at(weights, i) / denom;
        g[offset[rec.prompt] + rec.chosen] += coef;
        g[offset[rec.prompt] + rec.rejected] -= coef;
    }
    return g;
}

FitResult<RewardModel> fit_bt_reward(const Environment& env,
                                     std::span<const PreferenceRecord> data,
                                     RewardModel::Kind kind, const OptimOpts& opts,
                                     std::span<const double> weights) {
    require_nonempty(data);
    RewardModel scratch = zero_reward_model(env, kind);

    const LossFn loss = [&](std::span<const double> p) {
        assign_params(scratch, p);
        return bt_nll(env, scratch, data, weights);
    };
    const GradFn grad = [&](std::span<const double> p) {
        assign_params(scratch, p);
        return bt_nll_grad(env, scratch, data, weights);
    };

    OptimResult res = minimize(flatten(scratch), loss, grad, opts);
    const RewardModel shape = zero_reward_model(env, kind);
    FitResult<RewardModel> out;
    out.model = with_params(shape, res.params);
    out.converged = res.converged;
    out.iterations = res.iterations;
    out.final_loss = res.final_loss;
    out.grad_sup_norm = res.grad_sup_norm;
    return out;
}

double reward_pref_prob(const Environment& env, const RewardModel& model, PromptIndex x,
                        ResponseIndex a1, ResponseIndex a2) {
    env.check_pair(x, a1, a2);
    return stable_sigmoid(model.score(env, x, a1) - model.score(env, x, a2));
}

PairInstance format_pair_instance(const PreferenceRecord& rec, Rng& rng) {
    PairInstance inst;
    inst.prompt = rec.prompt;
    if (rng.bernoulli(0.5)) {
        inst.response_a = rec.rejected;
        inst.response_b = rec.chosen;
        inst.label_a = false;
        inst.swapped = true;
    } else {
        inst.response_a = rec.chosen;
        inst.response_b = rec.rejected;
        inst.label_a = true;
        inst.swapped = false;
    }
    return inst;
}

PreferenceRecord unswap_pair_instance(const PairInstance& inst) {
    PreferenceRecord rec;
    rec.prompt = inst.prompt;
    rec.chosen = inst.label_a ? inst.response_a : inst.response_b;
    rec.rejected = inst.label_a ? inst.response_b : inst.response_a;
    return rec;
}

double PairwisePrefModel::slot_margin(const Environment& env, PromptIndex x,
                                      ResponseIndex slot_a, ResponseIndex slot_b) const {
    if (kind == RewardModel::Kind::tabular) {
        return table[x][slot_a] - table[x][slot_b];
    }
    return dot(theta, env.feature(x, slot_a)) - dot(theta, env.feature(x, slot_b));
}

std::vector<double> flatten(const PairwisePrefModel& model) {
    if (model.kind == RewardModel::Kind::linear) return model.theta;
    std::vector<double> out;
    for (const auto& row : model.table) out.insert(out.end(), row.begin(), row.end());
    return out;
}

void assign_pairwise_params(PairwisePrefModel& model, std::span<const double> params) {
    if (model.kind == RewardModel::Kind::linear) {
        model.theta.assign(params.begin(), params.end());
        return;
    }
    std::size_t i = 0;
    for (auto& row : model.table) {
        for (auto& v : row) v = params[i++];
    }
}

PairwisePrefModel pairwise_with_params(const PairwisePrefModel& like,
                                       std::span<const double> params) {
    PairwisePrefModel m = like;
    assign_pairwise_params(m, params);
    return m;
}

namespace {

PairwisePrefModel zero_pairwise_model(const Environment& env, RewardModel::Kind kind) {
    PairwisePrefModel m;
    m.kind = kind;
    if (kind == RewardModel::Kind::tabular) {
        m.table.resize(env.n_prompts());
        for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
            m.table[x].assign(env.n_responses(x), 0.0);
        }
    } else {
        if (!env.linear_mode()) {
            throw ModeError("linear pairwise model requires an environment with features");
        }
        if (env.feature_dim() == 0) {
            throw ConfigError("pairwise model: feature dimension is zero");
        }
        m.theta.assign(env.feature_dim(), 0.0);
    }
    return m;
}

}  // namespace

double pairwise_nll(const Environment& env, const PairwisePrefModel& model,
                    std::span<const PairInstance> data) {
    if (data.empty()) throw ArgumentError("pairwise dataset is empty");
    double acc = 0.0;
    for (const auto& inst : data) {
        const double z = model.slot_margin(env, inst.prompt, inst.response_a, inst.response_b);
        acc += log_sigmoid_neg(inst.label_a ? z : -z);
    }
    return acc / static_cast<double>(data.size());
}

std::vector<double> pairwise_nll_grad(const Environment& env, const PairwisePrefModel& model,
                                      std::span<const PairInstance> data) {
    if (data.empty()) throw ArgumentError("pairwise dataset is empty");
    const double denom = static_cast<double>(data.size());

    if (model.kind == RewardModel::Kind::linear) {
        std::vector<double> g(model.theta.size(), 0.0);
        for (const auto& inst : data) {
            const auto& fa = env.feature(inst.prompt, inst.response_a);
            const auto& fb = env.feature(inst.prompt, inst.response_b);
            const double z = model.slot_margin(env, inst.prompt, inst.response_a, inst.response_b);
            const double sign = inst.label_a ? 1.0 : -1.0;
            const double coef = -sign * stable_sigmoid(-sign * z) / denom;
            for (std::size_t k = 0; k < g.size(); ++k) g[k] += coef * (fa[k] - fb[k]);
        }
        return g;
    }

    std::vector<std::size_t> offset(env.n_prompts(), 0);
    std::size_t total = 0;
    for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
        offset[x] = total;
        total += env.n_responses(x);
    }
    std::vector<double> g(total, 0.0);
    for (const auto& inst : data) {
        const double z = model.slot_margin(env, inst.prompt, inst.response_a, inst.response_b);
        const double sign = inst.label_a ? 1.0 : -1.0;
        const double coef = -sign * stable_sigmoid(-sign * z) / denom;
        g[offset[inst.prompt] + inst.response_a] += coef;
        g[offset[inst.prompt] + inst.response_b] -= coef;
    }
    return g;
}

FitResult<PairwisePrefModel> fit_pairwise_pref_model(const Environment& env,
                                                     std::span<const PairInstance> data,
                                                     RewardModel::Kind kind,
                                                     const OptimOpts& opts) {
    if (data.empty()) throw ArgumentError("pairwise dataset is empty");
    PairwisePrefModel scratch = zero_pairwise_model(env, kind);

    const LossFn loss = [&](std::span<const double> p) {
        assign_pairwise_params(scratch, p);
        return pairwise_nll(env, scratch, data);
    };
    const GradFn grad = [&](std::span<const double> p) {
        assign_pairwise_params(scratch, p);
        return pairwise_nll_grad(env, scratch, data);
    };

    OptimResult res = minimize(flatten(scratch), loss, grad, opts);
    const PairwisePrefModel shape = zero_pairwise_model(env, kind);
    FitResult<PairwisePrefModel> out;
    out.model = pairwise_with_params(shape, res.params);
    out.converged = res.converged;
    out.iterations = res.iterations;
    out.final_loss = res.final_loss;
    out.grad_sup_norm = res.grad_sup_norm;
    return out;
}

double pairwise_pref_predict(const Environment& env, const PairwisePrefModel& model,
                             PromptIndex x, ResponseIndex a1, ResponseIndex a2) {
    env.check_pair(x, a1, a2);
    // Order 1: a1 in slot A. p_A + p_B is exactly 1 under the logistic
    // link, so the p_A/(p_A+p_B) scoring rule divides by exactly 1.0.
    const double pa_1 = stable_sigmoid(model.slot_margin(env, x, a1, a2));
    const double p1 = pa_1 / (pa_1 + (1.0 - pa_1));
    // Order 2: slots swapped; a1 now decodes as label B.
    const double pa_2 = stable_sigmoid(model.slot_margin(env, x, a2, a1));
    const double pb_2 = 1.0 - pa_2;
    const double p2 = pb_2 / (pa_2 + pb_2);
    return 0.5 * (p1 + p2);
}

void CorrelationReport::write_csv(std::ostream& os) const {
    os << "prompt_id,mean_length,pearson_r,n_missing\n";
    for (const auto& row : rows) {
        os << row.prompt_id << ',' << csv_double(row.mean_length) << ',';
        if (row.pearson_r.has_value()) {
            os << csv_double(*row.pearson_r) << ",0\n";
        } else {
            os << ",1\n";
        }
    }
}

CorrelationReport length_reward_correlation(const Environment& env, const ScoreFn& scorer,
                                            const Policy& policy, std::size_t n_prompts,
                                            std::size_t n_resp, Rng& rng) {
    if (n_resp < 2) throw ArgumentError("length_reward_correlation: n_resp must be >= 2");

    CorrelationReport report;
    report.rows.reserve(n_prompts);
    double r_sum = 0.0;

    for (std::size_t i = 0; i < n_prompts; ++i) {
        const PromptIndex x = sample_prompt(env, rng);
        std::vector<double> scores(n_resp);
        std::vector<double> lens(n_resp);
        for (std::size_t j = 0; j < n_resp; ++j) {
            const ResponseIndex a = sample_response(policy, x, rng);
            scores[j] = scorer(x, a);
            lens[j] = static_cast<double>(env.length(x, a));
        }
        double ms = 0.0, ml = 0.0;
        for (std::size_t j = 0; j < n_resp; ++j) {
            ms += scores[j];
            ml += lens[j];
        }
        ms /= static_cast<double>(n_resp);
        ml /= static_cast<double>(n_resp);
        double css = 0.0, cll = 0.0, csl = 0.0;
        for (std::size_t j = 0; j < n_resp; ++j) {
            css += (scores[j] - ms) * (scores[j] - ms);
            cll += (lens[j] - ml) * (lens[j] - ml);
            csl += (scores[j] - ms) * (lens[j] - ml);
        }

        CorrelationRow row;
        row.prompt_id = env.prompt_ids[x];
        row.mean_length = ml;
        if (css > 0.0 && cll > 0.0) {
            const double r = csl / std::sqrt(css * cll);
            row.pearson_r = r;
            r_sum += r;
            ++report.n_defined;
            const int bin = std::clamp(static_cast<int>((r + 1.0) * 10.0), 0, 19);
            ++report.histogram[static_cast<std::size_t>(bin)];
        } else {
            ++report.n_missing;
        }
        report.rows.push_back(std::move(row));
    }

    report.mean_r = report.n_defined > 0 ? r_sum / report.n_defined : 0.0;
    return report;
}

}  // namespace rlhf_lab
