#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "rlhf_lab/env.hpp"
#include "rlhf_lab/optim.hpp"
#include "rlhf_lab/policy.hpp"

namespace rlhf_lab {

// Learned reward: a score table over (prompt, response), or a weight vector
// over the environment's feature map.
struct RewardModel {
    enum class Kind { tabular, linear };

    Kind kind = Kind::tabular;
    std::vector<std::vector<double>> table;  // tabular
    std::vector<double> theta;               // linear

    double score(const Environment& env, PromptIndex x, ResponseIndex a) const;
    ScoreFn score_fn(const Environment& env) const;
};

RewardModel zero_reward_model(const Environment& env, RewardModel::Kind kind);

// Parameter packing for the optimizer and for finite-difference checks.
// Tabular: per-prompt score rows concatenated prompt-major. Linear: theta.
std::vector<double> flatten(const RewardModel& model);
RewardModel with_params(const RewardModel& like, std::span<const double> params);
void assign_params(RewardModel& model, std::span<const double> params);

// Mean Bradley-Terry negative log-likelihood over the records:
// mean_i w_i * -log sigma(s(x,chosen) - s(x,rejected)) / mean weight.
// `weights` may be empty (all ones). Empty data is an argument error.
double bt_nll(const Environment& env, const RewardModel& model,
              std::span<const PreferenceRecord> data, std::span<const double> weights = {});

// Gradient of bt_nll with respect to flatten(model).
std::vector<double> bt_nll_grad(const Environment& env, const RewardModel& model,
                                std::span<const PreferenceRecord> data,
                                std::span<const double> weights = {});

template <typename ModelT>
struct FitResult {
    ModelT model;
    bool converged = false;
    int iterations = 0;
    double final_loss = 0.0;
    double grad_sup_norm = 0.0;
};

// Maximum likelihood fit of the BT reward by full-batch gradient descent.
FitResult<RewardModel> fit_bt_reward(const Environment& env,
                                     std::span<const PreferenceRecord> data,
                                     RewardModel::Kind kind, const OptimOpts& opts,
                                     std::span<const double> weights = {});

// Preference probability under the learned reward; exactly antisymmetric,
// like the oracle.
double reward_pref_prob(const Environment& env, const RewardModel& model, PromptIndex x,
                        ResponseIndex a1, ResponseIndex a2);

// A preference record formatted for pairwise preference modeling: the two
// responses in slot order, the winning slot, and whether the chosen
// response was swapped into slot B.
struct PairInstance {
    PromptIndex prompt = 0;
    ResponseIndex response_a = 0;
    ResponseIndex response_b = 0;
    bool label_a = true;  // true: slot A preferred
    bool swapped = false;
};

// Randomizes response order: with probability 1/2 the chosen response takes
// slot A (label A), otherwise slot B (label B).
PairInstance format_pair_instance(const PreferenceRecord& rec, Rng& rng);

// Inverse of the formatting step; recovers (prompt, chosen, rejected).
PreferenceRecord unswap_pair_instance(const PairInstance& inst);

// Logistic model over pairwise difference features
// psi(x, a_A, a_B) = phi(x,a_A) - phi(x,a_B) (linear mode) or the
// one-hot-difference analog (tabular mode). Predictions are symmetrized
// over both slot orders, so swap-consistency holds exactly.
struct PairwisePrefModel {
    RewardModel::Kind kind = RewardModel::Kind::tabular;
    std::vector<std::vector<double>> table;
    std::vector<double> theta;

    // z = <w, psi(x, aA, aB)>, the log-odds of decoding label A.
    double slot_margin(const Environment& env, PromptIndex x, ResponseIndex slot_a,
                       ResponseIndex slot_b) const;
};

std::vector<double> flatten(const PairwisePrefModel& model);
PairwisePrefModel pairwise_with_params(const PairwisePrefModel& like,
                                       std::span<const double> params);
void assign_pairwise_params(PairwisePrefModel& model, std::span<const double> params);

double pairwise_nll(const Environment& env, const PairwisePrefModel& model,
                    std::span<const PairInstance> data);

std::vector<double> pairwise_nll_grad(const Environment& env, const PairwisePrefModel& model,
                                      std::span<const PairInstance> data);

FitResult<PairwisePrefModel> fit_pairwise_pref_model(const Environment& env,
                                                     std::span<const PairInstance> data,
                                                     RewardModel::Kind kind,
                                                     const OptimOpts& opts);

// P(a1 > a2 | x): the model is evaluated with a1 in slot A and again with
// the slots swapped; each order is scored as p_A/(p_A + p_B) and the two
// are averaged.
double pairwise_pref_predict(const Environment& env, const PairwisePrefModel& model,
                             PromptIndex x, ResponseIndex a1, ResponseIndex a2);

struct CorrelationRow {
    std::string prompt_id;
    double mean_length = 0.0;
    std::optional<double> pearson_r;  // missing when either variable is constant
};

struct CorrelationReport {
    std::vector<CorrelationRow> rows;
    double mean_r = 0.0;  // over defined coefficients
    int n_defined = 0;
    int n_missing = 0;
    std::array<int, 20> histogram{};  // coefficient counts over [-1, 1]

    // Columns: prompt_id, mean_length, pearson_r, n_missing.
    void write_csv(std::ostream& os) const;
};

// Length-bias audit: for each of n_prompts draws from d0, sample n_resp
// responses from the policy and correlate the scorer against response
// length.
CorrelationReport length_reward_correlation(const Environment& env, const ScoreFn& scorer,
                                            const Policy& policy, std::size_t n_prompts,
                                            std::size_t n_resp, Rng& rng);

}  // namespace rlhf_lab
