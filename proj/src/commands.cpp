#include "rlhf_lab/commands.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rlhf_lab/csv.hpp"
#include "rlhf_lab/dpo.hpp"
#include "rlhf_lab/explore.hpp"

namespace rlhf_lab::commands {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

void write_resolved_config(const ExperimentConfig& cfg, const fs::path& out) {
    write_text(out / "config.resolved.json", resolved_json(cfg).dump(2) + "\n");
}

ScoreFn biased(ScoreFn base, const Environment& env, double length_bias) {
    if (length_bias == 0.0) return base;
    return [base = std::move(base), &env, length_bias](PromptIndex x, ResponseIndex a) {
        return base(x, a) + length_bias * static_cast<double>(env.length(x, a));
    };
}

class OwningPointwiseRanker final : public ResponseRanker {
public:
    explicit OwningPointwiseRanker(ScoreFn fn) : fn_(std::move(fn)) {}
    std::vector<double> scores(PromptIndex x,
                               std::span<const ResponseIndex> candidates) const override {
        std::vector<double> out;
        out.reserve(candidates.size());
        for (const ResponseIndex a : candidates) out.push_back(fn_(x, a));
        return out;
    }

private:
    ScoreFn fn_;
};

class OwningTournamentRanker final : public ResponseRanker {
public:
    OwningTournamentRanker(const Environment& env, PairwisePrefModel model, double length_bias)
        : env_(env), model_(std::move(model)), length_bias_(length_bias) {}

    std::vector<double> scores(PromptIndex x,
                               std::span<const ResponseIndex> candidates) const override {
        std::vector<double> out(candidates.size(), 0.0);
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            for (std::size_t j = 0; j < candidates.size(); ++j) {
                if (i == j) continue;
                out[i] += pairwise_pref_predict(env_, model_, x, candidates[i], candidates[j]);
            }
            out[i] += length_bias_ * static_cast<double>(env_.length(x, candidates[i]));
        }
        return out;
    }

private:
    const Environment& env_;
    PairwisePrefModel model_;
    double length_bias_;
};

RewardModel::Kind model_kind_for(const Environment& env) {
    return env.linear_mode() ? RewardModel::Kind::linear : RewardModel::Kind::tabular;
}

MetricRow offline_metric_row(const Environment& env, const Policy& policy, const Policy& ref,
                             const ExperimentConfig& cfg, std::size_t dataset_size) {
    Rng eval_rng = stream_rng(cfg.seed, "loop-eval", 1);
    const Policy optimum = gibbs_policy(env, true_reward_fn(env), ref, cfg.loop.eta);
    MetricRow row;
    row.iteration = 1;
    row.j_true = policy_value(policy, env, ref, cfg.loop.eta);
    row.kl_to_ref = mean_kl(policy, ref, env);
    row.mean_response_length = mean_response_length(policy, env);
    row.dataset_size = dataset_size;
    row.win_rate_vs_ref = win_rate(env, policy, ref,
                                   static_cast<std::size_t>(cfg.loop.validation_evals), eval_rng);
    row.suboptimality_gap = policy_value(optimum, env, ref, cfg.loop.eta) - row.j_true +
                            cfg.loop.eta * mean_kl(optimum, policy, env);
    return row;
}

void write_report_json(const fs::path& out, const PipelineReport& report,
                       const std::string& hash) {
    json j = {{"version", kSchemaVersion},
              {"kind", "pipeline-report"},
              {"config_hash", hash},
              {"iterations", static_cast<int>(report.checkpoints.size())},
              {"best_iteration", report.best_iteration},
              {"best_win_rate", report.best_win_rate},
              {"offline_size", report.offline_size},
              {"dropped_per_iteration", report.dropped_per_iteration}};
    write_text(out / "report.json", j.dump(2) + "\n");
}

void write_pipeline_outputs(const fs::path& out, const Environment& env,
                            const ExperimentConfig& cfg, const PipelineReport& report) {
    ensure_dir(out / "checkpoints");
    write_resolved_config(cfg, out);

    std::ostringstream metrics;
    write_metrics_csv(report.metrics, metrics);
    write_text(out / "metrics.csv", metrics.str());

    const std::string hash = config_hash(cfg);
    for (std::size_t t = 0; t < report.checkpoints.size(); ++t) {
        const Checkpoint ckpt =
            make_checkpoint(env, report.checkpoints[t], static_cast<int>(t + 1), hash);
        save_checkpoint(ckpt, out / "checkpoints" / ("iter_" + std::to_string(t + 1) + ".json"));
    }

    std::ostringstream ds;
    write_dataset_jsonl(env, report.dataset, ds);
    write_text(out / "dataset.jsonl", ds.str());

    write_report_json(out, report, hash);
}

}  // namespace

Environment build_env(const ExperimentConfig& cfg) {
    return make_synthetic_env(cfg.env, stream_seed(cfg.seed, "env"));
}

std::vector<PreferenceRecord> build_offline_dataset(const ExperimentConfig& cfg,
                                                    const Environment& env) {
    if (!cfg.offline.file.empty()) {
        const IngestReport report =
            ingest_preference_file(cfg.offline.file, cfg.offline.margin_threshold);
        if (!report.malformed_lines.empty()) {
            std::ostringstream msg;
            msg << "offline file: " << report.malformed_lines.size() << " malformed line(s):";
            for (const int ln : report.malformed_lines) msg << ' ' << ln;
            std::cerr << msg.str() << '\n';
        }
        return resolve_records(env, report.records);
    }
    if (cfg.offline.size == 0) return {};
    const Policy behavior = uniform_policy(env);
    Rng rng = stream_rng(cfg.seed, "offline");
    return sample_offline_dataset(env, behavior, behavior,
                                  static_cast<std::size_t>(cfg.offline.size), rng)
        .records;
}

std::unique_ptr<ResponseRanker> build_ranker(const ExperimentConfig& cfg, const Environment& env,
                                             std::vector<PreferenceRecord> offline_records) {
    switch (cfg.scorer.mode) {
        case ScorerMode::oracle:
            return std::make_unique<OwningPointwiseRanker>(
                biased(true_reward_fn(env), env, cfg.scorer.length_bias));
        case ScorerMode::fitted_bt: {
            if (offline_records.empty()) {
                throw ConfigError("scorer mode fitted_bt requires offline data");
            }
            auto fit = fit_bt_reward(env, offline_records, model_kind_for(env), cfg.reward_optim);
            auto model = std::make_shared<RewardModel>(std::move(fit.model));
            ScoreFn fn = [model, &env](PromptIndex x, ResponseIndex a) {
                return model->score(env, x, a);
            };
            return std::make_unique<OwningPointwiseRanker>(
                biased(std::move(fn), env, cfg.scorer.length_bias));
        }
        case ScorerMode::fitted_pairwise: {
            if (offline_records.empty()) {
                throw ConfigError("scorer mode fitted_pairwise requires offline data");
            }
            Rng format_rng = stream_rng(cfg.seed, "format");
            std::vector<PairInstance> instances;
            instances.reserve(offline_records.size());
            for (const auto& rec : offline_records) {
                instances.push_back(format_pair_instance(rec, format_rng));
            }
            auto fit = fit_pairwise_pref_model(env, instances, model_kind_for(env), cfg.pref_optim);
            return std::make_unique<OwningTournamentRanker>(env, std::move(fit.model),
                                                            cfg.scorer.length_bias);
        }
    }
    throw ArgumentError("unknown scorer mode");
}

std::string gen_env(const ExperimentConfig& cfg, const fs::path& out) {
    const Environment env = build_env(cfg);
    ensure_dir(out);
    write_resolved_config(cfg, out);
    write_text(out / "env.json", env_to_json(env).dump(2) + "\n");

    std::ostringstream msg;
    msg << "gen-env: " << env.n_prompts() << " prompts, " << env.n_responses(0)
        << " responses/prompt, " << (env.linear_mode() ? "linear" : "tabular") << " rewards -> "
        << (out / "env.json").string();
    return msg.str();
}

std::string fit_reward(const ExperimentConfig& cfg, const fs::path& out) {
    const Environment env = build_env(cfg);
    const std::vector<PreferenceRecord> data = build_offline_dataset(cfg, env);
    if (data.empty()) throw ConfigError("fit-reward requires offline data (offline.size or offline.file)");

    const auto fit = fit_bt_reward(env, data, model_kind_for(env), cfg.reward_optim);
    ensure_dir(out);
    write_resolved_config(cfg, out);
    write_text(out / "reward_model.json", reward_model_to_json(env, fit.model).dump(2) + "\n");

    std::ostringstream msg;
    msg << "fit-reward: " << data.size() << " records, nll=" << csv_double(fit.final_loss)
        << (fit.converged ? "" : " (iteration cap reached)") << " -> "
        << (out / "reward_model.json").string();
    return msg.str();
}

std::string fit_pref_model(const ExperimentConfig& cfg, const fs::path& out) {
    const Environment env = build_env(cfg);
    const std::vector<PreferenceRecord> data = build_offline_dataset(cfg, env);
    if (data.empty()) {
        throw ConfigError("fit-pref-model requires offline data (offline.size or offline.file)");
    }

    Rng format_rng = stream_rng(cfg.seed, "format");
    std::vector<PairInstance> instances;
    instances.reserve(data.size());
    int swapped = 0;
    for (const auto& rec : data) {
        instances.push_back(format_pair_instance(rec, format_rng));
        swapped += instances.back().swapped ? 1 : 0;
    }

    const auto fit = fit_pairwise_pref_model(env, instances, model_kind_for(env), cfg.pref_optim);
    ensure_dir(out);
    write_resolved_config(cfg, out);
    write_text(out / "pref_model.json", pairwise_model_to_json(env, fit.model).dump(2) + "\n");

    std::ostringstream msg;
    msg << "fit-pref-model: " << instances.size() << " instances (" << swapped
        << " swapped), nll=" << csv_double(fit.final_loss)
        << (fit.converged ? "" : " (iteration cap reached)") << " -> "
        << (out / "pref_model.json").string();
    return msg.str();
}

std::string run_offline_dpo(const ExperimentConfig& cfg, const fs::path& out) {
    const Environment env = build_env(cfg);
    std::vector<PreferenceRecord> data = build_offline_dataset(cfg, env);
    if (data.empty()) {
        throw ConfigError("run-offline-dpo requires offline data (offline.size or offline.file)");
    }

    const Policy ref = uniform_policy(env);
    const auto fit = fit_dpo(data, ref, ref, cfg.loop.eta, cfg.dpo_optim);

    PipelineReport report;
    report.metrics.push_back(offline_metric_row(env, fit.model, ref, cfg, data.size()));
    report.checkpoints.push_back(fit.model);
    report.dropped_per_iteration.push_back(0);
    report.dataset = std::move(data);
    report.offline_size = report.dataset.size();
    report.best_iteration = 1;
    report.best_win_rate = report.metrics[0].win_rate_vs_ref;

    ensure_dir(out);
    write_pipeline_outputs(out, env, cfg, report);

    std::ostringstream msg;
    msg << "run-offline-dpo: " << report.offline_size << " records, J="
        << csv_double(report.metrics[0].j_true) << ", win_rate="
        << csv_double(report.metrics[0].win_rate_vs_ref) << " -> " << out.string();
    return msg.str();
}

std::string run_iterative(const ExperimentConfig& cfg, const fs::path& out) {
    const Environment env = build_env(cfg);
    std::vector<PreferenceRecord> offline = build_offline_dataset(cfg, env);
    const auto ranker = build_ranker(cfg, env, offline);
    const Policy ref = uniform_policy(env);

    const PipelineReport report =
        run_pipeline(env, cfg.loop, *ranker, ref, std::move(offline), cfg.dpo_optim, cfg.seed);

    ensure_dir(out);
    write_pipeline_outputs(out, env, cfg, report);

    int dropped = 0;
    for (const int d : report.dropped_per_iteration) dropped += d;
    const MetricRow& last = report.metrics.back();
    std::ostringstream msg;
    msg << "run-iterative: T=" << cfg.loop.iterations << ", best_iter=" << report.best_iteration
        << ", J_final=" << csv_double(last.j_true) << ", win_rate_final="
        << csv_double(last.win_rate_vs_ref) << ", dropped=" << dropped << " -> " << out.string();
    return msg.str();
}

std::string run_theoretical(const ExperimentConfig& cfg, const fs::path& out) {
    const Environment env = build_env(cfg);
    if (!env.linear_mode()) {
        throw ConfigError("run-theoretical requires env.reward.kind = linear");
    }
    const Policy ref = uniform_policy(env);
    const ExploreTrace trace = run_theoretical_loop(env, cfg.explore, ref, cfg.dpo_optim, cfg.seed);

    ensure_dir(out / "checkpoints");
    write_resolved_config(cfg, out);
    std::ostringstream csv;
    trace.write_csv(csv);
    write_text(out / "trace.csv", csv.str());

    const std::string hash = config_hash(cfg);
    for (std::size_t t = 0; t < trace.main_checkpoints.size(); ++t) {
        const Checkpoint ckpt =
            make_checkpoint(env, trace.main_checkpoints[t], static_cast<int>(t + 1), hash);
        save_checkpoint(ckpt, out / "checkpoints" / ("iter_" + std::to_string(t + 1) + ".json"));
    }

    const auto& first = trace.rows.front();
    const auto& last = trace.rows.back();
    std::ostringstream msg;
    msg << "run-theoretical: T=" << cfg.explore.iterations << ", gap "
        << csv_double(first.subopt_gap) << " -> " << csv_double(last.subopt_gap)
        << ", gamma " << csv_double(first.gamma_selected) << " -> "
        << csv_double(last.gamma_selected) << ", skipped=" << trace.skipped_pairs << " -> "
        << out.string();
    return msg.str();
}

std::string analyze_length_bias(const ExperimentConfig& cfg, const fs::path& out) {
    const Environment env = build_env(cfg);

    ScoreFn scorer;
    if (cfg.scorer.mode == ScorerMode::oracle) {
        scorer = biased(true_reward_fn(env), env, cfg.scorer.length_bias);
    } else if (cfg.scorer.mode == ScorerMode::fitted_bt) {
        std::vector<PreferenceRecord> data = build_offline_dataset(cfg, env);
        if (data.empty()) throw ConfigError("scorer mode fitted_bt requires offline data");
        auto fit = fit_bt_reward(env, data, model_kind_for(env), cfg.reward_optim);
        auto model = std::make_shared<RewardModel>(std::move(fit.model));
        scorer = biased([model, &env](PromptIndex x, ResponseIndex a) {
            return model->score(env, x, a);
        }, env, cfg.scorer.length_bias);
    } else {
        throw ConfigError("analyze-length-bias requires a pointwise scorer (oracle or fitted_bt)");
    }

    const Policy policy = uniform_policy(env);
    Rng rng = stream_rng(cfg.seed, "correlation");
    const CorrelationReport report = length_reward_correlation(
        env, scorer, policy, static_cast<std::size_t>(cfg.correlation.prompts),
        static_cast<std::size_t>(cfg.correlation.responses), rng);

    ensure_dir(out);
    write_resolved_config(cfg, out);
    std::ostringstream csv;
    report.write_csv(csv);
    write_text(out / "correlation.csv", csv.str());

    std::ostringstream msg;
    msg << "analyze-length-bias: " << report.rows.size() << " prompts, mean_r="
        << csv_double(report.mean_r) << ", missing=" << report.n_missing << " -> "
        << (out / "correlation.csv").string();
    return msg.str();
}

std::string compare(const std::vector<fs::path>& run_dirs) {
    if (run_dirs.size() < 2) throw ArgumentError("compare needs at least two run directories");

    std::ostringstream table;
    table << "run,best_iteration,j_true,win_rate_vs_ref,mean_response_length\n";
    for (const auto& dir : run_dirs) {
        std::ifstream in(dir / "config.resolved.json");
        if (!in) throw IoError("cannot open " + (dir / "config.resolved.json").string());
        json cj;
        try {
            in >> cj;
        } catch (const json::parse_error& e) {
            throw IoError("cannot parse " + (dir / "config.resolved.json").string() + ": " +
                          e.what());
        }
        const ExperimentConfig cfg = parse_config_json(cj);
        const Environment env = build_env(cfg);

        std::ifstream rin(dir / "report.json");
        if (!rin) throw IoError("cannot open " + (dir / "report.json").string());
        json rj;
        rin >> rj;
        const int best = rj.at("best_iteration").get<int>();

        const Checkpoint ckpt =
            load_checkpoint(dir / "checkpoints" / ("iter_" + std::to_string(best) + ".json"));
        if (ckpt.config_hash != config_hash(cfg)) {
            throw VersionError("checkpoint in " + dir.string() + " does not match its config");
        }
        const Policy policy = checkpoint_policy(ckpt, env);
        const Policy ref = uniform_policy(env);

        Rng eval_rng = stream_rng(cfg.seed, "compare");
        const double j_true = policy_value(policy, env, ref, cfg.loop.eta);
        const double wr = win_rate(env, policy, ref,
                                   static_cast<std::size_t>(cfg.loop.validation_evals), eval_rng);
        table << dir.string() << ',' << best << ',' << csv_double(j_true) << ',' << csv_double(wr)
              << ',' << csv_double(mean_response_length(policy, env)) << '\n';
    }
    return table.str();
}

namespace {

fs::path resolve_output(const ExperimentConfig& cfg, const std::string& override_dir,
                        const std::string& subcommand) {
    if (!override_dir.empty()) return override_dir;
    if (!cfg.output.empty()) return cfg.output;
    const char* root = std::getenv("RLHF_LAB_OUTPUT_ROOT");
    return fs::path(root != nullptr ? root : "runs") /
           (subcommand + "-" + config_hash(cfg).substr(0, 8));
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args) {
    CLI::App app{"Desk-scale laboratory for online iterative preference optimization"};
    app.require_subcommand(1);

    struct SubSpec {
        const char* name;
        const char* help;
        std::string (*fn)(const ExperimentConfig&, const fs::path&);
    };
    static const SubSpec subs[] = {
        {"gen-env", "Generate and serialize a synthetic environment", gen_env},
        {"fit-reward", "Fit the Bradley-Terry reward model on offline data", fit_reward},
        {"fit-pref-model", "Fit the pairwise preference model on offline data", fit_pref_model},
        {"run-offline-dpo", "Single-shot DPO on the offline dataset", run_offline_dpo},
        {"run-iterative", "Online iterative loop with rejection-sampling pairs", run_iterative},
        {"run-theoretical", "Information-gain exploration loop (linear envs)", run_theoretical},
        {"analyze-length-bias", "Length-reward Pearson correlation audit", analyze_length_bias},
    };

    struct SubState {
        CLI::App* cmd = nullptr;
        std::string config_path;
        std::string output;
        std::uint64_t seed = 0;
        bool seed_set = false;
    };
    std::vector<SubState> states(std::size(subs));
    for (std::size_t i = 0; i < std::size(subs); ++i) {
        SubState& st = states[i];
        st.cmd = app.add_subcommand(subs[i].name, subs[i].help);
        st.cmd->add_option("config", st.config_path, "Experiment config file (JSON)")->required();
        st.cmd->add_option("--output", st.output, "Output directory override");
        st.cmd->add_option("--seed", st.seed, "Master seed override")
            ->each([&st](const std::string&) { st.seed_set = true; });
    }

    std::vector<std::string> compare_dirs;
    CLI::App* compare_cmd =
        app.add_subcommand("compare", "Recompute and tabulate metrics across run directories");
    compare_cmd->add_option("runs", compare_dirs, "Pipeline report directories")
        ->expected(-2);

    // CLI11 wants argc/argv; synthesize them around the args vector.
    std::vector<const char*> argv;
    argv.push_back("rlhf-lab");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n' << app.help();
        return 2;
    }

    try {
        if (app.got_subcommand(compare_cmd)) {
            std::vector<fs::path> dirs(compare_dirs.begin(), compare_dirs.end());
            std::cout << compare(dirs);
            return 0;
        }
        for (std::size_t i = 0; i < std::size(subs); ++i) {
            if (!app.got_subcommand(states[i].cmd)) continue;
            ExperimentConfig cfg = parse_config(states[i].config_path);
            if (states[i].seed_set) cfg.seed = states[i].seed;
            if (!states[i].output.empty()) cfg.output = states[i].output;
            const fs::path out = resolve_output(cfg, states[i].output, subs[i].name);
            std::cout << subs[i].fn(cfg, out) << '\n';
            return 0;
        }
    } catch (const LabError& e) {
        std::cerr << "error [" << e.category() << "]: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error [internal]: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace rlhf_lab::commands
