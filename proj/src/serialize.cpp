#include "rlhf_lab/serialize.hpp"

#include <fstream>
#include <ostream>
#include <sstream>

#include "rlhf_lab/csv.hpp"

namespace rlhf_lab {

using nlohmann::json;

namespace {

json load_json_file(const std::filesystem::path& path, const char* what) {
    std::ifstream in(path);
    if (!in) {
        throw IoError(std::string("cannot open ") + what + " file: " + path.string());
    }
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw IoError(std::string("cannot parse ") + what + " file " + path.string() + ": " +
                      e.what());
    }
    return j;
}

void check_version(const json& j, const char* what) {
    if (!j.contains("version") || !j["version"].is_number_integer() ||
        j["version"].get<int>() != kSchemaVersion) {
        throw VersionError(std::string(what) + ": unsupported or missing version tag");
    }
}

}  // namespace

json env_to_json(const Environment& env) {
    json prompts = json::array();
    for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
        json responses = json::array();
        for (ResponseIndex a = 0; a < env.n_responses(x); ++a) {
            json r = {{"id", env.response_ids[x][a]},
                      {"reward", env.true_reward[x][a]},
                      {"length", env.lengths[x][a]}};
            if (env.linear_mode()) r["features"] = env.features[x][a];
            responses.push_back(std::move(r));
        }
        prompts.push_back({{"id", env.prompt_ids[x]},
                           {"d0", env.prompt_dist[x]},
                           {"responses", std::move(responses)}});
    }
    json j = {{"version", kSchemaVersion}, {"kind", "environment"}, {"prompts", std::move(prompts)}};
    if (env.linear_mode()) j["theta_star"] = env.theta_star;
    return j;
}

Environment env_from_json(const json& j) {
    check_version(j, "environment");
    Environment env;
    if (j.contains("theta_star")) {
        env.theta_star = j["theta_star"].get<std::vector<double>>();
    }
    for (const auto& p : j.at("prompts")) {
        env.prompt_ids.push_back(p.at("id").get<std::string>());
        env.prompt_dist.push_back(p.at("d0").get<double>());
        std::vector<std::string> ids;
        std::vector<double> rewards;
        std::vector<int> lens;
        std::vector<std::vector<double>> feats;
        for (const auto& r : p.at("responses")) {
            ids.push_back(r.at("id").get<std::string>());
            rewards.push_back(r.at("reward").get<double>());
            lens.push_back(r.at("length").get<int>());
            if (env.linear_mode()) feats.push_back(r.at("features").get<std::vector<double>>());
        }
        env.response_ids.push_back(std::move(ids));
        env.true_reward.push_back(std::move(rewards));
        env.lengths.push_back(std::move(lens));
        if (env.linear_mode()) env.features.push_back(std::move(feats));
    }
    env.validate();
    return env;
}

Checkpoint make_checkpoint(const Environment& env, const Policy& policy, int iteration,
                           std::string config_hash) {
    if (policy.n_prompts() != env.n_prompts()) {
        throw LookupError("checkpoint: policy does not match environment");
    }
    Checkpoint ckpt;
    ckpt.iteration = iteration;
    ckpt.config_hash = std::move(config_hash);
    ckpt.temperature = policy.temperature;
    for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
        ckpt.logits.emplace_back(env.prompt_ids[x], policy.logits[x]);
    }
    return ckpt;
}

Policy checkpoint_policy(const Checkpoint& ckpt, const Environment& env) {
    Policy policy;
    policy.temperature = ckpt.temperature;
    policy.logits.resize(env.n_prompts());
    std::vector<bool> seen(env.n_prompts(), false);
    for (const auto& [id, row] : ckpt.logits) {
        const auto x = env.find_prompt(id);
        if (!x) throw LookupError("checkpoint: unknown prompt id " + id);
        if (row.size() != env.n_responses(*x)) {
            throw LookupError("checkpoint: logits size mismatch for prompt " + id);
        }
        policy.logits[*x] = row;
        seen[*x] = true;
    }
    for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
        if (!seen[x]) throw LookupError("checkpoint: missing prompt " + env.prompt_ids[x]);
    }
    return policy;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    json rows = json::array();
    for (const auto& [id, row] : ckpt.logits) {
        rows.push_back({{"prompt", id}, {"logits", row}});
    }
    const json j = {{"version", ckpt.version},
                    {"kind", "policy-checkpoint"},
                    {"iteration", ckpt.iteration},
                    {"config_hash", ckpt.config_hash},
                    {"temperature", ckpt.temperature},
                    {"policy", std::move(rows)}};
    std::ofstream out(path);
    if (!out) throw IoError("cannot write checkpoint file: " + path.string());
    out << j.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const json j = load_json_file(path, "checkpoint");
    check_version(j, "checkpoint");
    Checkpoint ckpt;
    ckpt.version = j["version"].get<int>();
    ckpt.iteration = j.at("iteration").get<int>();
    ckpt.config_hash = j.at("config_hash").get<std::string>();
    ckpt.temperature = j.at("temperature").get<double>();
    for (const auto& row : j.at("policy")) {
        ckpt.logits.emplace_back(row.at("prompt").get<std::string>(),
                                 row.at("logits").get<std::vector<double>>());
    }
    return ckpt;
}

json reward_model_to_json(const Environment& env, const RewardModel& model) {
    json j = {{"version", kSchemaVersion}, {"kind", "reward-model"}};
    if (model.kind == RewardModel::Kind::linear) {
        j["type"] = "linear";
        j["theta"] = model.theta;
    } else {
        j["type"] = "tabular";
        json rows = json::array();
        for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
            rows.push_back({{"prompt", env.prompt_ids[x]}, {"scores", model.table[x]}});
        }
        j["scores"] = std::move(rows);
    }
    return j;
}

RewardModel reward_model_from_json(const json& j, const Environment& env) {
    check_version(j, "reward model");
    RewardModel model;
    if (j.at("type").get<std::string>() == "linear") {
        model.kind = RewardModel::Kind::linear;
        model.theta = j.at("theta").get<std::vector<double>>();
        if (!env.linear_mode() || model.theta.size() != env.feature_dim()) {
            throw ModeError("reward model dimension does not match environment");
        }
        return model;
    }
    model.kind = RewardModel::Kind::tabular;
    model.table.resize(env.n_prompts());
    for (const auto& row : j.at("scores")) {
        const auto x = env.find_prompt(row.at("prompt").get<std::string>());
        if (!x) throw LookupError("reward model: unknown prompt id");
        model.table[*x] = row.at("scores").get<std::vector<double>>();
        if (model.table[*x].size() != env.n_responses(*x)) {
            throw LookupError("reward model: score row size mismatch");
        }
    }
    return model;
}

json pairwise_model_to_json(const Environment& env, const PairwisePrefModel& model) {
    json j = {{"version", kSchemaVersion}, {"kind", "pairwise-preference-model"}};
    if (model.kind == RewardModel::Kind::linear) {
        j["type"] = "linear";
        j["theta"] = model.theta;
    } else {
        j["type"] = "tabular";
        json rows = json::array();
        for (PromptIndex x = 0; x < env.n_prompts(); ++x) {
            rows.push_back({{"prompt", env.prompt_ids[x]}, {"weights", model.table[x]}});
        }
        j["weights"] = std::move(rows);
    }
    return j;
}

PairwisePrefModel pairwise_model_from_json(const json& j, const Environment& env) {
    check_version(j, "pairwise model");
    PairwisePrefModel model;
    if (j.at("type").get<std::string>() == "linear") {
        model.kind = RewardModel::Kind::linear;
        model.theta = j.at("theta").get<std::vector<double>>();
        if (!env.linear_mode() || model.theta.size() != env.feature_dim()) {
            throw ModeError("pairwise model dimension does not match environment");
        }
        return model;
    }
    model.kind = RewardModel::Kind::tabular;
    model.table.resize(env.n_prompts());
    for (const auto& row : j.at("weights")) {
        const auto x = env.find_prompt(row.at("prompt").get<std::string>());
        if (!x) throw LookupError("pairwise model: unknown prompt id");
        model.table[*x] = row.at("weights").get<std::vector<double>>();
    }
    return model;
}

IngestReport ingest_preference_file(const std::filesystem::path& path,
                                    std::optional<double> margin_threshold) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open preference file: " + path.string());

    IngestReport report;
    std::string line;
    int line_no = 0;
    int nonblank = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++nonblank;

        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("prompt_id") ||
            !j.contains("chosen_id") || !j.contains("rejected_id") ||
            !j["prompt_id"].is_string() || !j["chosen_id"].is_string() ||
            !j["rejected_id"].is_string()) {
            report.malformed_lines.push_back(line_no);
            continue;
        }

        RawPreferenceRecord rec;
        rec.prompt_id = j["prompt_id"].get<std::string>();
        rec.chosen_id = j["chosen_id"].get<std::string>();
        rec.rejected_id = j["rejected_id"].get<std::string>();
        if (j.contains("margin")) {
            if (!j["margin"].is_number()) {
                report.malformed_lines.push_back(line_no);
                continue;
            }
            rec.margin = j["margin"].get<double>();
        }

        if (rec.chosen_id == rec.rejected_id) {
            ++report.rejected_lines;
            continue;
        }
        if (margin_threshold && rec.margin && *rec.margin < *margin_threshold) {
            ++report.dropped_margin;
            continue;
        }
        report.records.push_back(std::move(rec));
    }

    if (nonblank > 0 && static_cast<int>(report.malformed_lines.size()) == nonblank) {
        throw IngestError("every line of " + path.string() + " is malformed");
    }
    return report;
}

std::vector<PreferenceRecord> resolve_records(const Environment& env,
                                              std::span<const RawPreferenceRecord> raw) {
    std::vector<PreferenceRecord> out;
    out.reserve(raw.size());
    for (const auto& r : raw) {
        const auto x = env.find_prompt(r.prompt_id);
        if (!x) throw LookupError("dataset: unknown prompt id " + r.prompt_id);
        const auto chosen = env.find_response(*x, r.chosen_id);
        const auto rejected = env.find_response(*x, r.rejected_id);
        if (!chosen || !rejected) {
            throw LookupError("dataset: unknown response id for prompt " + r.prompt_id);
        }
        PreferenceRecord rec;
        rec.prompt = *x;
        rec.chosen = *chosen;
        rec.rejected = *rejected;
        out.push_back(rec);
    }
    return out;
}

void write_dataset_jsonl(const Environment& env, std::span<const PreferenceRecord> records,
                         std::ostream& os) {
    for (const auto& rec : records) {
        json j = {{"prompt_id", env.prompt_ids[rec.prompt]},
                  {"chosen_id", env.response_ids[rec.prompt][rec.chosen]},
                  {"rejected_id", env.response_ids[rec.prompt][rec.rejected]}};
        if (rec.meta) {
            j["meta"] = {{"iteration", rec.meta->iteration}, {"source", rec.meta->source}};
        }
        os << j.dump() << '\n';
    }
}

void write_metrics_csv(std::span<const MetricRow> rows, std::ostream& os) {
    os << "iteration,j_true,kl_to_ref,mean_response_length,dataset_size,win_rate_vs_ref,"
          "suboptimality_gap\n";
    for (const auto& r : rows) {
        os << r.iteration << ',' << csv_double(r.j_true) << ',' << csv_double(r.kl_to_ref) << ','
           << csv_double(r.mean_response_length) << ',' << r.dataset_size << ','
           << csv_double(r.win_rate_vs_ref) << ',' << csv_double(r.suboptimality_gap) << '\n';
    }
}

}  // namespace rlhf_lab
