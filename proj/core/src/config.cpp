// SPDX-License-Identifier: Apache-2.0
#include "act/config.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <set>

namespace act {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string join_problems(const std::vector<std::string>& problems)
{
    std::string out = "invalid configuration";
    for (const auto& p : problems) {
        out += "\n  " + p;
    }
    return out;
}

} // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : Error(ErrorKind::Configuration, join_problems(problems))
    , problems_(std::move(problems))
{
}

// ---- Profiles ---------------------------------------------------------------

namespace {

json large_model_dpo(double beta)
{
    return json {{"beta", beta}, {"learning_rate", 5e-7}, {"batch_size", 4}, {"max_sequence_units", 1280}};
}

const std::map<std::string, json>& profiles()
{
    static const std::map<std::string, json> table = {
        {"pacific",
            {
                {"task", {{"kind", "tabular-qa"}, {"content_metric", "drop_f1"}}},
                {"policy", {{"template", "pacific"}}},
                {"dpo", large_model_dpo(0.01)},
                {"act", {{"heuristic", "drop_f1"}, {"max_epochs", 12}}},
            }},
        {"abgcoqa",
            {
                {"task", {{"kind", "reading-comprehension"}, {"content_metric", "similarity"}, {"iterate_goal_set", true}}},
                {"policy", {{"template", "abgcoqa"}}},
                {"dpo", large_model_dpo(0.01)},
                {"act", {{"heuristic", "similarity"}, {"max_epochs", 12}}},
            }},
        {"ambigsql",
            {
                {"task", {{"kind", "text-to-sql"}, {"content_metric", "execution_match"}}},
                {"policy", {{"template", "ambigsql"}}},
                {"dpo", large_model_dpo(0.01)},
                {"act", {{"heuristic", "execution_match"}, {"max_epochs", 12}}},
                {"backends", {{"simulator", {{"grounding", "target-sql"}}}}},
            }},
        {"ambigsql-beta-0.5",
            {
                {"task", {{"kind", "text-to-sql"}, {"content_metric", "execution_match"}}},
                {"policy", {{"template", "ambigsql"}}},
                {"dpo", large_model_dpo(0.5)},
                {"act", {{"heuristic", "execution_match"}, {"max_epochs", 12}}},
                {"backends", {{"simulator", {{"grounding", "target-sql"}}}}},
            }},
        {"synthetic-toy",
            {
                {"task", {{"kind", "synthetic"}, {"content_metric", "drop_f1"}}},
                {"policy", to_json(synthetic_policy_config())},
                {"dpo", {{"beta", 0.1}, {"learning_rate", 0.05}, {"batch_size", 4}, {"max_sequence_units", 1280}}},
                {"act", {{"heuristic", "drop_f1"}, {"num_batches", 500}, {"max_epochs", 12}}},
                {"backends", {{"classifier", {{"kind", "rule"}}}}},
            }},
    };
    return table;
}

} // namespace

std::vector<std::string> profile_names()
{
    std::vector<std::string> names;
    for (const auto& [name, _] : profiles()) {
        names.push_back(name);
    }
    return names;
}

json profile_document(const std::string& name)
{
    auto it = profiles().find(name);
    if (it == profiles().end()) {
        fail(ErrorKind::Configuration, "unknown profile '" + name + "'");
    }
    json document = it->second;
    if (document.contains("policy")) {
        // The toy config serializer uses its own key names; map them onto
        // the document schema.
        auto& policy = document["policy"];
        if (policy.contains("template_id")) {
            policy["template"] = policy["template_id"];
            policy.erase("template_id");
        }
        // Sequence length belongs to the dpo section of the document.
        policy.erase("max_sequence_units");
    }
    return document;
}

// ---- Field reader -------------------------------------------------------------

namespace {

class Section {
public:
    Section(const json& document, std::string prefix, std::vector<std::string>& problems, std::set<std::string> allowed)
        : prefix_(std::move(prefix))
        , problems_(problems)
    {
        if (document.is_null()) {
            return;
        }
        if (!document.is_object()) {
            problems_.push_back(prefix_ + ": expected an object");
            return;
        }
        node_ = document;
        for (const auto& [key, _] : node_.items()) {
            if (!allowed.count(key)) {
                problems_.push_back(field(key) + ": unknown field");
            }
        }
    }

    std::string field(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }
    bool has(const std::string& key) const { return node_.contains(key) && !node_.at(key).is_null(); }
    const json& raw(const std::string& key) const { return node_.contains(key) ? node_.at(key) : null_; }

    double number(const std::string& key, double fallback)
    {
        if (!has(key)) {
            return fallback;
        }
        const auto& v = node_.at(key);
        if (!v.is_number()) {
            problems_.push_back(field(key) + ": expected a number");
            return fallback;
        }
        return v.get<double>();
    }

    long long integer(const std::string& key, long long fallback)
    {
        if (!has(key)) {
            return fallback;
        }
        const auto& v = node_.at(key);
        if (!v.is_number_integer()) {
            problems_.push_back(field(key) + ": expected an integer");
            return fallback;
        }
        return v.get<long long>();
    }

    std::uint64_t seed(const std::string& key, std::uint64_t fallback)
    {
        auto value = integer(key, static_cast<long long>(fallback));
        if (value < 0) {
            problems_.push_back(field(key) + ": must be non-negative");
            return fallback;
        }
        return static_cast<std::uint64_t>(value);
    }

    bool boolean(const std::string& key, bool fallback)
    {
        if (!has(key)) {
            return fallback;
        }
        const auto& v = node_.at(key);
        if (!v.is_boolean()) {
            problems_.push_back(field(key) + ": expected true or false");
            return fallback;
        }
        return v.get<bool>();
    }

    std::string text(const std::string& key, const std::string& fallback)
    {
        if (!has(key)) {
            return fallback;
        }
        const auto& v = node_.at(key);
        if (!v.is_string()) {
            problems_.push_back(field(key) + ": expected a string");
            return fallback;
        }
        return v.get<std::string>();
    }

    template <class T, class Parse>
    T choice(const std::string& key, T fallback, Parse parse)
    {
        if (!has(key)) {
            return fallback;
        }
        try {
            return parse(text(key, ""));
        } catch (const Error& e) {
            problems_.push_back(field(key) + ": " + e.message());
            return fallback;
        }
    }

    void check(bool ok, const std::string& key, const std::string& message)
    {
        if (!ok) {
            problems_.push_back(field(key) + ": " + message);
        }
    }

private:
    std::string prefix_;
    std::vector<std::string>& problems_;
    json node_ = json::object();
    json null_;
};

std::optional<fs::path> resolve(Section& section, const std::string& key, const fs::path& base_dir)
{
    auto value = section.text(key, "");
    if (value.empty()) {
        return std::nullopt;
    }
    fs::path path(value);
    return path.is_absolute() ? path : (base_dir / path).lexically_normal();
}

BackendRole parse_role(const json& node, const std::string& name, std::vector<std::string>& problems, const fs::path& base_dir)
{
    Section s(node, "backends." + name, problems,
        {"kind", "script", "endpoint", "auth_env_var", "retry_limit", "timeout_ms", "temperature", "max_new_units", "grounding"});
    BackendRole role;
    role.configured = !node.is_null();
    auto kind = s.text("kind", "scripted");
    if (kind == "rule") {
        s.check(name == "classifier", "kind", "'rule' is only valid for the classifier");
        role.classifier = ClassifierKind::Rule;
    } else {
        role.backend.backend_kind = s.choice("kind", BackendKind::Scripted, parse_backend_kind);
        role.classifier = ClassifierKind::Prompted;
    }
    role.script_path = resolve(s, "script", base_dir);
    if (s.has("endpoint")) {
        role.backend.endpoint = s.text("endpoint", "");
    }
    if (s.has("auth_env_var")) {
        role.backend.auth_env_var = s.text("auth_env_var", "");
    }
    role.backend.retry_limit = static_cast<int>(s.integer("retry_limit", 2));
    s.check(role.backend.retry_limit >= 0, "retry_limit", "must be >= 0");
    role.backend.timeout = std::chrono::milliseconds(s.integer("timeout_ms", 30000));
    s.check(role.backend.timeout.count() > 0, "timeout_ms", "must be positive");
    role.backend.temperature = s.number("temperature", 0.0);
    s.check(role.backend.temperature >= 0.0, "temperature", "must be >= 0");
    role.backend.max_new_units = static_cast<int>(s.integer("max_new_units", 256));
    s.check(role.backend.max_new_units > 0, "max_new_units", "must be positive");
    role.grounding = s.choice("grounding", SimulatorGrounding::Intent, [](std::string_view text) {
        if (text == "intent") {
            return SimulatorGrounding::Intent;
        }
        if (text == "target-sql") {
            return SimulatorGrounding::TargetSql;
        }
        fail(ErrorKind::Configuration, "expected 'intent' or 'target-sql'");
    });
    if (role.configured && kind != "rule") {
        if (role.backend.backend_kind == BackendKind::Scripted) {
            s.check(role.script_path.has_value(), "script", "required for a scripted backend");
        } else {
            s.check(role.backend.endpoint.has_value() && !role.backend.endpoint->empty(), "endpoint", "required for a remote_api backend");
        }
    }
    return role;
}

} // namespace

RunConfig parse_run_config(const json& document, const fs::path& base_dir)
{
    std::vector<std::string> problems;
    if (!document.is_object()) {
        throw ConfigError({"<root>: expected a JSON object"});
    }
    RunConfig config;
    json merged = json::object();
    if (document.contains("profile")) {
        if (!document.at("profile").is_string()) {
            throw ConfigError({"profile: expected a string"});
        }
        config.profile = document.at("profile").get<std::string>();
        try {
            merged = profile_document(config.profile);
        } catch (const Error&) {
            std::string known;
            for (const auto& n : profile_names()) {
                known += (known.empty() ? "" : ", ") + n;
            }
            throw ConfigError({"profile: unknown profile '" + config.profile + "' (known: " + known + ")"});
        }
    }
    merged.merge_patch(document);
    config.resolved = merged;

    Section root(merged, "", problems,
        {"profile", "task", "paths", "policy", "dpo", "act", "eval", "synthesis", "synthetic", "backends", "similarity"});

    Section task(root.raw("task"), "task", problems, {"kind", "content_metric", "iterate_goal_set"});
    config.eval.task_kind = task.choice("kind", TaskKind::Synthetic, parse_task_kind);
    config.eval.content_metric = task.text("content_metric", "drop_f1");
    config.eval.iterate_goal_set = task.boolean("iterate_goal_set", false);
    task.check(!config.eval.iterate_goal_set || config.eval.task_kind == TaskKind::ReadingComprehension, "iterate_goal_set",
        "only valid for reading-comprehension tasks");

    Section paths(root.raw("paths"), "paths", problems,
        {"train", "dev", "test", "preferences", "dev_preferences", "catalog", "databases", "spider"});
    config.paths.train = resolve(paths, "train", base_dir);
    config.paths.dev = resolve(paths, "dev", base_dir);
    config.paths.test = resolve(paths, "test", base_dir);
    config.paths.preferences = resolve(paths, "preferences", base_dir);
    config.paths.dev_preferences = resolve(paths, "dev_preferences", base_dir);
    config.paths.catalog = resolve(paths, "catalog", base_dir);
    config.paths.databases = resolve(paths, "databases", base_dir);
    config.paths.spider = resolve(paths, "spider", base_dir);

    Section policy(root.raw("policy"), "policy", problems,
        {"kind", "template", "dimension", "bias_scale", "memo_scale", "cue_scale", "ground_scale", "temperature", "max_new_units",
            "eval_temperature"});
    policy.check(policy.text("kind", "toy") == "toy", "kind", "only 'toy' policies are built in");
    config.policy.template_id = policy.text("template", "standard");
    if (!PromptRegistry::builtin().has_template(config.policy.template_id)) {
        problems.push_back("policy.template: unknown template '" + config.policy.template_id + "'");
    }
    auto dimension = policy.integer("dimension", 1LL << 16);
    policy.check(dimension > 0 && dimension <= (1LL << 26), "dimension", "must lie in [1, 67108864]");
    config.policy.dimension = static_cast<std::uint32_t>(std::clamp(dimension, 1LL, 1LL << 26));
    config.policy.bias_scale = policy.number("bias_scale", 1.0);
    config.policy.memo_scale = policy.number("memo_scale", 1.0);
    config.policy.cue_scale = policy.number("cue_scale", 1.0);
    config.policy.ground_scale = policy.number("ground_scale", 0.5);
    config.policy.decoding.temperature = policy.number("temperature", 1.0);
    policy.check(config.policy.decoding.temperature >= 0.0, "temperature", "must be >= 0");
    config.policy.decoding.max_new_units = static_cast<int>(policy.integer("max_new_units", 256));
    policy.check(config.policy.decoding.max_new_units > 0, "max_new_units", "must be positive");
    config.eval_temperature = policy.number("eval_temperature", 0.0);
    policy.check(config.eval_temperature >= 0.0, "eval_temperature", "must be >= 0");

    Section dpo(root.raw("dpo"), "dpo", problems,
        {"beta", "learning_rate", "batch_size", "max_sequence_units", "adam_beta1", "adam_beta2", "adam_epsilon", "weight_decay"});
    config.dpo.beta = dpo.number("beta", 0.01);
    dpo.check(config.dpo.beta > 0.0, "beta", "must be > 0");
    config.dpo.learning_rate = dpo.number("learning_rate", 5e-7);
    dpo.check(config.dpo.learning_rate > 0.0, "learning_rate", "must be > 0");
    config.dpo.batch_size = static_cast<int>(dpo.integer("batch_size", 4));
    dpo.check(config.dpo.batch_size >= 1, "batch_size", "must be at least 1");
    config.policy.max_sequence_units = static_cast<int>(dpo.integer("max_sequence_units", kDefaultMaxSequenceUnits));
    dpo.check(config.policy.max_sequence_units >= 1, "max_sequence_units", "must be at least 1");
    config.dpo.adamw.beta1 = dpo.number("adam_beta1", 0.9);
    dpo.check(config.dpo.adamw.beta1 >= 0.0 && config.dpo.adamw.beta1 < 1.0, "adam_beta1", "must lie in [0, 1)");
    config.dpo.adamw.beta2 = dpo.number("adam_beta2", 0.999);
    dpo.check(config.dpo.adamw.beta2 >= 0.0 && config.dpo.adamw.beta2 < 1.0, "adam_beta2", "must lie in [0, 1)");
    config.dpo.adamw.epsilon = dpo.number("adam_epsilon", 1e-8);
    dpo.check(config.dpo.adamw.epsilon > 0.0, "adam_epsilon", "must be > 0");
    config.dpo.adamw.weight_decay = dpo.number("weight_decay", 0.0);
    dpo.check(config.dpo.adamw.weight_decay >= 0.0, "weight_decay", "must be >= 0");

    Section act(root.raw("act"), "act", problems, {"mode", "num_batches", "max_epochs", "heuristic", "epsilon", "clarify_cap", "seed"});
    config.act.mode = act.choice("mode", TrainingMode::FullAct, parse_training_mode);
    config.act.num_batches = static_cast<int>(act.integer("num_batches", 1));
    act.check(config.act.num_batches >= 1, "num_batches", "must be at least 1");
    config.act.max_epochs = static_cast<int>(act.integer("max_epochs", kMaxEpochs));
    act.check(config.act.max_epochs >= 1 && config.act.max_epochs <= kMaxEpochs, "max_epochs", "must lie in [1, 12]");
    config.act.heuristic_id = act.text("heuristic", config.eval.content_metric);
    if (act.has("epsilon")) {
        config.act.epsilon = act.number("epsilon", 0.0);
    }
    config.act.max_clarify_rounds = static_cast<int>(act.integer("clarify_cap", 5));
    act.check(config.act.max_clarify_rounds >= 1, "clarify_cap", "must be at least 1");
    config.act.sampling_seed = act.seed("seed", 0);
    const std::set<std::string> heuristics = {"drop_f1", "similarity", "execution_match"};
    act.check(heuristics.count(config.act.heuristic_id) > 0, "heuristic", "expected drop_f1, similarity or execution_match");
    task.check(heuristics.count(config.eval.content_metric) > 0, "content_metric", "expected drop_f1, similarity or execution_match");

    Section eval(root.raw("eval"), "eval", problems, {"clarify_cap", "seed", "max_exclusion_fraction"});
    config.eval.clarify_cap = static_cast<int>(eval.integer("clarify_cap", 5));
    eval.check(config.eval.clarify_cap >= 1, "clarify_cap", "must be at least 1");
    config.eval.seed = eval.seed("seed", 0);
    config.eval.max_exclusion_fraction = eval.number("max_exclusion_fraction", 0.05);
    eval.check(config.eval.max_exclusion_fraction >= 0.0 && config.eval.max_exclusion_fraction <= 1.0, "max_exclusion_fraction",
        "must lie in [0, 1]");

    Section synthesis(root.raw("synthesis"), "synthesis", problems, {"seed", "selection", "limit", "dev_fraction", "test_fraction"});
    config.synthesis.seed = synthesis.seed("seed", 0);
    config.synthesis.selection = synthesis.choice("selection", SelectionPolicy::FirstN, parse_selection_policy);
    auto limit = synthesis.integer("limit", 0);
    synthesis.check(limit >= 0, "limit", "must be non-negative");
    config.synthesis.limit = static_cast<std::size_t>(std::max(0LL, limit));
    config.synthesis.dev_fraction = synthesis.number("dev_fraction", 0.15);
    config.synthesis.test_fraction = synthesis.number("test_fraction", 0.15);
    synthesis.check(config.synthesis.dev_fraction >= 0.0 && config.synthesis.test_fraction >= 0.0
            && config.synthesis.dev_fraction + config.synthesis.test_fraction < 1.0,
        "dev_fraction", "dev and test fractions must be non-negative and sum below 1");

    Section synthetic(root.raw("synthetic"), "synthetic", problems, {"seed", "train_companies", "dev_companies", "test_companies", "clarify_cap"});
    config.synthetic.seed = synthetic.seed("seed", 0);
    config.synthetic.train_companies = static_cast<int>(synthetic.integer("train_companies", 16));
    config.synthetic.dev_companies = static_cast<int>(synthetic.integer("dev_companies", 4));
    config.synthetic.test_companies = static_cast<int>(synthetic.integer("test_companies", 4));
    config.synthetic.clarify_cap = static_cast<int>(synthetic.integer("clarify_cap", 5));
    try {
        validate_synthetic_options(config.synthetic);
    } catch (const Error& e) {
        problems.push_back("synthetic: " + e.message());
    }

    Section backends(root.raw("backends"), "backends", problems, {"generator", "classifier", "simulator", "answerer"});
    config.generator = parse_role(backends.raw("generator"), "generator", problems, base_dir);
    config.classifier = parse_role(backends.raw("classifier"), "classifier", problems, base_dir);
    config.simulator = parse_role(backends.raw("simulator"), "simulator", problems, base_dir);
    config.answerer = parse_role(backends.raw("answerer"), "answerer", problems, base_dir);
    if (!config.classifier.configured) {
        config.classifier.classifier = ClassifierKind::Rule;
    }

    Section similarity(root.raw("similarity"), "similarity", problems, {"kind", "endpoint", "auth_env_var", "retry_limit", "timeout_ms"});
    auto similarity_kind = similarity.text("kind", "jaccard");
    if (similarity_kind == "embedding") {
        ModelBackendConfig embedding;
        embedding.backend_kind = BackendKind::RemoteApi;
        embedding.endpoint = similarity.text("endpoint", "");
        similarity.check(!embedding.endpoint->empty(), "endpoint", "required for embedding similarity");
        if (similarity.has("auth_env_var")) {
            embedding.auth_env_var = similarity.text("auth_env_var", "");
        }
        embedding.retry_limit = static_cast<int>(similarity.integer("retry_limit", 2));
        embedding.timeout = std::chrono::milliseconds(similarity.integer("timeout_ms", 30000));
        config.embedding = embedding;
    } else {
        similarity.check(similarity_kind == "jaccard", "kind", "expected 'jaccard' or 'embedding'");
    }

    if (!problems.empty()) {
        throw ConfigError(std::move(problems));
    }
    return config;
}

RunConfig load_run_config(const fs::path& path)
{
    if (!fs::exists(path)) {
        throw ConfigError({"config: file not found: " + path.string()});
    }
    json document;
    try {
        document = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError({"config: " + path.string() + " is not valid JSON: " + e.what()});
    }
    return parse_run_config(document, fs::absolute(path).parent_path());
}

namespace {

std::vector<std::pair<std::string, std::optional<fs::path>>> path_fields(const RunConfig& config)
{
    return {
        {"paths.train", config.paths.train},
        {"paths.dev", config.paths.dev},
        {"paths.test", config.paths.test},
        {"paths.preferences", config.paths.preferences},
        {"paths.dev_preferences", config.paths.dev_preferences},
        {"paths.catalog", config.paths.catalog},
        {"paths.databases", config.paths.databases},
        {"paths.spider", config.paths.spider},
        {"backends.generator.script", config.generator.script_path},
        {"backends.classifier.script", config.classifier.script_path},
        {"backends.simulator.script", config.simulator.script_path},
        {"backends.answerer.script", config.answerer.script_path},
    };
}

} // namespace

void require_fields(const RunConfig& config, const std::vector<std::string>& fields)
{
    std::vector<std::string> problems;
    const auto known = path_fields(config);
    for (const auto& name : fields) {
        auto it = std::find_if(known.begin(), known.end(), [&](const auto& entry) { return entry.first == name; });
        if (it == known.end()) {
            problems.push_back(name + ": not a path field");
        } else if (!it->second) {
            problems.push_back(name + ": required by this command");
        } else if (!fs::exists(*it->second)) {
            problems.push_back(name + ": path does not exist: " + it->second->string());
        }
    }
    if (!problems.empty()) {
        throw ConfigError(std::move(problems));
    }
}

std::string content_digest(const fs::path& path)
{
    if (fs::is_directory(path)) {
        std::vector<std::pair<std::string, std::string>> entries;
        for (const auto& entry : fs::recursive_directory_iterator(path)) {
            if (entry.is_regular_file()) {
                entries.emplace_back(fs::relative(entry.path(), path).generic_string(), sha256_hex(read_file(entry.path())));
            }
        }
        std::sort(entries.begin(), entries.end());
        std::string listing;
        for (const auto& [name, digest] : entries) {
            listing += name + " " + digest + "\n";
        }
        return sha256_hex(listing);
    }
    return sha256_hex(read_file(path));
}

namespace {

json digestible(const RunConfig& config)
{
    json document = config.resolved;
    for (const auto& [name, path] : path_fields(config)) {
        auto dot = name.find('.');
        auto section = name.substr(0, dot);
        auto rest = name.substr(dot + 1);
        json* node = &document[section];
        if (section == "backends") {
            auto second = rest.find('.');
            node = &(*node)[rest.substr(0, second)];
            rest = rest.substr(second + 1);
        }
        if (path && fs::exists(*path)) {
            (*node)[rest] = "sha256:" + content_digest(*path);
        } else if (node->is_object()) {
            node->erase(rest);
        }
    }
    return document;
}

} // namespace

std::string config_digest(const RunConfig& config) { return sha256_hex(digestible(config).dump()); }

json config_snapshot(const RunConfig& config, const std::string& command)
{
    json inputs = json::object();
    for (const auto& [name, path] : path_fields(config)) {
        if (path) {
            inputs[name] = {{"path", path->string()}, {"sha256", fs::exists(*path) ? json(content_digest(*path)) : json(nullptr)}};
        }
    }
    return json {
        {"command", command},
        {"config", config.resolved},
        {"config_digest", config_digest(config)},
        {"inputs", inputs},
    };
}

ToyPolicyConfig toy_policy_from(const RunConfig& config) { return config.policy; }

} // namespace act
