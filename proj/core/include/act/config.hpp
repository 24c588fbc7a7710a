// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "act/ambigsql.hpp"
#include "act/dpo.hpp"
#include "act/eval.hpp"
#include "act/synthetic.hpp"
#include "act/trainer.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace act {

/// Thrown for invalid run configurations; carries one message per bad field.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

enum class ClassifierKind { Rule, Prompted };

/// One model-backed role (generator M, classifier A, simulator U, SQL answerer).
struct BackendRole {
    ModelBackendConfig backend;
    std::optional<std::filesystem::path> script_path;
    ClassifierKind classifier = ClassifierKind::Rule;
    SimulatorGrounding grounding = SimulatorGrounding::Intent;
    bool configured = false;
};

struct RunPaths {
    std::optional<std::filesystem::path> train;
    std::optional<std::filesystem::path> dev;
    std::optional<std::filesystem::path> test;
    std::optional<std::filesystem::path> preferences;
    std::optional<std::filesystem::path> dev_preferences;
    std::optional<std::filesystem::path> catalog;
    std::optional<std::filesystem::path> databases;
    std::optional<std::filesystem::path> spider;
};

struct RunConfig {
    std::string profile;
    ToyPolicyConfig policy;
    double eval_temperature = 0.0;
    DpoConfig dpo;
    ActConfig act;
    EvalProtocol eval;
    SynthesisOptions synthesis;
    SyntheticTaskOptions synthetic;
    BackendRole generator;
    BackendRole classifier;
    BackendRole simulator;
    BackendRole answerer;
    std::optional<ModelBackendConfig> embedding;
    RunPaths paths;
    /// Profile defaults merged with the user document.
    nlohmann::json resolved;
};

/// Names accepted in the "profile" field.
std::vector<std::string> profile_names();
/// Defaults contributed by a named profile.
nlohmann::json profile_document(const std::string& name);

/// Relative paths resolve against `base_dir`. Every problem found is
/// reported at once through ConfigError, keyed by dotted field name.
RunConfig parse_run_config(const nlohmann::json& document, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// Throws ConfigError naming each listed field that is unset or points at a
/// missing file or directory. Field names are as in the document
/// ("paths.train", "backends.generator.script", ...).
void require_fields(const RunConfig& config, const std::vector<std::string>& fields);

/// Digest of a file's bytes, or of a directory's sorted (name, digest) list.
std::string content_digest(const std::filesystem::path& path);

/// Digest of the resolved configuration with every path replaced by the
/// digest of its content, so identical inputs in different directories
/// produce the same value.
std::string config_digest(const RunConfig& config);

/// Resolved configuration, input digests and the command, for the run dir.
nlohmann::json config_snapshot(const RunConfig& config, const std::string& command);

ToyPolicyConfig toy_policy_from(const RunConfig& config);

} // namespace act
