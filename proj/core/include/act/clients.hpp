// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "act/conv.hpp"
#include "act/prompts.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace act {

struct GenerationRequest {
    std::string prompt;
    int max_new_units = 256;
    double temperature = 0.0;
    std::vector<std::string> stop_markers;
};

void validate_request(const GenerationRequest& request);

/// Scripted responses addressed by the SHA-256 fingerprint of a lookup key.
/// Files hold `{"entries": [{"fingerprint"|"key": ..., "response": ...}]}`;
/// plain `key` entries are fingerprinted on load.
class ScriptTable {
public:
    static ScriptTable load(const std::filesystem::path& path);
    static ScriptTable from_json(const nlohmann::json& document);

    void add_key(std::string_view key, std::string response);
    void add_fingerprint(std::string fingerprint, std::string response);
    std::optional<std::string> find_key(std::string_view key) const;
    std::size_t size() const { return entries_.size(); }

    nlohmann::json to_json() const;
    void save(const std::filesystem::path& path) const;
    std::string digest() const;

private:
    std::map<std::string, std::string> entries_;
};

std::string script_fingerprint(std::string_view key);

enum class BackendKind { RemoteApi, Scripted };
std::string_view to_string(BackendKind kind);
BackendKind parse_backend_kind(std::string_view text);

struct ModelBackendConfig {
    BackendKind backend_kind = BackendKind::Scripted;
    std::optional<std::string> endpoint;
    std::optional<std::string> auth_env_var;
    int retry_limit = 2;
    std::chrono::milliseconds timeout {30000};
    std::optional<ScriptTable> script_table;
    double temperature = 0.0;
    int max_new_units = 256;
};

/// Throws Configuration when the kind-specific requirements are unmet.
void validate_backend_config(const ModelBackendConfig& config);

/// Text-in/text-out completion. `script_key` is consulted by scripted
/// backends only; remote backends send the prompt.
class TextBackend {
public:
    virtual ~TextBackend() = default;
    virtual std::string complete(const GenerationRequest& request, std::string_view script_key) const = 0;
    virtual BackendKind kind() const = 0;
    /// Remote backends return the full completion budget per attempt count.
    virtual int attempts_allowed() const { return 1; }
};

class ScriptedBackend final : public TextBackend {
public:
    explicit ScriptedBackend(ScriptTable table);
    std::string complete(const GenerationRequest& request, std::string_view script_key) const override;
    BackendKind kind() const override { return BackendKind::Scripted; }
    const ScriptTable& table() const { return table_; }

private:
    ScriptTable table_;
};

/// POSTs `{"prompt", "max_new_units", "temperature", "stop"}` as JSON with an
/// optional bearer token and reads `{"text": ...}` (or a raw text body).
/// Performs at most retry_limit + 1 attempts.
class RemoteBackend final : public TextBackend {
public:
    explicit RemoteBackend(ModelBackendConfig config);
    std::string complete(const GenerationRequest& request, std::string_view script_key) const override;
    BackendKind kind() const override { return BackendKind::RemoteApi; }
    int attempts_allowed() const override { return config_.retry_limit + 1; }
    /// Single attempt without retries; throws TransientBackend on failure.
    std::string attempt(const GenerationRequest& request) const;

    static nlohmann::json request_body(const GenerationRequest& request);
    static std::string extract_text(const std::string& body);

private:
    ModelBackendConfig config_;
};

/// One JSON POST to `config.endpoint` with optional bearer auth; returns the
/// body. Network errors and non-2xx statuses are TransientBackend errors.
std::string post_json_once(const ModelBackendConfig& config, const nlohmann::json& body);
/// post_json_once with up to retry_limit retries; the final error is logged
/// verbatim and rethrown.
std::string post_json(const ModelBackendConfig& config, const nlohmann::json& body);

std::shared_ptr<TextBackend> make_backend(const ModelBackendConfig& config);

/// Scripted lookup keys, one per operation. Each is the operation name, a
/// newline, and the canonical inputs.
std::string losing_key(const ConversationTurnState& state, Action rejected);
std::string intent_key(const ConversationTurnState& state);
std::string simulate_key(const ConversationTurnState& state, std::string_view intent);
std::string sql_simulate_key(std::string_view gold_sql);

/// Conditional generator M.
class ConditionalGenerator {
public:
    ConditionalGenerator(std::shared_ptr<const TextBackend> backend, const PromptRegistry& registry, GenerationRequest defaults = {});

    std::string generate_losing_response(const ConversationTurnState& state, Action rejected) const;
    std::string generation_prompt(const ConversationTurnState& state, Action rejected) const;
    /// Raw completion for callers that build their own prompt and key.
    std::string complete(const std::string& prompt, std::string_view script_key) const;

private:
    std::shared_ptr<const TextBackend> backend_;
    const PromptRegistry* registry_;
    GenerationRequest defaults_;
};

/// Action classifier A.
class ActionClassifier {
public:
    virtual ~ActionClassifier() = default;
    virtual Action classify(const ConversationTurnState& state, std::string_view candidate) const = 0;
};

/// Deterministic rule: a trailing "?" or a leading interrogative word means
/// CLARIFY; a leading SELECT means ANSWER; anything else is ANSWER.
Action classify_by_rule(std::string_view candidate);

class RuleClassifier final : public ActionClassifier {
public:
    Action classify(const ConversationTurnState& state, std::string_view candidate) const override;
};

/// Prompts a backend with ten labelled examples and reads the first of
/// "clarifying question" / "direct answer" in the completion.
class PromptedClassifier final : public ActionClassifier {
public:
    PromptedClassifier(std::shared_ptr<const TextBackend> backend, const PromptRegistry& registry, GenerationRequest defaults = {});
    Action classify(const ConversationTurnState& state, std::string_view candidate) const override;
    std::string classification_prompt(const ConversationTurnState& state, std::string_view candidate) const;

private:
    std::shared_ptr<const TextBackend> backend_;
    const PromptRegistry* registry_;
    GenerationRequest defaults_;
};

/// Returns the action named first in a classifier completion.
std::optional<Action> parse_classifier_completion(std::string_view completion);

enum class SimulatorGrounding { Intent, TargetSql };

/// User simulator U. With TargetSql grounding, the intent is the state's
/// trajectory goal (the target query) and no summarization call is made.
class UserSimulator {
public:
    UserSimulator(std::shared_ptr<const TextBackend> backend, const PromptRegistry& registry, SimulatorGrounding grounding,
        GenerationRequest defaults = {});

    std::string summarize_intent(const ConversationTurnState& state) const;
    std::string simulate_user_turn(const ConversationTurnState& state, const std::string& intent, const std::string& system_msg) const;

    std::string summarization_prompt(const ConversationTurnState& state) const;
    std::string simulation_prompt(const ConversationTurnState& state, const std::string& intent, const std::string& system_msg) const;
    SimulatorGrounding grounding() const { return grounding_; }

private:
    std::shared_ptr<const TextBackend> backend_;
    const PromptRegistry* registry_;
    SimulatorGrounding grounding_;
    GenerationRequest defaults_;
};

enum class BaselineStyle { Standard, Cot, ProactiveMiprompt };
std::string_view to_string(BaselineStyle style);
BaselineStyle parse_baseline_style(std::string_view text);

/// In-context prompting baselines; at most ten shots.
std::string render_baseline_prompt(const ConversationTurnState& state, BaselineStyle style,
    const std::vector<ConversationTurnState>& shots, const PromptRegistry& registry);
std::string render_baseline_prompt(const ConversationTurnState& state, BaselineStyle style,
    const std::vector<ConversationTurnState>& shots);

inline constexpr std::size_t kClassificationShots = 10;
inline constexpr std::size_t kSimulationShots = 3;
inline constexpr std::size_t kPerturbationShotsPerKind = 5;
inline constexpr std::size_t kMaxBaselineShots = 10;

} // namespace act
