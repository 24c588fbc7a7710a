// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "act/common.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace act {

class PromptRegistry;

enum class Action { Clarify, Answer };

Action complement_action(Action action);
std::string_view to_string(Action action);
Action parse_action(std::string_view text);

enum class Speaker { User, System };
std::string_view to_string(Speaker speaker);
Speaker parse_speaker(std::string_view text);

enum class Provenance { Dataset, PolicySampled, SimulatedUser, LlmGenerated };
std::string_view to_string(Provenance provenance);
Provenance parse_provenance(std::string_view text);

struct DialogueMessage {
    Speaker speaker = Speaker::User;
    std::string text;
    Provenance provenance = Provenance::Dataset;

    static DialogueMessage user(std::string text, Provenance provenance = Provenance::Dataset);
    static DialogueMessage system(std::string text, Provenance provenance = Provenance::Dataset);

    bool operator==(const DialogueMessage&) const = default;
};

/// One system-side decision point: grounding, the transcript so far (ending in
/// a user message), the reference reply, the final answer the conversation
/// should reach, and the reference action.
struct ConversationTurnState {
    std::string task_info;
    std::vector<DialogueMessage> history;
    std::string gold_response;
    std::string trajectory_goal;
    Action gold_action = Action::Answer;
    std::vector<std::string> goal_set;

    bool operator==(const ConversationTurnState&) const = default;
};

/// Throws InvalidTranscript when the state breaks its invariants.
void validate_state(const ConversationTurnState& state);

/// Checks speaker alternation and non-blank text; does not require a
/// trailing user message.
void validate_alternation(const std::vector<DialogueMessage>& messages);

ConversationTurnState extend_state(const ConversationTurnState& state, const std::vector<DialogueMessage>& messages);

/// Returns the last user message text; throws InvalidTranscript if none.
const std::string& last_user_text(const ConversationTurnState& state);

struct Trajectory {
    std::vector<DialogueMessage> messages;
    std::string outcome;
    int clarify_rounds = 0;
    std::optional<bool> success;
    bool cap_exceeded = false;

    bool operator==(const Trajectory&) const = default;
};

/// Throws InvalidTranscript unless messages start and end with SYSTEM,
/// alternate, and outcome matches the final system text.
void validate_trajectory(const Trajectory& trajectory, int clarify_cap);

/// A winning or losing side: either a single reply or a simulated trajectory.
using Response = std::variant<std::string, Trajectory>;

/// Text used when comparing or displaying a response (the trajectory outcome
/// for trajectories).
const std::string& response_text(const Response& response);
bool responses_identical(const Response& a, const Response& b);

enum class PairOrigin { Offline, OnpolicyLossReplaced, OnpolicyWinReplaced };
std::string_view to_string(PairOrigin origin);
PairOrigin parse_origin(std::string_view text);

struct PreferencePair {
    ConversationTurnState state;
    Action rejected_action = Action::Clarify;
    Response winning;
    Response losing;
    PairOrigin origin = PairOrigin::Offline;

    bool operator==(const PreferencePair&) const = default;
};

void validate_pair(const PreferencePair& pair);

void to_json(nlohmann::json& j, const DialogueMessage& m);
void from_json(const nlohmann::json& j, DialogueMessage& m);
void to_json(nlohmann::json& j, const ConversationTurnState& s);
void from_json(const nlohmann::json& j, ConversationTurnState& s);
void to_json(nlohmann::json& j, const Trajectory& t);
void from_json(const nlohmann::json& j, Trajectory& t);
void to_json(nlohmann::json& j, const PreferencePair& p);
void from_json(const nlohmann::json& j, PreferencePair& p);
nlohmann::json response_to_json(const Response& response);
Response response_from_json(const nlohmann::json& j);

/// Canonical single-line JSON record for a state (sorted keys).
std::string serialize_state(const ConversationTurnState& state);
ConversationTurnState parse_state(std::string_view line);

std::vector<ConversationTurnState> read_dataset(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, const std::vector<ConversationTurnState>& states);
std::string dataset_digest(const std::vector<ConversationTurnState>& states);

/// Prompt rendering. Templates carry `{{task_info}}` and `{{conversation}}`
/// placeholders; the text after `{{conversation}}` is the trailing cue.
/// Lines of task_info or of multi-line messages that would read as a speaker
/// label (or that start with a backslash) are prefixed with a backslash, so
/// the rendering can be parsed back unambiguously.
std::string render_prompt(const ConversationTurnState& state, std::string_view template_id);
std::string render_prompt(const ConversationTurnState& state, std::string_view template_id, const PromptRegistry& registry);

std::string render_conversation(const std::vector<DialogueMessage>& history);
std::string escape_block(std::string_view text);

struct ParsedPrompt {
    std::string task_info;
    std::vector<DialogueMessage> history;
};

/// Inverse of render_prompt for the given template; throws Configuration when
/// the prompt was not produced by that template.
ParsedPrompt parse_prompt(std::string_view prompt, std::string_view template_id, const PromptRegistry& registry);

} // namespace act
