// SPDX-License-Identifier: Apache-2.0
#include "act/conv.hpp"

#include "act/prompts.hpp"

#include <fstream>

namespace act {

using nlohmann::json;

Action complement_action(Action action) { return action == Action::Clarify ? Action::Answer : Action::Clarify; }

std::string_view to_string(Action action) { return action == Action::Clarify ? "CLARIFY" : "ANSWER"; }

Action parse_action(std::string_view text)
{
    if (text == "CLARIFY") {
        return Action::Clarify;
    }
    if (text == "ANSWER") {
        return Action::Answer;
    }
    fail(ErrorKind::Configuration, "unknown action '" + std::string(text) + "'");
}

std::string_view to_string(Speaker speaker) { return speaker == Speaker::User ? "USER" : "SYSTEM"; }

Speaker parse_speaker(std::string_view text)
{
    if (text == "USER") {
        return Speaker::User;
    }
    if (text == "SYSTEM") {
        return Speaker::System;
    }
    fail(ErrorKind::InvalidTranscript, "unknown speaker '" + std::string(text) + "'");
}

std::string_view to_string(Provenance provenance)
{
    switch (provenance) {
    case Provenance::Dataset: return "DATASET";
    case Provenance::PolicySampled: return "POLICY_SAMPLED";
    case Provenance::SimulatedUser: return "SIMULATED_USER";
    case Provenance::LlmGenerated: return "LLM_GENERATED";
    }
    return "DATASET";
}

Provenance parse_provenance(std::string_view text)
{
    for (auto p : {Provenance::Dataset, Provenance::PolicySampled, Provenance::SimulatedUser, Provenance::LlmGenerated}) {
        if (to_string(p) == text) {
            return p;
        }
    }
    fail(ErrorKind::InvalidTranscript, "unknown provenance '" + std::string(text) + "'");
}

DialogueMessage DialogueMessage::user(std::string text, Provenance provenance)
{
    return DialogueMessage {.speaker = Speaker::User, .text = std::move(text), .provenance = provenance};
}

DialogueMessage DialogueMessage::system(std::string text, Provenance provenance)
{
    return DialogueMessage {.speaker = Speaker::System, .text = std::move(text), .provenance = provenance};
}

void validate_alternation(const std::vector<DialogueMessage>& messages)
{
    for (std::size_t i = 0; i < messages.size(); ++i) {
        if (is_blank(messages[i].text)) {
            fail(ErrorKind::InvalidTranscript, "message " + std::to_string(i) + " has blank text");
        }
        if (i > 0 && messages[i].speaker == messages[i - 1].speaker) {
            fail(ErrorKind::InvalidTranscript, "speakers do not alternate at message " + std::to_string(i));
        }
    }
}

void validate_state(const ConversationTurnState& state)
{
    validate_alternation(state.history);
    if (state.history.empty() || state.history.back().speaker != Speaker::User) {
        fail(ErrorKind::InvalidTranscript, "history must end with a USER message");
    }
    if (state.goal_set.empty()) {
        fail(ErrorKind::InvalidTranscript, "goal_set is empty");
    }
    if (std::find(state.goal_set.begin(), state.goal_set.end(), state.trajectory_goal) == state.goal_set.end()) {
        fail(ErrorKind::InvalidTranscript, "goal_set does not contain trajectory_goal");
    }
}

ConversationTurnState extend_state(const ConversationTurnState& state, const std::vector<DialogueMessage>& messages)
{
    if (messages.empty()) {
        return state;
    }
    if (!state.history.empty() && state.history.back().speaker == messages.front().speaker) {
        fail(ErrorKind::InvalidTranscript, "extension breaks speaker alternation at the join");
    }
    validate_alternation(messages);
    ConversationTurnState extended = state;
    extended.history.insert(extended.history.end(), messages.begin(), messages.end());
    return extended;
}

const std::string& last_user_text(const ConversationTurnState& state)
{
    for (auto it = state.history.rbegin(); it != state.history.rend(); ++it) {
        if (it->speaker == Speaker::User) {
            return it->text;
        }
    }
    fail(ErrorKind::InvalidTranscript, "state has no USER message");
}

void validate_trajectory(const Trajectory& trajectory, int clarify_cap)
{
    const auto& messages = trajectory.messages;
    if (messages.empty() || messages.front().speaker != Speaker::System || messages.back().speaker != Speaker::System) {
        fail(ErrorKind::InvalidTranscript, "trajectory must start and end with a SYSTEM message");
    }
    validate_alternation(messages);
    if (trajectory.outcome != messages.back().text) {
        fail(ErrorKind::InvalidTranscript, "trajectory outcome differs from final system text");
    }
    if (trajectory.clarify_rounds < 0 || trajectory.clarify_rounds > clarify_cap) {
        fail(ErrorKind::InvalidTranscript, "clarify_rounds outside [0, cap]");
    }
}

const std::string& response_text(const Response& response)
{
    if (const auto* text = std::get_if<std::string>(&response)) {
        return *text;
    }
    return std::get<Trajectory>(response).outcome;
}

bool responses_identical(const Response& a, const Response& b)
{
    if (a.index() != b.index()) {
        // A one-message trajectory is the same utterance as its plain string.
        const auto* ta = std::get_if<Trajectory>(&a);
        const auto* tb = std::get_if<Trajectory>(&b);
        const Trajectory& t = ta != nullptr ? *ta : *tb;
        const std::string& s = ta != nullptr ? std::get<std::string>(b) : std::get<std::string>(a);
        return t.messages.size() == 1 && trim(t.messages.front().text) == trim(s);
    }
    if (const auto* text = std::get_if<std::string>(&a)) {
        return trim(*text) == trim(std::get<std::string>(b));
    }
    return std::get<Trajectory>(a).messages == std::get<Trajectory>(b).messages;
}

std::string_view to_string(PairOrigin origin)
{
    switch (origin) {
    case PairOrigin::Offline: return "OFFLINE";
    case PairOrigin::OnpolicyLossReplaced: return "ONPOLICY_LOSS_REPLACED";
    case PairOrigin::OnpolicyWinReplaced: return "ONPOLICY_WIN_REPLACED";
    }
    return "OFFLINE";
}

PairOrigin parse_origin(std::string_view text)
{
    for (auto o : {PairOrigin::Offline, PairOrigin::OnpolicyLossReplaced, PairOrigin::OnpolicyWinReplaced}) {
        if (to_string(o) == text) {
            return o;
        }
    }
    fail(ErrorKind::Configuration, "unknown pair origin '" + std::string(text) + "'");
}

void validate_pair(const PreferencePair& pair)
{
    if (pair.rejected_action != complement_action(pair.state.gold_action)) {
        fail(ErrorKind::Contract, "rejected_action is not the complement of gold_action");
    }
    if (pair.origin == PairOrigin::Offline) {
        const auto* winning = std::get_if<std::string>(&pair.winning);
        if (winning == nullptr || *winning != pair.state.gold_response) {
            fail(ErrorKind::Contract, "offline pair winning response differs from gold_response");
        }
    }
    if (responses_identical(pair.winning, pair.losing)) {
        fail(ErrorKind::Contract, "winning and losing responses are identical");
    }
}

void to_json(json& j, const DialogueMessage& m)
{
    j = json {{"speaker", to_string(m.speaker)}, {"text", m.text}};
    if (m.provenance != Provenance::Dataset) {
        j["provenance"] = to_string(m.provenance);
    }
}

void from_json(const json& j, DialogueMessage& m)
{
    m.speaker = parse_speaker(j.at("speaker").get<std::string>());
    m.text = j.at("text").get<std::string>();
    m.provenance = j.contains("provenance") ? parse_provenance(j.at("provenance").get<std::string>()) : Provenance::Dataset;
}

void to_json(json& j, const ConversationTurnState& s)
{
    j = json {
        {"task_info", s.task_info},
        {"history", s.history},
        {"gold_response", s.gold_response},
        {"trajectory_goal", s.trajectory_goal},
        {"gold_action", to_string(s.gold_action)},
        {"goal_set", s.goal_set},
    };
}

void from_json(const json& j, ConversationTurnState& s)
{
    s.task_info = j.at("task_info").get<std::string>();
    s.history = j.at("history").get<std::vector<DialogueMessage>>();
    s.gold_response = j.at("gold_response").get<std::string>();
    s.trajectory_goal = j.at("trajectory_goal").get<std::string>();
    s.gold_action = parse_action(j.at("gold_action").get<std::string>());
    s.goal_set = j.at("goal_set").get<std::vector<std::string>>();
}

void to_json(json& j, const Trajectory& t)
{
    j = json {
        {"messages", t.messages},
        {"outcome", t.outcome},
        {"clarify_rounds", t.clarify_rounds},
        {"cap_exceeded", t.cap_exceeded},
    };
    j["success"] = t.success.has_value() ? json(*t.success) : json(nullptr);
}

void from_json(const json& j, Trajectory& t)
{
    t.messages = j.at("messages").get<std::vector<DialogueMessage>>();
    t.outcome = j.at("outcome").get<std::string>();
    t.clarify_rounds = j.at("clarify_rounds").get<int>();
    t.cap_exceeded = j.value("cap_exceeded", false);
    if (j.contains("success") && !j.at("success").is_null()) {
        t.success = j.at("success").get<bool>();
    } else {
        t.success.reset();
    }
}

json response_to_json(const Response& response)
{
    if (const auto* text = std::get_if<std::string>(&response)) {
        return *text;
    }
    return json {{"trajectory", std::get<Trajectory>(response)}};
}

Response response_from_json(const json& j)
{
    if (j.is_string()) {
        return j.get<std::string>();
    }
    return j.at("trajectory").get<Trajectory>();
}

void to_json(json& j, const PreferencePair& p)
{
    j = json {
        {"state", p.state},
        {"rejected_action", to_string(p.rejected_action)},
        {"winning", response_to_json(p.winning)},
        {"losing", response_to_json(p.losing)},
        {"origin", to_string(p.origin)},
    };
}

void from_json(const json& j, PreferencePair& p)
{
    p.state = j.at("state").get<ConversationTurnState>();
    p.rejected_action = parse_action(j.at("rejected_action").get<std::string>());
    p.winning = response_from_json(j.at("winning"));
    p.losing = response_from_json(j.at("losing"));
    p.origin = parse_origin(j.at("origin").get<std::string>());
}

std::string serialize_state(const ConversationTurnState& state) { return json(state).dump(); }

ConversationTurnState parse_state(std::string_view line)
{
    try {
        auto state = json::parse(line).get<ConversationTurnState>();
        validate_state(state);
        return state;
    } catch (const json::exception& e) {
        fail(ErrorKind::InvalidTranscript, std::string("malformed state record: ") + e.what());
    }
}

std::vector<ConversationTurnState> read_dataset(const std::filesystem::path& path)
{
    std::vector<ConversationTurnState> states;
    for (const auto& line : split_lines(read_file(path))) {
        if (!is_blank(line)) {
            states.push_back(parse_state(line));
        }
    }
    return states;
}

void write_dataset(const std::filesystem::path& path, const std::vector<ConversationTurnState>& states)
{
    std::string content;
    for (const auto& state : states) {
        content += serialize_state(state);
        content += '\n';
    }
    write_file(path, content);
}

std::string dataset_digest(const std::vector<ConversationTurnState>& states)
{
    std::string content;
    for (const auto& state : states) {
        content += serialize_state(state);
        content += '\n';
    }
    return sha256_hex(content);
}

namespace {

constexpr std::string_view kUserLabel = "User:";
constexpr std::string_view kAssistantLabel = "Assistant:";

bool needs_escape(std::string_view line)
{
    return line.starts_with(kUserLabel) || line.starts_with(kAssistantLabel) || line.starts_with("\\");
}

std::string unescape_line(std::string_view line)
{
    if (line.starts_with("\\")) {
        return std::string(line.substr(1));
    }
    return std::string(line);
}

struct TemplateParts {
    std::string prefix;
    std::string middle;
    std::string suffix;
};

TemplateParts split_template(const std::string& text, std::string_view template_id)
{
    constexpr std::string_view task = "{{task_info}}";
    constexpr std::string_view conv = "{{conversation}}";
    auto t = text.find(task);
    auto c = text.find(conv);
    if (t == std::string::npos || c == std::string::npos || c < t) {
        fail(ErrorKind::Configuration,
            "template '" + std::string(template_id) + "' lacks {{task_info}} before {{conversation}}");
    }
    return TemplateParts {
        .prefix = text.substr(0, t),
        .middle = text.substr(t + task.size(), c - t - task.size()),
        .suffix = text.substr(c + conv.size()),
    };
}

} // namespace

std::string escape_block(std::string_view text)
{
    std::string out;
    auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (i > 0) {
            out.push_back('\n');
        }
        if (needs_escape(lines[i])) {
            out.push_back('\\');
        }
        out += lines[i];
    }
    return out;
}

std::string render_conversation(const std::vector<DialogueMessage>& history)
{
    std::string out;
    for (std::size_t i = 0; i < history.size(); ++i) {
        if (i > 0) {
            out.push_back('\n');
        }
        const auto& message = history[i];
        out += message.speaker == Speaker::User ? kUserLabel : kAssistantLabel;
        out.push_back(' ');
        auto lines = split_lines(message.text);
        out += lines.front();
        for (std::size_t k = 1; k < lines.size(); ++k) {
            out.push_back('\n');
            if (needs_escape(lines[k])) {
                out.push_back('\\');
            }
            out += lines[k];
        }
    }
    return out;
}

std::string render_prompt(const ConversationTurnState& state, std::string_view template_id)
{
    return render_prompt(state, template_id, PromptRegistry::builtin());
}

std::string render_prompt(const ConversationTurnState& state, std::string_view template_id, const PromptRegistry& registry)
{
    const auto& text = registry.template_text(template_id);
    auto parts = split_template(text, template_id);
    std::string out = parts.prefix;
    out += escape_block(state.task_info);
    out += parts.middle;
    out += render_conversation(state.history);
    out += parts.suffix;
    return out;
}

ParsedPrompt parse_prompt(std::string_view prompt, std::string_view template_id, const PromptRegistry& registry)
{
    auto parts = split_template(registry.template_text(template_id), template_id);
    if (!prompt.starts_with(parts.prefix) || !prompt.ends_with(parts.suffix)
        || prompt.size() < parts.prefix.size() + parts.suffix.size()) {
        fail(ErrorKind::Configuration, "prompt does not match template '" + std::string(template_id) + "'");
    }
    auto body = prompt.substr(parts.prefix.size(), prompt.size() - parts.prefix.size() - parts.suffix.size());
    // The conversation begins at the first unescaped label line that is
    // preceded by the template's middle section.
    std::size_t line_start = 0;
    while (true) {
        auto rest = body.substr(line_start);
        if (rest.starts_with(kUserLabel) || rest.starts_with(kAssistantLabel)) {
            if (line_start >= parts.middle.size()
                && body.substr(line_start - parts.middle.size(), parts.middle.size()) == parts.middle) {
                break;
            }
        }
        auto next = body.find('\n', line_start);
        if (next == std::string_view::npos) {
            fail(ErrorKind::Configuration, "prompt has no conversation section");
        }
        line_start = next + 1;
    }
    ParsedPrompt parsed;
    auto task_block = body.substr(0, line_start - parts.middle.size());
    auto task_lines = split_lines(task_block);
    for (std::size_t i = 0; i < task_lines.size(); ++i) {
        if (i > 0) {
            parsed.task_info.push_back('\n');
        }
        parsed.task_info += unescape_line(task_lines[i]);
    }
    for (const auto& line : split_lines(body.substr(line_start))) {
        std::string_view view(line);
        if (view.starts_with(kUserLabel) || view.starts_with(kAssistantLabel)) {
            bool user = view.starts_with(kUserLabel);
            auto label = user ? kUserLabel : kAssistantLabel;
            auto text = view.substr(label.size());
            if (text.starts_with(" ")) {
                text.remove_prefix(1);
            }
            parsed.history.push_back(DialogueMessage {
                .speaker = user ? Speaker::User : Speaker::System, .text = std::string(text), .provenance = Provenance::Dataset});
        } else {
            if (parsed.history.empty()) {
                fail(ErrorKind::Configuration, "continuation line before the first message");
            }
            parsed.history.back().text += '\n';
            parsed.history.back().text += unescape_line(view);
        }
    }
    return parsed;
}

} // namespace act
