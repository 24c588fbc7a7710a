// SPDX-License-Identifier: Apache-2.0
#include "act/clients.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <array>
#include <cstdlib>

namespace act {

using nlohmann::json;

void validate_request(const GenerationRequest& request)
{
    if (request.max_new_units < 1) {
        fail(ErrorKind::Precondition, "max_new_units must be >= 1");
    }
    if (!(request.temperature >= 0.0)) {
        fail(ErrorKind::Precondition, "temperature must be >= 0");
    }
}

std::string script_fingerprint(std::string_view key) { return sha256_hex(key); }

ScriptTable ScriptTable::load(const std::filesystem::path& path)
{
    try {
        return from_json(json::parse(read_file(path)));
    } catch (const json::exception& e) {
        fail(ErrorKind::Configuration, "malformed script table " + path.string() + ": " + e.what());
    }
}

ScriptTable ScriptTable::from_json(const json& document)
{
    ScriptTable table;
    for (const auto& entry : document.at("entries")) {
        auto response = entry.at("response").get<std::string>();
        if (entry.contains("fingerprint")) {
            table.add_fingerprint(entry.at("fingerprint").get<std::string>(), std::move(response));
        } else {
            table.add_key(entry.at("key").get<std::string>(), std::move(response));
        }
    }
    return table;
}

void ScriptTable::add_key(std::string_view key, std::string response)
{
    entries_[script_fingerprint(key)] = std::move(response);
}

void ScriptTable::add_fingerprint(std::string fingerprint, std::string response)
{
    entries_[std::move(fingerprint)] = std::move(response);
}

std::optional<std::string> ScriptTable::find_key(std::string_view key) const
{
    auto it = entries_.find(script_fingerprint(key));
    if (it == entries_.end()) {
        return std::nullopt;
    }
    return it->second;
}

json ScriptTable::to_json() const
{
    json entries = json::array();
    for (const auto& [fingerprint, response] : entries_) {
        entries.push_back(json {{"fingerprint", fingerprint}, {"response", response}});
    }
    return json {{"entries", entries}};
}

void ScriptTable::save(const std::filesystem::path& path) const { write_file(path, to_json().dump(1) + "\n"); }

std::string ScriptTable::digest() const { return sha256_hex(to_json().dump()); }

std::string_view to_string(BackendKind kind) { return kind == BackendKind::RemoteApi ? "remote_api" : "scripted"; }

BackendKind parse_backend_kind(std::string_view text)
{
    if (text == "remote_api") {
        return BackendKind::RemoteApi;
    }
    if (text == "scripted") {
        return BackendKind::Scripted;
    }
    fail(ErrorKind::Configuration, "unknown backend kind '" + std::string(text) + "'");
}

void validate_backend_config(const ModelBackendConfig& config)
{
    if (config.backend_kind == BackendKind::RemoteApi && (!config.endpoint || config.endpoint->empty())) {
        fail(ErrorKind::Configuration, "remote_api backend requires an endpoint");
    }
    if (config.backend_kind == BackendKind::Scripted && !config.script_table) {
        fail(ErrorKind::Configuration, "scripted backend requires a script table");
    }
    if (config.retry_limit < 0) {
        fail(ErrorKind::Configuration, "retry_limit must be >= 0");
    }
    if (config.timeout.count() <= 0) {
        fail(ErrorKind::Configuration, "timeout must be positive");
    }
}

ScriptedBackend::ScriptedBackend(ScriptTable table)
    : table_(std::move(table))
{
}

std::string ScriptedBackend::complete(const GenerationRequest& request, std::string_view script_key) const
{
    validate_request(request);
    auto found = table_.find_key(script_key);
    if (!found) {
        fail(ErrorKind::TransientBackend, "scripted backend has no response for fingerprint " + script_fingerprint(script_key));
    }
    return *found;
}

namespace {

std::pair<std::string, std::string> split_endpoint(const std::string& url)
{
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        fail(ErrorKind::Configuration, "endpoint must include a scheme: " + url);
    }
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        return {url, "/"};
    }
    return {url.substr(0, path_start), url.substr(path_start)};
}

} // namespace

RemoteBackend::RemoteBackend(ModelBackendConfig config)
    : config_(std::move(config))
{
    validate_backend_config(config_);
    split_endpoint(*config_.endpoint);
}

std::string post_json_once(const ModelBackendConfig& config, const json& body)
{
    if (!config.endpoint) {
        fail(ErrorKind::Configuration, "remote backend requires an endpoint");
    }
    auto [host, path] = split_endpoint(*config.endpoint);
    httplib::Client client(host);
    auto seconds = std::chrono::duration_cast<std::chrono::seconds>(config.timeout);
    auto micros = std::chrono::duration_cast<std::chrono::microseconds>(config.timeout - seconds);
    client.set_connection_timeout(seconds.count(), micros.count());
    client.set_read_timeout(seconds.count(), micros.count());
    client.set_write_timeout(seconds.count(), micros.count());

    httplib::Headers headers;
    if (config.auth_env_var) {
        const char* token = std::getenv(config.auth_env_var->c_str());
        if (token == nullptr) {
            fail(ErrorKind::Configuration, "environment variable " + *config.auth_env_var + " is not set");
        }
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    auto result = client.Post(path, headers, body.dump(), "application/json");
    if (!result) {
        fail(ErrorKind::TransientBackend, "request to " + *config.endpoint + " failed: " + httplib::to_string(result.error()));
    }
    if (result->status < 200 || result->status >= 300) {
        fail(ErrorKind::TransientBackend,
            "endpoint " + *config.endpoint + " returned HTTP " + std::to_string(result->status) + ": " + result->body);
    }
    return result->body;
}

std::string post_json(const ModelBackendConfig& config, const json& body)
{
    std::string last_error;
    for (int i = 0; i <= config.retry_limit; ++i) {
        try {
            return post_json_once(config, body);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::TransientBackend) {
                throw;
            }
            last_error = e.what();
            spdlog::warn("remote attempt {}/{} failed: {}", i + 1, config.retry_limit + 1, last_error);
        }
    }
    spdlog::error("remote backend exhausted {} attempts; final error: {}", config.retry_limit + 1, last_error);
    fail(ErrorKind::TransientBackend, last_error);
}

std::string RemoteBackend::attempt(const GenerationRequest& request) const
{
    return extract_text(post_json_once(config_, request_body(request)));
}

std::string RemoteBackend::complete(const GenerationRequest& request, std::string_view) const
{
    validate_request(request);
    return extract_text(post_json(config_, request_body(request)));
}

json RemoteBackend::request_body(const GenerationRequest& request)
{
    return json {
        {"prompt", request.prompt},
        {"max_new_units", request.max_new_units},
        {"temperature", request.temperature},
        {"stop", request.stop_markers},
    };
}

std::string RemoteBackend::extract_text(const std::string& body)
{
    auto parsed = json::parse(body, nullptr, false);
    if (!parsed.is_discarded() && parsed.is_object() && parsed.contains("text") && parsed.at("text").is_string()) {
        return parsed.at("text").get<std::string>();
    }
    return body;
}

std::shared_ptr<TextBackend> make_backend(const ModelBackendConfig& config)
{
    validate_backend_config(config);
    if (config.backend_kind == BackendKind::RemoteApi) {
        return std::make_shared<RemoteBackend>(config);
    }
    return std::make_shared<ScriptedBackend>(*config.script_table);
}

std::string losing_key(const ConversationTurnState& state, Action rejected)
{
    return "generate_losing\n" + serialize_state(state) + "\n" + std::string(to_string(rejected));
}

std::string intent_key(const ConversationTurnState& state) { return "summarize_intent\n" + serialize_state(state); }

std::string simulate_key(const ConversationTurnState& state, std::string_view intent)
{
    return "simulate_user\n" + serialize_state(state) + "\n" + std::string(intent);
}

std::string sql_simulate_key(std::string_view gold_sql) { return "simulate_user_sql\n" + std::string(gold_sql); }

namespace {

std::vector<DialogueMessage> exemplar_history(const json& exemplar)
{
    std::vector<DialogueMessage> history;
    for (const auto& m : exemplar.at("history")) {
        history.push_back(DialogueMessage {.speaker = parse_speaker(m.at("speaker").get<std::string>()),
            .text = m.at("text").get<std::string>(),
            .provenance = Provenance::Dataset});
    }
    return history;
}

std::string render_state_block(const std::string& task_info, const std::vector<DialogueMessage>& history)
{
    return escape_block(task_info) + "\n" + render_conversation(history);
}

std::string require_text(std::string text, std::string_view what)
{
    auto trimmed = trim(text);
    if (trimmed.empty()) {
        fail(ErrorKind::DegenerateGeneration, std::string(what) + " returned an empty generation");
    }
    return trimmed;
}

GenerationRequest with_prompt(GenerationRequest request, std::string prompt)
{
    request.prompt = std::move(prompt);
    return request;
}

} // namespace

ConditionalGenerator::ConditionalGenerator(std::shared_ptr<const TextBackend> backend, const PromptRegistry& registry, GenerationRequest defaults)
    : backend_(std::move(backend))
    , registry_(&registry)
    , defaults_(std::move(defaults))
{
    if (defaults_.stop_markers.empty()) {
        defaults_.stop_markers = {"\nUser:"};
    }
}

std::string ConditionalGenerator::generation_prompt(const ConversationTurnState& state, Action rejected) const
{
    const auto& clarify_note = registry_->template_text("generation-clarify-note");
    const auto& answer_note = registry_->template_text("generation-answer-note");
    std::string examples;
    for (const auto& exemplar : registry_->exemplars("icl-conversations")) {
        if (!examples.empty()) {
            examples += "\n\n";
        }
        examples += escape_block(exemplar.at("task_info").get<std::string>());
        for (const auto& m : exemplar.at("history")) {
            auto message = DialogueMessage {.speaker = parse_speaker(m.at("speaker").get<std::string>()),
                .text = m.at("text").get<std::string>(),
                .provenance = Provenance::Dataset};
            examples += "\n";
            if (message.speaker == Speaker::System) {
                examples += parse_action(m.at("action").get<std::string>()) == Action::Clarify ? clarify_note : answer_note;
                examples += "\n";
            }
            examples += render_conversation({message});
        }
    }
    return registry_->fill("generation",
        {
            {"examples", examples},
            {"task_info", escape_block(state.task_info)},
            {"conversation", render_conversation(state.history)},
            {"instruction", rejected == Action::Clarify ? clarify_note : answer_note},
        });
}

std::string ConditionalGenerator::generate_losing_response(const ConversationTurnState& state, Action rejected) const
{
    auto request = with_prompt(defaults_, generation_prompt(state, rejected));
    return require_text(backend_->complete(request, losing_key(state, rejected)), "conditional generator");
}

std::string ConditionalGenerator::complete(const std::string& prompt, std::string_view script_key) const
{
    return backend_->complete(with_prompt(defaults_, prompt), script_key);
}

Action classify_by_rule(std::string_view candidate)
{
    auto text = trim(candidate);
    if (text.empty()) {
        fail(ErrorKind::Precondition, "cannot classify an empty candidate");
    }
    if (text.back() == '?') {
        return Action::Clarify;
    }
    static constexpr std::array<std::string_view, 24> interrogatives {"what", "which", "who", "whom", "whose", "when",
        "where", "why", "how", "do", "does", "did", "is", "are", "was", "were", "can", "could", "would", "should",
        "will", "shall", "may", "might"};
    auto tokens = word_tokens(text);
    if (!tokens.empty()) {
        // Only a bare leading word counts, so "SELECT" or "whatever" do not match.
        auto first_end = text.find_first_of(" \t\n,");
        auto first = to_lower(text.substr(0, first_end));
        for (auto word : interrogatives) {
            if (first == word) {
                return Action::Clarify;
            }
        }
    }
    return Action::Answer;
}

Action RuleClassifier::classify(const ConversationTurnState&, std::string_view candidate) const
{
    return classify_by_rule(candidate);
}

std::optional<Action> parse_classifier_completion(std::string_view completion)
{
    auto lower = to_lower(completion);
    auto clarify = lower.find("clarifying question");
    auto answer = lower.find("direct answer");
    if (clarify == std::string::npos && answer == std::string::npos) {
        return std::nullopt;
    }
    if (answer == std::string::npos || (clarify != std::string::npos && clarify < answer)) {
        return Action::Clarify;
    }
    return Action::Answer;
}

PromptedClassifier::PromptedClassifier(std::shared_ptr<const TextBackend> backend, const PromptRegistry& registry, GenerationRequest defaults)
    : backend_(std::move(backend))
    , registry_(&registry)
    , defaults_(std::move(defaults))
{
}

std::string PromptedClassifier::classification_prompt(const ConversationTurnState& state, std::string_view candidate) const
{
    std::string examples;
    const auto& rows = registry_->exemplars("icl-conversations");
    if (rows.size() < kClassificationShots) {
        fail(ErrorKind::Configuration, "classification needs ten exemplars");
    }
    for (std::size_t i = 0; i < kClassificationShots; ++i) {
        const auto& exemplar = rows[i];
        auto history = exemplar_history(exemplar);
        auto label = parse_action(exemplar.at("history").back().at("action").get<std::string>());
        if (!examples.empty()) {
            examples += "\n\n";
        }
        examples += render_state_block(exemplar.at("task_info").get<std::string>(), history);
        examples += "\nThe last Assistant utterance is ";
        examples += label == Action::Clarify ? "a clarifying question." : "a direct answer.";
    }
    auto history = state.history;
    history.push_back(DialogueMessage::system(std::string(candidate), Provenance::PolicySampled));
    return registry_->fill("classification",
        {
            {"examples", examples},
            {"task_info", escape_block(state.task_info)},
            {"conversation", render_conversation(history)},
        });
}

Action PromptedClassifier::classify(const ConversationTurnState& state, std::string_view candidate) const
{
    if (is_blank(candidate)) {
        fail(ErrorKind::Precondition, "cannot classify an empty candidate");
    }
    auto request = with_prompt(defaults_, classification_prompt(state, candidate));
    auto key = "classify_action\n" + serialize_state(state) + "\n" + std::string(candidate);
    std::string last;
    for (int i = 0; i < backend_->attempts_allowed(); ++i) {
        last = backend_->complete(request, key);
        if (auto action = parse_classifier_completion(last)) {
            return *action;
        }
        spdlog::warn("classifier completion not parseable (attempt {}): {}", i + 1, last);
    }
    fail(ErrorKind::ClassifierParse, "no action phrase in completion: " + last);
}

UserSimulator::UserSimulator(std::shared_ptr<const TextBackend> backend, const PromptRegistry& registry, SimulatorGrounding grounding,
    GenerationRequest defaults)
    : backend_(std::move(backend))
    , registry_(&registry)
    , grounding_(grounding)
    , defaults_(std::move(defaults))
{
    if (defaults_.stop_markers.empty()) {
        defaults_.stop_markers = {"\nAssistant:"};
    }
}

std::string UserSimulator::summarization_prompt(const ConversationTurnState& state) const
{
    std::string examples;
    std::size_t used = 0;
    for (const auto& exemplar : registry_->exemplars("icl-conversations")) {
        if (!exemplar.contains("intent") || used == kSimulationShots) {
            continue;
        }
        if (!examples.empty()) {
            examples += "\n\n";
        }
        examples += render_state_block(exemplar.at("task_info").get<std::string>(), exemplar_history(exemplar));
        examples += "\nSummary: " + exemplar.at("intent").get<std::string>();
        ++used;
    }
    return registry_->fill("intent-summarization",
        {
            {"examples", examples},
            {"task_info", escape_block(state.task_info)},
            {"conversation", render_conversation(state.history)},
        });
}

std::string UserSimulator::summarize_intent(const ConversationTurnState& state) const
{
    if (state.history.empty()) {
        fail(ErrorKind::Precondition, "intent summarization needs at least one USER message");
    }
    if (grounding_ == SimulatorGrounding::TargetSql) {
        return state.trajectory_goal;
    }
    auto request = with_prompt(defaults_, summarization_prompt(state));
    return require_text(backend_->complete(request, intent_key(state)), "intent summarizer");
}

std::string UserSimulator::simulation_prompt(const ConversationTurnState& state, const std::string& intent, const std::string& system_msg) const
{
    std::string examples;
    if (grounding_ == SimulatorGrounding::TargetSql) {
        std::size_t used = 0;
        for (const auto& exemplar : registry_->exemplars("perturbation-exemplars")) {
            if (used == kSimulationShots) {
                break;
            }
            if (!examples.empty()) {
                examples += "\n\n";
            }
            examples += "Target query: " + exemplar.at("sql").get<std::string>() + "\n";
            examples += render_conversation({
                DialogueMessage::user(exemplar.at("ambiguous").get<std::string>()),
                DialogueMessage::system(exemplar.at("clarifying_question").get<std::string>()),
                DialogueMessage::user(exemplar.at("request").get<std::string>()),
            });
            ++used;
        }
    } else {
        std::size_t used = 0;
        for (const auto& exemplar : registry_->exemplars("icl-conversations")) {
            if (!exemplar.contains("intent") || used == kSimulationShots) {
                continue;
            }
            if (!examples.empty()) {
                examples += "\n\n";
            }
            examples += exemplar.at("intent").get<std::string>() + "\n";
            examples += render_state_block(exemplar.at("task_info").get<std::string>(), exemplar_history(exemplar));
            ++used;
        }
    }
    auto history = state.history;
    history.push_back(DialogueMessage::system(system_msg, Provenance::PolicySampled));
    return registry_->fill(grounding_ == SimulatorGrounding::TargetSql ? "user-simulation-sql" : "user-simulation",
        {
            {"examples", examples},
            {"intent", intent},
            {"task_info", escape_block(state.task_info)},
            {"conversation", render_conversation(history)},
        });
}

std::string UserSimulator::simulate_user_turn(const ConversationTurnState& state, const std::string& intent, const std::string& system_msg) const
{
    auto request = with_prompt(defaults_, simulation_prompt(state, intent, system_msg));
    auto key = grounding_ == SimulatorGrounding::TargetSql ? sql_simulate_key(intent) : simulate_key(state, intent);
    return require_text(backend_->complete(request, key), "user simulator");
}

std::string_view to_string(BaselineStyle style)
{
    switch (style) {
    case BaselineStyle::Standard: return "standard";
    case BaselineStyle::Cot: return "cot";
    case BaselineStyle::ProactiveMiprompt: return "proactive_miprompt";
    }
    return "standard";
}

BaselineStyle parse_baseline_style(std::string_view text)
{
    for (auto s : {BaselineStyle::Standard, BaselineStyle::Cot, BaselineStyle::ProactiveMiprompt}) {
        if (to_string(s) == text) {
            return s;
        }
    }
    fail(ErrorKind::Configuration, "unknown baseline style '" + std::string(text) + "'");
}

namespace {

// Renders one conversation in a baseline style. `final_action` labels the
// reply that follows the last user turn (absent for the open query).
std::string baseline_block(const ConversationTurnState& state, BaselineStyle style, const std::optional<std::string>& reply,
    std::optional<Action> final_action, const PromptRegistry& registry)
{
    std::vector<DialogueMessage> messages = state.history;
    std::vector<Action> actions(messages.size(), Action::Answer);
    for (std::size_t i = 0; i < messages.size(); ++i) {
        if (messages[i].speaker == Speaker::System) {
            actions[i] = classify_by_rule(messages[i].text);
        }
    }
    if (reply) {
        messages.push_back(DialogueMessage::system(*reply));
        actions.push_back(final_action.value_or(classify_by_rule(*reply)));
    }
    std::string out = escape_block(state.task_info);
    for (std::size_t i = 0; i < messages.size(); ++i) {
        const auto& message = messages[i];
        if (message.speaker == Speaker::User) {
            out += "\n" + render_conversation({message});
            continue;
        }
        bool clarify = actions[i] == Action::Clarify;
        switch (style) {
        case BaselineStyle::Standard:
            out += "\n" + render_conversation({message});
            break;
        case BaselineStyle::Cot:
            out += "\n" + registry.template_text("baseline-cot-instruction");
            out += "\n" + registry.template_text(clarify ? "baseline-cot-ambiguous" : "baseline-cot-unambiguous");
            out += " " + render_conversation({message});
            break;
        case BaselineStyle::ProactiveMiprompt:
            out += "\n" + registry.template_text(clarify ? "baseline-proactive-ambiguous" : "baseline-proactive-unambiguous");
            out += "\n" + render_conversation({message});
            break;
        }
    }
    if (!reply) {
        switch (style) {
        case BaselineStyle::Standard:
            out += "\nAssistant:";
            break;
        case BaselineStyle::Cot:
            out += "\n" + registry.template_text("baseline-cot-instruction");
            out += "\nReasoning:";
            break;
        case BaselineStyle::ProactiveMiprompt:
            out += "\n" + registry.template_text("baseline-proactive-menu");
            break;
        }
    }
    return out;
}

} // namespace

std::string render_baseline_prompt(const ConversationTurnState& state, BaselineStyle style,
    const std::vector<ConversationTurnState>& shots, const PromptRegistry& registry)
{
    if (shots.size() > kMaxBaselineShots) {
        fail(ErrorKind::Precondition, "at most ten in-context shots are allowed");
    }
    std::string out = registry.template_text("baseline-header");
    for (const auto& shot : shots) {
        out += "\n" + baseline_block(shot, style, shot.gold_response, shot.gold_action, registry) + "\n";
    }
    out += "\n" + baseline_block(state, style, std::nullopt, std::nullopt, registry);
    return out;
}

std::string render_baseline_prompt(const ConversationTurnState& state, BaselineStyle style, const std::vector<ConversationTurnState>& shots)
{
    return render_baseline_prompt(state, style, shots, PromptRegistry::builtin());
}

} // namespace act
