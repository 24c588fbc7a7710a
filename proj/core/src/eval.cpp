// SPDX-License-Identifier: Apache-2.0
#include "act/eval.hpp"

#include "act/trainer.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace act {

using nlohmann::json;

std::string_view to_string(TaskKind kind)
{
    switch (kind) {
    case TaskKind::TabularQa: return "tabular-qa";
    case TaskKind::ReadingComprehension: return "reading-comprehension";
    case TaskKind::TextToSql: return "text-to-sql";
    case TaskKind::Synthetic: return "synthetic";
    }
    return "synthetic";
}

TaskKind parse_task_kind(std::string_view text)
{
    for (auto kind : {TaskKind::TabularQa, TaskKind::ReadingComprehension, TaskKind::TextToSql, TaskKind::Synthetic}) {
        if (to_string(kind) == text) {
            return kind;
        }
    }
    fail(ErrorKind::Configuration, "unknown task kind '" + std::string(text) + "'");
}

void validate_protocol(const EvalProtocol& protocol)
{
    if (protocol.iterate_goal_set && protocol.task_kind != TaskKind::ReadingComprehension) {
        fail(ErrorKind::Configuration, "eval.iterate_goal_set is only valid for reading-comprehension tasks");
    }
    if (protocol.clarify_cap < 1) {
        fail(ErrorKind::Configuration, "eval.clarify_cap must be at least 1");
    }
    if (protocol.max_exclusion_fraction < 0.0 || protocol.max_exclusion_fraction > 1.0) {
        fail(ErrorKind::Configuration, "eval.max_exclusion_fraction must lie in [0, 1]");
    }
    if (protocol.content_metric.empty()) {
        fail(ErrorKind::Configuration, "eval.content_metric must be set");
    }
}

json to_json(const EvalProtocol& protocol)
{
    return json {
        {"task_kind", to_string(protocol.task_kind)},
        {"content_metric", protocol.content_metric},
        {"iterate_goal_set", protocol.iterate_goal_set},
        {"clarify_cap", protocol.clarify_cap},
        {"seed", protocol.seed},
        {"max_exclusion_fraction", protocol.max_exclusion_fraction},
    };
}

json to_json(const EvalRow& row)
{
    return json {
        {"example_index", row.example_index},
        {"goal_index", row.goal_index},
        {"goal", row.goal},
        {"gold_action", to_string(row.gold_action)},
        {"predicted_action", to_string(row.predicted_action)},
        {"first_response", row.first_response},
        {"trajectory", row.trajectory},
        {"turn_score", row.turn_score},
        {"trajectory_score", row.trajectory_score},
        {"had_clarify", row.had_clarify},
    };
}

json to_json(const EvalReport& report)
{
    return json {
        {"task_kind", to_string(report.task_kind)},
        {"content_metric", report.content_metric},
        {"action", to_json(report.action)},
        {"content",
            {
                {"turn_level", to_json(report.turn_level)},
                {"trajectory_level", to_json(report.trajectory_level)},
                {"post_clarification", to_json(report.post_clarification)},
            }},
        {"n_examples", report.n_examples},
        {"n_rows", report.n_rows},
        {"n_clarify_trajectories", report.n_clarify_trajectories},
        {"n_excluded", report.n_excluded},
        {"valid", report.valid},
        {"run_metadata", report.run_metadata},
    };
}

namespace {

MetricOutcome outcome_from_json(const json& j)
{
    return MetricOutcome {j.at("name").get<std::string>(), j.at("value").get<double>(), j.at("support").get<std::size_t>()};
}

} // namespace

EvalReport report_from_json(const json& document)
{
    EvalReport report;
    report.task_kind = parse_task_kind(document.at("task_kind").get<std::string>());
    report.content_metric = document.at("content_metric").get<std::string>();
    const auto& action = document.at("action");
    report.action.accuracy = action.at("accuracy").get<double>();
    report.action.weighted_f1 = action.at("weighted_f1").get<double>();
    report.action.macro_f1 = action.at("macro_f1").get<double>();
    report.action.clarify_f1 = action.at("clarify_f1").get<double>();
    report.action.answer_f1 = action.at("answer_f1").get<double>();
    report.action.support = action.at("support").get<std::size_t>();
    const auto& content = document.at("content");
    report.turn_level = outcome_from_json(content.at("turn_level"));
    report.trajectory_level = outcome_from_json(content.at("trajectory_level"));
    report.post_clarification = outcome_from_json(content.at("post_clarification"));
    report.n_examples = document.at("n_examples").get<std::size_t>();
    report.n_rows = document.at("n_rows").get<std::size_t>();
    report.n_clarify_trajectories = document.at("n_clarify_trajectories").get<std::size_t>();
    report.n_excluded = document.at("n_excluded").get<std::size_t>();
    report.valid = document.at("valid").get<bool>();
    report.run_metadata = document.value("run_metadata", json::object());
    return report;
}

std::string report_digest(const EvalReport& report) { return sha256_hex(to_json(report).dump()); }

std::string render_report_table(const EvalReport& report)
{
    std::string out;
    out += fmt::format("task: {}   content metric: {}   examples: {}   rows: {}   excluded: {}{}\n", to_string(report.task_kind),
        report.content_metric, report.n_examples, report.n_rows, report.n_excluded, report.valid ? "" : "   (INVALID)");
    out += fmt::format("{:<28}{:>10}{:>10}\n", "metric", "value", "support");
    auto line = [&](std::string_view name, double value, std::size_t support) {
        out += fmt::format("{:<28}{:>10.4f}{:>10}\n", name, value, support);
    };
    line("action.accuracy", report.action.accuracy, report.action.support);
    line("action.weighted_f1", report.action.weighted_f1, report.action.support);
    line("action.macro_f1", report.action.macro_f1, report.action.support);
    line("content.turn_level", report.turn_level.value, report.turn_level.support);
    line("content.trajectory_level", report.trajectory_level.value, report.trajectory_level.support);
    line("content.post_clarification", report.post_clarification.value, report.post_clarification.support);
    if (report.run_metadata.contains("config_digest")) {
        out += "config digest: " + report.run_metadata.at("config_digest").get<std::string>() + "\n";
    }
    out += "report digest: " + report_digest(report) + "\n";
    return out;
}

ConversationTurnState strip_clarification_turns(const ConversationTurnState& state, const ActionClassifier& classifier)
{
    ConversationTurnState stripped = state;
    stripped.history.clear();
    ConversationTurnState prefix = state;
    for (std::size_t i = 0; i < state.history.size(); ++i) {
        const auto& message = state.history[i];
        if (message.speaker == Speaker::System && i + 1 < state.history.size()) {
            prefix.history.assign(state.history.begin(), state.history.begin() + static_cast<std::ptrdiff_t>(i));
            if (classifier.classify(prefix, message.text) == Action::Clarify) {
                ++i;
                continue;
            }
        }
        stripped.history.push_back(message);
    }
    // Dropping a clarification exchange leaves two user messages adjacent;
    // the later one carries the clarified request, so keep it.
    std::vector<DialogueMessage> merged;
    for (auto& message : stripped.history) {
        if (!merged.empty() && merged.back().speaker == Speaker::User && message.speaker == Speaker::User) {
            merged.back() = std::move(message);
        } else {
            merged.push_back(std::move(message));
        }
    }
    stripped.history = std::move(merged);
    validate_state(stripped);
    return stripped;
}

namespace {

bool excludable(const Error& e)
{
    return e.kind() == ErrorKind::TransientBackend || e.kind() == ErrorKind::ClassifierParse || e.kind() == ErrorKind::DegenerateGeneration;
}

} // namespace

EvalReport evaluate(const Policy& policy, const std::vector<ConversationTurnState>& testset, const ActionClassifier& classifier,
    const UserSimulator& simulator, const HeuristicRegistry& heuristics, const EvalProtocol& protocol, json run_metadata)
{
    validate_protocol(protocol);
    const Heuristic& metric = heuristics.get(protocol.content_metric);
    const auto digest_before = policy.parameter_digest();

    EvalReport report;
    report.task_kind = protocol.task_kind;
    report.content_metric = protocol.content_metric;
    report.n_examples = testset.size();

    std::vector<Action> predicted;
    std::vector<Action> gold;
    std::vector<TrajectoryResult> results;
    for (std::size_t index = 0; index < testset.size(); ++index) {
        const auto& original = testset[index];
        validate_state(original);
        try {
            auto base = protocol.iterate_goal_set ? strip_clarification_turns(original, classifier) : original;
            std::vector<std::string> goals = protocol.iterate_goal_set ? original.goal_set : std::vector<std::string> {original.trajectory_goal};
            std::vector<EvalRow> rows;
            std::optional<Action> first_action;
            for (std::size_t g = 0; g < goals.size(); ++g) {
                ConversationTurnState state = base;
                state.trajectory_goal = goals[g];
                auto prompt = policy.render(state);
                auto seed = response_seed(protocol.seed, 0, prompt);
                auto first = policy.sample_response(prompt, seed);
                auto action = classifier.classify(state, first);
                auto trajectory = roll_out_trajectory(policy, state, first, classifier, simulator, protocol.clarify_cap, seed);
                EvalRow row;
                row.example_index = index;
                row.goal_index = g;
                row.goal = goals[g];
                row.gold_action = original.gold_action;
                row.predicted_action = action;
                row.first_response = first;
                row.had_clarify = trajectory.clarify_rounds > 0;
                // A clarifying question is not a query, so execution match
                // cannot compare against it; agreement on the action stands in.
                if (protocol.task_kind == TaskKind::TextToSql && original.gold_action == Action::Clarify) {
                    row.turn_score = action == Action::Clarify ? 1.0 : 0.0;
                } else {
                    row.turn_score = metric.score(state, first, original.gold_response);
                }
                row.trajectory_score = trajectory.cap_exceeded ? 0.0 : metric.score(state, trajectory.outcome, goals[g]);
                row.trajectory = std::move(trajectory);
                if (!first_action) {
                    first_action = action;
                }
                rows.push_back(std::move(row));
            }
            predicted.push_back(first_action.value_or(Action::Answer));
            gold.push_back(original.gold_action);
            for (auto& row : rows) {
                results.push_back(TrajectoryResult {row.trajectory, row.goal, row.had_clarify, row.turn_score, row.trajectory_score});
                report.rows.push_back(std::move(row));
            }
        } catch (const Error& e) {
            if (!excludable(e)) {
                throw;
            }
            ++report.n_excluded;
            spdlog::warn("excluding example {} from evaluation: {}", index, e.what());
        }
    }

    if (!gold.empty()) {
        report.action = action_metrics(predicted, gold);
    }
    auto outcomes = aggregate_trajectory_metrics(results);
    report.turn_level = outcomes.at(0);
    report.trajectory_level = outcomes.at(1);
    report.post_clarification = outcomes.at(2);
    report.n_rows = report.rows.size();
    for (const auto& row : report.rows) {
        report.n_clarify_trajectories += row.had_clarify;
    }
    const double excluded_fraction = testset.empty() ? 0.0 : static_cast<double>(report.n_excluded) / static_cast<double>(testset.size());
    report.valid = excluded_fraction <= protocol.max_exclusion_fraction;

    if (policy.parameter_digest() != digest_before) {
        fail(ErrorKind::Contract, "evaluation changed the policy parameters");
    }
    run_metadata["parameter_digest"] = digest_before;
    run_metadata["protocol"] = to_json(protocol);
    run_metadata["testset_digest"] = dataset_digest(testset);
    report.run_metadata = std::move(run_metadata);
    return report;
}

ComparisonTable compare_runs(const std::vector<EvalReport>& reports, std::vector<std::string> names)
{
    if (reports.empty()) {
        fail(ErrorKind::Precondition, "compare_runs needs at least one report");
    }
    for (const auto& report : reports) {
        if (report.task_kind != reports.front().task_kind) {
            fail(ErrorKind::Precondition, "compare_runs needs reports of one task kind");
        }
    }
    if (names.empty()) {
        for (std::size_t i = 0; i < reports.size(); ++i) {
            names.push_back("run" + std::to_string(i + 1));
        }
    }
    if (names.size() != reports.size()) {
        fail(ErrorKind::Precondition, "compare_runs needs one name per report");
    }
    ComparisonTable table;
    table.run_names = std::move(names);
    auto add = [&](const std::string& metric, auto getter) {
        ComparisonRow row;
        row.metric = metric;
        for (const auto& report : reports) {
            row.values.push_back(getter(report));
            row.deltas.push_back(row.values.back() - row.values.front());
        }
        table.rows.push_back(std::move(row));
    };
    add("action.accuracy", [](const EvalReport& r) { return r.action.accuracy; });
    add("action.weighted_f1", [](const EvalReport& r) { return r.action.weighted_f1; });
    add("action.macro_f1", [](const EvalReport& r) { return r.action.macro_f1; });
    add("content.turn_level", [](const EvalReport& r) { return r.turn_level.value; });
    add("content.trajectory_level", [](const EvalReport& r) { return r.trajectory_level.value; });
    add("content.post_clarification", [](const EvalReport& r) { return r.post_clarification.value; });
    return table;
}

json to_json(const ComparisonTable& table)
{
    json rows = json::array();
    for (const auto& row : table.rows) {
        rows.push_back(json {{"metric", row.metric}, {"values", row.values}, {"deltas", row.deltas}});
    }
    return json {{"runs", table.run_names}, {"rows", rows}};
}

std::string render_comparison(const ComparisonTable& table)
{
    std::string out = fmt::format("{:<28}", "metric");
    for (std::size_t i = 0; i < table.run_names.size(); ++i) {
        out += fmt::format("{:>16}", table.run_names[i]);
        if (i > 0) {
            out += fmt::format("{:>10}", "delta");
        }
    }
    out += "\n";
    for (const auto& row : table.rows) {
        out += fmt::format("{:<28}", row.metric);
        for (std::size_t i = 0; i < row.values.size(); ++i) {
            out += fmt::format("{:>16.4f}", row.values[i]);
            if (i > 0) {
                out += fmt::format("{:>+10.4f}", row.deltas[i]);
            }
        }
        out += "\n";
    }
    return out;
}

} // namespace act
