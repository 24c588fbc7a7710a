// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "act/clients.hpp"
#include "act/metrics.hpp"
#include "act/policy.hpp"

#include <optional>
#include <string>
#include <vector>

namespace act {

enum class TaskKind { TabularQa, ReadingComprehension, TextToSql, Synthetic };
std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view text);

struct EvalProtocol {
    TaskKind task_kind = TaskKind::Synthetic;
    std::string content_metric = "drop_f1";
    bool iterate_goal_set = false;
    int clarify_cap = 5;
    std::uint64_t seed = 0;
    /// Runs with a larger fraction of excluded examples are marked invalid.
    double max_exclusion_fraction = 0.05;
};

void validate_protocol(const EvalProtocol& protocol);
nlohmann::json to_json(const EvalProtocol& protocol);

/// One (query, goal) evaluation.
struct EvalRow {
    std::size_t example_index = 0;
    std::size_t goal_index = 0;
    std::string goal;
    Action gold_action = Action::Answer;
    Action predicted_action = Action::Answer;
    std::string first_response;
    Trajectory trajectory;
    double turn_score = 0.0;
    double trajectory_score = 0.0;
    bool had_clarify = false;
};

nlohmann::json to_json(const EvalRow& row);

struct EvalReport {
    TaskKind task_kind = TaskKind::Synthetic;
    std::string content_metric;
    ActionMetrics action;
    MetricOutcome turn_level;
    MetricOutcome trajectory_level;
    MetricOutcome post_clarification;
    std::size_t n_examples = 0;
    std::size_t n_rows = 0;
    std::size_t n_clarify_trajectories = 0;
    std::size_t n_excluded = 0;
    bool valid = true;
    nlohmann::json run_metadata = nlohmann::json::object();
    std::vector<EvalRow> rows;
};

/// Summary without per-row detail; the digest covers exactly this.
nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& document);
std::string report_digest(const EvalReport& report);
std::string render_report_table(const EvalReport& report);

/// Removes every clarifying system message and the user reply that follows it.
ConversationTurnState strip_clarification_turns(const ConversationTurnState& state, const ActionClassifier& classifier);

/// Samples a response per query (per goal when the protocol iterates the goal
/// set), rolls out a trajectory when it clarifies, and scores the first
/// response against the gold response and the outcome against the goal.
/// Examples whose backends fail are excluded and counted. The policy is only
/// read; its parameter digest is checked before and after.
EvalReport evaluate(const Policy& policy, const std::vector<ConversationTurnState>& testset, const ActionClassifier& classifier,
    const UserSimulator& simulator, const HeuristicRegistry& heuristics, const EvalProtocol& protocol,
    nlohmann::json run_metadata = nlohmann::json::object());

struct ComparisonRow {
    std::string metric;
    std::vector<double> values;
    std::vector<double> deltas;
};

struct ComparisonTable {
    std::vector<std::string> run_names;
    std::vector<ComparisonRow> rows;
};

/// Side-by-side metrics with deltas against the first report.
ComparisonTable compare_runs(const std::vector<EvalReport>& reports, std::vector<std::string> names = {});
nlohmann::json to_json(const ComparisonTable& table);
std::string render_comparison(const ComparisonTable& table);

} // namespace act
