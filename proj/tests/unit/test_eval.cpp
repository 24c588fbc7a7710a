// SPDX-License-Identifier: Apache-2.0
#include "test_support.hpp"

#include "act/eval.hpp"

#include <gtest/gtest.h>

#include <map>

namespace act {
namespace {

using testing::single_turn;

template <class Fn>
ErrorKind kind_of(Fn&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected an act::Error";
    return ErrorKind::Contract;
}

const std::string kInfo = "Company: Northwind\nrevenue 2018: $1,305\nrevenue 2019: $909";
const std::string kQuestion = "Which year are you asking about?";

// Responds to the latest user message from a fixed table; the rendered
// prompt is that message. Unknown messages get the fallback.
class LookupPolicy final : public Policy {
public:
    LookupPolicy(std::map<std::string, std::string> table, std::string fallback)
        : table_(std::move(table))
        , fallback_(std::move(fallback))
    {
    }
    std::string sample_response(const std::string& prompt, std::uint64_t) const override
    {
        auto it = table_.find(prompt);
        return it == table_.end() ? fallback_ : it->second;
    }
    double sequence_logprob(const std::string&, const std::string&) const override { return 0.0; }
    SparseVector logprob_gradient(const std::string&, const std::string&) const override { return {}; }
    std::string render(const ConversationTurnState& state) const override { return state.history.back().text; }
    const std::vector<double>& parameters() const override { return parameters_; }
    void set_parameters(std::vector<double> parameters) override { parameters_ = std::move(parameters); }
    std::unique_ptr<Policy> clone() const override { return std::make_unique<LookupPolicy>(table_, fallback_); }
    std::string config_digest() const override { return "lookup"; }

private:
    std::map<std::string, std::string> table_;
    std::string fallback_;
    std::vector<double> parameters_ {0.5, -1.0};
};

LookupPolicy oracle_policy()
{
    return LookupPolicy({{"What was the revenue in 2018?", "$1,305"}, {"What was the revenue?", kQuestion}, {"2018", "$1,305"}, {"2019", "$909"}},
        "I do not know.");
}

struct Corpus {
    std::vector<ConversationTurnState> states;
    ScriptTable simulator_script;
};

void script_user(ScriptTable& table, const ConversationTurnState& state, const std::string& year)
{
    const std::string intent = "The user wants the revenue for " + year + ".";
    table.add_key(intent_key(state), intent);
    table.add_key(simulate_key(state, intent), year);
}

// A clear request, an ambiguous request with two goals, and the follow-up
// state of the same conversation after the clarification exchange.
Corpus make_corpus()
{
    Corpus corpus;
    auto clear = single_turn(kInfo, "What was the revenue in 2018?", "$1,305", Action::Answer, "$1,305");
    auto ambiguous = single_turn(kInfo, "What was the revenue?", kQuestion, Action::Clarify, "$1,305");
    ambiguous.goal_set = {"$1,305", "$909"};
    auto followup = extend_state(ambiguous, {DialogueMessage::system(kQuestion), DialogueMessage::user("2018")});
    followup.gold_action = Action::Answer;
    followup.gold_response = "$1,305";
    followup.goal_set = {"$1,305"};
    corpus.states = {clear, ambiguous, followup};

    script_user(corpus.simulator_script, ambiguous, "2018");
    auto second_goal = ambiguous;
    second_goal.trajectory_goal = "$909";
    script_user(corpus.simulator_script, second_goal, "2019");
    // After stripping, the follow-up is asked again from its first user turn.
    auto stripped = strip_clarification_turns(followup, RuleClassifier());
    script_user(corpus.simulator_script, stripped, "2018");
    return corpus;
}

struct Harness {
    Corpus corpus = make_corpus();
    RuleClassifier classifier;
    UserSimulator simulator {std::make_shared<ScriptedBackend>(corpus.simulator_script), PromptRegistry::builtin(), SimulatorGrounding::Intent};
    HeuristicRegistry heuristics = HeuristicRegistry::with_defaults();

    EvalReport run(const Policy& policy, const EvalProtocol& protocol = {}) const
    {
        return evaluate(policy, corpus.states, classifier, simulator, heuristics, protocol);
    }
};

TEST(Evaluate, OraclePolicyScoresPerfectly)
{
    Harness h;
    auto policy = oracle_policy();
    auto report = h.run(policy);
    EXPECT_EQ(report.n_examples, 3U);
    EXPECT_EQ(report.n_rows, 3U);
    EXPECT_EQ(report.n_excluded, 0U);
    EXPECT_TRUE(report.valid);
    EXPECT_EQ(report.action.accuracy, 1.0);
    EXPECT_EQ(report.action.macro_f1, 1.0);
    EXPECT_EQ(report.trajectory_level.value, 1.0);
    EXPECT_EQ(report.post_clarification.value, 1.0);
    EXPECT_EQ(report.post_clarification.support, 1U);
    EXPECT_EQ(report.n_clarify_trajectories, 1U);
    EXPECT_EQ(report.turn_level.value, 1.0);
}

TEST(Evaluate, GoalSetIterationGivesOneRowPerGoal)
{
    Harness h;
    auto policy = oracle_policy();
    EvalProtocol protocol;
    protocol.task_kind = TaskKind::ReadingComprehension;
    protocol.iterate_goal_set = true;
    auto report = h.run(policy, protocol);
    ASSERT_EQ(report.n_rows, 4U);
    EXPECT_EQ(report.rows[1].example_index, 1U);
    EXPECT_EQ(report.rows[1].goal_index, 0U);
    EXPECT_EQ(report.rows[2].goal_index, 1U);
    EXPECT_EQ(report.rows[2].goal, "$909");
    EXPECT_EQ(report.rows[2].trajectory.outcome, "$909");
    EXPECT_EQ(report.rows[2].trajectory_score, 1.0);
    // The follow-up was stripped back to its ambiguous request.
    EXPECT_TRUE(report.rows[3].had_clarify);
    EXPECT_EQ(report.rows[3].trajectory.messages.front().text, kQuestion);
    EXPECT_EQ(report.action.support, 3U);
    EXPECT_EQ(report.trajectory_level.value, 1.0);
    EXPECT_EQ(report.post_clarification.support, 3U);

    EvalProtocol wrong_task = protocol;
    wrong_task.task_kind = TaskKind::Synthetic;
    EXPECT_EQ(kind_of([&] { h.run(policy, wrong_task); }), ErrorKind::Configuration);
}

TEST(Evaluate, AlwaysAnsweringPolicyNeverClarifies)
{
    Harness h;
    LookupPolicy policy({}, "$1,305");
    auto report = h.run(policy);
    EXPECT_EQ(report.action.clarify_f1, 0.0);
    EXPECT_EQ(report.action.accuracy, 2.0 / 3.0);
    EXPECT_EQ(report.post_clarification.support, 0U);
    EXPECT_EQ(report.n_clarify_trajectories, 0U);
}

TEST(Evaluate, BackendFailuresAreExcludedAndCounted)
{
    Harness h;
    UserSimulator silent(std::make_shared<ScriptedBackend>(ScriptTable()), PromptRegistry::builtin(), SimulatorGrounding::Intent);
    auto policy = oracle_policy();
    auto report = evaluate(policy, h.corpus.states, h.classifier, silent, h.heuristics, {});
    EXPECT_EQ(report.n_excluded, 1U);
    EXPECT_FALSE(report.valid);
    EXPECT_EQ(report.action.support, 2U);
    EvalProtocol lenient;
    lenient.max_exclusion_fraction = 0.5;
    EXPECT_TRUE(evaluate(policy, h.corpus.states, h.classifier, silent, h.heuristics, lenient).valid);
}

TEST(Evaluate, ReportRoundTripAndStableDigest)
{
    Harness h;
    auto policy = oracle_policy();
    auto a = h.run(policy);
    auto b = h.run(policy);
    EXPECT_EQ(report_digest(a), report_digest(b));
    auto restored = report_from_json(to_json(a));
    EXPECT_EQ(report_digest(restored), report_digest(a));
    EXPECT_EQ(a.run_metadata.at("parameter_digest"), policy.parameter_digest());
    auto table = render_report_table(a);
    EXPECT_NE(table.find("post_clarification"), std::string::npos);
}

TEST(Compare, DeltasAgainstFirstRun)
{
    Harness h;
    auto oracle = oracle_policy();
    LookupPolicy answering({}, "$1,305");
    auto good = h.run(oracle);
    auto bad = h.run(answering);
    auto table = compare_runs({good, bad}, {"oracle", "answering"});
    ASSERT_EQ(table.run_names.size(), 2U);
    for (const auto& row : table.rows) {
        ASSERT_EQ(row.values.size(), 2U);
        EXPECT_EQ(row.deltas[0], 0.0);
        EXPECT_EQ(row.deltas[1], row.values[1] - row.values[0]);
    }
    EXPECT_EQ(table.rows[0].metric, "action.accuracy");
    EXPECT_NE(render_comparison(table).find("answering"), std::string::npos);

    auto other = good;
    other.task_kind = TaskKind::TextToSql;
    EXPECT_EQ(kind_of([&] { compare_runs({good, other}); }), ErrorKind::Precondition);
    EXPECT_EQ(kind_of([&] { compare_runs({}); }), ErrorKind::Precondition);
    EXPECT_EQ(kind_of([&] { compare_runs({good}, {"a", "b"}); }), ErrorKind::Precondition);
}

TEST(StripClarification, RemovesExchangesAndKeepsAnswers)
{
    auto state = single_turn(kInfo, "What was the revenue?", "$1,305", Action::Answer, "$1,305");
    auto stripped_none = strip_clarification_turns(state, RuleClassifier());
    EXPECT_EQ(stripped_none, state);

    auto long_state = extend_state(state, {DialogueMessage::system(kQuestion), DialogueMessage::user("2018"),
        DialogueMessage::system("$1,305."), DialogueMessage::user("And the cost?")});
    auto stripped = strip_clarification_turns(long_state, RuleClassifier());
    ASSERT_EQ(stripped.history.size(), 3U);
    EXPECT_EQ(stripped.history[0].text, "What was the revenue?");
    EXPECT_EQ(stripped.history[1].text, "$1,305.");
    EXPECT_EQ(stripped.history[2].text, "And the cost?");
    EXPECT_NO_THROW(validate_state(stripped));
}

TEST(Protocol, TaskKindsRoundTripAndValidation)
{
    for (auto kind : {TaskKind::TabularQa, TaskKind::ReadingComprehension, TaskKind::TextToSql, TaskKind::Synthetic}) {
        EXPECT_EQ(parse_task_kind(to_string(kind)), kind);
    }
    EvalProtocol bad;
    bad.clarify_cap = 0;
    EXPECT_EQ(kind_of([&] { validate_protocol(bad); }), ErrorKind::Configuration);
    bad = {};
    bad.max_exclusion_fraction = 2.0;
    EXPECT_EQ(kind_of([&] { validate_protocol(bad); }), ErrorKind::Configuration);
}

} // namespace
} // namespace act
