// SPDX-License-Identifier: Apache-2.0
#include "acceptance.hpp"
#include "test_support.hpp"

#include "act/cli.hpp"
#include "act/eval.hpp"

#include <map>
#include <numeric>

namespace act::acceptance {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::fixture_dir;
using testing::single_turn;

const std::string kInfo = "Company: Northwind\nrevenue 2018: $1,305\nrevenue 2019: $909";
const std::string kQuestion = "Which year are you asking about?";

// Replies to the latest user message from a fixed table.
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
    std::vector<double> parameters_ {0.25, -1.5, 3.0};
};

void script_user(ScriptTable& table, const ConversationTurnState& state, const std::string& year)
{
    const std::string intent = "The user wants the revenue for " + year + ".";
    table.add_key(intent_key(state), intent);
    table.add_key(simulate_key(state, intent), year);
}

struct ReadingCorpus {
    std::vector<ConversationTurnState> states;
    ScriptTable simulator_script;
};

// One clear request, two ambiguous requests with two and three goals, and
// the follow-up of the first ambiguous conversation after its clarification.
ReadingCorpus reading_corpus()
{
    const std::string info3 = kInfo + "\nrevenue 2020: $777";
    ReadingCorpus corpus;
    auto clear = single_turn(kInfo, "What was the revenue in 2018?", "$1,305", Action::Answer, "$1,305");
    auto two_goals = single_turn(kInfo, "What was the revenue?", kQuestion, Action::Clarify, "$1,305");
    two_goals.goal_set = {"$1,305", "$909"};
    auto three_goals = single_turn(info3, "What was the revenue?", kQuestion, Action::Clarify, "$777");
    three_goals.goal_set = {"$1,305", "$909", "$777"};
    auto followup = extend_state(two_goals, {DialogueMessage::system(kQuestion), DialogueMessage::user("2018")});
    followup.gold_action = Action::Answer;
    followup.gold_response = "$1,305";
    followup.goal_set = {"$1,305"};
    corpus.states = {clear, two_goals, three_goals, followup};

    const std::map<std::string, std::string> years = {{"$1,305", "2018"}, {"$909", "2019"}, {"$777", "2020"}};
    for (const auto* state : {&two_goals, &three_goals}) {
        for (const auto& goal : state->goal_set) {
            auto variant = *state;
            variant.trajectory_goal = goal;
            script_user(corpus.simulator_script, variant, years.at(goal));
        }
    }
    script_user(corpus.simulator_script, strip_clarification_turns(followup, RuleClassifier()), "2018");
    return corpus;
}

json sql_pipeline_config(int num_batches)
{
    const auto sql = fixture_dir() / "sql";
    return json {
        {"profile", "ambigsql"},
        {"paths",
            {{"spider", (sql / "spider_examples.json").string()}, {"databases", (sql / "databases").string()}, {"train", "synth/train.jsonl"},
                {"dev", "synth/dev.jsonl"}, {"test", "synth/test.jsonl"}, {"preferences", "prefs/preferences.jsonl"},
                {"dev_preferences", "prefs/dev_preferences.jsonl"}}},
        {"backends",
            {{"generator", {{"kind", "scripted"}, {"script", "synth/generator.script.json"}}},
                {"simulator", {{"kind", "scripted"}, {"script", "synth/simulator.script.json"}}}}},
        {"synthesis", {{"seed", 3}}},
        {"act", {{"num_batches", num_batches}, {"seed", 11}}},
    };
}

struct PipelineRun {
    std::vector<int> exit_codes;
    std::string report_digest;
    std::string preferences;
};

// synth-ambigsql, build-prefs, train and evaluate through the command line.
PipelineRun run_sql_pipeline(const fs::path& root)
{
    auto synth = sql_pipeline_config(0);
    synth["backends"]["generator"]["script"] = (fixture_dir() / "sql" / "perturbation.script.json").string();
    synth["act"].erase("num_batches");
    write_file(root / "synth.json", synth.dump(2) + "\n");
    write_file(root / "pipeline.json", sql_pipeline_config(60).dump(2) + "\n");
    const auto config = (root / "pipeline.json").string();

    PipelineRun run;
    run.exit_codes.push_back(run_cli({"synth-ambigsql", "--config", (root / "synth.json").string(), "--run-dir", (root / "synth").string()}));
    run.exit_codes.push_back(run_cli({"build-prefs", "--config", config, "--run-dir", (root / "prefs").string()}));
    run.exit_codes.push_back(run_cli({"train", "--config", config, "--run-dir", (root / "train").string()}));
    run.exit_codes.push_back(run_cli({"evaluate", "--config", config, "--run-dir", (root / "train").string()}));
    if (fs::exists(root / "train" / "eval" / "report.digest")) {
        run.report_digest = read_file(root / "train" / "eval" / "report.digest");
    }
    if (fs::exists(root / "prefs" / "preferences.jsonl")) {
        run.preferences = read_file(root / "prefs" / "preferences.jsonl");
    }
    return run;
}

// make-synthetic, build-prefs, train and evaluate on the toy task, where
// training moves the parameters substantially.
PipelineRun run_synthetic_pipeline(const fs::path& root)
{
    write_file(root / "synth.json", json {{"profile", "synthetic-toy"}, {"synthetic", {{"seed", 5}}}}.dump(2) + "\n");
    json config {
        {"profile", "synthetic-toy"},
        {"paths",
            {{"train", "suite/train.jsonl"}, {"dev", "suite/dev.jsonl"}, {"test", "suite/test.jsonl"}, {"catalog", "suite/catalog.json"},
                {"preferences", "prefs/preferences.jsonl"}, {"dev_preferences", "prefs/dev_preferences.jsonl"}}},
        {"backends",
            {{"generator", {{"kind", "scripted"}, {"script", "suite/generator.script.json"}}},
                {"simulator", {{"kind", "scripted"}, {"script", "suite/simulator.script.json"}}}}},
        {"act", {{"num_batches", 200}, {"seed", 11}}},
    };
    write_file(root / "pipeline.json", config.dump(2) + "\n");
    const auto pipeline = (root / "pipeline.json").string();

    PipelineRun run;
    run.exit_codes.push_back(run_cli({"make-synthetic", "--config", (root / "synth.json").string(), "--run-dir", (root / "suite").string()}));
    run.exit_codes.push_back(run_cli({"build-prefs", "--config", pipeline, "--run-dir", (root / "prefs").string()}));
    run.exit_codes.push_back(run_cli({"train", "--config", pipeline, "--run-dir", (root / "train").string()}));
    run.exit_codes.push_back(run_cli({"evaluate", "--config", pipeline, "--run-dir", (root / "train").string()}));
    if (fs::exists(root / "train" / "eval" / "report.digest")) {
        run.report_digest = read_file(root / "train" / "eval" / "report.digest");
    }
    if (fs::exists(root / "prefs" / "preferences.jsonl")) {
        run.preferences = read_file(root / "prefs" / "preferences.jsonl");
    }
    return run;
}

void compare_runs(Verdict& verdict, const std::string& label, const fs::path& first_root, const PipelineRun& a, const fs::path& second_root,
    const PipelineRun& b, const std::vector<std::string>& files)
{
    const std::vector<int> ok(4, kExitOk);
    verdict.require(a.exit_codes == ok, label + ": first run had a failing step");
    verdict.require(b.exit_codes == ok, label + ": second run had a failing step");
    verdict.require(!a.report_digest.empty(), label + ": no report digest written");
    verdict.require(a.report_digest == b.report_digest, label + ": report digests differ");
    verdict.require(!a.preferences.empty() && a.preferences == b.preferences, label + ": preference files differ");
    for (const auto& name : files) {
        bool same = fs::exists(first_root / name) && read_file(first_root / name) == read_file(second_root / name);
        verdict.require(same, label + ": " + name + " differs between runs");
    }
}

} // namespace

Verdict evaluation_protocol()
{
    Verdict verdict;
    auto corpus = reading_corpus();
    RuleClassifier classifier;
    UserSimulator simulator(std::make_shared<ScriptedBackend>(corpus.simulator_script), PromptRegistry::builtin(), SimulatorGrounding::Intent);
    auto heuristics = HeuristicRegistry::with_defaults();
    EvalProtocol protocol;
    protocol.task_kind = TaskKind::ReadingComprehension;
    protocol.iterate_goal_set = true;

    // Clarifies every ambiguous request but mistakes 2019 for 2018, so
    // clarified trajectories score below the rest.
    LookupPolicy policy({{"What was the revenue in 2018?", "$1,305"}, {"What was the revenue?", kQuestion}, {"2018", "$1,305"},
                            {"2019", "$1,305"}, {"2020", "$777"}},
        "I do not know.");
    const auto digest_before = policy.parameter_digest();
    auto report = evaluate(policy, corpus.states, classifier, simulator, heuristics, protocol);
    verdict.require(policy.parameter_digest() == digest_before, "evaluation changed the policy parameters");
    verdict.require(report.run_metadata.at("parameter_digest") == digest_before, "report records a different parameter digest");

    std::map<std::size_t, std::size_t> rows_per_example;
    for (const auto& row : report.rows) {
        ++rows_per_example[row.example_index];
    }
    std::size_t expected_rows = 0;
    for (std::size_t i = 0; i < corpus.states.size(); ++i) {
        expected_rows += corpus.states[i].goal_set.size();
        verdict.require(rows_per_example[i] == corpus.states[i].goal_set.size(),
            "example " + std::to_string(i) + " produced " + std::to_string(rows_per_example[i]) + " rows");
    }
    verdict.require(report.n_rows == expected_rows, "report has " + std::to_string(report.n_rows) + " rows");

    // Recompute the post-clarification mean from the rows that clarified.
    std::vector<double> clarified;
    for (const auto& row : report.rows) {
        if (row.had_clarify) {
            clarified.push_back(row.trajectory_score);
        }
    }
    double expected_post = clarified.empty() ? 0.0 : std::accumulate(clarified.begin(), clarified.end(), 0.0) / clarified.size();
    verdict.require(report.post_clarification.support == clarified.size(),
        "post-clarification support " + std::to_string(report.post_clarification.support));
    verdict.require(std::abs(report.post_clarification.value - expected_post) <= 1e-12,
        "post-clarification value " + fixed(report.post_clarification.value) + " against " + fixed(expected_post));
    verdict.require(report.post_clarification.value < report.trajectory_level.value,
        "clarified rows should score below the overall mean in this corpus");

    // A policy that never clarifies has no post-clarification support.
    LookupPolicy answering({}, "$1,305");
    auto direct = evaluate(answering, corpus.states, classifier, simulator, heuristics, protocol);
    verdict.require(direct.post_clarification.support == 0, "non-clarifying policy has post-clarification support");

    // A trained toy policy keeps its parameters through a full evaluation.
    testing::SyntheticBench bench;
    auto trained = bench.train(TrainingMode::FullAct, 4, 30);
    const auto trained_digest = trained.policy->parameter_digest();
    auto synthetic = bench.evaluate_on_test(*trained.policy);
    verdict.require(trained.policy->parameter_digest() == trained_digest, "evaluation changed the toy policy parameters");
    verdict.require(synthetic.run_metadata.at("parameter_digest") == trained_digest, "toy report records a different digest");

    verdict.note(std::to_string(report.n_rows) + " rows from " + std::to_string(corpus.states.size()) + " examples, post-clarification "
        + fixed(report.post_clarification.value) + " over " + std::to_string(clarified.size()) + " clarified rows against trajectory "
        + fixed(report.trajectory_level.value) + ", digests unchanged");
    return verdict;
}

Verdict end_to_end_reproducibility()
{
    Verdict verdict;
    const std::vector<std::string> files = {"train/checkpoints/selected.json", "train/checkpoints/final.json", "train/metrics.jsonl",
        "train/audit.jsonl"};
    {
        testing::TempDir first("acceptance-sql-a");
        testing::TempDir second("acceptance-sql-b");
        auto a = run_sql_pipeline(first.path());
        auto b = run_sql_pipeline(second.path());
        auto with_manifest = files;
        with_manifest.push_back("synth/manifest.json");
        compare_runs(verdict, "text-to-sql", first.path(), a, second.path(), b, with_manifest);
        verdict.note("text-to-sql report " + trim(a.report_digest).substr(0, 12));
    }
    {
        testing::TempDir first("acceptance-toy-a");
        testing::TempDir second("acceptance-toy-b");
        auto a = run_synthetic_pipeline(first.path());
        auto b = run_synthetic_pipeline(second.path());
        compare_runs(verdict, "synthetic", first.path(), a, second.path(), b, files);
        verdict.note("synthetic report " + trim(a.report_digest).substr(0, 12) + ", identical in both runs of each");
    }
    return verdict;
}

} // namespace act::acceptance
