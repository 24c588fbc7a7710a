// SPDX-License-Identifier: Apache-2.0
#include "test_support.hpp"

#include "act/prefs.hpp"

#include <gtest/gtest.h>

#include <atomic>

namespace act {
namespace {

using testing::fixture_dir;
using testing::single_turn;

const std::string kInfo = "Company: Northwind\nrevenue 2018: $1,305\nrevenue 2019: $909";

// Returns the queued completions in order, then repeats the last one.
class SequenceBackend final : public TextBackend {
public:
    explicit SequenceBackend(std::vector<std::string> replies)
        : replies_(std::move(replies))
    {
    }
    std::string complete(const GenerationRequest&, std::string_view) const override
    {
        auto i = std::min<std::size_t>(calls_++, replies_.size() - 1);
        return replies_[i];
    }
    BackendKind kind() const override { return BackendKind::Scripted; }
    int calls() const { return calls_; }

private:
    std::vector<std::string> replies_;
    mutable std::atomic<int> calls_ {0};
};

std::vector<ConversationTurnState> three_turns()
{
    auto clear = single_turn(kInfo, "What was the revenue in 2018?", "$1,305", Action::Answer, "$1,305");
    auto ambiguous = single_turn(kInfo, "What was the revenue?", "Which year are you asking about?", Action::Clarify, "$1,305");
    ambiguous.goal_set = {"$1,305", "$909"};
    auto followup = extend_state(ambiguous, {DialogueMessage::system("Which year are you asking about?"), DialogueMessage::user("2018")});
    followup.gold_response = "$1,305";
    followup.gold_action = Action::Answer;
    followup.goal_set = {"$1,305"};
    return {clear, ambiguous, followup};
}

ScriptTable script_for(const std::vector<ConversationTurnState>& turns)
{
    ScriptTable table;
    table.add_key(losing_key(turns[0], Action::Clarify), "Which year are you asking about?");
    table.add_key(losing_key(turns[1], Action::Answer), "The revenue was $909.");
    table.add_key(losing_key(turns[2], Action::Clarify), "Do you mean the fiscal year?");
    return table;
}

TEST(BuildPreferences, OnePairPerTurnWithGoldWinning)
{
    auto turns = three_turns();
    ConditionalGenerator generator(std::make_shared<ScriptedBackend>(script_for(turns)), PromptRegistry::builtin());
    auto dataset = build_preference_dataset(turns, generator);
    ASSERT_TRUE(dataset.complete());
    ASSERT_EQ(dataset.pairs.size(), 3U);
    EXPECT_EQ(dataset.dropped_turns, 0U);
    EXPECT_EQ(dataset.dropped_fraction(), 0.0);
    for (std::size_t i = 0; i < turns.size(); ++i) {
        const auto& pair = dataset.pairs[i];
        EXPECT_EQ(std::get<std::string>(pair.winning), turns[i].gold_response);
        EXPECT_EQ(pair.rejected_action, complement_action(turns[i].gold_action));
        EXPECT_EQ(pair.origin, PairOrigin::Offline);
        EXPECT_EQ(pair.state, turns[i]);
    }
}

TEST(BuildPreferences, AmbiguousTurnLosingSideIsAnAnswer)
{
    auto turns = three_turns();
    ConditionalGenerator generator(std::make_shared<ScriptedBackend>(script_for(turns)), PromptRegistry::builtin());
    auto dataset = build_preference_dataset(turns, generator);
    RuleClassifier classifier;
    const auto& pair = dataset.pairs[1];
    EXPECT_EQ(pair.state.gold_action, Action::Clarify);
    EXPECT_EQ(classifier.classify(pair.state, std::get<std::string>(pair.losing)), Action::Answer);
    EXPECT_EQ(classifier.classify(pair.state, std::get<std::string>(pair.winning)), Action::Clarify);
}

TEST(BuildPreferences, ByteIdenticalAcrossRuns)
{
    testing::TempDir dir("prefs");
    auto turns = read_dataset(fixture_dir() / "prefs" / "turns.jsonl");
    auto table = ScriptTable::load(fixture_dir() / "prefs" / "generator.script.json");
    ConditionalGenerator generator(std::make_shared<ScriptedBackend>(table), PromptRegistry::builtin());
    auto a = build_preference_dataset(turns, generator);
    auto b = build_preference_dataset(turns, generator);
    write_preference_dataset(dir.path() / "a.jsonl", a);
    write_preference_dataset(dir.path() / "b.jsonl", b);
    EXPECT_EQ(read_file(dir.path() / "a.jsonl"), read_file(dir.path() / "b.jsonl"));
    EXPECT_EQ(read_file(manifest_path(dir.path() / "a.jsonl")), read_file(manifest_path(dir.path() / "b.jsonl")));
    EXPECT_EQ(read_preference_pairs(dir.path() / "a.jsonl"), a.pairs);
}

TEST(BuildPreferences, DegenerateGenerationResampledOnce)
{
    auto turns = three_turns();
    turns.resize(1);
    auto recovering = std::make_shared<SequenceBackend>(std::vector<std::string> {"  $1,305 ", "Which year are you asking about?"});
    ConditionalGenerator generator(recovering, PromptRegistry::builtin());
    auto dataset = build_preference_dataset(turns, generator);
    ASSERT_EQ(dataset.pairs.size(), 1U);
    EXPECT_EQ(dataset.resampled_turns, 1U);
    EXPECT_EQ(std::get<std::string>(dataset.pairs[0].losing), "Which year are you asking about?");
    EXPECT_EQ(recovering->calls(), 2);
}

TEST(BuildPreferences, PersistentDegenerationDropsTheTurn)
{
    auto turns = three_turns();
    auto stuck = std::make_shared<SequenceBackend>(std::vector<std::string> {""});
    ConditionalGenerator generator(stuck, PromptRegistry::builtin());
    auto dataset = build_preference_dataset(turns, generator);
    EXPECT_TRUE(dataset.complete());
    EXPECT_TRUE(dataset.pairs.empty());
    EXPECT_EQ(dataset.dropped_turns, 3U);
    EXPECT_EQ(dataset.dropped_fraction(), 1.0);
    EXPECT_EQ(stuck->calls(), 6);
}

TEST(BuildPreferences, BackendFailureAbortsWithPartialOutput)
{
    auto turns = three_turns();
    ScriptTable partial;
    partial.add_key(losing_key(turns[0], Action::Clarify), "Which year are you asking about?");
    ConditionalGenerator generator(std::make_shared<ScriptedBackend>(partial), PromptRegistry::builtin());
    auto dataset = build_preference_dataset(turns, generator);
    EXPECT_FALSE(dataset.complete());
    EXPECT_EQ(dataset.pairs.size(), 1U);
    auto manifest = manifest_json(dataset);
    EXPECT_TRUE(manifest.contains("abort_reason"));
    EXPECT_FALSE(manifest.at("abort_reason").is_null());
}

TEST(BuildPreferences, ManifestRecordsCountsAndDigests)
{
    auto turns = three_turns();
    ConditionalGenerator generator(std::make_shared<ScriptedBackend>(script_for(turns)), PromptRegistry::builtin());
    PrefBuildConfig config;
    config.generator_digest = "abc";
    auto dataset = build_preference_dataset(turns, generator, config);
    auto manifest = manifest_json(dataset);
    EXPECT_EQ(manifest.at("input_turns"), 3);
    EXPECT_EQ(manifest.at("pair_count"), 3);
    EXPECT_EQ(manifest.at("source_digest"), dataset_digest(turns));
    EXPECT_EQ(manifest.at("pairs_digest"), pairs_digest(dataset.pairs));
}

} // namespace
} // namespace act
