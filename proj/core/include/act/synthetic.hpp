// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "act/clients.hpp"
#include "act/dpo.hpp"
#include "act/policy.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace act {

/// A small financial-lookup task where ambiguity is fully determined by the
/// request: "What was the revenue in 2018?" is answerable, "What was the
/// revenue?" needs the year. Each company has one value per (metric, year);
/// ambiguous requests have a hidden target year the simulated user reveals
/// when asked.
struct SyntheticTaskOptions {
    std::uint64_t seed = 0;
    int train_companies = 16;
    int dev_companies = 4;
    int test_companies = 4;
    /// Scripted user replies are emitted for up to this many clarification rounds.
    int clarify_cap = 5;
};

nlohmann::json to_json(const SyntheticTaskOptions& options);
void validate_synthetic_options(const SyntheticTaskOptions& options);

inline const std::vector<std::string> kSyntheticMetrics = {"revenue", "cost", "profit", "assets"};
inline const std::vector<int> kSyntheticYears = {2017, 2018, 2019, 2020};
inline constexpr std::string_view kSyntheticClarifyQuestion = "Which year are you asking about?";

struct SyntheticSuite {
    std::vector<ConversationTurnState> train;
    std::vector<ConversationTurnState> dev;
    std::vector<ConversationTurnState> test;
    CandidateCatalog catalog;
    /// Losing responses for build-prefs: the clarifying question for clear
    /// requests, a wrong-year value for ambiguous ones.
    ScriptTable generator_script;
    /// Intent summaries and year replies, including states with the action
    /// labels flipped so random-action training can simulate too.
    ScriptTable simulator_script;
    nlohmann::json manifest;

    const std::vector<ConversationTurnState>& split(const std::string& name) const;
};

SyntheticSuite make_synthetic_suite(const SyntheticTaskOptions& options);

/// Writes train/dev/test.jsonl, catalog.json, generator.script.json,
/// simulator.script.json and manifest.json.
void write_synthetic_suite(const std::filesystem::path& directory, const SyntheticSuite& suite);

/// Toy-policy settings used with the synthetic task.
ToyPolicyConfig synthetic_policy_config();
/// Step size and beta sized for the toy policy rather than a large model.
DpoConfig synthetic_dpo_config();

} // namespace act
