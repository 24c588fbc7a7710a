// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "act/clients.hpp"
#include "act/conv.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace act {

/// Generator settings recorded alongside the pairs.
struct PrefBuildConfig {
    std::string generator_backend = "scripted";
    std::string generator_digest;
    double temperature = 0.0;
    int max_new_units = 256;
};

nlohmann::json to_json(const PrefBuildConfig& config);

struct PreferenceDataset {
    std::vector<PreferencePair> pairs;
    std::string source_digest;
    PrefBuildConfig build_config;
    std::size_t input_turns = 0;
    std::size_t dropped_turns = 0;
    std::size_t resampled_turns = 0;
    /// Set when a backend failure stopped the build; `pairs` then holds the
    /// turns completed before the failure.
    std::optional<std::string> abort_reason;

    double dropped_fraction() const;
    bool complete() const { return !abort_reason.has_value(); }
};

/// Pairs every turn's gold response with a generated response for the
/// complementary action. A degenerate generation (blank, or equal to the
/// gold response after trimming) is resampled once and then the turn is
/// dropped. Backend failures stop the build and are reported through
/// `abort_reason`.
PreferenceDataset build_preference_dataset(const std::vector<ConversationTurnState>& dataset,
    const ConditionalGenerator& generator, PrefBuildConfig build_config = {});

std::string serialize_pair(const PreferencePair& pair);
std::string pairs_digest(const std::vector<PreferencePair>& pairs);
nlohmann::json manifest_json(const PreferenceDataset& dataset);

/// Writes `<path>` (one pair per line) and `<path>.manifest.json`.
void write_preference_dataset(const std::filesystem::path& path, const PreferenceDataset& dataset);
std::vector<PreferencePair> read_preference_pairs(const std::filesystem::path& path);
std::filesystem::path manifest_path(const std::filesystem::path& pairs_path);

} // namespace act
