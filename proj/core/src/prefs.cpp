// SPDX-License-Identifier: Apache-2.0
#include "act/prefs.hpp"

#include <spdlog/spdlog.h>

namespace act {

using nlohmann::json;

json to_json(const PrefBuildConfig& config)
{
    return json {
        {"generator_backend", config.generator_backend},
        {"generator_digest", config.generator_digest},
        {"temperature", config.temperature},
        {"max_new_units", config.max_new_units},
    };
}

double PreferenceDataset::dropped_fraction() const
{
    return input_turns == 0 ? 0.0 : static_cast<double>(dropped_turns) / static_cast<double>(input_turns);
}

namespace {

bool degenerate(const std::string& losing, const std::string& winning)
{
    return is_blank(losing) || trim(losing) == trim(winning);
}

std::optional<std::string> try_generate(const ConditionalGenerator& generator, const ConversationTurnState& state, Action rejected)
{
    try {
        auto text = generator.generate_losing_response(state, rejected);
        if (degenerate(text, state.gold_response)) {
            return std::nullopt;
        }
        return text;
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::DegenerateGeneration) {
            return std::nullopt;
        }
        throw;
    }
}

} // namespace

PreferenceDataset build_preference_dataset(const std::vector<ConversationTurnState>& dataset,
    const ConditionalGenerator& generator, PrefBuildConfig build_config)
{
    PreferenceDataset out;
    out.source_digest = dataset_digest(dataset);
    out.build_config = std::move(build_config);
    out.input_turns = dataset.size();
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& state = dataset[i];
        validate_state(state);
        const Action rejected = complement_action(state.gold_action);
        std::optional<std::string> losing;
        try {
            losing = try_generate(generator, state, rejected);
            if (!losing) {
                ++out.resampled_turns;
                losing = try_generate(generator, state, rejected);
            }
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::TransientBackend) {
                throw;
            }
            out.abort_reason = "turn " + std::to_string(i) + ": " + e.what();
            spdlog::error("preference build aborted at turn {} of {}: {}", i, dataset.size(), e.what());
            return out;
        }
        if (!losing) {
            ++out.dropped_turns;
            spdlog::warn("dropping turn {}: generator returned a degenerate response twice", i);
            continue;
        }
        PreferencePair pair;
        pair.state = state;
        pair.rejected_action = rejected;
        pair.winning = state.gold_response;
        pair.losing = *losing;
        pair.origin = PairOrigin::Offline;
        validate_pair(pair);
        out.pairs.push_back(std::move(pair));
    }
    if (out.dropped_turns > 0) {
        spdlog::warn("preference build dropped {} of {} turns", out.dropped_turns, out.input_turns);
    }
    return out;
}

std::string serialize_pair(const PreferencePair& pair) { return json(pair).dump(); }

std::string pairs_digest(const std::vector<PreferencePair>& pairs)
{
    std::string bytes;
    for (const auto& pair : pairs) {
        bytes += serialize_pair(pair);
        bytes += '\n';
    }
    return sha256_hex(bytes);
}

json manifest_json(const PreferenceDataset& dataset)
{
    return json {
        {"status", dataset.complete() ? "complete" : "aborted"},
        {"abort_reason", dataset.abort_reason ? json(*dataset.abort_reason) : json(nullptr)},
        {"source_digest", dataset.source_digest},
        {"pairs_digest", pairs_digest(dataset.pairs)},
        {"input_turns", dataset.input_turns},
        {"pair_count", dataset.pairs.size()},
        {"dropped_turns", dataset.dropped_turns},
        {"dropped_fraction", dataset.dropped_fraction()},
        {"resampled_turns", dataset.resampled_turns},
        {"build_config", to_json(dataset.build_config)},
    };
}

std::filesystem::path manifest_path(const std::filesystem::path& pairs_path)
{
    return std::filesystem::path(pairs_path.string() + ".manifest.json");
}

void write_preference_dataset(const std::filesystem::path& path, const PreferenceDataset& dataset)
{
    std::string body;
    for (const auto& pair : dataset.pairs) {
        body += serialize_pair(pair);
        body += '\n';
    }
    write_file(path, body);
    write_file(manifest_path(path), manifest_json(dataset).dump(2) + "\n");
}

std::vector<PreferencePair> read_preference_pairs(const std::filesystem::path& path)
{
    std::vector<PreferencePair> pairs;
    std::size_t line_number = 0;
    for (const auto& line : split_lines(read_file(path))) {
        ++line_number;
        if (is_blank(line)) {
            continue;
        }
        try {
            auto pair = json::parse(line).get<PreferencePair>();
            validate_pair(pair);
            pairs.push_back(std::move(pair));
        } catch (const json::exception& e) {
            fail(ErrorKind::InvalidTranscript, path.string() + ":" + std::to_string(line_number) + ": " + e.what());
        }
    }
    return pairs;
}

} // namespace act
