// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "act/clients.hpp"
#include "act/dpo.hpp"
#include "act/metrics.hpp"
#include "act/policy.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace act {

enum class TrainingMode { FullAct, NoSampling, SamplingNoSimulation, RandomActions };
std::string_view to_string(TrainingMode mode);
/// Accepts "full-act", "no-sampling", "sampling-no-simulation",
/// "random-actions" and the upper-case underscore spellings.
TrainingMode parse_training_mode(std::string_view text);

struct ActConfig {
    int num_batches = 1;
    std::string heuristic_id = "drop_f1";
    /// Unset means the heuristic's default tolerance.
    std::optional<double> epsilon;
    int max_clarify_rounds = 5;
    std::uint64_t sampling_seed = 0;
    TrainingMode mode = TrainingMode::FullAct;
    int max_epochs = 12;
};

inline constexpr int kMaxEpochs = 12;

void validate_act_config(const ActConfig& config);
nlohmann::json to_json(const ActConfig& config);

/// Seed for one policy sample, derived from the run seed, a salt (training
/// step, or 0 at evaluation) and the prompt text. Content-derived seeds keep
/// results independent of the order in which states are visited.
std::uint64_t response_seed(std::uint64_t base_seed, std::uint64_t salt, const std::string& prompt);

/// Starting from the policy's first response, alternates simulated user
/// replies and policy responses until a response is classified ANSWER or
/// `cap` clarifying responses have been produced (then cap_exceeded is set).
Trajectory roll_out_trajectory(const Policy& policy, const ConversationTurnState& state, const std::string& first_response,
    const ActionClassifier& classifier, const UserSimulator& simulator, int cap, std::uint64_t seed);

/// Reassigns one side of a pair from an on-policy sample.
/// No trajectory and no score: the sample's action mismatched gold, so it
/// becomes the losing response. Both present: the trajectory becomes the
/// winning response when score > epsilon and it did not hit the cap, and the
/// losing response otherwise. A replacement that would make both sides
/// identical is skipped.
PreferencePair assign_pair(const PreferencePair& pair, const std::string& sampled, const std::optional<Trajectory>& trajectory,
    std::optional<double> heuristic_score, double epsilon);

/// Swaps the sides of every pair whose seeded coin flip picks the rejected
/// action, so gold and rejected actions become random.
std::vector<PreferencePair> randomize_actions(const std::vector<PreferencePair>& pairs, std::uint64_t seed);

struct TrainingContext {
    std::shared_ptr<const ActionClassifier> classifier;
    std::shared_ptr<const UserSimulator> simulator;
    std::shared_ptr<const HeuristicRegistry> heuristics;
};

struct TrainOptions {
    std::optional<std::filesystem::path> run_dir;
    std::vector<PreferencePair> validation;
    /// Validation margin is measured every this many updates (and after the
    /// last one).
    int validate_every = 1;
};

/// One reassignment made during training.
struct ReplacementEvent {
    long step = 0;
    std::size_t pair_index = 0;
    PairOrigin origin = PairOrigin::Offline;
    std::string replaced_side;
    std::optional<double> heuristic_score;
    bool cap_exceeded = false;
    nlohmann::json response;
    /// For losing replacements: log-probability of the new losing response
    /// under the policy before and after the batch update.
    std::optional<double> logp_before;
    std::optional<double> logp_after;
};

nlohmann::json to_json(const ReplacementEvent& event);

struct TrainResult {
    std::unique_ptr<Policy> policy;
    long steps = 0;
    int epochs = 0;
    long selected_step = 0;
    std::optional<double> selected_validation_margin;
    std::vector<StepRecord> history;
    std::vector<ReplacementEvent> events;
    std::vector<std::string> warnings;
};

/// The quasi-online loop. Batches are drawn without replacement from a
/// per-epoch shuffle of D_pref; each pair in a batch is a working copy that
/// may be reassigned from on-policy samples according to the mode; one
/// optimizer update per batch. Stops after num_batches updates or
/// max_epochs epochs. Returns the parameters with the highest validation
/// reward margin, or the final ones (with a warning) without a validation set.
TrainResult act_train(const Policy& initial, const std::vector<PreferencePair>& preference_data, const TrainingContext& context,
    const ActConfig& config, const DpoConfig& dpo_config, const TrainOptions& options = {});

} // namespace act
