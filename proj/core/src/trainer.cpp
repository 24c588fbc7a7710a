// SPDX-License-Identifier: Apache-2.0
#include "act/trainer.hpp"

#include <spdlog/spdlog.h>

#include <numeric>

namespace act {

using nlohmann::json;

std::string_view to_string(TrainingMode mode)
{
    switch (mode) {
    case TrainingMode::FullAct: return "full-act";
    case TrainingMode::NoSampling: return "no-sampling";
    case TrainingMode::SamplingNoSimulation: return "sampling-no-simulation";
    case TrainingMode::RandomActions: return "random-actions";
    }
    return "full-act";
}

TrainingMode parse_training_mode(std::string_view text)
{
    std::string normalized = to_lower(text);
    for (auto& c : normalized) {
        if (c == '_') {
            c = '-';
        }
    }
    for (auto mode : {TrainingMode::FullAct, TrainingMode::NoSampling, TrainingMode::SamplingNoSimulation, TrainingMode::RandomActions}) {
        if (to_string(mode) == normalized) {
            return mode;
        }
    }
    fail(ErrorKind::Configuration, "unknown training mode '" + std::string(text) + "'");
}

void validate_act_config(const ActConfig& config)
{
    if (config.num_batches < 1) {
        fail(ErrorKind::Configuration, "act.num_batches must be at least 1");
    }
    if (config.max_clarify_rounds < 1) {
        fail(ErrorKind::Configuration, "act.max_clarify_rounds must be at least 1");
    }
    if (config.max_epochs < 1 || config.max_epochs > kMaxEpochs) {
        fail(ErrorKind::Configuration, "act.max_epochs must lie in [1, 12]");
    }
    if (config.epsilon && !std::isfinite(*config.epsilon)) {
        fail(ErrorKind::Configuration, "act.epsilon must be finite");
    }
    if (config.heuristic_id.empty()) {
        fail(ErrorKind::Configuration, "act.heuristic_id must be set");
    }
}

json to_json(const ActConfig& config)
{
    return json {
        {"num_batches", config.num_batches},
        {"heuristic_id", config.heuristic_id},
        {"epsilon", config.epsilon ? json(*config.epsilon) : json(nullptr)},
        {"max_clarify_rounds", config.max_clarify_rounds},
        {"sampling_seed", config.sampling_seed},
        {"mode", to_string(config.mode)},
        {"max_epochs", config.max_epochs},
    };
}

std::uint64_t response_seed(std::uint64_t base_seed, std::uint64_t salt, const std::string& prompt)
{
    return mix_seed(mix_seed(base_seed, salt), fnv1a64(prompt));
}

Trajectory roll_out_trajectory(const Policy& policy, const ConversationTurnState& state, const std::string& first_response,
    const ActionClassifier& classifier, const UserSimulator& simulator, int cap, std::uint64_t seed)
{
    if (cap < 1) {
        fail(ErrorKind::Precondition, "clarify cap must be at least 1");
    }
    Trajectory trajectory;
    trajectory.messages.push_back(DialogueMessage::system(first_response, Provenance::PolicySampled));
    // State in which the latest system message was produced.
    ConversationTurnState before_last = state;
    std::optional<std::string> intent;
    while (classifier.classify(before_last, trajectory.messages.back().text) == Action::Clarify) {
        ++trajectory.clarify_rounds;
        if (trajectory.clarify_rounds == cap) {
            trajectory.cap_exceeded = true;
            break;
        }
        if (!intent) {
            intent = simulator.summarize_intent(state);
        }
        auto reply = simulator.simulate_user_turn(before_last, *intent, trajectory.messages.back().text);
        trajectory.messages.push_back(DialogueMessage::user(reply, Provenance::SimulatedUser));
        before_last = extend_state(state, trajectory.messages);
        auto prompt = policy.render(before_last);
        auto next = policy.sample_response(prompt, response_seed(seed, static_cast<std::uint64_t>(trajectory.clarify_rounds), prompt));
        trajectory.messages.push_back(DialogueMessage::system(next, Provenance::PolicySampled));
    }
    trajectory.outcome = trajectory.messages.back().text;
    validate_trajectory(trajectory, cap);
    return trajectory;
}

PreferencePair assign_pair(const PreferencePair& pair, const std::string& sampled, const std::optional<Trajectory>& trajectory,
    std::optional<double> heuristic_score, double epsilon)
{
    if (trajectory.has_value() != heuristic_score.has_value()) {
        fail(ErrorKind::Contract, "assign_pair needs both a trajectory and its heuristic score, or neither");
    }
    PreferencePair out = pair;
    if (!trajectory) {
        if (responses_identical(pair.winning, Response(sampled))) {
            return out;
        }
        out.losing = sampled;
        out.origin = PairOrigin::OnpolicyLossReplaced;
        return out;
    }
    Trajectory scored = *trajectory;
    const bool success = !scored.cap_exceeded && *heuristic_score > epsilon;
    scored.success = success;
    if (success) {
        if (responses_identical(pair.losing, Response(scored))) {
            return out;
        }
        out.winning = std::move(scored);
        out.origin = PairOrigin::OnpolicyWinReplaced;
    } else {
        if (responses_identical(pair.winning, Response(scored))) {
            return out;
        }
        out.losing = std::move(scored);
        out.origin = PairOrigin::OnpolicyLossReplaced;
    }
    return out;
}

std::vector<PreferencePair> randomize_actions(const std::vector<PreferencePair>& pairs, std::uint64_t seed)
{
    std::vector<PreferencePair> out;
    out.reserve(pairs.size());
    for (const auto& pair : pairs) {
        PreferencePair copy = pair;
        auto draw = unit_interval(mix_seed(seed, fnv1a64(serialize_state(pair.state))));
        Action drawn = draw < 0.5 ? Action::Clarify : Action::Answer;
        if (drawn != pair.state.gold_action) {
            std::swap(copy.winning, copy.losing);
            copy.state.gold_action = drawn;
            copy.rejected_action = complement_action(drawn);
            copy.state.gold_response = response_text(copy.winning);
        }
        out.push_back(std::move(copy));
    }
    return out;
}

json to_json(const ReplacementEvent& event)
{
    return json {
        {"step", event.step},
        {"pair_index", event.pair_index},
        {"origin", to_string(event.origin)},
        {"replaced_side", event.replaced_side},
        {"heuristic_score", event.heuristic_score ? json(*event.heuristic_score) : json(nullptr)},
        {"cap_exceeded", event.cap_exceeded},
        {"response", event.response},
        {"logp_before", event.logp_before ? json(*event.logp_before) : json(nullptr)},
        {"logp_after", event.logp_after ? json(*event.logp_after) : json(nullptr)},
    };
}

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch)
{
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const auto epoch_seed = mix_seed(seed, 0xe90c0000ULL + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = n; i > 1; --i) {
        auto j = static_cast<std::size_t>(unit_interval(mix_seed(epoch_seed, i)) * static_cast<double>(i));
        std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }
    return order;
}

struct RunFiles {
    std::optional<std::filesystem::path> dir;

    void reset() const
    {
        if (!dir) {
            return;
        }
        std::filesystem::create_directories(*dir / "checkpoints");
        write_file(*dir / "metrics.jsonl", "");
        write_file(*dir / "audit.jsonl", "");
    }
    void step(const StepRecord& record) const
    {
        if (dir) {
            append_step_record(*dir / "metrics.jsonl", record);
        }
    }
    void event(const ReplacementEvent& e) const
    {
        if (dir) {
            append_line(*dir / "audit.jsonl", to_json(e).dump());
        }
    }
    void checkpoint(const std::string& name, const Policy& policy, long step) const
    {
        if (dir) {
            save_checkpoint(*dir / "checkpoints" / (name + ".json"),
                Checkpoint {.format_version = 1, .config_digest = policy.config_digest(), .step = step, .parameters = policy.parameters()});
        }
    }
};

} // namespace

TrainResult act_train(const Policy& initial, const std::vector<PreferencePair>& preference_data, const TrainingContext& context,
    const ActConfig& config, const DpoConfig& dpo_config, const TrainOptions& options)
{
    validate_act_config(config);
    validate_dpo_config(dpo_config);
    if (preference_data.empty()) {
        fail(ErrorKind::Precondition, "act_train needs a non-empty preference dataset");
    }
    const bool samples = config.mode != TrainingMode::NoSampling;
    const bool simulates = config.mode == TrainingMode::FullAct || config.mode == TrainingMode::RandomActions;
    if (samples && !context.classifier) {
        fail(ErrorKind::Configuration, "training mode " + std::string(to_string(config.mode)) + " needs an action classifier");
    }
    const Heuristic* heuristic = nullptr;
    if (simulates) {
        if (!context.simulator || !context.heuristics) {
            fail(ErrorKind::Configuration, "training mode " + std::string(to_string(config.mode)) + " needs a user simulator and heuristics");
        }
        heuristic = &context.heuristics->get(config.heuristic_id);
    }
    const double epsilon = config.epsilon.value_or(heuristic != nullptr ? heuristic->default_epsilon() : 0.0);

    auto data = config.mode == TrainingMode::RandomActions ? randomize_actions(preference_data, config.sampling_seed) : preference_data;
    for (const auto& pair : data) {
        validate_pair(pair);
    }

    TrainResult result;
    result.policy = initial.clone();
    Policy& policy = *result.policy;
    const ReferenceSnapshot reference = snapshot_reference(initial);
    AdamW optimizer(policy.parameters().size());
    RunFiles files {options.run_dir};
    files.reset();

    std::optional<std::vector<double>> best_parameters;
    auto consider_checkpoint = [&](long step) {
        if (options.validation.empty()) {
            return;
        }
        double margin = reward_margin(score_batch(policy, reference, options.validation), dpo_config.beta);
        if (!result.selected_validation_margin || margin > *result.selected_validation_margin) {
            result.selected_validation_margin = margin;
            result.selected_step = step;
            best_parameters = policy.parameters();
            files.checkpoint("selected", policy, step);
        }
    };
    consider_checkpoint(0);

    const auto batch_size = static_cast<std::size_t>(dpo_config.batch_size);
    long step = 0;
    for (int epoch = 0; epoch < config.max_epochs && step < config.num_batches; ++epoch) {
        auto order = epoch_order(data.size(), config.sampling_seed, epoch);
        for (std::size_t start = 0; start < order.size() && step < config.num_batches; start += batch_size) {
            const auto end = std::min(order.size(), start + batch_size);
            const long this_step = step + 1;
            std::vector<PreferencePair> batch;
            std::vector<ReplacementEvent> events;
            std::vector<std::size_t> event_positions;
            for (std::size_t slot = start; slot < end; ++slot) {
                const std::size_t index = order[slot];
                PreferencePair working = data[index];
                if (samples) {
                    const auto& state = working.state;
                    auto prompt = policy.render(state);
                    auto sampled = policy.sample_response(prompt, response_seed(config.sampling_seed, static_cast<std::uint64_t>(this_step), prompt));
                    Action sampled_action = context.classifier->classify(state, sampled);
                    PreferencePair assigned = working;
                    std::optional<double> score;
                    bool cap_exceeded = false;
                    if (sampled_action != state.gold_action) {
                        assigned = assign_pair(working, sampled, std::nullopt, std::nullopt, epsilon);
                    } else if (simulates) {
                        auto trajectory = roll_out_trajectory(policy, state, sampled, *context.classifier, *context.simulator,
                            config.max_clarify_rounds, response_seed(config.sampling_seed, static_cast<std::uint64_t>(this_step), prompt));
                        score = heuristic->score(state, trajectory.outcome, state.trajectory_goal);
                        cap_exceeded = trajectory.cap_exceeded;
                        assigned = assign_pair(working, sampled, trajectory, score, epsilon);
                    }
                    if (!(assigned == working)) {
                        ReplacementEvent event;
                        event.step = this_step;
                        event.pair_index = index;
                        event.origin = assigned.origin;
                        event.heuristic_score = score;
                        event.cap_exceeded = cap_exceeded;
                        if (assigned.origin == PairOrigin::OnpolicyWinReplaced) {
                            event.replaced_side = "winning";
                            event.response = response_to_json(assigned.winning);
                        } else {
                            event.replaced_side = "losing";
                            event.response = response_to_json(assigned.losing);
                            event.logp_before = response_logprob(policy, state, assigned.losing);
                        }
                        events.push_back(std::move(event));
                        event_positions.push_back(batch.size());
                        working = std::move(assigned);
                    }
                }
                batch.push_back(std::move(working));
            }

            auto gradient = dpo_gradient(batch, policy, reference, dpo_config.beta);
            apply_update(policy, gradient.gradient, dpo_config, optimizer);
            step = this_step;

            for (std::size_t e = 0; e < events.size(); ++e) {
                auto& event = events[e];
                if (event.replaced_side == "losing") {
                    const auto& pair = batch[event_positions[e]];
                    event.logp_after = response_logprob(policy, pair.state, pair.losing);
                }
                files.event(event);
                result.events.push_back(std::move(event));
            }

            StepRecord record;
            record.step = step;
            record.loss = gradient.loss;
            record.margin = gradient.margin;
            record.weight_mean = order_invariant_mean(gradient.weights);
            files.step(record);
            result.history.push_back(record);

            if (options.validate_every > 0 && step % options.validate_every == 0) {
                consider_checkpoint(step);
            }
        }
        result.epochs = epoch + 1;
    }
    result.steps = step;
    if (options.validate_every <= 0 || step % options.validate_every != 0) {
        consider_checkpoint(step);
    }
    files.checkpoint("final", policy, step);

    if (options.validation.empty()) {
        result.selected_step = step;
        result.warnings.push_back("no validation set; using the final checkpoint");
        spdlog::warn("no validation set; using the final checkpoint (step {})", step);
        files.checkpoint("selected", policy, step);
    } else if (best_parameters) {
        policy.set_parameters(*best_parameters);
    }

    if (options.run_dir) {
        json summary {
            {"steps", result.steps},
            {"epochs", result.epochs},
            {"selected_step", result.selected_step},
            {"selected_validation_margin", result.selected_validation_margin ? json(*result.selected_validation_margin) : json(nullptr)},
            {"selected_parameter_digest", policy.parameter_digest()},
            {"replacement_events", result.events.size()},
            {"warnings", result.warnings},
        };
        write_file(*options.run_dir / "training_summary.json", summary.dump(2) + "\n");
    }
    return result;
}

} // namespace act
