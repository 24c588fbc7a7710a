// SPDX-License-Identifier: Apache-2.0
#include "test_support.hpp"

#include <atomic>
#include <chrono>

#include <unistd.h>

namespace act::testing {

namespace fs = std::filesystem;

fs::path fixture_dir() { return fs::path(ACT_FIXTURE_DIR); }

std::shared_ptr<const PromptRegistry> shared_registry()
{
    return {&PromptRegistry::builtin(), [](const PromptRegistry*) {}};
}

TempDir::TempDir(const std::string& tag)
{
    static std::atomic<int> counter {0};
    auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path()
        / ("act-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
}

TempDir::~TempDir()
{
    std::error_code ignored;
    fs::remove_all(path_, ignored);
}

SyntheticBench::SyntheticBench(const SyntheticTaskOptions& options)
    : suite(make_synthetic_suite(options))
{
    auto registry = shared_registry();
    ConditionalGenerator generator(std::make_shared<ScriptedBackend>(suite.generator_script), *registry);
    train_pairs = build_preference_dataset(suite.train, generator);
    dev_pairs = build_preference_dataset(suite.dev, generator);
    catalog = std::make_shared<CandidateCatalog>(suite.catalog);
    context.classifier = std::make_shared<RuleClassifier>();
    context.simulator = std::make_shared<UserSimulator>(
        std::make_shared<ScriptedBackend>(suite.simulator_script), *registry, SimulatorGrounding::Intent);
    context.heuristics = std::make_shared<HeuristicRegistry>(HeuristicRegistry::with_defaults());
    initial = std::make_unique<ToyPolicy>(synthetic_policy_config(), catalog, registry);
}

TrainResult SyntheticBench::train(TrainingMode mode, std::uint64_t seed, int num_batches) const
{
    ActConfig config;
    config.mode = mode;
    config.sampling_seed = seed;
    config.num_batches = num_batches;
    TrainOptions options;
    options.validation = dev_pairs.pairs;
    return act_train(*initial, train_pairs.pairs, context, config, synthetic_dpo_config(), options);
}

EvalReport SyntheticBench::evaluate_on_test(const Policy& policy, std::uint64_t seed) const
{
    auto greedy = policy.clone();
    dynamic_cast<ToyPolicy&>(*greedy).mutable_config().decoding.temperature = 0.0;
    EvalProtocol protocol;
    protocol.seed = seed;
    return evaluate(*greedy, suite.test, *context.classifier, *context.simulator, *context.heuristics, protocol);
}

std::vector<PreferencePair> random_dpo_batch(const SyntheticBench& bench, std::mt19937_64& rng, std::size_t size)
{
    const auto& pool = bench.train_pairs.pairs;
    std::vector<PreferencePair> batch;
    while (batch.size() < size) {
        auto pair = pool[rng() % pool.size()];
        if (pair.state.gold_action == Action::Clarify && rng() % 2 == 0) {
            Trajectory trajectory;
            auto question = std::get<std::string>(pair.winning);
            trajectory.messages = {DialogueMessage::system(question, Provenance::PolicySampled),
                DialogueMessage::user("In " + std::to_string(kSyntheticYears[rng() % kSyntheticYears.size()]) + ".", Provenance::SimulatedUser),
                DialogueMessage::system(pair.state.trajectory_goal, Provenance::PolicySampled)};
            trajectory.outcome = pair.state.trajectory_goal;
            trajectory.clarify_rounds = 1;
            trajectory.success = true;
            pair.winning = trajectory;
            pair.origin = PairOrigin::OnpolicyWinReplaced;
        }
        batch.push_back(std::move(pair));
    }
    return batch;
}

std::vector<double> random_parameters(std::size_t count, std::mt19937_64& rng, double scale)
{
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<double> theta(count);
    for (auto& t : theta) {
        t = normal(rng);
    }
    return theta;
}

ConversationTurnState single_turn(const std::string& task_info, const std::string& request, const std::string& gold,
    Action action, const std::string& goal)
{
    ConversationTurnState state;
    state.task_info = task_info;
    state.history = {DialogueMessage::user(request)};
    state.gold_response = gold;
    state.gold_action = action;
    state.trajectory_goal = goal;
    state.goal_set = {goal};
    return state;
}

} // namespace act::testing
