// SPDX-License-Identifier: Apache-2.0
#include "act/synthetic.hpp"

#include <fmt/format.h>

#include <numeric>

namespace act {

using nlohmann::json;

json to_json(const SyntheticTaskOptions& options)
{
    return json {
        {"seed", options.seed},
        {"train_companies", options.train_companies},
        {"dev_companies", options.dev_companies},
        {"test_companies", options.test_companies},
        {"clarify_cap", options.clarify_cap},
    };
}

void validate_synthetic_options(const SyntheticTaskOptions& options)
{
    if (options.train_companies < 1 || options.dev_companies < 0 || options.test_companies < 1) {
        fail(ErrorKind::Configuration, "synthetic: train and test need at least one company");
    }
    if (options.train_companies + options.dev_companies + options.test_companies > 200) {
        fail(ErrorKind::Configuration, "synthetic: at most 200 companies");
    }
    if (options.clarify_cap < 1) {
        fail(ErrorKind::Configuration, "synthetic.clarify_cap must be at least 1");
    }
}

const std::vector<ConversationTurnState>& SyntheticSuite::split(const std::string& name) const
{
    if (name == "train") {
        return train;
    }
    if (name == "dev") {
        return dev;
    }
    if (name == "test") {
        return test;
    }
    fail(ErrorKind::Precondition, "unknown split '" + name + "'");
}

namespace {

class SeededDraws {
public:
    explicit SeededDraws(std::uint64_t seed) : seed_(seed) {}
    std::size_t below(std::size_t n) { return std::min(n - 1, static_cast<std::size_t>(unit_interval(mix_seed(seed_, counter_++)) * static_cast<double>(n))); }

    template <class T>
    void shuffle(std::vector<T>& items)
    {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[below(i)]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

struct Company {
    std::string name;
    // values[metric][year]
    std::vector<std::vector<std::string>> values;

    std::string task_info() const
    {
        std::string out = "Company: " + name;
        for (std::size_t m = 0; m < kSyntheticMetrics.size(); ++m) {
            for (std::size_t y = 0; y < kSyntheticYears.size(); ++y) {
                out += fmt::format("\n{} {}: {}", kSyntheticMetrics[m], kSyntheticYears[y], values[m][y]);
            }
        }
        return out;
    }
};

std::string year_reply(int year) { return fmt::format("In {}.", year); }

std::string intent_text(const std::string& metric, int year) { return fmt::format("The user wants the {} for {}.", metric, year); }

/// Registers the intent and every reply the user would give while the
/// system keeps asking for the year.
void script_user(ScriptTable& table, const ConversationTurnState& state, const std::string& metric, int year, int cap)
{
    const auto intent = intent_text(metric, year);
    table.add_key(intent_key(state), intent);
    std::vector<DialogueMessage> exchange;
    for (int round = 0; round < cap; ++round) {
        table.add_key(simulate_key(extend_state(state, exchange), intent), year_reply(year));
        exchange.push_back(DialogueMessage::system(std::string(kSyntheticClarifyQuestion), Provenance::PolicySampled));
        exchange.push_back(DialogueMessage::user(year_reply(year), Provenance::SimulatedUser));
    }
}

ConversationTurnState flipped(const ConversationTurnState& state, const std::string& losing)
{
    ConversationTurnState out = state;
    out.gold_action = complement_action(state.gold_action);
    out.gold_response = losing;
    return out;
}

} // namespace

SyntheticSuite make_synthetic_suite(const SyntheticTaskOptions& options)
{
    validate_synthetic_options(options);
    SeededDraws draws(mix_seed(options.seed, 0x5e7a));
    const int total = options.train_companies + options.dev_companies + options.test_companies;
    const std::size_t cells = kSyntheticMetrics.size() * kSyntheticYears.size();

    SyntheticSuite suite;
    for (int c = 0; c < total; ++c) {
        Company company;
        company.name = fmt::format("Firm{:03d}", c + 1);
        // Distinct three-digit values keep every candidate tied to one line.
        std::vector<int> pool(900);
        std::iota(pool.begin(), pool.end(), 100);
        draws.shuffle(pool);
        company.values.assign(kSyntheticMetrics.size(), std::vector<std::string>(kSyntheticYears.size()));
        for (std::size_t k = 0; k < cells; ++k) {
            company.values[k / kSyntheticYears.size()][k % kSyntheticYears.size()] = fmt::format("${}", pool[k]);
        }
        const auto task_info = company.task_info();
        auto& split = c < options.train_companies ? suite.train : (c < options.train_companies + options.dev_companies ? suite.dev : suite.test);

        for (std::size_t m = 0; m < kSyntheticMetrics.size(); ++m) {
            const auto& metric = kSyntheticMetrics[m];
            // Two answerable requests per metric.
            std::vector<std::size_t> years(kSyntheticYears.size());
            std::iota(years.begin(), years.end(), 0);
            draws.shuffle(years);
            for (std::size_t pick = 0; pick < 2; ++pick) {
                const auto y = years[pick];
                ConversationTurnState state;
                state.task_info = task_info;
                state.history.push_back(DialogueMessage::user(fmt::format("What was the {} in {}?", metric, kSyntheticYears[y])));
                state.gold_response = company.values[m][y];
                state.trajectory_goal = company.values[m][y];
                state.goal_set = {state.trajectory_goal};
                state.gold_action = Action::Answer;
                const std::string losing(kSyntheticClarifyQuestion);
                suite.generator_script.add_key(losing_key(state, Action::Clarify), losing);
                script_user(suite.simulator_script, state, metric, kSyntheticYears[y], options.clarify_cap);
                script_user(suite.simulator_script, flipped(state, losing), metric, kSyntheticYears[y], options.clarify_cap);
                split.push_back(std::move(state));
            }
            // One ambiguous request with a hidden year.
            const auto hidden = draws.below(kSyntheticYears.size());
            auto wrong = (hidden + 1 + draws.below(kSyntheticYears.size() - 1)) % kSyntheticYears.size();
            ConversationTurnState state;
            state.task_info = task_info;
            state.history.push_back(DialogueMessage::user(fmt::format("What was the {}?", metric)));
            state.gold_response = std::string(kSyntheticClarifyQuestion);
            state.trajectory_goal = company.values[m][hidden];
            state.gold_action = Action::Clarify;
            state.goal_set = company.values[m];
            const auto& losing = company.values[m][wrong];
            suite.generator_script.add_key(losing_key(state, Action::Answer), losing);
            script_user(suite.simulator_script, state, metric, kSyntheticYears[hidden], options.clarify_cap);
            script_user(suite.simulator_script, flipped(state, losing), metric, kSyntheticYears[hidden], options.clarify_cap);
            split.push_back(std::move(state));
        }
    }
    for (const auto* states : {&suite.train, &suite.dev, &suite.test}) {
        for (const auto& state : *states) {
            validate_state(state);
        }
        suite.catalog.add_states(*states);
    }
    suite.manifest = json {
        {"format", "act-synthetic"},
        {"options", to_json(options)},
        {"counts", {{"train", suite.train.size()}, {"dev", suite.dev.size()}, {"test", suite.test.size()}}},
        {"digests",
            {
                {"train", dataset_digest(suite.train)},
                {"dev", dataset_digest(suite.dev)},
                {"test", dataset_digest(suite.test)},
                {"catalog", suite.catalog.digest()},
                {"generator_script", suite.generator_script.digest()},
                {"simulator_script", suite.simulator_script.digest()},
            }},
    };
    return suite;
}

void write_synthetic_suite(const std::filesystem::path& directory, const SyntheticSuite& suite)
{
    std::filesystem::create_directories(directory);
    write_dataset(directory / "train.jsonl", suite.train);
    write_dataset(directory / "dev.jsonl", suite.dev);
    write_dataset(directory / "test.jsonl", suite.test);
    write_file(directory / "catalog.json", suite.catalog.to_json().dump(2) + "\n");
    suite.generator_script.save(directory / "generator.script.json");
    suite.simulator_script.save(directory / "simulator.script.json");
    write_file(directory / "manifest.json", suite.manifest.dump(2) + "\n");
}

ToyPolicyConfig synthetic_policy_config()
{
    ToyPolicyConfig config;
    config.template_id = "standard";
    config.decoding.temperature = 1.0;
    config.decoding.max_new_units = 32;
    config.bias_scale = 1.0;
    // Pair-specific features must outweigh one Adam step on the shared
    // action and cue features, or a losing trajectory that opens with the
    // winner's clarifying question can gain probability from other pairs.
    config.memo_scale = 4.0;
    config.cue_scale = 1.0;
    config.ground_scale = 0.5;
    return config;
}

DpoConfig synthetic_dpo_config()
{
    DpoConfig config;
    config.beta = 0.1;
    config.learning_rate = 0.05;
    config.batch_size = 4;
    return config;
}

} // namespace act
