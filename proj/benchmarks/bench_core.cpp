// SPDX-License-Identifier: Apache-2.0
// Hot paths of training and evaluation on the synthetic task.
#include "test_support.hpp"

#include "act/dpo.hpp"
#include "act/metrics.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace act;

const testing::SyntheticBench& bench()
{
    static const testing::SyntheticBench instance;
    return instance;
}

void BM_DpoGradient(benchmark::State& state)
{
    std::mt19937_64 rng(1);
    auto reference = snapshot_reference(*bench().initial);
    auto policy = bench().initial->clone();
    policy->set_parameters(testing::random_parameters(policy->parameters().size(), rng, 0.3));
    auto batch = testing::random_dpo_batch(bench(), rng, static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(dpo_gradient(batch, *policy, reference, 0.1));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DpoGradient)->Arg(4)->Arg(16);

void BM_BatchLoss(benchmark::State& state)
{
    std::mt19937_64 rng(2);
    auto reference = snapshot_reference(*bench().initial);
    auto batch = testing::random_dpo_batch(bench(), rng, 4);
    for (auto _ : state) {
        benchmark::DoNotOptimize(batch_loss(*bench().initial, reference, batch, 0.1));
    }
}
BENCHMARK(BM_BatchLoss);

void BM_SampleResponse(benchmark::State& state)
{
    const auto& states = bench().suite.test;
    std::uint64_t seed = 0;
    std::size_t i = 0;
    for (auto _ : state) {
        auto prompt = bench().initial->render(states[i++ % states.size()]);
        benchmark::DoNotOptimize(bench().initial->sample_response(prompt, ++seed));
    }
}
BENCHMARK(BM_SampleResponse);

void BM_TrainingUpdates(benchmark::State& state)
{
    for (auto _ : state) {
        auto result = bench().train(TrainingMode::FullAct, 0, static_cast<int>(state.range(0)));
        benchmark::DoNotOptimize(result.steps);
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainingUpdates)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_DropF1(benchmark::State& state)
{
    for (auto _ : state) {
        benchmark::DoNotOptimize(drop_f1("['$5.1 million', 'the 2018 revenue', '0.6']", "['$0.6 million', '5.1 million', 'revenue 2018']"));
    }
}
BENCHMARK(BM_DropF1);

void BM_ExecutionMatch(benchmark::State& state)
{
    SqlEnvironmentSet databases(testing::fixture_dir() / "sql" / "databases");
    const auto& env = databases.get("concert_singer");
    for (auto _ : state) {
        benchmark::DoNotOptimize(execution_match("SELECT name FROM singer WHERE age > 40", "SELECT T1.name FROM singer AS T1 WHERE T1.age > 40", env));
    }
}
BENCHMARK(BM_ExecutionMatch);

} // namespace

BENCHMARK_MAIN();
