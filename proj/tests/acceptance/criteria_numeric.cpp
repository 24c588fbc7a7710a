// SPDX-License-Identifier: Apache-2.0
#include "acceptance.hpp"
#include "test_support.hpp"

#include "act/dpo.hpp"
#include "act/metrics.hpp"

#include <boost/rational.hpp>
#include <fmt/format.h>

#include <cmath>
#include <random>

namespace act::acceptance {

namespace {

using testing::fixture_dir;

double norm(const SparseVector& v)
{
    double s = 0.0;
    for (const auto& [k, x] : v) {
        s += x * x;
    }
    return std::sqrt(s);
}

double relative_gap(const SparseVector& analytic, const SparseVector& numeric)
{
    SparseVector diff = analytic;
    for (const auto& [k, x] : numeric) {
        diff[k] -= x;
    }
    double scale = std::max(norm(analytic), norm(numeric));
    return scale == 0.0 ? norm(diff) : norm(diff) / scale;
}

} // namespace

Verdict dpo_loss_numerics()
{
    Verdict verdict;
    // Independent references from the C library.
    const double ln2 = std::log(2.0);
    const double softplus_minus_two = std::log1p(std::exp(-2.0));
    double worst = 0.0;
    for (double beta : {0.01, 0.1, 0.5, 1.0}) {
        // Policy gains margin/beta nats on the winner, nothing on the loser.
        ScoredPair zero {-1.0, -1.0, -2.0, -2.0};
        ScoredPair two {-1.0 + 2.0 / beta, -1.0, -2.0, -2.0};
        double at_zero = dpo_loss({zero}, beta);
        double at_two = dpo_loss({two}, beta);
        worst = std::max({worst, std::abs(at_zero - ln2), std::abs(at_two - softplus_minus_two)});
        verdict.require(std::abs(at_zero - ln2) <= 1e-9, "zero-margin loss " + fixed(at_zero, 12) + " at beta " + fixed(beta, 2));
        verdict.require(std::abs(at_two - softplus_minus_two) <= 1e-9, "margin-2 loss " + fixed(at_two, 12) + " at beta " + fixed(beta, 2));
    }

    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> logp(-40.0, 0.0);
    int mismatched = 0;
    for (int i = 0; i < 1000; ++i) {
        ScoredPair pair {logp(rng), logp(rng), logp(rng), logp(rng)};
        const double beta = 0.1;
        double reward_w = beta * (pair.logp_w_policy - pair.logp_w_ref);
        double reward_l = beta * (pair.logp_l_policy - pair.logp_l_ref);
        mismatched += pair_weight(pair, beta) != sigmoid(reward_l - reward_w);
    }
    verdict.require(mismatched == 0, std::to_string(mismatched) + " of 1000 pair weights differ from sigmoid(r_l - r_w)");

    // The weights the gradient routine reports are the same quantities.
    testing::SyntheticBench bench;
    auto reference = snapshot_reference(*bench.initial);
    auto policy = bench.initial->clone();
    policy->set_parameters(testing::random_parameters(policy->parameters().size(), rng, 0.3));
    auto batch = testing::random_dpo_batch(bench, rng, 8);
    auto gradient = dpo_gradient(batch, *policy, reference, 0.1);
    auto scored = score_batch(*policy, reference, batch);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        double reward_w = implicit_reward(scored[i].logp_w_policy, scored[i].logp_w_ref, 0.1);
        double reward_l = implicit_reward(scored[i].logp_l_policy, scored[i].logp_l_ref, 0.1);
        verdict.require(gradient.weights[i] == sigmoid(reward_l - reward_w), "gradient weight " + std::to_string(i) + " differs");
    }
    verdict.note("max loss error " + fmt::format("{:.1e}", worst) + ", 1008 weights exact");
    return verdict;
}

Verdict gradient_fidelity()
{
    Verdict verdict;
    testing::SyntheticBench bench;
    std::mt19937_64 rng(2024);
    const double beta = 0.5;
    const double step = 1e-5;
    double worst = 0.0;
    std::size_t coordinates = 0;
    for (int trial = 0; trial < 100; ++trial) {
        auto reference_policy = bench.initial->clone();
        reference_policy->set_parameters(testing::random_parameters(reference_policy->parameters().size(), rng, 0.3));
        auto reference = snapshot_reference(*reference_policy);
        auto policy = reference_policy->clone();
        policy->set_parameters(testing::random_parameters(policy->parameters().size(), rng, 0.3));
        auto batch = testing::random_dpo_batch(bench, rng, 4);

        auto analytic = dpo_gradient(batch, *policy, reference, beta);
        // Parameters outside the analytic support must have zero derivative;
        // probing a handful of them checks the support is complete.
        SparseVector probes = analytic.gradient;
        for (int extra = 0; extra < 3; ++extra) {
            probes.try_emplace(static_cast<std::uint32_t>(rng() % policy->parameters().size()), 0.0);
        }
        const auto theta = policy->parameters();
        auto shifted = policy->clone();
        SparseVector numeric;
        for (const auto& [index, value] : probes) {
            auto plus = theta;
            auto minus = theta;
            plus[index] += step;
            minus[index] -= step;
            shifted->set_parameters(std::move(plus));
            double up = batch_loss(*shifted, reference, batch, beta);
            shifted->set_parameters(std::move(minus));
            double down = batch_loss(*shifted, reference, batch, beta);
            numeric[index] = (up - down) / (2 * step);
        }
        coordinates += probes.size();
        double gap = relative_gap(analytic.gradient, numeric);
        worst = std::max(worst, gap);
        verdict.require(gap <= 1e-4, "batch " + std::to_string(trial) + " relative error " + fmt::format("{:.2e}", gap));
    }
    verdict.note("100 batches, " + std::to_string(coordinates) + " coordinates, max relative error " + fmt::format("{:.2e}", worst));
    return verdict;
}

Verdict metric_oracles()
{
    Verdict verdict;

    // DROP F1: expected values are stored as exact fractions in the fixture.
    auto cases = nlohmann::json::parse(read_file(fixture_dir() / "metrics" / "drop_f1_cases.json"));
    verdict.require(cases.size() == 15, "DROP fixture has " + std::to_string(cases.size()) + " cases");
    int drop_exact = 0;
    for (const auto& c : cases) {
        double expected = static_cast<double>(c.at("numerator").get<long long>()) / static_cast<double>(c.at("denominator").get<long long>());
        double got = drop_f1(c.at("prediction").get<std::string>(), c.at("gold").get<std::string>());
        drop_exact += got == expected;
        verdict.require(got == expected, "DROP case '" + c.at("note").get<std::string>() + "' gave " + fixed(got, 6));
    }

    // Action metrics against confusion counts in exact rationals.
    using Rational = boost::rational<long long>;
    auto to_double = [](Rational r) { return static_cast<double>(r.numerator()) / static_cast<double>(r.denominator()); };
    std::mt19937_64 rng(606);
    int vectors_exact = 0;
    for (int trial = 0; trial < 20; ++trial) {
        auto n = 1 + rng() % 60;
        std::vector<Action> predicted;
        std::vector<Action> gold;
        for (std::size_t i = 0; i < n; ++i) {
            predicted.push_back(rng() % 2 == 0 ? Action::Clarify : Action::Answer);
            gold.push_back(rng() % 3 == 0 ? Action::Clarify : Action::Answer);
        }
        Rational f1[2];
        long long support[2] = {0, 0};
        const Action classes[2] = {Action::Clarify, Action::Answer};
        for (int c = 0; c < 2; ++c) {
            long long tp = 0;
            long long fp = 0;
            long long fn = 0;
            for (std::size_t i = 0; i < n; ++i) {
                tp += predicted[i] == classes[c] && gold[i] == classes[c];
                fp += predicted[i] == classes[c] && gold[i] != classes[c];
                fn += predicted[i] != classes[c] && gold[i] == classes[c];
            }
            support[c] = tp + fn;
            f1[c] = (2 * tp + fp + fn) == 0 ? Rational(0) : Rational(2 * tp, 2 * tp + fp + fn);
        }
        long long correct = 0;
        for (std::size_t i = 0; i < n; ++i) {
            correct += predicted[i] == gold[i];
        }
        auto total = static_cast<long long>(n);
        auto metrics = action_metrics(predicted, gold);
        bool exact = metrics.accuracy == to_double(Rational(correct, total)) && metrics.clarify_f1 == to_double(f1[0])
            && metrics.answer_f1 == to_double(f1[1]) && metrics.macro_f1 == to_double((f1[0] + f1[1]) / Rational(2))
            && metrics.weighted_f1 == to_double((f1[0] * support[0] + f1[1] * support[1]) / Rational(total));
        vectors_exact += exact;
        verdict.require(exact, "action metrics differ from the rational oracle on vector " + std::to_string(trial));
    }

    // Execution match against hand-labelled pairs.
    SqlEnvironmentSet databases(fixture_dir() / "sql" / "databases");
    auto pairs = nlohmann::json::parse(read_file(fixture_dir() / "sql" / "execution_pairs.json"));
    verdict.require(pairs.size() == 20, "execution fixture has " + std::to_string(pairs.size()) + " pairs");
    int agreed = 0;
    int rewrites = 0;
    for (const auto& p : pairs) {
        const auto& env = databases.get(p.at("database").get<std::string>());
        auto outcome = execution_match(p.at("predicted").get<std::string>(), p.at("gold").get<std::string>(), env);
        bool expected = p.at("match").get<bool>();
        agreed += outcome.match == expected;
        verdict.require(outcome.match == expected, "execution pair '" + p.at("note").get<std::string>() + "' disagrees with its label");
        if (p.at("equivalent_rewrite").get<bool>()) {
            ++rewrites;
            verdict.require(p.at("predicted") != p.at("gold") && outcome.match, "rewrite '" + p.at("note").get<std::string>() + "'");
        }
    }
    verdict.require(rewrites == 5, std::to_string(rewrites) + " equivalent rewrites in the fixture");
    verdict.note("DROP " + std::to_string(drop_exact) + "/15 exact, action metrics " + std::to_string(vectors_exact)
        + "/20 exact, execution match " + std::to_string(agreed) + "/20 agree (" + std::to_string(rewrites) + " rewrites)");
    return verdict;
}

} // namespace act::acceptance
