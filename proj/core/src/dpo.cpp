// SPDX-License-Identifier: Apache-2.0
#include "act/dpo.hpp"

#include <boost/math/differentiation/autodiff.hpp>

#include <cmath>
#include <set>

namespace act {

using nlohmann::json;

void validate_dpo_config(const DpoConfig& config)
{
    if (!(config.beta > 0.0) || !std::isfinite(config.beta)) {
        fail(ErrorKind::Configuration, "dpo.beta must be a positive finite number");
    }
    if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate)) {
        fail(ErrorKind::Configuration, "dpo.learning_rate must be a positive finite number");
    }
    if (config.batch_size < 1) {
        fail(ErrorKind::Configuration, "dpo.batch_size must be at least 1");
    }
    const auto& a = config.adamw;
    if (!(a.beta1 >= 0.0 && a.beta1 < 1.0) || !(a.beta2 >= 0.0 && a.beta2 < 1.0)) {
        fail(ErrorKind::Configuration, "dpo.adamw betas must lie in [0, 1)");
    }
    if (!(a.epsilon > 0.0) || a.weight_decay < 0.0) {
        fail(ErrorKind::Configuration, "dpo.adamw epsilon must be positive and weight_decay non-negative");
    }
}

json to_json(const DpoConfig& config)
{
    return json {
        {"beta", config.beta},
        {"learning_rate", config.learning_rate},
        {"batch_size", config.batch_size},
        {"adamw", {{"beta1", config.adamw.beta1}, {"beta2", config.adamw.beta2}, {"epsilon", config.adamw.epsilon},
                      {"weight_decay", config.adamw.weight_decay}}},
    };
}

double softplus(double x)
{
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x)
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

double implicit_reward(double logp_policy, double logp_ref, double beta)
{
    if (!std::isfinite(logp_policy) || !std::isfinite(logp_ref) || !std::isfinite(beta)) {
        fail(ErrorKind::Numeric, "implicit reward needs finite log-probabilities and beta");
    }
    return beta * (logp_policy - logp_ref);
}

double pair_margin(const ScoredPair& pair, double beta)
{
    return implicit_reward(pair.logp_w_policy, pair.logp_w_ref, beta) - implicit_reward(pair.logp_l_policy, pair.logp_l_ref, beta);
}

double pair_weight(const ScoredPair& pair, double beta) { return sigmoid(-pair_margin(pair, beta)); }

double dpo_loss(const std::vector<ScoredPair>& batch, double beta)
{
    if (batch.empty()) {
        fail(ErrorKind::Precondition, "dpo_loss needs a non-empty batch");
    }
    double total = 0.0;
    for (const auto& pair : batch) {
        total += softplus(-pair_margin(pair, beta));
    }
    return total / static_cast<double>(batch.size());
}

double reward_margin(const std::vector<ScoredPair>& batch, double beta)
{
    if (batch.empty()) {
        fail(ErrorKind::Precondition, "reward_margin needs a non-empty batch");
    }
    double total = 0.0;
    for (const auto& pair : batch) {
        total += pair_margin(pair, beta);
    }
    return total / static_cast<double>(batch.size());
}

ScoredPair score_pair(const Policy& policy, const ReferenceSnapshot& reference, const PreferencePair& pair)
{
    ScoredPair scored;
    scored.logp_w_policy = response_logprob(policy, pair.state, pair.winning);
    scored.logp_w_ref = response_logprob(reference.policy(), pair.state, pair.winning);
    scored.logp_l_policy = response_logprob(policy, pair.state, pair.losing);
    scored.logp_l_ref = response_logprob(reference.policy(), pair.state, pair.losing);
    return scored;
}

std::vector<ScoredPair> score_batch(const Policy& policy, const ReferenceSnapshot& reference, const std::vector<PreferencePair>& pairs)
{
    std::vector<ScoredPair> scored;
    scored.reserve(pairs.size());
    for (const auto& pair : pairs) {
        scored.push_back(score_pair(policy, reference, pair));
    }
    return scored;
}

double batch_loss(const Policy& policy, const ReferenceSnapshot& reference, const std::vector<PreferencePair>& pairs, double beta)
{
    return dpo_loss(score_batch(policy, reference, pairs), beta);
}

DpoGradient dpo_gradient(const std::vector<PreferencePair>& pairs, const Policy& policy, const ReferenceSnapshot& reference, double beta)
{
    if (pairs.empty()) {
        fail(ErrorKind::Precondition, "dpo_gradient needs a non-empty batch");
    }
    DpoGradient out;
    auto scored = score_batch(policy, reference, pairs);
    out.loss = dpo_loss(scored, beta);
    out.margin = reward_margin(scored, beta);
    const double scale = -beta / static_cast<double>(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        double weight = pair_weight(scored[i], beta);
        out.weights.push_back(weight);
        for (const auto& [k, v] : response_logprob_gradient(policy, pairs[i].state, pairs[i].winning)) {
            out.gradient[k] += scale * weight * v;
        }
        for (const auto& [k, v] : response_logprob_gradient(policy, pairs[i].state, pairs[i].losing)) {
            out.gradient[k] -= scale * weight * v;
        }
    }
    return out;
}

namespace {

struct ScoredSide {
    std::vector<std::pair<PromptFeatures, std::size_t>> segments;
    double reference_logp = 0.0;
};

ScoredSide prepare_side(const ToyPolicy& policy, const ReferenceSnapshot& reference, const ConversationTurnState& state, const Response& response)
{
    ScoredSide side;
    for (const auto& [prompt, text] : scored_segments(policy, state, response)) {
        auto pf = policy.featurize(prompt);
        auto index = pf.index_of(text);
        side.segments.emplace_back(std::move(pf), index);
    }
    side.reference_logp = response_logprob(reference.policy(), state, response);
    return side;
}

template <class Real, class ThetaFn>
Real side_logp(const ScoredSide& side, const ThetaFn& theta)
{
    Real total = Real(0.0);
    for (const auto& [pf, index] : side.segments) {
        total += ToyPolicy::log_softmax_at<Real>(pf, index, theta);
    }
    return total;
}

template <class Real>
Real softplus_generic(const Real& x)
{
    using std::exp;
    using std::log;
    if (x > 0.0) {
        return x + log(1.0 + exp(-x));
    }
    return log(1.0 + exp(x));
}

} // namespace

SparseVector dpo_gradient_autodiff(const std::vector<PreferencePair>& pairs, const ToyPolicy& policy, const ReferenceSnapshot& reference, double beta)
{
    using boost::math::differentiation::make_fvar;
    using Dual = boost::math::differentiation::autodiff_fvar<double, 1>;
    if (pairs.empty()) {
        fail(ErrorKind::Precondition, "dpo_gradient needs a non-empty batch");
    }
    std::vector<std::pair<ScoredSide, ScoredSide>> sides;
    std::set<std::uint32_t> touched;
    for (const auto& pair : pairs) {
        sides.emplace_back(prepare_side(policy, reference, pair.state, pair.winning),
            prepare_side(policy, reference, pair.state, pair.losing));
        for (const auto* side : {&sides.back().first, &sides.back().second}) {
            for (const auto& [pf, index] : side->segments) {
                for (const auto& feats : pf.features) {
                    for (const auto& f : feats) {
                        touched.insert(f.index);
                    }
                }
            }
        }
    }
    const auto& theta = policy.parameters();
    SparseVector gradient;
    for (std::uint32_t direction : touched) {
        auto theta_fn = [&](std::uint32_t k) { return k == direction ? make_fvar<double, 1>(theta[k]) : Dual(theta[k]); };
        Dual loss = Dual(0.0);
        for (const auto& [win, lose] : sides) {
            Dual margin = beta * ((side_logp<Dual>(win, theta_fn) - win.reference_logp) - (side_logp<Dual>(lose, theta_fn) - lose.reference_logp));
            loss += softplus_generic(-margin);
        }
        loss /= static_cast<double>(pairs.size());
        double derivative = loss.derivative(1);
        if (derivative != 0.0) {
            gradient[direction] = derivative;
        }
    }
    return gradient;
}

AdamW::AdamW(std::size_t dimension)
    : first_moment_(dimension, 0.0)
    , second_moment_(dimension, 0.0)
{
}

void AdamW::apply(Policy& policy, const SparseVector& gradient, const DpoConfig& config)
{
    auto params = policy.parameters();
    if (first_moment_.empty()) {
        first_moment_.assign(params.size(), 0.0);
        second_moment_.assign(params.size(), 0.0);
    }
    if (first_moment_.size() != params.size()) {
        fail(ErrorKind::Parameter, "optimizer state does not match the parameter vector");
    }
    for (const auto& [k, g] : gradient) {
        if (k >= params.size()) {
            fail(ErrorKind::Parameter, "gradient index " + std::to_string(k) + " outside parameter vector of size "
                    + std::to_string(params.size()));
        }
        if (!std::isfinite(g)) {
            fail(ErrorKind::Numeric, "non-finite gradient entry");
        }
    }
    ++step_;
    const auto& a = config.adamw;
    const double correction1 = 1.0 - std::pow(a.beta1, static_cast<double>(step_));
    const double correction2 = 1.0 - std::pow(a.beta2, static_cast<double>(step_));
    auto next = gradient.begin();
    for (std::size_t k = 0; k < params.size(); ++k) {
        double g = 0.0;
        if (next != gradient.end() && next->first == k) {
            g = next->second;
            ++next;
        }
        double& m = first_moment_[k];
        double& v = second_moment_[k];
        if (g == 0.0 && m == 0.0 && v == 0.0) {
            params[k] -= config.learning_rate * a.weight_decay * params[k];
            continue;
        }
        m = a.beta1 * m + (1.0 - a.beta1) * g;
        v = a.beta2 * v + (1.0 - a.beta2) * g * g;
        double step = (m / correction1) / (std::sqrt(v / correction2) + a.epsilon);
        params[k] -= config.learning_rate * (step + a.weight_decay * params[k]);
    }
    policy.set_parameters(std::move(params));
}

void apply_update(Policy& policy, const SparseVector& gradient, const DpoConfig& config, AdamW& optimizer)
{
    optimizer.apply(policy, gradient, config);
}

json to_json(const StepRecord& record)
{
    return json {{"step", record.step}, {"loss", record.loss}, {"margin", record.margin}, {"weight_mean", record.weight_mean}};
}

void append_step_record(const std::filesystem::path& path, const StepRecord& record)
{
    append_line(path, to_json(record).dump());
}

} // namespace act
