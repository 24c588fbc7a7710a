// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "act/policy.hpp"

#include <filesystem>
#include <vector>

namespace act {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
};

struct DpoConfig {
    double beta = 0.01;
    double learning_rate = 5e-7;
    int batch_size = 4;
    AdamWConfig adamw;
};

void validate_dpo_config(const DpoConfig& config);
nlohmann::json to_json(const DpoConfig& config);

/// Log-probabilities of the winning and losing responses under the policy
/// and the reference.
struct ScoredPair {
    double logp_w_policy = 0.0;
    double logp_w_ref = 0.0;
    double logp_l_policy = 0.0;
    double logp_l_ref = 0.0;
};

/// log(1 + e^x) without overflow.
double softplus(double x);
double sigmoid(double x);

/// beta * (logp_policy - logp_ref). Non-finite input is a Numeric error.
double implicit_reward(double logp_policy, double logp_ref, double beta);
/// reward_w - reward_l for one pair.
double pair_margin(const ScoredPair& pair, double beta);
/// sigmoid(reward_l - reward_w): the factor that multiplies the pair's
/// log-likelihood difference in the loss gradient.
double pair_weight(const ScoredPair& pair, double beta);
/// Mean over the batch of softplus(-margin).
double dpo_loss(const std::vector<ScoredPair>& batch, double beta);
double reward_margin(const std::vector<ScoredPair>& batch, double beta);

ScoredPair score_pair(const Policy& policy, const ReferenceSnapshot& reference, const PreferencePair& pair);
std::vector<ScoredPair> score_batch(const Policy& policy, const ReferenceSnapshot& reference, const std::vector<PreferencePair>& pairs);

/// Loss evaluated directly from the policy; the objective the gradient routes
/// differentiate.
double batch_loss(const Policy& policy, const ReferenceSnapshot& reference, const std::vector<PreferencePair>& pairs, double beta);

struct DpoGradient {
    SparseVector gradient;
    std::vector<double> weights;
    double loss = 0.0;
    double margin = 0.0;
};

/// Closed-form gradient of the mean loss:
/// -beta * mean_i[ w_i * (grad log pi(y_w) - grad log pi(y_l)) ], w_i = pair_weight.
DpoGradient dpo_gradient(const std::vector<PreferencePair>& pairs, const Policy& policy, const ReferenceSnapshot& reference, double beta);

/// Forward-mode automatic differentiation of the same loss through the toy
/// policy's scorer, one directional derivative per touched parameter.
SparseVector dpo_gradient_autodiff(const std::vector<PreferencePair>& pairs, const ToyPolicy& policy, const ReferenceSnapshot& reference, double beta);

/// AdamW state over the full parameter vector.
class AdamW {
public:
    AdamW() = default;
    explicit AdamW(std::size_t dimension);

    long steps() const { return step_; }
    /// One optimizer step; gradient indices outside the parameter vector are
    /// a Parameter error and leave the policy untouched.
    void apply(Policy& policy, const SparseVector& gradient, const DpoConfig& config);

private:
    std::vector<double> first_moment_;
    std::vector<double> second_moment_;
    long step_ = 0;
};

void apply_update(Policy& policy, const SparseVector& gradient, const DpoConfig& config, AdamW& optimizer);

struct StepRecord {
    long step = 0;
    double loss = 0.0;
    double margin = 0.0;
    double weight_mean = 0.0;
};

nlohmann::json to_json(const StepRecord& record);
void append_step_record(const std::filesystem::path& path, const StepRecord& record);

} // namespace act
