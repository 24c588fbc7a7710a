// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "act/conv.hpp"
#include "act/prompts.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace act {

using SparseVector = std::map<std::uint32_t, double>;

struct DecodingConfig {
    double temperature = 1.0;
    int max_new_units = 256;
    std::vector<std::string> stop_markers;
};

inline constexpr int kDefaultMaxSequenceUnits = 1280;

/// Whitespace-delimited units; the length measure for max_sequence_units.
int count_units(std::string_view text);

/// A scorable, sampleable conversational policy.
class Policy {
public:
    virtual ~Policy() = default;

    virtual std::string sample_response(const std::string& prompt, std::uint64_t seed) const = 0;
    virtual double sequence_logprob(const std::string& prompt, const std::string& response) const = 0;
    /// Gradient of sequence_logprob with respect to the parameters.
    virtual SparseVector logprob_gradient(const std::string& prompt, const std::string& response) const = 0;
    virtual std::string render(const ConversationTurnState& state) const = 0;

    virtual const std::vector<double>& parameters() const = 0;
    virtual void set_parameters(std::vector<double> parameters) = 0;
    virtual std::unique_ptr<Policy> clone() const = 0;
    /// Digest of everything except the parameters that determines behaviour.
    virtual std::string config_digest() const = 0;

    std::string parameter_digest() const;
};

/// Frozen copy of a policy taken at training start. Scoring only.
class ReferenceSnapshot {
public:
    explicit ReferenceSnapshot(const Policy& policy);
    double sequence_logprob(const std::string& prompt, const std::string& response) const;
    const Policy& policy() const { return *frozen_; }

private:
    std::shared_ptr<const Policy> frozen_;
};

ReferenceSnapshot snapshot_reference(const Policy& policy);

/// Per-task_info set of candidate responses the toy policy chooses among.
class CandidateCatalog {
public:
    void add(const std::string& task_info, const std::string& text);
    void add_states(const std::vector<ConversationTurnState>& states);
    void add_pairs(const std::vector<PreferencePair>& pairs);
    void merge(const CandidateCatalog& other);
    const std::vector<std::string>* find(const std::string& task_info) const;
    std::size_t task_count() const { return by_task_.size(); }

    nlohmann::json to_json() const;
    static CandidateCatalog from_json(const nlohmann::json& document);
    std::string digest() const;

private:
    std::map<std::string, std::vector<std::string>> by_task_;
};

struct ToyPolicyConfig {
    std::uint32_t dimension = 1U << 16;
    std::string template_id = "standard";
    DecodingConfig decoding;
    int max_sequence_units = kDefaultMaxSequenceUnits;
    double bias_scale = 1.0;
    double memo_scale = 1.0;
    double cue_scale = 1.0;
    double ground_scale = 0.5;
};

nlohmann::json to_json(const ToyPolicyConfig& config);
ToyPolicyConfig toy_config_from_json(const nlohmann::json& document);

struct Feature {
    std::uint32_t index;
    double value;
};

/// Candidates for one prompt with their sparse feature vectors.
struct PromptFeatures {
    std::vector<std::string> candidates;
    std::vector<Action> actions;
    std::vector<std::vector<Feature>> features;

    std::size_t index_of(const std::string& response) const;
};

/// Log-linear policy over a finite candidate set: score(c) = theta . phi(p, c),
/// probabilities by softmax. Features: candidate action bias, prompt
/// fingerprint x candidate id, prompt fingerprint x action, last-user-turn
/// tokens x action, and counts of grounding tokens shared with the last and
/// earlier user turns.
class ToyPolicy final : public Policy {
public:
    ToyPolicy(ToyPolicyConfig config, std::shared_ptr<const CandidateCatalog> catalog,
        std::shared_ptr<const PromptRegistry> registry = nullptr);

    std::string sample_response(const std::string& prompt, std::uint64_t seed) const override;
    double sequence_logprob(const std::string& prompt, const std::string& response) const override;
    SparseVector logprob_gradient(const std::string& prompt, const std::string& response) const override;
    std::string render(const ConversationTurnState& state) const override;

    const std::vector<double>& parameters() const override { return parameters_; }
    void set_parameters(std::vector<double> parameters) override;
    std::unique_ptr<Policy> clone() const override;
    std::string config_digest() const override;

    PromptFeatures featurize(const std::string& prompt) const;
    /// Probabilities over the prompt's candidates at temperature 1.
    std::vector<double> distribution(const std::string& prompt) const;

    const ToyPolicyConfig& config() const { return config_; }
    /// Also drops cached featurizations, which depend on the configuration.
    ToyPolicyConfig& mutable_config();
    const CandidateCatalog& catalog() const { return *catalog_; }
    void set_catalog(std::shared_ptr<const CandidateCatalog> catalog);

    /// log softmax of candidate `index` for any scalar type; `theta(i)` yields
    /// parameter i. Used by the autodiff gradient route.
    template <class Real, class ThetaFn>
    static Real log_softmax_at(const PromptFeatures& pf, std::size_t index, ThetaFn&& theta)
    {
        using std::exp;
        using std::log;
        std::vector<Real> scores;
        scores.reserve(pf.features.size());
        for (const auto& feats : pf.features) {
            Real s = Real(0.0);
            for (const auto& f : feats) {
                s += theta(f.index) * f.value;
            }
            scores.push_back(s);
        }
        Real best = scores.front();
        for (const auto& s : scores) {
            if (s > best) {
                best = s;
            }
        }
        Real total = Real(0.0);
        for (const auto& s : scores) {
            total += exp(s - best);
        }
        return scores[index] - best - log(total);
    }

private:
    struct FeatureCache;

    void check_length(const std::string& prompt, const std::string& response) const;
    /// Featurization is independent of the parameters, so clones share one
    /// cache until their configuration or catalog changes.
    std::shared_ptr<const PromptFeatures> features_for(const std::string& prompt) const;
    std::vector<double> log_probabilities(const PromptFeatures& pf) const;

    ToyPolicyConfig config_;
    std::shared_ptr<const CandidateCatalog> catalog_;
    std::shared_ptr<const PromptRegistry> registry_;
    std::vector<double> parameters_;
    std::shared_ptr<FeatureCache> cache_;
};

/// Sum of sequence_logprob over SYSTEM messages, each conditioned on the state
/// extended by every earlier trajectory message. USER messages are masked.
double trajectory_logprob(const Policy& policy, const ConversationTurnState& state, const Trajectory& trajectory);
SparseVector trajectory_logprob_gradient(const Policy& policy, const ConversationTurnState& state, const Trajectory& trajectory);

double response_logprob(const Policy& policy, const ConversationTurnState& state, const Response& response);
SparseVector response_logprob_gradient(const Policy& policy, const ConversationTurnState& state, const Response& response);

/// (prompt, system text) pairs scored for a response.
std::vector<std::pair<std::string, std::string>> scored_segments(
    const Policy& policy, const ConversationTurnState& state, const Response& response);

struct Checkpoint {
    int format_version = 1;
    std::string config_digest;
    long step = 0;
    std::vector<double> parameters;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Rejects files whose embedded config digest differs from `expected_digest`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_digest);

} // namespace act
