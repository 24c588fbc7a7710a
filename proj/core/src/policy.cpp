// SPDX-License-Identifier: Apache-2.0
#include "act/policy.hpp"

#include "act/clients.hpp"

#include <algorithm>
#include <cstring>
#include <mutex>
#include <set>
#include <unordered_map>

namespace act {

using nlohmann::json;

int count_units(std::string_view text)
{
    int units = 0;
    bool in_unit = false;
    for (unsigned char c : text) {
        bool space = std::isspace(c) != 0;
        if (!space && !in_unit) {
            ++units;
        }
        in_unit = !space;
    }
    return units;
}

std::string Policy::parameter_digest() const
{
    const auto& params = parameters();
    std::string bytes(params.size() * sizeof(double), '\0');
    std::memcpy(bytes.data(), params.data(), bytes.size());
    return sha256_hex(bytes);
}

ReferenceSnapshot::ReferenceSnapshot(const Policy& policy)
    : frozen_(policy.clone())
{
}

double ReferenceSnapshot::sequence_logprob(const std::string& prompt, const std::string& response) const
{
    return frozen_->sequence_logprob(prompt, response);
}

ReferenceSnapshot snapshot_reference(const Policy& policy) { return ReferenceSnapshot(policy); }

void CandidateCatalog::add(const std::string& task_info, const std::string& text)
{
    if (is_blank(text)) {
        return;
    }
    auto& list = by_task_[task_info];
    if (std::find(list.begin(), list.end(), text) == list.end()) {
        list.push_back(text);
    }
}

void CandidateCatalog::add_states(const std::vector<ConversationTurnState>& states)
{
    for (const auto& state : states) {
        add(state.task_info, state.gold_response);
        for (const auto& goal : state.goal_set) {
            add(state.task_info, goal);
        }
        for (const auto& message : state.history) {
            if (message.speaker == Speaker::System) {
                add(state.task_info, message.text);
            }
        }
    }
}

void CandidateCatalog::add_pairs(const std::vector<PreferencePair>& pairs)
{
    for (const auto& pair : pairs) {
        add_states({pair.state});
        for (const auto* side : {&pair.winning, &pair.losing}) {
            if (const auto* text = std::get_if<std::string>(side)) {
                add(pair.state.task_info, *text);
            } else {
                for (const auto& m : std::get<Trajectory>(*side).messages) {
                    if (m.speaker == Speaker::System) {
                        add(pair.state.task_info, m.text);
                    }
                }
            }
        }
    }
}

void CandidateCatalog::merge(const CandidateCatalog& other)
{
    for (const auto& [task, list] : other.by_task_) {
        for (const auto& text : list) {
            add(task, text);
        }
    }
}

const std::vector<std::string>* CandidateCatalog::find(const std::string& task_info) const
{
    auto it = by_task_.find(task_info);
    return it == by_task_.end() ? nullptr : &it->second;
}

json CandidateCatalog::to_json() const
{
    json tasks = json::array();
    for (const auto& [task, list] : by_task_) {
        tasks.push_back(json {{"task_info", task}, {"candidates", list}});
    }
    return json {{"tasks", tasks}};
}

CandidateCatalog CandidateCatalog::from_json(const json& document)
{
    CandidateCatalog catalog;
    for (const auto& entry : document.at("tasks")) {
        auto task = entry.at("task_info").get<std::string>();
        for (const auto& text : entry.at("candidates")) {
            catalog.add(task, text.get<std::string>());
        }
    }
    return catalog;
}

std::string CandidateCatalog::digest() const { return sha256_hex(to_json().dump()); }

json to_json(const ToyPolicyConfig& config)
{
    return json {
        {"dimension", config.dimension},
        {"template_id", config.template_id},
        {"temperature", config.decoding.temperature},
        {"max_new_units", config.decoding.max_new_units},
        {"max_sequence_units", config.max_sequence_units},
        {"bias_scale", config.bias_scale},
        {"memo_scale", config.memo_scale},
        {"cue_scale", config.cue_scale},
        {"ground_scale", config.ground_scale},
    };
}

ToyPolicyConfig toy_config_from_json(const json& document)
{
    ToyPolicyConfig config;
    config.dimension = document.value("dimension", config.dimension);
    config.template_id = document.value("template_id", config.template_id);
    config.decoding.temperature = document.value("temperature", config.decoding.temperature);
    config.decoding.max_new_units = document.value("max_new_units", config.decoding.max_new_units);
    config.max_sequence_units = document.value("max_sequence_units", config.max_sequence_units);
    config.bias_scale = document.value("bias_scale", config.bias_scale);
    config.memo_scale = document.value("memo_scale", config.memo_scale);
    config.cue_scale = document.value("cue_scale", config.cue_scale);
    config.ground_scale = document.value("ground_scale", config.ground_scale);
    return config;
}

std::size_t PromptFeatures::index_of(const std::string& response) const
{
    auto it = std::find(candidates.begin(), candidates.end(), response);
    if (it == candidates.end()) {
        fail(ErrorKind::Scoring, "response is not in the policy's candidate set: " + response);
    }
    return static_cast<std::size_t>(it - candidates.begin());
}

struct ToyPolicy::FeatureCache {
    // Bounded by clearing; entries are cheap to rebuild.
    static constexpr std::size_t kCapacity = 1U << 14;
    std::mutex mutex;
    std::unordered_map<std::string, std::shared_ptr<const PromptFeatures>> entries;
};

ToyPolicy::ToyPolicy(ToyPolicyConfig config, std::shared_ptr<const CandidateCatalog> catalog, std::shared_ptr<const PromptRegistry> registry)
    : config_(std::move(config))
    , catalog_(std::move(catalog))
    , registry_(std::move(registry))
    , parameters_(config_.dimension, 0.0)
    , cache_(std::make_shared<FeatureCache>())
{
    if (config_.dimension == 0) {
        fail(ErrorKind::Configuration, "toy policy dimension must be positive");
    }
    if (!registry_) {
        registry_ = std::shared_ptr<const PromptRegistry>(&PromptRegistry::builtin(), [](const PromptRegistry*) {});
    }
    if (!registry_->has_template(config_.template_id)) {
        fail(ErrorKind::Configuration, "unknown template_id '" + config_.template_id + "'");
    }
}

void ToyPolicy::set_parameters(std::vector<double> parameters)
{
    if (parameters.size() != parameters_.size()) {
        fail(ErrorKind::Parameter, "parameter vector has " + std::to_string(parameters.size()) + " entries, expected "
                + std::to_string(parameters_.size()));
    }
    parameters_ = std::move(parameters);
}

std::unique_ptr<Policy> ToyPolicy::clone() const { return std::make_unique<ToyPolicy>(*this); }

ToyPolicyConfig& ToyPolicy::mutable_config()
{
    cache_ = std::make_shared<FeatureCache>();
    return config_;
}

void ToyPolicy::set_catalog(std::shared_ptr<const CandidateCatalog> catalog)
{
    catalog_ = std::move(catalog);
    cache_ = std::make_shared<FeatureCache>();
}

std::string ToyPolicy::config_digest() const
{
    // The catalog decides which features exist, so it is part of the identity.
    return sha256_hex(to_json(config_).dump() + "\n" + catalog_->digest());
}

std::string ToyPolicy::render(const ConversationTurnState& state) const
{
    return render_prompt(state, config_.template_id, *registry_);
}

namespace {

std::uint32_t feature_index(std::string_view name, std::uint32_t dimension)
{
    return static_cast<std::uint32_t>(fnv1a64(name) % dimension);
}

std::vector<Feature> merge_features(std::vector<Feature> features)
{
    std::sort(features.begin(), features.end(), [](const Feature& a, const Feature& b) { return a.index < b.index; });
    std::vector<Feature> merged;
    for (const auto& f : features) {
        if (!merged.empty() && merged.back().index == f.index) {
            merged.back().value += f.value;
        } else {
            merged.push_back(f);
        }
    }
    return merged;
}

// Tokens of the task_info lines that mention the candidate, minus the
// candidate's own tokens; the candidate's own tokens when no line does.
std::set<std::string> grounding_tokens(const std::string& task_info, const std::string& candidate)
{
    auto own_list = word_tokens(candidate);
    std::set<std::string> own(own_list.begin(), own_list.end());
    std::set<std::string> key;
    auto needle = to_lower(trim(candidate));
    for (const auto& line : split_lines(task_info)) {
        if (!needle.empty() && to_lower(line).find(needle) != std::string::npos) {
            for (auto& t : word_tokens(line)) {
                if (own.count(t) == 0) {
                    key.insert(t);
                }
            }
        }
    }
    return key.empty() ? own : key;
}

std::size_t overlap(const std::set<std::string>& key, const std::set<std::string>& context)
{
    std::size_t n = 0;
    for (const auto& t : key) {
        n += context.count(t);
    }
    return n;
}

} // namespace

std::shared_ptr<const PromptFeatures> ToyPolicy::features_for(const std::string& prompt) const
{
    {
        std::lock_guard lock(cache_->mutex);
        if (auto it = cache_->entries.find(prompt); it != cache_->entries.end()) {
            return it->second;
        }
    }
    auto built = std::make_shared<const PromptFeatures>(featurize(prompt));
    std::lock_guard lock(cache_->mutex);
    if (cache_->entries.size() >= FeatureCache::kCapacity) {
        cache_->entries.clear();
    }
    cache_->entries.emplace(prompt, built);
    return built;
}

std::vector<double> ToyPolicy::log_probabilities(const PromptFeatures& pf) const
{
    std::vector<double> scores;
    scores.reserve(pf.features.size());
    for (const auto& feats : pf.features) {
        double s = 0.0;
        for (const auto& f : feats) {
            s += parameters_[f.index] * f.value;
        }
        scores.push_back(s);
    }
    const double best = *std::max_element(scores.begin(), scores.end());
    double total = 0.0;
    for (double s : scores) {
        total += std::exp(s - best);
    }
    const double log_total = std::log(total);
    for (double& s : scores) {
        s = s - best - log_total;
    }
    return scores;
}

PromptFeatures ToyPolicy::featurize(const std::string& prompt) const
{
    auto parsed = parse_prompt(prompt, config_.template_id, *registry_);
    const auto* candidates = catalog_->find(parsed.task_info);
    if (candidates == nullptr || candidates->empty()) {
        fail(ErrorKind::Scoring, "no candidate responses registered for this task_info");
    }
    std::set<std::string> last_user;
    std::set<std::string> earlier_user;
    bool seen_last = false;
    for (auto it = parsed.history.rbegin(); it != parsed.history.rend(); ++it) {
        if (it->speaker != Speaker::User) {
            continue;
        }
        auto tokens = word_tokens(it->text);
        if (!seen_last) {
            last_user.insert(tokens.begin(), tokens.end());
            seen_last = true;
        } else {
            earlier_user.insert(tokens.begin(), tokens.end());
        }
    }
    auto fingerprint = std::to_string(fnv1a64(prompt));
    const auto dim = config_.dimension;
    const double cue_value = last_user.empty() ? 0.0 : config_.cue_scale / std::sqrt(static_cast<double>(last_user.size()));

    PromptFeatures pf;
    pf.candidates = *candidates;
    for (const auto& candidate : *candidates) {
        auto action = classify_by_rule(candidate);
        std::string action_name(to_string(action));
        std::vector<Feature> features;
        features.push_back({feature_index("b|" + action_name, dim), config_.bias_scale});
        features.push_back({feature_index("m|" + fingerprint + "|" + candidate, dim), config_.memo_scale});
        features.push_back({feature_index("ma|" + fingerprint + "|" + action_name, dim), config_.memo_scale});
        for (const auto& token : last_user) {
            features.push_back({feature_index("c|" + token + "|" + action_name, dim), cue_value});
        }
        auto key = grounding_tokens(parsed.task_info, candidate);
        if (auto n = overlap(key, last_user); n > 0) {
            features.push_back({feature_index("gl|" + action_name, dim), config_.ground_scale * static_cast<double>(n)});
        }
        if (auto n = overlap(key, earlier_user); n > 0) {
            features.push_back({feature_index("gp|" + action_name, dim), config_.ground_scale * static_cast<double>(n)});
        }
        pf.actions.push_back(action);
        pf.features.push_back(merge_features(std::move(features)));
    }
    return pf;
}

void ToyPolicy::check_length(const std::string& prompt, const std::string& response) const
{
    if (count_units(prompt) + count_units(response) > config_.max_sequence_units) {
        fail(ErrorKind::SequenceLength, "sequence exceeds " + std::to_string(config_.max_sequence_units) + " units");
    }
}

std::vector<double> ToyPolicy::distribution(const std::string& prompt) const
{
    auto probs = log_probabilities(*features_for(prompt));
    for (double& p : probs) {
        p = std::exp(p);
    }
    return probs;
}

std::string ToyPolicy::sample_response(const std::string& prompt, std::uint64_t seed) const
{
    check_length(prompt, "");
    const auto pf_handle = features_for(prompt);
    const auto& pf = *pf_handle;
    std::vector<double> scores;
    for (const auto& feats : pf.features) {
        double s = 0.0;
        for (const auto& f : feats) {
            s += parameters_[f.index] * f.value;
        }
        scores.push_back(s);
    }
    std::size_t chosen = 0;
    const double temperature = config_.decoding.temperature;
    if (temperature == 0.0) {
        chosen = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
    } else {
        double best = *std::max_element(scores.begin(), scores.end());
        std::vector<double> weights;
        double total = 0.0;
        for (double s : scores) {
            weights.push_back(std::exp((s - best) / temperature));
            total += weights.back();
        }
        double u = unit_interval(mix_seed(seed, 0x5a3d)) * total;
        double cumulative = 0.0;
        chosen = weights.size() - 1;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            cumulative += weights[i];
            if (u < cumulative) {
                chosen = i;
                break;
            }
        }
        while (weights[chosen] == 0.0 && chosen > 0) {
            --chosen;
        }
    }
    const auto& response = pf.candidates[chosen];
    if (count_units(response) > config_.decoding.max_new_units) {
        fail(ErrorKind::SequenceLength, "sampled response exceeds max_new_units");
    }
    check_length(prompt, response);
    return response;
}

double ToyPolicy::sequence_logprob(const std::string& prompt, const std::string& response) const
{
    check_length(prompt, response);
    const auto pf_handle = features_for(prompt);
    const auto& pf = *pf_handle;
    return log_probabilities(pf)[pf.index_of(response)];
}

SparseVector ToyPolicy::logprob_gradient(const std::string& prompt, const std::string& response) const
{
    check_length(prompt, response);
    const auto pf_handle = features_for(prompt);
    const auto& pf = *pf_handle;
    auto index = pf.index_of(response);
    SparseVector gradient;
    for (const auto& f : pf.features[index]) {
        gradient[f.index] += f.value;
    }
    const auto log_probs = log_probabilities(pf);
    for (std::size_t i = 0; i < pf.candidates.size(); ++i) {
        double p = std::exp(log_probs[i]);
        if (p == 0.0) {
            continue;
        }
        for (const auto& f : pf.features[i]) {
            gradient[f.index] -= p * f.value;
        }
    }
    return gradient;
}

std::vector<std::pair<std::string, std::string>> scored_segments(
    const Policy& policy, const ConversationTurnState& state, const Response& response)
{
    std::vector<std::pair<std::string, std::string>> segments;
    if (const auto* text = std::get_if<std::string>(&response)) {
        segments.emplace_back(policy.render(state), *text);
        return segments;
    }
    const auto& messages = std::get<Trajectory>(response).messages;
    std::vector<DialogueMessage> prior;
    for (const auto& message : messages) {
        if (message.speaker == Speaker::System) {
            segments.emplace_back(policy.render(extend_state(state, prior)), message.text);
        }
        prior.push_back(message);
    }
    return segments;
}

double trajectory_logprob(const Policy& policy, const ConversationTurnState& state, const Trajectory& trajectory)
{
    return response_logprob(policy, state, Response(trajectory));
}

SparseVector trajectory_logprob_gradient(const Policy& policy, const ConversationTurnState& state, const Trajectory& trajectory)
{
    return response_logprob_gradient(policy, state, Response(trajectory));
}

double response_logprob(const Policy& policy, const ConversationTurnState& state, const Response& response)
{
    double total = 0.0;
    for (const auto& [prompt, text] : scored_segments(policy, state, response)) {
        total += policy.sequence_logprob(prompt, text);
    }
    return total;
}

SparseVector response_logprob_gradient(const Policy& policy, const ConversationTurnState& state, const Response& response)
{
    SparseVector total;
    for (const auto& [prompt, text] : scored_segments(policy, state, response)) {
        for (const auto& [k, v] : policy.logprob_gradient(prompt, text)) {
            total[k] += v;
        }
    }
    return total;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint)
{
    json nonzero = json::array();
    for (std::size_t i = 0; i < checkpoint.parameters.size(); ++i) {
        if (checkpoint.parameters[i] != 0.0) {
            nonzero.push_back(json::array({i, checkpoint.parameters[i]}));
        }
    }
    json document {
        {"format", "act-checkpoint"},
        {"format_version", checkpoint.format_version},
        {"config_digest", checkpoint.config_digest},
        {"step", checkpoint.step},
        {"dimension", checkpoint.parameters.size()},
        {"parameters", nonzero},
    };
    write_file(path, document.dump() + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_digest)
{
    json document;
    try {
        document = json::parse(read_file(path));
    } catch (const json::exception& e) {
        fail(ErrorKind::Configuration, "malformed checkpoint " + path.string() + ": " + e.what());
    }
    if (document.value("format", "") != "act-checkpoint" || document.value("format_version", 0) != 1) {
        fail(ErrorKind::Configuration, "unsupported checkpoint format in " + path.string());
    }
    Checkpoint checkpoint;
    checkpoint.config_digest = document.at("config_digest").get<std::string>();
    if (checkpoint.config_digest != expected_digest) {
        fail(ErrorKind::Configuration, "checkpoint config digest " + checkpoint.config_digest + " does not match " + expected_digest);
    }
    checkpoint.step = document.at("step").get<long>();
    checkpoint.parameters.assign(document.at("dimension").get<std::size_t>(), 0.0);
    for (const auto& entry : document.at("parameters")) {
        auto index = entry.at(0).get<std::size_t>();
        if (index >= checkpoint.parameters.size()) {
            fail(ErrorKind::Configuration, "checkpoint parameter index out of range");
        }
        checkpoint.parameters[index] = entry.at(1).get<double>();
    }
    return checkpoint;
}

} // namespace act
