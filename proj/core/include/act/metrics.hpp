// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "act/clients.hpp"
#include "act/conv.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

struct sqlite3;

namespace act {

struct MetricOutcome {
    std::string name;
    double value = 0.0;
    std::size_t support = 0;
    bool operator==(const MetricOutcome&) const = default;
};

nlohmann::json to_json(const MetricOutcome& outcome);

// ---- DROP F1 ----------------------------------------------------------------
//
// Normalization, applied per whitespace/hyphen separated token:
//   currency symbols ($ € £ ¥) and commas between digits are removed;
//   a token that then parses as a number is rewritten in shortest decimal
//   form ("1,305.0" -> "1305", "5.10" -> "5.1");
//   otherwise punctuation is removed and the token lowercased;
//   empty tokens and the articles a / an / the are dropped.
// A span pair scores 0 when the gold span holds numbers and none of them
// appear in the prediction. Bracketed lists ("['a', 'b']") are multi-span;
// spans are aligned one-to-one to maximise the summed F1, which is divided
// by the larger span count.

std::vector<std::string> drop_tokens(std::string_view text);
/// Splits a bracketed list into spans; any other text is a single span.
std::vector<std::string> answer_spans(std::string_view text);
double drop_span_f1(std::string_view prediction, std::string_view gold);
double drop_f1(std::string_view prediction, std::string_view gold);

inline constexpr std::size_t kExhaustiveAlignmentSpans = 6;

// ---- Similarity -------------------------------------------------------------

class SimilarityBackend {
public:
    virtual ~SimilarityBackend() = default;
    /// Similarity in [0, 1].
    virtual double similarity(std::string_view prediction, std::string_view gold) const = 0;
};

/// Token-set Jaccard overlap; the scripted stand-in for embedding similarity.
class JaccardSimilarity final : public SimilarityBackend {
public:
    double similarity(std::string_view prediction, std::string_view gold) const override;
};

/// Cosine similarity of embeddings from a remote service, mapped to [0, 1]
/// as (1 + cos) / 2. POSTs `{"texts": [a, b]}` and reads
/// `{"embeddings": [[...], [...]]}`.
class EmbeddingSimilarity final : public SimilarityBackend {
public:
    explicit EmbeddingSimilarity(ModelBackendConfig config);
    double similarity(std::string_view prediction, std::string_view gold) const override;

private:
    ModelBackendConfig config_;
};

double semantic_similarity(std::string_view prediction, std::string_view gold, const SimilarityBackend& backend);

// ---- Action metrics ---------------------------------------------------------

struct ActionMetrics {
    double accuracy = 0.0;
    double weighted_f1 = 0.0;
    double macro_f1 = 0.0;
    double clarify_f1 = 0.0;
    double answer_f1 = 0.0;
    std::size_t support = 0;
};

nlohmann::json to_json(const ActionMetrics& metrics);

/// Per-class F1 is 2tp / (2tp + fp + fn), and 0 when that denominator is 0.
/// Macro averages both classes; weighted uses gold support. Computed in exact
/// rational arithmetic and rounded once.
ActionMetrics action_metrics(const std::vector<Action>& predicted, const std::vector<Action>& gold);

// ---- SQL execution match ----------------------------------------------------

struct QueryResult {
    std::vector<std::vector<std::string>> rows;
    bool ok = false;
    bool timed_out = false;
    std::string error;
};

struct ExecutionOutcome {
    bool match = false;
    bool timed_out = false;
    std::string prediction_error;
};

/// One isolated SQLite connection. `.sql` files are seed scripts executed into
/// an in-memory database; anything else is opened read-only.
class SqlEnvironment {
public:
    SqlEnvironment(const std::filesystem::path& database, std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));
    ~SqlEnvironment();
    SqlEnvironment(const SqlEnvironment&) = delete;
    SqlEnvironment& operator=(const SqlEnvironment&) = delete;

    const std::filesystem::path& path() const { return path_; }
    const std::string& schema_digest() const { return schema_digest_; }
    std::chrono::milliseconds timeout() const { return timeout_; }

    /// Values are rendered with a type tag so 3 and 3.0 compare equal while
    /// 3 and '3' do not.
    QueryResult run(std::string_view sql) const;

private:
    std::filesystem::path path_;
    std::chrono::milliseconds timeout_;
    sqlite3* db_ = nullptr;
    std::string schema_digest_;
    mutable std::mutex mutex_;
};

/// True when the query has an ORDER BY clause outside string literals.
bool has_ordering_clause(std::string_view sql);

/// Compares result sets: in order when the gold query orders its rows,
/// as multisets otherwise. Column names are ignored. A gold query that fails
/// to execute is an Environment error.
ExecutionOutcome execution_match(std::string_view predicted_sql, std::string_view gold_sql, const SqlEnvironment& env);

/// Seed scripts `<database_id>.sql` in one directory, opened on demand.
class SqlEnvironmentSet {
public:
    explicit SqlEnvironmentSet(std::filesystem::path directory, std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));
    const SqlEnvironment& get(const std::string& database_id) const;
    const std::filesystem::path& directory() const { return directory_; }
    /// Digest over every seed script in the directory.
    std::string digest() const;

private:
    std::filesystem::path directory_;
    std::chrono::milliseconds timeout_;
    mutable std::mutex mutex_;
    mutable std::map<std::string, std::unique_ptr<SqlEnvironment>> open_;
};

/// Reads the "Database: <id>" line that SQL task_info blocks start with.
std::optional<std::string> database_id_of(std::string_view task_info);

// ---- Aggregation ------------------------------------------------------------

struct TrajectoryResult {
    Trajectory trajectory;
    std::string gold_goal;
    bool had_clarify = false;
    /// Score of the first system response against the gold response.
    double turn_score = 0.0;
    /// Score of the trajectory outcome against the goal.
    double score = 0.0;
};

/// Emits "turn_level", "trajectory_level" and "post_clarification". Sums run
/// over sorted values so the result does not depend on input order.
std::vector<MetricOutcome> aggregate_trajectory_metrics(const std::vector<TrajectoryResult>& results);

/// Mean of values, independent of their order.
double order_invariant_mean(std::vector<double> values);

// ---- Heuristics -------------------------------------------------------------

/// Scores a trajectory outcome (or any response) against a goal for one state.
class Heuristic {
public:
    virtual ~Heuristic() = default;
    virtual double score(const ConversationTurnState& state, const std::string& prediction, const std::string& goal) const = 0;
    virtual double default_epsilon() const = 0;
};

class HeuristicRegistry {
public:
    void add(const std::string& id, std::shared_ptr<const Heuristic> heuristic);
    bool has(const std::string& id) const;
    const Heuristic& get(const std::string& id) const;
    std::vector<std::string> ids() const;

    /// drop_f1 (epsilon 0.8), similarity (Jaccard, 0.8) and, when databases
    /// are given, execution_match (0.5).
    static HeuristicRegistry with_defaults(std::shared_ptr<const SqlEnvironmentSet> databases = nullptr,
        std::shared_ptr<const SimilarityBackend> similarity = nullptr);

private:
    std::map<std::string, std::shared_ptr<const Heuristic>> heuristics_;
};

} // namespace act
