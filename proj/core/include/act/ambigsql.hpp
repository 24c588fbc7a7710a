// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "act/clients.hpp"
#include "act/conv.hpp"
#include "act/metrics.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace act {

struct SqlExample {
    std::string schema_text;
    std::string request;
    std::string gold_sql;
    std::string database_id;
    bool operator==(const SqlExample&) const = default;
};

enum class AmbiguityKind { InfoMask, PopulationMask, PresentationMask };
std::string_view to_string(AmbiguityKind kind);
AmbiguityKind parse_ambiguity_kind(std::string_view text);
/// Phrase naming what the perturbation hides, used in the prompt.
std::string_view masking_facet(AmbiguityKind kind);

/// "Table t: c1, c2" lines, tables in name order, columns in declaration order.
std::string linearize_schema(const SqlEnvironment& env);

/// Reads Spider-format examples (`[{"db_id", "question", "query"}]`) and
/// linearizes each database schema from its seed script.
std::vector<SqlExample> load_spider_examples(const std::filesystem::path& path, const SqlEnvironmentSet& databases);

/// "Database: <id>" followed by the linearized schema.
std::string sql_task_info(const SqlExample& example);

ConversationTurnState wrap_unambiguous(const SqlExample& example);

/// ORDER BY, LIMIT, or two or more named columns in the outer projection.
bool requires_presentation_mask(std::string_view sql);

/// PRESENTATION_MASK when the query manipulates presentation; otherwise a
/// seeded fair choice between INFO_MASK and POPULATION_MASK.
AmbiguityKind choose_perturbation(const SqlExample& example, std::uint64_t seed);

struct PerturbedRequest {
    std::string ambiguous_request;
    std::string clarifying_question;
    bool operator==(const PerturbedRequest&) const = default;
};

std::string perturbation_key(const SqlExample& example, AmbiguityKind kind);
/// Five exemplars of the chosen kind, then the example, ending where the
/// ambiguous request should be written.
std::string perturbation_prompt(const SqlExample& example, AmbiguityKind kind, const PromptRegistry& registry);
/// Reads the first two quoted strings (ambiguous request, then question).
std::optional<PerturbedRequest> parse_perturbation(std::string_view completion);

/// One retry on an unusable completion, then a Synthesis error.
PerturbedRequest perturb_request(const ConditionalGenerator& generator, const SqlExample& example, AmbiguityKind kind,
    const PromptRegistry& registry);

/// Two states: t1 ends with the ambiguous request and expects the clarifying
/// question; t2 adds the clarification exchange and the clear request and
/// expects the gold query. Both share the gold query as trajectory goal.
std::vector<ConversationTurnState> assemble_ambiguous(const SqlExample& example, const PerturbedRequest& perturbed);

enum class SelectionPolicy { FirstN, Random };
std::string_view to_string(SelectionPolicy policy);
SelectionPolicy parse_selection_policy(std::string_view text);

struct SynthesisOptions {
    std::uint64_t seed = 0;
    SelectionPolicy selection = SelectionPolicy::FirstN;
    /// 0 keeps every example.
    std::size_t limit = 0;
    double dev_fraction = 0.15;
    double test_fraction = 0.15;
};

nlohmann::json to_json(const SynthesisOptions& options);

/// One source example and its synthesized conversations.
struct SynthesizedExample {
    SqlExample example;
    AmbiguityKind kind = AmbiguityKind::InfoMask;
    PerturbedRequest perturbed;
    std::string split;
    ConversationTurnState unambiguous;
    std::vector<ConversationTurnState> ambiguous;
};

struct SynthesisResult {
    std::vector<SynthesizedExample> examples;
    std::size_t skipped = 0;
    nlohmann::json manifest;

    std::vector<ConversationTurnState> split_states(const std::string& split) const;
    /// Clear request for each gold query, for the SQL-grounded user simulator.
    ScriptTable simulator_script() const;
    /// Losing responses for build-prefs: the clarifying question where the
    /// gold action is ANSWER, the gold query as a premature answer where it
    /// is CLARIFY.
    ScriptTable generator_script() const;
    /// Answers for the gap-analysis oracle: the gold query for clear
    /// requests, a fixed guess for ambiguous ones.
    ScriptTable answer_oracle_script(const SqlEnvironmentSet& databases) const;
};

inline const std::vector<std::string> kSplits = {"train", "dev", "test"};

SynthesisResult synthesize_ambigsql(const std::vector<SqlExample>& examples, const ConditionalGenerator& generator,
    const PromptRegistry& registry, const SynthesisOptions& options);

/// Writes <split>.jsonl, manifest.json and the three script tables.
void write_synthesis(const std::filesystem::path& directory, const SynthesisResult& result, const SqlEnvironmentSet& databases);

/// Produces a SQL query for a conversation state.
class SqlAnswerer {
public:
    virtual ~SqlAnswerer() = default;
    virtual std::string answer(const ConversationTurnState& state) const = 0;
};

std::string answer_key(const ConversationTurnState& state);

/// Prompts a backend with the SQL conversation template.
class BackendSqlAnswerer final : public SqlAnswerer {
public:
    BackendSqlAnswerer(std::shared_ptr<const TextBackend> backend, const PromptRegistry& registry, GenerationRequest defaults = {});
    std::string answer(const ConversationTurnState& state) const override;

private:
    std::shared_ptr<const TextBackend> backend_;
    const PromptRegistry* registry_;
    GenerationRequest defaults_;
};

struct GapReport {
    double no_clarify_match = 0.0;
    double with_clarify_match = 0.0;
    std::size_t support = 0;
};

nlohmann::json to_json(const GapReport& report);

/// Execution match when prompting with the ambiguous request only (t1) and
/// with the gold clarification exchange included (t2). `testset` holds
/// ambiguous conversations as consecutive (t1, t2) states; other states are
/// ignored.
GapReport gap_analysis(const SqlAnswerer& answerer, const std::vector<ConversationTurnState>& testset, const SqlEnvironmentSet& databases);

} // namespace act
