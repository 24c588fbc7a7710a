// SPDX-License-Identifier: Apache-2.0
#include "act/ambigsql.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <numeric>
#include <regex>
#include <set>

namespace act {

using nlohmann::json;

std::string_view to_string(AmbiguityKind kind)
{
    switch (kind) {
    case AmbiguityKind::InfoMask: return "INFO_MASK";
    case AmbiguityKind::PopulationMask: return "POPULATION_MASK";
    case AmbiguityKind::PresentationMask: return "PRESENTATION_MASK";
    }
    return "INFO_MASK";
}

AmbiguityKind parse_ambiguity_kind(std::string_view text)
{
    for (auto kind : {AmbiguityKind::InfoMask, AmbiguityKind::PopulationMask, AmbiguityKind::PresentationMask}) {
        if (to_string(kind) == text) {
            return kind;
        }
    }
    fail(ErrorKind::Configuration, "unknown ambiguity kind '" + std::string(text) + "'");
}

std::string_view masking_facet(AmbiguityKind kind)
{
    switch (kind) {
    case AmbiguityKind::InfoMask: return "masking which information is requested";
    case AmbiguityKind::PopulationMask: return "masking which entities the request is about";
    case AmbiguityKind::PresentationMask: return "masking how the results should be presented";
    }
    return "";
}

std::string linearize_schema(const SqlEnvironment& env)
{
    auto tables = env.run("SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name");
    if (!tables.ok) {
        fail(ErrorKind::Environment, "cannot list tables of " + env.path().string() + ": " + tables.error);
    }
    std::string out;
    for (const auto& row : tables.rows) {
        auto table = row.at(0).substr(2);
        std::string quoted;
        for (char c : table) {
            quoted += c;
            if (c == '\'') {
                quoted += '\'';
            }
        }
        auto columns = env.run("SELECT name FROM pragma_table_info('" + quoted + "') ORDER BY cid");
        if (!columns.ok) {
            fail(ErrorKind::Environment, "cannot read columns of " + table + ": " + columns.error);
        }
        if (!out.empty()) {
            out += '\n';
        }
        out += "Table " + table + ":";
        for (std::size_t i = 0; i < columns.rows.size(); ++i) {
            out += (i == 0 ? " " : ", ") + columns.rows[i].at(0).substr(2);
        }
    }
    return out;
}

std::vector<SqlExample> load_spider_examples(const std::filesystem::path& path, const SqlEnvironmentSet& databases)
{
    json document;
    try {
        document = json::parse(read_file(path));
    } catch (const json::exception& e) {
        fail(ErrorKind::Configuration, "malformed example file " + path.string() + ": " + e.what());
    }
    if (!document.is_array()) {
        fail(ErrorKind::Configuration, "example file " + path.string() + " must hold a JSON array");
    }
    std::map<std::string, std::string> schemas;
    std::vector<SqlExample> examples;
    for (const auto& entry : document) {
        SqlExample example;
        example.database_id = entry.at("db_id").get<std::string>();
        example.request = entry.at("question").get<std::string>();
        example.gold_sql = entry.at("query").get<std::string>();
        auto it = schemas.find(example.database_id);
        if (it == schemas.end()) {
            it = schemas.emplace(example.database_id, linearize_schema(databases.get(example.database_id))).first;
        }
        example.schema_text = it->second;
        auto check = databases.get(example.database_id).run(example.gold_sql);
        if (!check.ok) {
            fail(ErrorKind::Environment, "gold query does not execute on " + example.database_id + ": " + example.gold_sql + " (" + check.error + ")");
        }
        examples.push_back(std::move(example));
    }
    return examples;
}

std::string sql_task_info(const SqlExample& example) { return "Database: " + example.database_id + "\n" + example.schema_text; }

ConversationTurnState wrap_unambiguous(const SqlExample& example)
{
    ConversationTurnState state;
    state.task_info = sql_task_info(example);
    state.history = {DialogueMessage::user(example.request)};
    state.gold_response = example.gold_sql;
    state.trajectory_goal = example.gold_sql;
    state.gold_action = Action::Answer;
    state.goal_set = {example.gold_sql};
    validate_state(state);
    return state;
}

namespace {

// Lowercased query with string literals blanked out.
std::string mask_literals(std::string_view sql)
{
    std::string out;
    char quote = 0;
    for (char c : sql) {
        if (quote != 0) {
            if (c == quote) {
                quote = 0;
            }
            out += ' ';
        } else if (c == '\'' || c == '"') {
            quote = c;
            out += ' ';
        } else {
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
    }
    return out;
}

std::vector<std::string> outer_projection(const std::string& masked)
{
    std::size_t start = masked.find("select");
    if (start == std::string::npos) {
        return {};
    }
    start += 6;
    int depth = 0;
    std::vector<std::string> items;
    std::string current;
    for (std::size_t i = start; i < masked.size(); ++i) {
        char c = masked[i];
        if (c == '(') {
            ++depth;
        } else if (c == ')') {
            --depth;
        }
        if (depth == 0 && masked.compare(i, 5, " from") == 0 && (i + 5 == masked.size() || !std::isalnum(static_cast<unsigned char>(masked[i + 5])))) {
            break;
        }
        if (depth == 0 && c == ',') {
            items.push_back(trim(current));
            current.clear();
        } else {
            current += c;
        }
    }
    items.push_back(trim(current));
    return items;
}

} // namespace

bool requires_presentation_mask(std::string_view sql)
{
    if (has_ordering_clause(sql)) {
        return true;
    }
    auto masked = mask_literals(sql);
    for (const auto& token : word_tokens(masked)) {
        if (token == "limit") {
            return true;
        }
    }
    static const std::regex named_column(R"(^(distinct\s+)?[a-z_][a-z0-9_]*(\.[a-z_][a-z0-9_]*)?(\s+(as\s+)?[a-z_][a-z0-9_]*)?$)");
    std::size_t named = 0;
    for (const auto& item : outer_projection(masked)) {
        if (std::regex_match(item, named_column)) {
            ++named;
        }
    }
    return named >= 2;
}

AmbiguityKind choose_perturbation(const SqlExample& example, std::uint64_t seed)
{
    if (requires_presentation_mask(example.gold_sql)) {
        return AmbiguityKind::PresentationMask;
    }
    auto draw = unit_interval(mix_seed(seed, fnv1a64(example.database_id + "\n" + example.gold_sql + "\n" + example.request)));
    return draw < 0.5 ? AmbiguityKind::InfoMask : AmbiguityKind::PopulationMask;
}

std::string perturbation_key(const SqlExample& example, AmbiguityKind kind)
{
    return "perturb_request\n" + std::string(to_string(kind)) + "\n" + example.gold_sql;
}

std::string perturbation_prompt(const SqlExample& example, AmbiguityKind kind, const PromptRegistry& registry)
{
    const auto& header = registry.template_text("perturbation-question-header");
    std::string examples;
    std::size_t used = 0;
    for (const auto& exemplar : registry.exemplars("perturbation-exemplars")) {
        if (exemplar.at("kind").get<std::string>() != to_string(kind) || used == kPerturbationShotsPerKind) {
            continue;
        }
        auto block = registry.fill("perturbation",
            {
                {"examples", ""},
                {"schema", exemplar.at("schema").get<std::string>()},
                {"sql", exemplar.at("sql").get<std::string>()},
                {"request", exemplar.at("request").get<std::string>()},
                {"facet", std::string(masking_facet(kind))},
            });
        block = trim(block);
        block += "\n\"" + exemplar.at("ambiguous").get<std::string>() + "\"\n" + header + "\n\"" + exemplar.at("clarifying_question").get<std::string>()
            + "\"";
        if (!examples.empty()) {
            examples += "\n\n";
        }
        examples += block;
        ++used;
    }
    if (used < kPerturbationShotsPerKind) {
        fail(ErrorKind::Configuration, "need " + std::to_string(kPerturbationShotsPerKind) + " perturbation exemplars of kind "
                + std::string(to_string(kind)) + ", found " + std::to_string(used));
    }
    return registry.fill("perturbation",
        {
            {"examples", examples},
            {"schema", sql_task_info(example)},
            {"sql", example.gold_sql},
            {"request", example.request},
            {"facet", std::string(masking_facet(kind))},
        });
}

std::optional<PerturbedRequest> parse_perturbation(std::string_view completion)
{
    std::vector<std::string> quoted;
    std::size_t i = 0;
    while (quoted.size() < 2) {
        auto open = completion.find('"', i);
        if (open == std::string_view::npos) {
            break;
        }
        auto close = completion.find('"', open + 1);
        if (close == std::string_view::npos) {
            break;
        }
        quoted.push_back(trim(completion.substr(open + 1, close - open - 1)));
        i = close + 1;
    }
    if (quoted.size() < 2 || quoted[0].empty() || quoted[1].empty()) {
        return std::nullopt;
    }
    return PerturbedRequest {quoted[0], quoted[1]};
}

PerturbedRequest perturb_request(const ConditionalGenerator& generator, const SqlExample& example, AmbiguityKind kind,
    const PromptRegistry& registry)
{
    auto prompt = perturbation_prompt(example, kind, registry);
    auto key = perturbation_key(example, kind);
    std::string last;
    for (int attempt = 0; attempt < 2; ++attempt) {
        last = generator.complete(prompt, key);
        if (auto parsed = parse_perturbation(last)) {
            if (trim(parsed->ambiguous_request) != trim(example.request)) {
                return *parsed;
            }
        }
    }
    fail(ErrorKind::Synthesis, "perturbation of '" + example.request + "' did not yield an ambiguous request and a question: " + last);
}

std::vector<ConversationTurnState> assemble_ambiguous(const SqlExample& example, const PerturbedRequest& perturbed)
{
    ConversationTurnState first;
    first.task_info = sql_task_info(example);
    first.history = {DialogueMessage::user(perturbed.ambiguous_request, Provenance::LlmGenerated)};
    first.gold_response = perturbed.clarifying_question;
    first.trajectory_goal = example.gold_sql;
    first.gold_action = Action::Clarify;
    first.goal_set = {example.gold_sql};

    ConversationTurnState second = first;
    second.history.push_back(DialogueMessage::system(perturbed.clarifying_question, Provenance::LlmGenerated));
    second.history.push_back(DialogueMessage::user(example.request));
    second.gold_response = example.gold_sql;
    second.gold_action = Action::Answer;

    validate_state(first);
    validate_state(second);
    return {first, second};
}

std::string_view to_string(SelectionPolicy policy) { return policy == SelectionPolicy::FirstN ? "first-n" : "random"; }

SelectionPolicy parse_selection_policy(std::string_view text)
{
    if (text == "first-n") {
        return SelectionPolicy::FirstN;
    }
    if (text == "random") {
        return SelectionPolicy::Random;
    }
    fail(ErrorKind::Configuration, "unknown selection policy '" + std::string(text) + "'");
}

json to_json(const SynthesisOptions& options)
{
    return json {
        {"seed", options.seed},
        {"selection", to_string(options.selection)},
        {"limit", options.limit},
        {"dev_fraction", options.dev_fraction},
        {"test_fraction", options.test_fraction},
    };
}

namespace {

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed)
{
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) {
        auto j = static_cast<std::size_t>(unit_interval(mix_seed(seed, i)) * static_cast<double>(i));
        std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }
    return order;
}

} // namespace

std::vector<ConversationTurnState> SynthesisResult::split_states(const std::string& split) const
{
    std::vector<ConversationTurnState> states;
    for (const auto& e : examples) {
        if (e.split != split) {
            continue;
        }
        states.push_back(e.unambiguous);
        states.insert(states.end(), e.ambiguous.begin(), e.ambiguous.end());
    }
    return states;
}

ScriptTable SynthesisResult::simulator_script() const
{
    ScriptTable table;
    for (const auto& e : examples) {
        table.add_key(sql_simulate_key(e.example.gold_sql), e.example.request);
    }
    return table;
}

ScriptTable SynthesisResult::generator_script() const
{
    ScriptTable table;
    for (const auto& e : examples) {
        table.add_key(losing_key(e.unambiguous, Action::Clarify), e.perturbed.clarifying_question);
        table.add_key(losing_key(e.ambiguous.at(0), Action::Answer), e.example.gold_sql);
        table.add_key(losing_key(e.ambiguous.at(1), Action::Clarify), e.perturbed.clarifying_question);
    }
    return table;
}

ScriptTable SynthesisResult::answer_oracle_script(const SqlEnvironmentSet& databases) const
{
    ScriptTable table;
    for (const auto& e : examples) {
        auto tables = databases.get(e.example.database_id).run("SELECT name FROM sqlite_master WHERE type = 'table' ORDER BY name LIMIT 1");
        std::string guess = tables.ok && !tables.rows.empty() ? "SELECT * FROM " + tables.rows[0].at(0).substr(2) : "SELECT 1";
        table.add_key(answer_key(e.unambiguous), e.example.gold_sql);
        table.add_key(answer_key(e.ambiguous.at(0)), guess);
        table.add_key(answer_key(e.ambiguous.at(1)), e.example.gold_sql);
    }
    return table;
}

SynthesisResult synthesize_ambigsql(const std::vector<SqlExample>& examples, const ConditionalGenerator& generator,
    const PromptRegistry& registry, const SynthesisOptions& options)
{
    if (options.dev_fraction < 0.0 || options.test_fraction < 0.0 || options.dev_fraction + options.test_fraction > 1.0) {
        fail(ErrorKind::Configuration, "synthesis split fractions must be non-negative and sum to at most 1");
    }
    std::vector<std::size_t> selected(examples.size());
    std::iota(selected.begin(), selected.end(), 0);
    if (options.limit > 0 && options.limit < examples.size()) {
        if (options.selection == SelectionPolicy::Random) {
            selected = seeded_permutation(examples.size(), mix_seed(options.seed, 0x5e1ec7));
        }
        selected.resize(options.limit);
        std::sort(selected.begin(), selected.end());
    }

    SynthesisResult result;
    for (std::size_t index : selected) {
        const auto& example = examples[index];
        SynthesizedExample out;
        out.example = example;
        out.kind = choose_perturbation(example, options.seed);
        try {
            out.perturbed = perturb_request(generator, example, out.kind, registry);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Synthesis && e.kind() != ErrorKind::TransientBackend && e.kind() != ErrorKind::DegenerateGeneration) {
                throw;
            }
            ++result.skipped;
            spdlog::warn("skipping example {} ({}): {}", index, example.database_id, e.what());
            continue;
        }
        out.unambiguous = wrap_unambiguous(example);
        out.ambiguous = assemble_ambiguous(example, out.perturbed);
        result.examples.push_back(std::move(out));
    }

    const std::size_t n = result.examples.size();
    const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * options.test_fraction));
    const auto n_dev = std::min(n - n_test, static_cast<std::size_t>(std::llround(static_cast<double>(n) * options.dev_fraction)));
    auto order = seeded_permutation(n, mix_seed(options.seed, 0x5b1175));
    for (std::size_t rank = 0; rank < n; ++rank) {
        result.examples[order[rank]].split = rank < n_test ? "test" : rank < n_test + n_dev ? "dev" : "train";
    }

    json counts = json::object();
    json schemas = json::object();
    std::set<std::string> all_schemas;
    std::map<std::string, std::size_t> kinds;
    for (auto kind : {AmbiguityKind::InfoMask, AmbiguityKind::PopulationMask, AmbiguityKind::PresentationMask}) {
        kinds[std::string(to_string(kind))] = 0;
    }
    for (const auto& split : kSplits) {
        std::size_t unambiguous = 0;
        std::size_t ambiguous = 0;
        std::set<std::string> split_schemas;
        for (const auto& e : result.examples) {
            if (e.split == split) {
                ++unambiguous;
                ++ambiguous;
                split_schemas.insert(e.example.database_id);
            }
        }
        counts[split] = json {{"unambiguous_requests", unambiguous}, {"ambiguous_conversations", ambiguous},
            {"states", unambiguous + 2 * ambiguous}, {"dataset_digest", dataset_digest(result.split_states(split))}};
        schemas[split] = split_schemas.size();
    }
    for (const auto& e : result.examples) {
        all_schemas.insert(e.example.database_id);
        ++kinds[std::string(to_string(e.kind))];
    }
    schemas["total"] = all_schemas.size();
    result.manifest = json {
        {"source_examples", examples.size()},
        {"selected_examples", selected.size()},
        {"synthesized_examples", n},
        {"skipped_examples", result.skipped},
        {"counts", counts},
        {"unique_schemas", schemas},
        {"ambiguity_kinds", kinds},
        {"selection_policy", to_string(options.selection)},
        {"options", to_json(options)},
    };
    return result;
}

void write_synthesis(const std::filesystem::path& directory, const SynthesisResult& result, const SqlEnvironmentSet& databases)
{
    for (const auto& split : kSplits) {
        write_dataset(directory / (split + ".jsonl"), result.split_states(split));
    }
    auto manifest = result.manifest;
    auto simulator = result.simulator_script();
    auto generator = result.generator_script();
    auto oracle = result.answer_oracle_script(databases);
    simulator.save(directory / "simulator.script.json");
    generator.save(directory / "generator.script.json");
    oracle.save(directory / "answer-oracle.script.json");
    manifest["script_digests"] = json {{"simulator", simulator.digest()}, {"generator", generator.digest()}, {"answer_oracle", oracle.digest()}};
    manifest["databases_digest"] = databases.digest();
    write_file(directory / "manifest.json", manifest.dump(2) + "\n");
}

std::string answer_key(const ConversationTurnState& state)
{
    return "answer_sql\n" + database_id_of(state.task_info).value_or("") + "\n" + last_user_text(state);
}

BackendSqlAnswerer::BackendSqlAnswerer(std::shared_ptr<const TextBackend> backend, const PromptRegistry& registry, GenerationRequest defaults)
    : backend_(std::move(backend))
    , registry_(&registry)
    , defaults_(std::move(defaults))
{
}

std::string BackendSqlAnswerer::answer(const ConversationTurnState& state) const
{
    GenerationRequest request = defaults_;
    request.prompt = render_prompt(state, "ambigsql", *registry_);
    return trim(backend_->complete(request, answer_key(state)));
}

json to_json(const GapReport& report)
{
    return json {{"no_clarify_match", report.no_clarify_match}, {"with_clarify_match", report.with_clarify_match}, {"support", report.support}};
}

GapReport gap_analysis(const SqlAnswerer& answerer, const std::vector<ConversationTurnState>& testset, const SqlEnvironmentSet& databases)
{
    GapReport report;
    std::size_t no_clarify = 0;
    std::size_t with_clarify = 0;
    for (std::size_t i = 0; i + 1 < testset.size(); ++i) {
        const auto& first = testset[i];
        const auto& second = testset[i + 1];
        bool paired = first.gold_action == Action::Clarify && second.gold_action == Action::Answer && second.history.size() > first.history.size()
            && std::equal(first.history.begin(), first.history.end(), second.history.begin()) && first.trajectory_goal == second.gold_response;
        if (!paired) {
            continue;
        }
        auto id = database_id_of(first.task_info);
        if (!id) {
            fail(ErrorKind::Environment, "task_info does not name a database");
        }
        const auto& env = databases.get(*id);
        no_clarify += execution_match(answerer.answer(first), first.trajectory_goal, env).match;
        with_clarify += execution_match(answerer.answer(second), second.gold_response, env).match;
        ++report.support;
        ++i;
    }
    if (report.support > 0) {
        report.no_clarify_match = static_cast<double>(no_clarify) / static_cast<double>(report.support);
        report.with_clarify_match = static_cast<double>(with_clarify) / static_cast<double>(report.support);
    }
    return report;
}

} // namespace act
