// SPDX-License-Identifier: Apache-2.0
#include "act/metrics.hpp"

#include <boost/rational.hpp>
#include <sqlite3.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <set>

namespace act {

using nlohmann::json;

json to_json(const MetricOutcome& outcome)
{
    return json {{"name", outcome.name}, {"value", outcome.value}, {"support", outcome.support}};
}

// ---- DROP F1 ----------------------------------------------------------------

namespace {

bool is_currency_byte_sequence(std::string_view text, std::size_t i, std::size_t& length)
{
    static const std::string_view symbols[] = {"$", "\xE2\x82\xAC", "\xC2\xA3", "\xC2\xA5"};
    for (auto symbol : symbols) {
        if (text.substr(i, symbol.size()) == symbol) {
            length = symbol.size();
            return true;
        }
    }
    return false;
}

std::string strip_currency_and_digit_commas(std::string_view token)
{
    std::string out;
    for (std::size_t i = 0; i < token.size();) {
        std::size_t length = 0;
        if (is_currency_byte_sequence(token, i, length)) {
            i += length;
            continue;
        }
        char c = token[i];
        if (c == ',' && i > 0 && i + 1 < token.size() && std::isdigit(static_cast<unsigned char>(token[i - 1]))
            && std::isdigit(static_cast<unsigned char>(token[i + 1]))) {
            ++i;
            continue;
        }
        out += c;
        ++i;
    }
    return out;
}

std::optional<std::string> canonical_number(std::string_view token)
{
    if (token.empty()) {
        return std::nullopt;
    }
    std::size_t digits = 0;
    for (char c : token) {
        if (std::isdigit(static_cast<unsigned char>(c))) {
            ++digits;
        } else if (c != '.' && c != '-' && c != '+') {
            return std::nullopt;
        }
    }
    if (digits == 0) {
        return std::nullopt;
    }
    double value = 0.0;
    const char* begin = token.data() + (token.front() == '+' ? 1 : 0);
    auto [end, ec] = std::from_chars(begin, token.data() + token.size(), value);
    if (ec != std::errc() || end != token.data() + token.size() || !std::isfinite(value)) {
        return std::nullopt;
    }
    if (value == 0.0) {
        value = 0.0;
    }
    char buffer[64];
    auto [out, ec2] = std::to_chars(buffer, buffer + sizeof(buffer), value);
    if (ec2 != std::errc()) {
        return std::nullopt;
    }
    return std::string(buffer, out);
}

bool is_article(const std::string& token) { return token == "a" || token == "an" || token == "the"; }

std::vector<std::string> raw_pieces(std::string_view text)
{
    std::vector<std::string> pieces;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            pieces.push_back(current);
            current.clear();
        }
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else if (c == '-' && !current.empty()) {
            // Interior hyphens separate words; a leading one may be a sign.
            flush();
        } else {
            current += c;
        }
    }
    flush();
    return pieces;
}

bool is_number_token(const std::string& token) { return canonical_number(token).has_value(); }

std::multiset<std::string> token_bag(std::string_view text)
{
    auto tokens = drop_tokens(text);
    return {tokens.begin(), tokens.end()};
}

double bag_f1(const std::multiset<std::string>& prediction, const std::multiset<std::string>& gold)
{
    std::set<std::string> gold_numbers;
    std::set<std::string> predicted_numbers;
    for (const auto& t : gold) {
        if (is_number_token(t)) {
            gold_numbers.insert(t);
        }
    }
    for (const auto& t : prediction) {
        if (is_number_token(t)) {
            predicted_numbers.insert(t);
        }
    }
    if (!gold_numbers.empty()) {
        bool shared = std::any_of(gold_numbers.begin(), gold_numbers.end(), [&](const auto& n) { return predicted_numbers.count(n) > 0; });
        if (!shared) {
            return 0.0;
        }
    }
    if (prediction.empty() && gold.empty()) {
        return 1.0;
    }
    if (prediction.empty() || gold.empty()) {
        return 0.0;
    }
    std::vector<std::string> common;
    std::set_intersection(prediction.begin(), prediction.end(), gold.begin(), gold.end(), std::back_inserter(common));
    if (common.empty()) {
        return 0.0;
    }
    // 2PR / (P + R) reduces to 2c / (|prediction| + |gold|); one division of
    // integers keeps the result correctly rounded.
    return static_cast<double>(2 * common.size()) / static_cast<double>(prediction.size() + gold.size());
}

// Best one-to-one assignment of the smaller span list into the larger.
double best_alignment(const std::vector<std::vector<double>>& scores, std::size_t rows, std::size_t cols)
{
    if (rows > cols) {
        std::vector<std::vector<double>> transposed(cols, std::vector<double>(rows));
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                transposed[c][r] = scores[r][c];
            }
        }
        return best_alignment(transposed, cols, rows);
    }
    if (cols <= kExhaustiveAlignmentSpans) {
        std::vector<std::size_t> perm(cols);
        std::iota(perm.begin(), perm.end(), 0);
        double best = 0.0;
        do {
            double total = 0.0;
            for (std::size_t r = 0; r < rows; ++r) {
                total += scores[r][perm[r]];
            }
            best = std::max(best, total);
        } while (std::next_permutation(perm.begin(), perm.end()));
        return best;
    }
    std::vector<bool> row_used(rows, false);
    std::vector<bool> col_used(cols, false);
    double total = 0.0;
    for (std::size_t k = 0; k < rows; ++k) {
        double best = -1.0;
        std::size_t best_r = 0;
        std::size_t best_c = 0;
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                if (!row_used[r] && !col_used[c] && scores[r][c] > best) {
                    best = scores[r][c];
                    best_r = r;
                    best_c = c;
                }
            }
        }
        row_used[best_r] = true;
        col_used[best_c] = true;
        total += best;
    }
    return total;
}

} // namespace

std::vector<std::string> drop_tokens(std::string_view text)
{
    std::vector<std::string> tokens;
    for (const auto& piece : raw_pieces(text)) {
        auto stripped = strip_currency_and_digit_commas(piece);
        // Surrounding punctuation ("(5", "1,305.", "12%") does not stop a
        // number from being one.
        std::string_view numeric(stripped);
        while (!numeric.empty() && std::ispunct(static_cast<unsigned char>(numeric.back()))) {
            numeric.remove_suffix(1);
        }
        while (!numeric.empty() && std::ispunct(static_cast<unsigned char>(numeric.front())) && numeric.front() != '-'
            && numeric.front() != '.') {
            numeric.remove_prefix(1);
        }
        if (auto number = canonical_number(numeric)) {
            tokens.push_back(*number);
            continue;
        }
        std::string word;
        for (char c : stripped) {
            if (!std::ispunct(static_cast<unsigned char>(c))) {
                word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            }
        }
        if (!word.empty() && !is_article(word)) {
            tokens.push_back(word);
        }
    }
    return tokens;
}

std::vector<std::string> answer_spans(std::string_view text)
{
    auto trimmed = trim(text);
    if (trimmed.size() < 2 || trimmed.front() != '[' || trimmed.back() != ']') {
        return {std::string(text)};
    }
    std::vector<std::string> spans;
    std::string_view body(trimmed);
    body = body.substr(1, body.size() - 2);
    std::size_t i = 0;
    while (i < body.size()) {
        while (i < body.size() && (std::isspace(static_cast<unsigned char>(body[i])) || body[i] == ',')) {
            ++i;
        }
        if (i >= body.size()) {
            break;
        }
        char quote = body[i];
        if (quote == '\'' || quote == '"') {
            std::string span;
            ++i;
            while (i < body.size() && body[i] != quote) {
                if (body[i] == '\\' && i + 1 < body.size()) {
                    ++i;
                }
                span += body[i++];
            }
            ++i;
            spans.push_back(span);
        } else {
            auto end = body.find(',', i);
            spans.push_back(trim(body.substr(i, end == std::string_view::npos ? std::string_view::npos : end - i)));
            i = end == std::string_view::npos ? body.size() : end;
        }
    }
    if (spans.empty()) {
        return {std::string(text)};
    }
    return spans;
}

double drop_span_f1(std::string_view prediction, std::string_view gold) { return bag_f1(token_bag(prediction), token_bag(gold)); }

double drop_f1(std::string_view prediction, std::string_view gold)
{
    auto predicted_spans = answer_spans(prediction);
    auto gold_spans = answer_spans(gold);
    std::vector<std::vector<double>> scores(predicted_spans.size(), std::vector<double>(gold_spans.size()));
    for (std::size_t p = 0; p < predicted_spans.size(); ++p) {
        for (std::size_t g = 0; g < gold_spans.size(); ++g) {
            scores[p][g] = drop_span_f1(predicted_spans[p], gold_spans[g]);
        }
    }
    double total = best_alignment(scores, predicted_spans.size(), gold_spans.size());
    return total / static_cast<double>(std::max(predicted_spans.size(), gold_spans.size()));
}

// ---- Similarity -------------------------------------------------------------

double JaccardSimilarity::similarity(std::string_view prediction, std::string_view gold) const
{
    auto a_tokens = word_tokens(prediction);
    auto b_tokens = word_tokens(gold);
    std::set<std::string> a(a_tokens.begin(), a_tokens.end());
    std::set<std::string> b(b_tokens.begin(), b_tokens.end());
    if (a.empty() && b.empty()) {
        return 1.0;
    }
    std::size_t shared = 0;
    for (const auto& t : a) {
        shared += b.count(t);
    }
    return static_cast<double>(shared) / static_cast<double>(a.size() + b.size() - shared);
}

EmbeddingSimilarity::EmbeddingSimilarity(ModelBackendConfig config)
    : config_(std::move(config))
{
    if (config_.backend_kind != BackendKind::RemoteApi) {
        fail(ErrorKind::Configuration, "embedding similarity needs a remote backend");
    }
    validate_backend_config(config_);
}

double EmbeddingSimilarity::similarity(std::string_view prediction, std::string_view gold) const
{
    auto body = post_json(config_, json {{"texts", {std::string(prediction), std::string(gold)}}});
    auto parsed = json::parse(body, nullptr, false);
    if (parsed.is_discarded() || !parsed.contains("embeddings") || parsed.at("embeddings").size() != 2) {
        fail(ErrorKind::TransientBackend, "embedding service returned an unexpected body");
    }
    auto a = parsed.at("embeddings").at(0).get<std::vector<double>>();
    auto b = parsed.at("embeddings").at(1).get<std::vector<double>>();
    if (a.size() != b.size() || a.empty()) {
        fail(ErrorKind::TransientBackend, "embedding service returned mismatched vectors");
    }
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    double cosine = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
    return (1.0 + cosine) / 2.0;
}

double semantic_similarity(std::string_view prediction, std::string_view gold, const SimilarityBackend& backend)
{
    if (prediction == gold) {
        return 1.0;
    }
    return std::clamp(backend.similarity(prediction, gold), 0.0, 1.0);
}

// ---- Action metrics ---------------------------------------------------------

json to_json(const ActionMetrics& metrics)
{
    return json {
        {"accuracy", metrics.accuracy},
        {"weighted_f1", metrics.weighted_f1},
        {"macro_f1", metrics.macro_f1},
        {"clarify_f1", metrics.clarify_f1},
        {"answer_f1", metrics.answer_f1},
        {"support", metrics.support},
    };
}

namespace {

using Rational = boost::rational<long long>;

double to_double(const Rational& r) { return static_cast<double>(r.numerator()) / static_cast<double>(r.denominator()); }

} // namespace

ActionMetrics action_metrics(const std::vector<Action>& predicted, const std::vector<Action>& gold)
{
    if (predicted.size() != gold.size()) {
        fail(ErrorKind::Precondition, "action_metrics needs equal-length sequences");
    }
    if (gold.empty()) {
        fail(ErrorKind::Precondition, "action_metrics needs at least one label");
    }
    const Action classes[] = {Action::Clarify, Action::Answer};
    long long correct = 0;
    Rational f1[2];
    long long support[2] = {0, 0};
    for (int c = 0; c < 2; ++c) {
        long long tp = 0;
        long long fp = 0;
        long long fn = 0;
        for (std::size_t i = 0; i < gold.size(); ++i) {
            bool p = predicted[i] == classes[c];
            bool g = gold[i] == classes[c];
            tp += p && g;
            fp += p && !g;
            fn += !p && g;
        }
        support[c] = tp + fn;
        long long denominator = 2 * tp + fp + fn;
        f1[c] = denominator == 0 ? Rational(0) : Rational(2 * tp, denominator);
    }
    for (std::size_t i = 0; i < gold.size(); ++i) {
        correct += predicted[i] == gold[i];
    }
    const auto n = static_cast<long long>(gold.size());
    ActionMetrics out;
    out.support = gold.size();
    out.accuracy = to_double(Rational(correct, n));
    out.clarify_f1 = to_double(f1[0]);
    out.answer_f1 = to_double(f1[1]);
    out.macro_f1 = to_double((f1[0] + f1[1]) / 2LL);
    out.weighted_f1 = to_double((f1[0] * support[0] + f1[1] * support[1]) / n);
    return out;
}

// ---- SQL execution match ----------------------------------------------------

namespace {

struct ProgressDeadline {
    std::chrono::steady_clock::time_point deadline;
    bool fired = false;
};

int progress_callback(void* data)
{
    auto* state = static_cast<ProgressDeadline*>(data);
    if (std::chrono::steady_clock::now() > state->deadline) {
        state->fired = true;
        return 1;
    }
    return 0;
}

std::string render_value(sqlite3_stmt* statement, int column)
{
    switch (sqlite3_column_type(statement, column)) {
    case SQLITE_NULL:
        return "null";
    case SQLITE_INTEGER:
        return "n:" + std::to_string(sqlite3_column_int64(statement, column));
    case SQLITE_FLOAT: {
        double value = sqlite3_column_double(statement, column);
        if (std::isfinite(value) && value == std::floor(value) && std::abs(value) < 9e15) {
            return "n:" + std::to_string(static_cast<long long>(value));
        }
        char buffer[64];
        auto [end, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
        return "n:" + std::string(buffer, ec == std::errc() ? end : buffer);
    }
    case SQLITE_BLOB: {
        const auto* bytes = static_cast<const char*>(sqlite3_column_blob(statement, column));
        return "b:" + sha256_hex(std::string_view(bytes, static_cast<std::size_t>(sqlite3_column_bytes(statement, column))));
    }
    default: {
        const auto* text = reinterpret_cast<const char*>(sqlite3_column_text(statement, column));
        return "s:" + std::string(text == nullptr ? "" : text);
    }
    }
}

} // namespace

SqlEnvironment::SqlEnvironment(const std::filesystem::path& database, std::chrono::milliseconds timeout)
    : path_(database)
    , timeout_(timeout)
{
    if (!std::filesystem::exists(database)) {
        fail(ErrorKind::Environment, "database not found: " + database.string());
    }
    int rc = 0;
    const bool seed_script = database.extension() == ".sql";
    if (seed_script) {
        rc = sqlite3_open_v2(":memory:", &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE, nullptr);
    } else {
        rc = sqlite3_open_v2(database.c_str(), &db_, SQLITE_OPEN_READONLY, nullptr);
    }
    if (rc != SQLITE_OK) {
        std::string message = db_ != nullptr ? sqlite3_errmsg(db_) : "out of memory";
        sqlite3_close(db_);
        db_ = nullptr;
        fail(ErrorKind::Environment, "cannot open database " + database.string() + ": " + message);
    }
    if (seed_script) {
        char* error = nullptr;
        auto script = read_file(database);
        if (sqlite3_exec(db_, script.c_str(), nullptr, nullptr, &error) != SQLITE_OK) {
            std::string message = error != nullptr ? error : "unknown error";
            sqlite3_free(error);
            sqlite3_close(db_);
            db_ = nullptr;
            fail(ErrorKind::Environment, "seed script " + database.string() + " failed: " + message);
        }
    }
    auto schema = run("SELECT type, name, sql FROM sqlite_master ORDER BY type, name");
    if (!schema.ok) {
        fail(ErrorKind::Environment, "cannot read schema of " + database.string() + ": " + schema.error);
    }
    std::string bytes;
    for (const auto& row : schema.rows) {
        for (const auto& value : row) {
            bytes += value;
            bytes += '\x1f';
        }
        bytes += '\n';
    }
    schema_digest_ = sha256_hex(bytes);
}

SqlEnvironment::~SqlEnvironment()
{
    if (db_ != nullptr) {
        sqlite3_close(db_);
    }
}

QueryResult SqlEnvironment::run(std::string_view sql) const
{
    std::lock_guard lock(mutex_);
    QueryResult result;
    ProgressDeadline deadline {std::chrono::steady_clock::now() + timeout_};
    sqlite3_progress_handler(db_, 1000, progress_callback, &deadline);
    sqlite3_stmt* statement = nullptr;
    const char* tail = nullptr;
    int rc = sqlite3_prepare_v2(db_, sql.data(), static_cast<int>(sql.size()), &statement, &tail);
    if (rc != SQLITE_OK || statement == nullptr) {
        result.error = rc == SQLITE_OK ? "empty statement" : sqlite3_errmsg(db_);
        sqlite3_finalize(statement);
        sqlite3_progress_handler(db_, 0, nullptr, nullptr);
        return result;
    }
    if (!sqlite3_stmt_readonly(statement)) {
        result.error = "statement is not read-only";
        sqlite3_finalize(statement);
        sqlite3_progress_handler(db_, 0, nullptr, nullptr);
        return result;
    }
    const int columns = sqlite3_column_count(statement);
    while ((rc = sqlite3_step(statement)) == SQLITE_ROW) {
        std::vector<std::string> row;
        row.reserve(static_cast<std::size_t>(columns));
        for (int c = 0; c < columns; ++c) {
            row.push_back(render_value(statement, c));
        }
        result.rows.push_back(std::move(row));
    }
    if (rc == SQLITE_DONE) {
        result.ok = true;
    } else {
        result.timed_out = deadline.fired;
        result.error = deadline.fired ? "query timed out" : sqlite3_errmsg(db_);
        result.rows.clear();
    }
    sqlite3_finalize(statement);
    sqlite3_progress_handler(db_, 0, nullptr, nullptr);
    return result;
}

bool has_ordering_clause(std::string_view sql)
{
    std::string outside;
    char quote = 0;
    for (char c : sql) {
        if (quote != 0) {
            if (c == quote) {
                quote = 0;
            }
            outside += ' ';
        } else if (c == '\'' || c == '"') {
            quote = c;
            outside += ' ';
        } else {
            outside += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
    }
    auto tokens = word_tokens(outside);
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
        if (tokens[i] == "order" && tokens[i + 1] == "by") {
            return true;
        }
    }
    return false;
}

ExecutionOutcome execution_match(std::string_view predicted_sql, std::string_view gold_sql, const SqlEnvironment& env)
{
    ExecutionOutcome outcome;
    auto gold = env.run(gold_sql);
    if (gold.timed_out) {
        outcome.timed_out = true;
        return outcome;
    }
    if (!gold.ok) {
        fail(ErrorKind::Environment, "gold query failed on " + env.path().string() + ": " + gold.error);
    }
    auto predicted = env.run(predicted_sql);
    if (!predicted.ok) {
        outcome.timed_out = predicted.timed_out;
        outcome.prediction_error = predicted.error;
        return outcome;
    }
    if (!has_ordering_clause(gold_sql)) {
        std::sort(gold.rows.begin(), gold.rows.end());
        std::sort(predicted.rows.begin(), predicted.rows.end());
    }
    outcome.match = gold.rows == predicted.rows;
    return outcome;
}

SqlEnvironmentSet::SqlEnvironmentSet(std::filesystem::path directory, std::chrono::milliseconds timeout)
    : directory_(std::move(directory))
    , timeout_(timeout)
{
    if (!std::filesystem::is_directory(directory_)) {
        fail(ErrorKind::Environment, "database directory not found: " + directory_.string());
    }
}

const SqlEnvironment& SqlEnvironmentSet::get(const std::string& database_id) const
{
    std::lock_guard lock(mutex_);
    auto it = open_.find(database_id);
    if (it == open_.end()) {
        auto path = directory_ / (database_id + ".sql");
        it = open_.emplace(database_id, std::make_unique<SqlEnvironment>(path, timeout_)).first;
    }
    return *it->second;
}

std::string SqlEnvironmentSet::digest() const
{
    std::vector<std::filesystem::path> scripts;
    for (const auto& entry : std::filesystem::directory_iterator(directory_)) {
        if (entry.path().extension() == ".sql") {
            scripts.push_back(entry.path());
        }
    }
    std::sort(scripts.begin(), scripts.end());
    std::string bytes;
    for (const auto& path : scripts) {
        bytes += path.filename().string() + "\n" + sha256_hex(read_file(path)) + "\n";
    }
    return sha256_hex(bytes);
}

std::optional<std::string> database_id_of(std::string_view task_info)
{
    constexpr std::string_view prefix = "Database: ";
    auto lines = split_lines(task_info);
    if (lines.empty() || lines.front().rfind(prefix, 0) != 0) {
        return std::nullopt;
    }
    auto id = trim(std::string_view(lines.front()).substr(prefix.size()));
    if (id.empty()) {
        return std::nullopt;
    }
    return id;
}

// ---- Aggregation ------------------------------------------------------------

double order_invariant_mean(std::vector<double> values)
{
    if (values.empty()) {
        return 0.0;
    }
    std::sort(values.begin(), values.end());
    double total = 0.0;
    for (double v : values) {
        total += v;
    }
    return total / static_cast<double>(values.size());
}

std::vector<MetricOutcome> aggregate_trajectory_metrics(const std::vector<TrajectoryResult>& results)
{
    std::vector<double> turn;
    std::vector<double> trajectory;
    std::vector<double> post_clarify;
    for (const auto& r : results) {
        turn.push_back(std::clamp(r.turn_score, 0.0, 1.0));
        trajectory.push_back(std::clamp(r.score, 0.0, 1.0));
        if (r.had_clarify) {
            post_clarify.push_back(std::clamp(r.score, 0.0, 1.0));
        }
    }
    return {
        {"turn_level", order_invariant_mean(turn), turn.size()},
        {"trajectory_level", order_invariant_mean(trajectory), trajectory.size()},
        {"post_clarification", order_invariant_mean(post_clarify), post_clarify.size()},
    };
}

// ---- Heuristics -------------------------------------------------------------

namespace {

class DropF1Heuristic final : public Heuristic {
public:
    double score(const ConversationTurnState&, const std::string& prediction, const std::string& goal) const override
    {
        return drop_f1(prediction, goal);
    }
    double default_epsilon() const override { return 0.8; }
};

class SimilarityHeuristic final : public Heuristic {
public:
    explicit SimilarityHeuristic(std::shared_ptr<const SimilarityBackend> backend)
        : backend_(std::move(backend))
    {
    }
    double score(const ConversationTurnState&, const std::string& prediction, const std::string& goal) const override
    {
        return semantic_similarity(prediction, goal, *backend_);
    }
    double default_epsilon() const override { return 0.8; }

private:
    std::shared_ptr<const SimilarityBackend> backend_;
};

class ExecutionMatchHeuristic final : public Heuristic {
public:
    explicit ExecutionMatchHeuristic(std::shared_ptr<const SqlEnvironmentSet> databases)
        : databases_(std::move(databases))
    {
    }
    double score(const ConversationTurnState& state, const std::string& prediction, const std::string& goal) const override
    {
        auto id = database_id_of(state.task_info);
        if (!id) {
            fail(ErrorKind::Environment, "task_info does not name a database");
        }
        return execution_match(prediction, goal, databases_->get(*id)).match ? 1.0 : 0.0;
    }
    double default_epsilon() const override { return 0.5; }

private:
    std::shared_ptr<const SqlEnvironmentSet> databases_;
};

} // namespace

void HeuristicRegistry::add(const std::string& id, std::shared_ptr<const Heuristic> heuristic)
{
    heuristics_[id] = std::move(heuristic);
}

bool HeuristicRegistry::has(const std::string& id) const { return heuristics_.count(id) > 0; }

const Heuristic& HeuristicRegistry::get(const std::string& id) const
{
    auto it = heuristics_.find(id);
    if (it == heuristics_.end()) {
        fail(ErrorKind::Configuration, "unknown heuristic '" + id + "'");
    }
    return *it->second;
}

std::vector<std::string> HeuristicRegistry::ids() const
{
    std::vector<std::string> out;
    for (const auto& [id, h] : heuristics_) {
        out.push_back(id);
    }
    return out;
}

HeuristicRegistry HeuristicRegistry::with_defaults(std::shared_ptr<const SqlEnvironmentSet> databases,
    std::shared_ptr<const SimilarityBackend> similarity)
{
    HeuristicRegistry registry;
    registry.add("drop_f1", std::make_shared<DropF1Heuristic>());
    if (!similarity) {
        similarity = std::make_shared<JaccardSimilarity>();
    }
    registry.add("similarity", std::make_shared<SimilarityHeuristic>(std::move(similarity)));
    if (databases) {
        registry.add("execution_match", std::make_shared<ExecutionMatchHeuristic>(std::move(databases)));
    }
    return registry;
}

} // namespace act
