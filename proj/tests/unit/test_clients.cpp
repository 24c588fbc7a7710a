// SPDX-License-Identifier: Apache-2.0
#include "test_support.hpp"

#include "act/clients.hpp"

#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <thread>

namespace act {
namespace {

using nlohmann::json;
using testing::fixture_dir;
using testing::single_turn;

template <class Fn>
ErrorKind kind_of(Fn&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected an act::Error";
    return ErrorKind::Contract;
}

const std::string kFinance = "Company: Northwind\nrevenue 2018: $1,305\nrevenue 2019: $909";

TEST(ScriptTable, KeysAndFingerprintsAgree)
{
    ScriptTable table;
    table.add_key("alpha", "one");
    table.add_fingerprint(script_fingerprint("beta"), "two");
    EXPECT_EQ(table.find_key("alpha"), "one");
    EXPECT_EQ(table.find_key("beta"), "two");
    EXPECT_FALSE(table.find_key("gamma"));
    auto reloaded = ScriptTable::from_json(table.to_json());
    EXPECT_EQ(reloaded.digest(), table.digest());
    EXPECT_EQ(reloaded.find_key("alpha"), "one");
}

TEST(ScriptedBackend, MissingFingerprintIsTransient)
{
    ScriptedBackend backend(ScriptTable {});
    GenerationRequest request;
    request.prompt = "anything";
    EXPECT_EQ(kind_of([&] { backend.complete(request, "unknown key"); }), ErrorKind::TransientBackend);
}

TEST(ScriptedBackend, SameRequestSameResponse)
{
    ScriptTable table;
    table.add_key("k", "v");
    ScriptedBackend a(table);
    ScriptedBackend b(ScriptTable::from_json(table.to_json()));
    GenerationRequest request;
    request.prompt = "p";
    EXPECT_EQ(a.complete(request, "k"), b.complete(request, "k"));
}

TEST(ConditionalGenerator, QuestionForClearTurnAndGuessForAmbiguousTurn)
{
    auto clear = single_turn(kFinance, "What was the revenue in 2018?", "$1,305", Action::Answer, "$1,305");
    auto ambiguous = single_turn(kFinance, "What was the revenue?", "Which year are you asking about?", Action::Clarify, "$1,305");
    ambiguous.goal_set = {"$1,305", "$909"};
    ScriptTable table;
    table.add_key(losing_key(clear, Action::Clarify), "Which year are you asking about?");
    table.add_key(losing_key(ambiguous, Action::Answer), "The revenue was $909.");
    ConditionalGenerator generator(std::make_shared<ScriptedBackend>(table), PromptRegistry::builtin());
    auto question = generator.generate_losing_response(clear, Action::Clarify);
    auto guess = generator.generate_losing_response(ambiguous, Action::Answer);
    EXPECT_EQ(question, "Which year are you asking about?");
    EXPECT_EQ(classify_by_rule(question), Action::Clarify);
    EXPECT_EQ(classify_by_rule(guess), Action::Answer);
    EXPECT_EQ(kind_of([&] { generator.generate_losing_response(clear, Action::Answer); }), ErrorKind::TransientBackend);
}

TEST(ConditionalGenerator, BlankCompletionIsDegenerate)
{
    auto clear = single_turn(kFinance, "What was the revenue in 2018?", "$1,305", Action::Answer, "$1,305");
    ScriptTable table;
    table.add_key(losing_key(clear, Action::Clarify), "   ");
    ConditionalGenerator generator(std::make_shared<ScriptedBackend>(table), PromptRegistry::builtin());
    EXPECT_EQ(kind_of([&] { generator.generate_losing_response(clear, Action::Clarify); }), ErrorKind::DegenerateGeneration);
}

TEST(ConditionalGenerator, PromptNamesTheTargetAction)
{
    auto clear = single_turn(kFinance, "What was the revenue in 2018?", "$1,305", Action::Answer, "$1,305");
    ConditionalGenerator generator(std::make_shared<ScriptedBackend>(ScriptTable {}), PromptRegistry::builtin());
    auto to_clarify = generator.generation_prompt(clear, Action::Clarify);
    auto to_answer = generator.generation_prompt(clear, Action::Answer);
    EXPECT_NE(to_clarify, to_answer);
    EXPECT_NE(to_clarify.find("What was the revenue in 2018?"), std::string::npos);
}

TEST(RuleClassifier, DocumentedRule)
{
    EXPECT_EQ(classify_by_rule("Which year are you asking about?"), Action::Clarify);
    EXPECT_EQ(classify_by_rule("SELECT count(*) FROM singer"), Action::Answer);
    EXPECT_EQ(classify_by_rule("select name from singer"), Action::Answer);
    EXPECT_EQ(classify_by_rule("Could you name the company"), Action::Clarify);
    EXPECT_EQ(classify_by_rule("$1,305"), Action::Answer);
    EXPECT_EQ(classify_by_rule("Whatever you need: $909."), Action::Answer);
    EXPECT_EQ(kind_of([] { classify_by_rule(""); }), ErrorKind::Precondition);
}

TEST(ClassifierCompletion, FirstPhraseWins)
{
    EXPECT_EQ(parse_classifier_completion("The response is a clarifying question."), Action::Clarify);
    EXPECT_EQ(parse_classifier_completion("Direct answer"), Action::Answer);
    EXPECT_EQ(parse_classifier_completion("a clarifying question, not a direct answer"), Action::Clarify);
    EXPECT_EQ(parse_classifier_completion("a direct answer rather than a clarifying question"), Action::Answer);
    EXPECT_FALSE(parse_classifier_completion("unsure"));
}

// The hand labels are the oracle; the scripted completions stand in for the
// model and include candidates the rule would get wrong.
TEST(PromptedClassifier, AgreesWithHandLabelsOnFixture)
{
    auto cases = json::parse(read_file(fixture_dir() / "classifier" / "cases.json"));
    ASSERT_EQ(cases.size(), 40U);
    auto table = ScriptTable::load(fixture_dir() / "classifier" / "classifier.script.json");
    PromptedClassifier classifier(std::make_shared<ScriptedBackend>(table), PromptRegistry::builtin());
    std::size_t agree = 0;
    for (const auto& c : cases) {
        auto state = c.at("state").get<ConversationTurnState>();
        auto predicted = classifier.classify(state, c.at("candidate").get<std::string>());
        agree += predicted == parse_action(c.at("label").get<std::string>());
    }
    EXPECT_EQ(agree, cases.size());
}

TEST(PromptedClassifier, EmptyCandidateAndUnparseableCompletion)
{
    auto state = single_turn(kFinance, "What was the revenue?", "Which year?", Action::Clarify, "$1,305");
    ScriptTable table;
    table.add_key("classify_action\n" + serialize_state(state) + "\nmaybe", "no idea");
    PromptedClassifier classifier(std::make_shared<ScriptedBackend>(table), PromptRegistry::builtin());
    EXPECT_EQ(kind_of([&] { classifier.classify(state, ""); }), ErrorKind::Precondition);
    EXPECT_EQ(kind_of([&] { classifier.classify(state, "maybe"); }), ErrorKind::ClassifierParse);
    auto prompt = classifier.classification_prompt(state, "maybe");
    EXPECT_NE(prompt.find("maybe"), std::string::npos);
}

TEST(UserSimulator, IntentAndReplyFromScript)
{
    auto state = single_turn(kFinance, "What was the revenue?", "Which year are you asking about?", Action::Clarify, "$1,305");
    state.goal_set = {"$1,305", "$909"};
    const std::string intent = "The user wants to know: 1. the revenue of Northwind in 2018.";
    ScriptTable table;
    table.add_key(intent_key(state), intent);
    table.add_key(simulate_key(state, intent), "2018");
    UserSimulator simulator(std::make_shared<ScriptedBackend>(table), PromptRegistry::builtin(), SimulatorGrounding::Intent);
    auto summary = simulator.summarize_intent(state);
    EXPECT_EQ(summary.rfind("The user wants to know: 1.", 0), 0U);
    EXPECT_EQ(simulator.simulate_user_turn(state, summary, "Which year are you asking about?"), "2018");
    EXPECT_EQ(kind_of([&] { simulator.simulate_user_turn(state, "other intent", "Which year?"); }), ErrorKind::TransientBackend);
}

TEST(UserSimulator, SqlGroundingUsesTargetQuery)
{
    const std::string sql = "SELECT count(*) FROM singer";
    auto state = single_turn("Database: concert_singer", "Tell me about the singers.", "Which information do you want?", Action::Clarify, sql);
    ScriptTable table;
    table.add_key(sql_simulate_key(sql), "How many singers do we have?");
    UserSimulator simulator(std::make_shared<ScriptedBackend>(table), PromptRegistry::builtin(), SimulatorGrounding::TargetSql);
    EXPECT_EQ(simulator.summarize_intent(state), sql);
    EXPECT_EQ(simulator.simulate_user_turn(state, sql, "Which information do you want?"), "How many singers do we have?");
}

TEST(Baselines, StyleCuesAndShotLimits)
{
    auto state = single_turn(kFinance, "What was the revenue?", "Which year are you asking about?", Action::Clarify, "$1,305");
    auto standard = render_baseline_prompt(state, BaselineStyle::Standard, {});
    EXPECT_NE(standard.find("User: What was the revenue?"), std::string::npos);
    EXPECT_NE(render_baseline_prompt(state, BaselineStyle::Cot, {}).find("Let's think step by step."), std::string::npos);
    EXPECT_NE(render_baseline_prompt(state, BaselineStyle::ProactiveMiprompt, {}).find("use appropriate actions to generate the response"),
        std::string::npos);
    std::vector<ConversationTurnState> shots(kMaxBaselineShots + 1, state);
    EXPECT_EQ(kind_of([&] { render_baseline_prompt(state, BaselineStyle::Standard, shots); }), ErrorKind::Precondition);
    EXPECT_EQ(kind_of([] { parse_baseline_style("socratic"); }), ErrorKind::Configuration);
}

TEST(BackendConfig, KindSpecificRequirements)
{
    ModelBackendConfig scripted;
    EXPECT_EQ(kind_of([&] { validate_backend_config(scripted); }), ErrorKind::Configuration);
    ModelBackendConfig remote;
    remote.backend_kind = BackendKind::RemoteApi;
    EXPECT_EQ(kind_of([&] { validate_backend_config(remote); }), ErrorKind::Configuration);
    remote.endpoint = "http://127.0.0.1:9/generate";
    EXPECT_NO_THROW(validate_backend_config(remote));
}

TEST(RemoteBackend, ExtractsTextField)
{
    EXPECT_EQ(RemoteBackend::extract_text(R"({"text": "Which year?"})"), "Which year?");
    EXPECT_EQ(RemoteBackend::extract_text("plain body"), "plain body");
    GenerationRequest request;
    request.prompt = "p";
    request.stop_markers = {"\nUser:"};
    auto body = RemoteBackend::request_body(request);
    EXPECT_EQ(body.at("prompt"), "p");
    EXPECT_EQ(body.at("stop").size(), 1U);
}

// A local server that fails a configurable number of times before answering.
class FlakyServer {
public:
    explicit FlakyServer(int failures)
        : failures_(failures)
    {
        server_.Post("/generate", [this](const httplib::Request& request, httplib::Response& response) {
            ++calls_;
            last_auth_ = request.get_header_value("Authorization");
            if (calls_ <= failures_) {
                response.status = 503;
                response.set_content("busy", "text/plain");
                return;
            }
            auto prompt = json::parse(request.body).at("prompt").get<std::string>();
            response.set_content(json {{"text", "echo:" + prompt}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FlakyServer()
    {
        server_.stop();
        thread_.join();
    }
    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/generate"; }
    int calls() const { return calls_; }
    std::string last_auth() const { return last_auth_; }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    int failures_;
    std::atomic<int> calls_ {0};
    std::string last_auth_;
};

TEST(RemoteBackend, RetriesThenSucceeds)
{
    FlakyServer server(2);
    ::setenv("ACT_TEST_TOKEN", "secret", 1);
    ModelBackendConfig config;
    config.backend_kind = BackendKind::RemoteApi;
    config.endpoint = server.endpoint();
    config.auth_env_var = "ACT_TEST_TOKEN";
    config.retry_limit = 2;
    config.timeout = std::chrono::milliseconds(2000);
    RemoteBackend backend(config);
    GenerationRequest request;
    request.prompt = "hello";
    EXPECT_EQ(backend.complete(request, ""), "echo:hello");
    EXPECT_EQ(server.calls(), 3);
    EXPECT_EQ(server.last_auth(), "Bearer secret");
}

TEST(RemoteBackend, ExhaustedRetriesAreTransient)
{
    FlakyServer server(10);
    ModelBackendConfig config;
    config.backend_kind = BackendKind::RemoteApi;
    config.endpoint = server.endpoint();
    config.retry_limit = 1;
    config.timeout = std::chrono::milliseconds(2000);
    RemoteBackend backend(config);
    GenerationRequest request;
    request.prompt = "hello";
    EXPECT_EQ(kind_of([&] { backend.complete(request, ""); }), ErrorKind::TransientBackend);
    EXPECT_EQ(server.calls(), 2);
}

TEST(Prompts, RegistryFillsAndRejectsMissingVariables)
{
    const auto& registry = PromptRegistry::builtin();
    EXPECT_TRUE(registry.has_template("standard"));
    EXPECT_EQ(fill_placeholders("a {{x}} b", {{"x", "1"}}), "a 1 b");
    EXPECT_EQ(kind_of([&] { registry.fill("standard", {}); }), ErrorKind::Configuration);
    EXPECT_GE(registry.exemplars("perturbation-exemplars").size(), 3 * kPerturbationShotsPerKind);
}

} // namespace
} // namespace act
