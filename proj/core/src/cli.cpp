// SPDX-License-Identifier: Apache-2.0
#include "act/cli.hpp"

#include "act/config.hpp"
#include "act/prefs.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cstdio>

namespace act {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::shared_ptr<const PromptRegistry> builtin_registry()
{
    return {&PromptRegistry::builtin(), [](const PromptRegistry*) {}};
}

GenerationRequest role_defaults(const BackendRole& role)
{
    GenerationRequest request;
    request.temperature = role.backend.temperature;
    request.max_new_units = role.backend.max_new_units;
    return request;
}

void require_role(const BackendRole& role, const std::string& name, const RunConfig& config)
{
    if (!role.configured) {
        throw ConfigError({"backends." + name + ": required by this command"});
    }
    if (role.backend.backend_kind == BackendKind::Scripted && role.classifier != ClassifierKind::Rule) {
        require_fields(config, {"backends." + name + ".script"});
    }
}

std::shared_ptr<TextBackend> role_backend(const BackendRole& role)
{
    ModelBackendConfig backend = role.backend;
    if (backend.backend_kind == BackendKind::Scripted) {
        backend.script_table = ScriptTable::load(*role.script_path);
    }
    return make_backend(backend);
}

std::string role_digest(const BackendRole& role)
{
    if (role.backend.backend_kind == BackendKind::Scripted && role.script_path) {
        return content_digest(*role.script_path);
    }
    return sha256_hex(role.backend.endpoint.value_or(""));
}

std::shared_ptr<const ActionClassifier> make_classifier(const RunConfig& config)
{
    if (config.classifier.classifier == ClassifierKind::Rule) {
        return std::make_shared<RuleClassifier>();
    }
    require_role(config.classifier, "classifier", config);
    return std::make_shared<PromptedClassifier>(role_backend(config.classifier), PromptRegistry::builtin(), role_defaults(config.classifier));
}

std::shared_ptr<const UserSimulator> make_simulator(const RunConfig& config)
{
    require_role(config.simulator, "simulator", config);
    return std::make_shared<UserSimulator>(
        role_backend(config.simulator), PromptRegistry::builtin(), config.simulator.grounding, role_defaults(config.simulator));
}

std::shared_ptr<const HeuristicRegistry> make_heuristics(const RunConfig& config)
{
    std::shared_ptr<const SqlEnvironmentSet> databases;
    if (config.paths.databases) {
        require_fields(config, {"paths.databases"});
        databases = std::make_shared<SqlEnvironmentSet>(*config.paths.databases);
    }
    std::shared_ptr<const SimilarityBackend> similarity;
    if (config.embedding) {
        similarity = std::make_shared<EmbeddingSimilarity>(*config.embedding);
    }
    auto registry = HeuristicRegistry::with_defaults(databases, similarity);
    for (const auto& id : {config.act.heuristic_id, config.eval.content_metric}) {
        if (!registry.has(id)) {
            throw ConfigError({"heuristic '" + id + "' needs paths.databases"});
        }
    }
    return std::make_shared<HeuristicRegistry>(std::move(registry));
}

void prepare_run_dir(const fs::path& run_dir, const RunConfig& config, const std::string& command)
{
    fs::create_directories(run_dir);
    write_file(run_dir / "config.snapshot.json", config_snapshot(config, command).dump(2) + "\n");
}

// ---- Subcommands ------------------------------------------------------------

int cmd_make_synthetic(const RunConfig& config, const fs::path& run_dir)
{
    prepare_run_dir(run_dir, config, "make-synthetic");
    auto suite = make_synthetic_suite(config.synthetic);
    write_synthetic_suite(run_dir, suite);
    fmt::print("synthetic suite: {} train, {} dev, {} test states in {}\n", suite.train.size(), suite.dev.size(), suite.test.size(),
        run_dir.string());
    return kExitOk;
}

int cmd_synth_ambigsql(const RunConfig& config, const fs::path& run_dir)
{
    require_fields(config, {"paths.spider", "paths.databases"});
    require_role(config.generator, "generator", config);
    prepare_run_dir(run_dir, config, "synth-ambigsql");
    SqlEnvironmentSet databases(*config.paths.databases);
    auto examples = load_spider_examples(*config.paths.spider, databases);
    ConditionalGenerator generator(role_backend(config.generator), PromptRegistry::builtin(), role_defaults(config.generator));
    auto result = synthesize_ambigsql(examples, generator, PromptRegistry::builtin(), config.synthesis);
    write_synthesis(run_dir, result, databases);
    fmt::print("synthesized {} examples ({} skipped): {} train, {} dev, {} test states in {}\n", result.examples.size(), result.skipped,
        result.split_states("train").size(), result.split_states("dev").size(), result.split_states("test").size(), run_dir.string());
    return kExitOk;
}

int cmd_build_prefs(const RunConfig& config, const fs::path& run_dir)
{
    require_fields(config, {"paths.train"});
    require_role(config.generator, "generator", config);
    prepare_run_dir(run_dir, config, "build-prefs");
    ConditionalGenerator generator(role_backend(config.generator), PromptRegistry::builtin(), role_defaults(config.generator));
    PrefBuildConfig build;
    build.generator_backend = std::string(to_string(config.generator.backend.backend_kind));
    build.generator_digest = role_digest(config.generator);
    build.temperature = config.generator.backend.temperature;
    build.max_new_units = config.generator.backend.max_new_units;

    int status = kExitOk;
    auto build_split = [&](const fs::path& source, const std::string& name) {
        auto dataset = build_preference_dataset(read_dataset(source), generator, build);
        write_preference_dataset(run_dir / (name + ".jsonl"), dataset);
        fmt::print("{}: {} pairs from {} turns ({} dropped, {} resampled)\n", name, dataset.pairs.size(), dataset.input_turns,
            dataset.dropped_turns, dataset.resampled_turns);
        if (!dataset.complete()) {
            spdlog::error("{} build aborted: {}", name, *dataset.abort_reason);
            status = kExitRuntime;
        }
    };
    build_split(*config.paths.train, "preferences");
    if (config.paths.dev && status == kExitOk) {
        require_fields(config, {"paths.dev"});
        build_split(*config.paths.dev, "dev_preferences");
    }
    return status;
}

CandidateCatalog training_catalog(const RunConfig& config, const std::vector<PreferencePair>& pairs, const std::vector<PreferencePair>& dev_pairs)
{
    CandidateCatalog catalog;
    if (config.paths.catalog) {
        require_fields(config, {"paths.catalog"});
        catalog = CandidateCatalog::from_json(json::parse(read_file(*config.paths.catalog)));
    }
    catalog.add_pairs(pairs);
    catalog.add_pairs(dev_pairs);
    for (const auto& path : {config.paths.train, config.paths.dev, config.paths.test}) {
        if (path && fs::exists(*path)) {
            catalog.add_states(read_dataset(*path));
        }
    }
    return catalog;
}

int cmd_train(const RunConfig& config, const fs::path& run_dir)
{
    require_fields(config, {"paths.preferences"});
    if (config.paths.dev_preferences) {
        require_fields(config, {"paths.dev_preferences"});
    }
    auto pairs = read_preference_pairs(*config.paths.preferences);
    std::vector<PreferencePair> dev_pairs;
    if (config.paths.dev_preferences) {
        dev_pairs = read_preference_pairs(*config.paths.dev_preferences);
    }

    TrainingContext context;
    if (config.act.mode != TrainingMode::NoSampling) {
        context.classifier = make_classifier(config);
    }
    if (config.act.mode == TrainingMode::FullAct || config.act.mode == TrainingMode::RandomActions) {
        context.simulator = make_simulator(config);
        context.heuristics = make_heuristics(config);
    }
    prepare_run_dir(run_dir, config, "train");

    auto catalog = std::make_shared<const CandidateCatalog>(training_catalog(config, pairs, dev_pairs));
    write_file(run_dir / "catalog.json", catalog->to_json().dump() + "\n");
    write_file(run_dir / "policy.json", to_json(config.policy).dump(2) + "\n");
    ToyPolicy initial(config.policy, catalog, builtin_registry());

    TrainOptions options;
    options.run_dir = run_dir;
    options.validation = std::move(dev_pairs);
    auto result = act_train(initial, pairs, context, config.act, config.dpo, options);
    fmt::print("trained {} steps over {} epochs in mode {}; selected step {}; {} replacement events\n", result.steps, result.epochs,
        to_string(config.act.mode), result.selected_step, result.events.size());
    if (!result.history.empty()) {
        fmt::print("final batch loss {:.6f}, margin {:.6f}\n", result.history.back().loss, result.history.back().margin);
    }
    return kExitOk;
}

std::unique_ptr<ToyPolicy> load_trained_policy(const fs::path& run_dir, const std::string& checkpoint_name)
{
    std::vector<std::string> problems;
    for (const auto& name : {std::string("policy.json"), std::string("catalog.json"), "checkpoints/" + checkpoint_name + ".json"}) {
        if (!fs::exists(run_dir / name)) {
            problems.push_back("run_dir: missing " + name + " in " + run_dir.string());
        }
    }
    if (!problems.empty()) {
        throw ConfigError(std::move(problems));
    }
    auto config = toy_config_from_json(json::parse(read_file(run_dir / "policy.json")));
    auto catalog = std::make_shared<const CandidateCatalog>(CandidateCatalog::from_json(json::parse(read_file(run_dir / "catalog.json"))));
    auto policy = std::make_unique<ToyPolicy>(config, catalog, builtin_registry());
    auto checkpoint = load_checkpoint(run_dir / "checkpoints" / (checkpoint_name + ".json"), policy->config_digest());
    policy->set_parameters(std::move(checkpoint.parameters));
    return policy;
}

int cmd_evaluate(const RunConfig& config, const fs::path& run_dir, const std::string& checkpoint_name)
{
    require_fields(config, {"paths.test"});
    auto policy = load_trained_policy(run_dir, checkpoint_name);
    policy->mutable_config().decoding.temperature = config.eval_temperature;
    auto classifier = make_classifier(config);
    auto simulator = make_simulator(config);
    auto heuristics = make_heuristics(config);
    const auto eval_dir = run_dir / "eval";
    prepare_run_dir(eval_dir, config, "evaluate");

    json metadata {
        {"config_digest", config_digest(config)},
        {"checkpoint", checkpoint_name},
        {"policy_config_digest", policy->config_digest()},
    };
    auto report = evaluate(*policy, read_dataset(*config.paths.test), *classifier, *simulator, *heuristics, config.eval, metadata);
    write_file(eval_dir / "report.json", to_json(report).dump(2) + "\n");
    write_file(eval_dir / "report.digest", report_digest(report) + "\n");
    std::string rows;
    for (const auto& row : report.rows) {
        rows += to_json(row).dump() + "\n";
    }
    write_file(eval_dir / "rows.jsonl", rows);
    auto table = render_report_table(report);
    write_file(eval_dir / "report.txt", table);
    fmt::print("{}", table);
    if (!report.valid) {
        spdlog::error("evaluation excluded {} of {} examples; run marked invalid", report.n_excluded, report.n_examples);
        return kExitRuntime;
    }
    return kExitOk;
}

int cmd_gap_analysis(const RunConfig& config, const fs::path& run_dir)
{
    require_fields(config, {"paths.test", "paths.databases"});
    require_role(config.answerer, "answerer", config);
    prepare_run_dir(run_dir, config, "gap-analysis");
    SqlEnvironmentSet databases(*config.paths.databases);
    BackendSqlAnswerer answerer(role_backend(config.answerer), PromptRegistry::builtin(), role_defaults(config.answerer));
    auto report = gap_analysis(answerer, read_dataset(*config.paths.test), databases);
    json document = to_json(report);
    document["config_digest"] = config_digest(config);
    write_file(run_dir / "gap.json", document.dump(2) + "\n");
    fmt::print("execution match without clarification {:.4f}, with clarification {:.4f}, gap {:+.4f} over {} conversations\n",
        report.no_clarify_match, report.with_clarify_match, report.with_clarify_match - report.no_clarify_match, report.support);
    return kExitOk;
}

fs::path locate_report(const fs::path& input)
{
    for (const auto& candidate : {input, input / "report.json", input / "eval" / "report.json"}) {
        if (fs::is_regular_file(candidate)) {
            return candidate;
        }
    }
    throw ConfigError({"report: no report.json at " + input.string()});
}

int cmd_report(const std::vector<std::string>& inputs, std::vector<std::string> names, const fs::path& run_dir)
{
    if (!names.empty() && names.size() != inputs.size()) {
        throw ConfigError({"--name: give one name per report"});
    }
    std::vector<EvalReport> reports;
    std::vector<fs::path> located;
    for (const auto& input : inputs) {
        located.push_back(locate_report(input));
    }
    for (const auto& path : located) {
        reports.push_back(report_from_json(json::parse(read_file(path))));
    }
    auto table = compare_runs(reports, names);
    fs::create_directories(run_dir);
    json sources = json::array();
    for (const auto& path : located) {
        sources.push_back({{"path", path.string()}, {"sha256", content_digest(path)}});
    }
    write_file(run_dir / "config.snapshot.json", json {{"command", "report"}, {"inputs", sources}, {"names", table.run_names}}.dump(2) + "\n");
    write_file(run_dir / "comparison.json", to_json(table).dump(2) + "\n");
    auto text = render_comparison(table);
    write_file(run_dir / "comparison.txt", text);
    fmt::print("{}", text);
    return kExitOk;
}

void print_error(const Error& e)
{
    if (const auto* config_error = dynamic_cast<const ConfigError*>(&e)) {
        std::fprintf(stderr, "error [configuration]:\n");
        for (const auto& problem : config_error->problems()) {
            std::fprintf(stderr, "  %s\n", problem.c_str());
        }
        return;
    }
    std::fprintf(stderr, "error [%s]: %s\n", std::string(to_string(e.kind())).c_str(), e.what());
}

} // namespace

int run_cli(const std::vector<std::string>& args)
{
    CLI::App app {"Action-based contrastive self-training pipeline", "act"};
    app.require_subcommand(1);
    std::string log_level = "warn";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

    std::string config_path;
    std::string run_dir;
    std::string mode;
    std::string checkpoint = "selected";
    std::vector<std::string> report_inputs;
    std::vector<std::string> report_names;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "run configuration (JSON)")->required();
        sub->add_option("--run-dir", run_dir, "directory receiving every output of this run")->required();
    };
    auto* make_synthetic = app.add_subcommand("make-synthetic", "write the synthetic clarification task and its scripts");
    add_common(make_synthetic);
    auto* synth = app.add_subcommand("synth-ambigsql", "synthesize ambiguous text-to-SQL conversations");
    add_common(synth);
    auto* build = app.add_subcommand("build-prefs", "build action-contrastive preference pairs");
    add_common(build);
    auto* train = app.add_subcommand("train", "run contrastive self-training or an ablation");
    add_common(train);
    train->add_option("--mode", mode, "full-act, no-sampling, sampling-no-simulation or random-actions");
    auto* eval = app.add_subcommand("evaluate", "evaluate a trained run on the test split");
    eval->add_option("--config", config_path, "run configuration (JSON)")->required();
    eval->add_option("--run-dir", run_dir, "training run directory; outputs go to <run-dir>/eval")->required();
    eval->add_option("--checkpoint", checkpoint, "selected or final")->capture_default_str()->check(CLI::IsMember({"selected", "final"}));
    auto* gap = app.add_subcommand("gap-analysis", "execution match with and without clarification turns");
    add_common(gap);
    auto* report = app.add_subcommand("report", "compare evaluation reports side by side");
    report->add_option("reports", report_inputs, "report.json files or run directories")->required();
    report->add_option("--name", report_names, "display name per report");
    report->add_option("--run-dir", run_dir, "directory receiving the comparison")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        spdlog::set_level(spdlog::level::from_str(log_level));
        if (report->parsed()) {
            return cmd_report(report_inputs, report_names, run_dir);
        }
        auto load_config = [&]() {
            auto config = load_run_config(config_path);
            if (train->parsed() && !mode.empty()) {
                // Re-parse so the override is validated and lands in the snapshot.
                auto document = json::parse(read_file(config_path));
                document["act"]["mode"] = mode;
                config = parse_run_config(document, fs::absolute(config_path).parent_path());
            }
            return config;
        };
        const auto config = load_config();
        const fs::path dir(run_dir);
        if (make_synthetic->parsed()) {
            return cmd_make_synthetic(config, dir);
        }
        if (synth->parsed()) {
            return cmd_synth_ambigsql(config, dir);
        }
        if (build->parsed()) {
            return cmd_build_prefs(config, dir);
        }
        if (train->parsed()) {
            return cmd_train(config, dir);
        }
        if (eval->parsed()) {
            return cmd_evaluate(config, dir, checkpoint);
        }
        if (gap->parsed()) {
            return cmd_gap_analysis(config, dir);
        }
    } catch (const Error& e) {
        print_error(e);
        return e.kind() == ErrorKind::Configuration ? kExitConfig : kExitRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error [internal]: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitRuntime;
}

} // namespace act
