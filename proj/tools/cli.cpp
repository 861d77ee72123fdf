#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <variant>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "hvcu/bench_gen.hpp"
#include "hvcu/dataset_io.hpp"
#include "hvcu/errors.hpp"
#include "hvcu/eval.hpp"
#include "hvcu/mcts.hpp"
#include "hvcu/model_client.hpp"
#include "hvcu/parallel.hpp"
#include "hvcu/prompts.hpp"

namespace fs = std::filesystem;

namespace hvcu::cli {

namespace {

constexpr const char* kExitHelp =
    "Exit status:\n"
    "  0  success\n"
    "  1  partial: some items failed, outputs for the rest were written\n"
    "  2  configuration or usage error\n"
    "  3  backend or authentication failure\n"
    "\n"
    "Remote backend: HVCU_API_BASE, HVCU_API_KEY, HVCU_MODEL. --mock <script> replays\n"
    "a JSON array of {\"match\", \"response\"} entries without network access.\n"
    "Config precedence: built-in defaults < --config file < command-line flags.";

class UsageError : public Error {
public:
    using Error::Error;
};

struct CommonOptions {
    std::string config_path;
    std::string mock_path;
    std::string templates_dir;
    int parallel = 4;
    std::uint64_t seed = 0;
};

void add_common(CLI::App& cmd, CommonOptions& o) {
    cmd.add_option("--config", o.config_path, "Layered JSON config ({\"mcts\":{..},\"bench\":{..}})")
        ->check(CLI::ExistingFile);
    cmd.add_option("--mock", o.mock_path, "Replay a mock script instead of calling a model")
        ->check(CLI::ExistingFile);
    cmd.add_option("--templates", o.templates_dir, "Directory of <template_key>.txt overrides")
        ->check(CLI::ExistingDirectory);
    cmd.add_option("--parallel", o.parallel, "Worker pool size")
        ->default_val(4)
        ->check(CLI::PositiveNumber);
    cmd.add_option("--seed", o.seed, "Seed forwarded to the model and recorded in outputs")
        ->default_val(0);
}

GenerationConfig load_config(const CommonOptions& o) {
    GenerationConfig config;
    if (!o.config_path.empty()) {
        Json doc;
        try {
            doc = Json::parse(read_file(o.config_path));
        } catch (const Json::parse_error& e) {
            throw UsageError("config " + o.config_path + ": " + e.what());
        }
        config = config_from_json(doc, config);
    }
    return config;
}

void check_config(const GenerationConfig& config) {
    if (auto v = validate_config(config); !v.empty()) {
        std::string joined;
        for (const auto& s : v) joined += (joined.empty() ? "" : "; ") + s;
        throw UsageError("invalid config: " + joined);
    }
}

std::unique_ptr<ChatBackend> make_backend(const CommonOptions& o) {
    if (!o.mock_path.empty()) {
        auto mock = std::make_unique<MockBackend>();
        mock->enqueue(load_mock_script(o.mock_path));
        return mock;
    }
    RemoteConfig rc = RemoteConfig::from_env();
    if (rc.api_base.empty() || rc.model.empty()) {
        throw UsageError("no backend: set HVCU_API_BASE and HVCU_MODEL, or pass --mock");
    }
    rc.seed = o.seed;
    rc.max_in_flight = o.parallel;
    auto transport = make_http_transport(rc.api_base, rc.timeout);
    return std::make_unique<RemoteBackend>(rc, std::move(transport));
}

TemplateSet load_templates(const CommonOptions& o) {
    return o.templates_dir.empty() ? TemplateSet() : TemplateSet::with_overrides(o.templates_dir);
}

int workers_for(const ChatBackend& backend, int parallel) {
    return backend.requires_ordered_calls() ? 1 : parallel;
}

// ---------------------------------------------------------------------------
// gen-bench

struct BenchOptions {
    CommonOptions common;
    std::string sources;
    std::string out;
    std::string task;
    std::string aspect;
};

struct StageTally {
    std::map<std::size_t, std::size_t> attempts_used;
    std::size_t entered = 0;
    std::size_t passed = 0;
};

void tally_provenance(const Json& provenance, std::map<int, StageTally>& stages) {
    if (!provenance.contains("stages")) return;
    for (const auto& stage : provenance["stages"]) {
        auto& t = stages[stage["stage"].get<int>()];
        const auto& attempts = stage["attempts"];
        ++t.entered;
        ++t.attempts_used[attempts.size()];
        if (!attempts.empty() && attempts.back().value("outcome", "") == "accepted") ++t.passed;
    }
}

int cmd_gen_bench(const BenchOptions& o, std::ostream& out) {
    const GenerationConfig config = load_config(o.common);
    check_config(config);
    const auto sources = load_raw_sources(o.sources);

    std::optional<Task> default_task;
    if (!o.task.empty()) {
        default_task = task_from_name(o.task);
        if (!default_task) throw UsageError("unknown --task '" + o.task + "'");
    }
    std::vector<ItemLabels> labels;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < sources.size(); ++i) {
        const auto& raw = sources[i];
        ItemLabels l;
        l.id = raw.id.value_or(derive_item_id(raw.image, static_cast<int>(i + 1)));
        if (raw.task) {
            l.task = *raw.task;
        } else if (default_task) {
            l.task = *default_task;
        } else {
            throw UsageError("source " + std::to_string(i + 1) + " has no task; pass --task");
        }
        l.aspect = raw.aspect.value_or(o.aspect.empty() ? std::string(kUnspecifiedAspect) : o.aspect);
        if (l.aspect != kUnspecifiedAspect && task_of_aspect(l.aspect) != l.task) {
            throw UsageError("source " + std::to_string(i + 1) + ": aspect '" + l.aspect +
                             "' does not belong to task " + std::string(task_name(l.task)));
        }
        if (!seen.insert(l.id).second) throw UsageError("duplicate item id '" + l.id + "'");
        labels.push_back(std::move(l));
    }

    auto backend = make_backend(o.common);
    const TemplateSet templates = load_templates(o.common);
    const ChainBuilder builder(*backend, config.bench, templates);

    using Outcome = std::variant<BenchmarkItem, ChainFailure, std::string>;
    const auto results =
        indexed_map(sources.size(), workers_for(*backend, o.common.parallel), [&](std::size_t i) {
            spdlog::info("chain {} ({}/{})", labels[i].id, i + 1, sources.size());
            try {
                return std::visit([](auto&& r) { return Outcome(std::move(r)); },
                                  builder.build_chain(sources[i], labels[i]));
            } catch (const AuthError&) {
                throw;
            } catch (const BackendError& e) {
                spdlog::error("chain {}: {}", labels[i].id, e.what());
                return Outcome(std::string(e.what()));
            }
        });

    std::vector<BenchmarkItem> items;
    std::vector<Json> failures;
    std::map<int, StageTally> stages;
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (auto* item = std::get_if<BenchmarkItem>(&results[i])) {
            tally_provenance(item->provenance.value_or(Json::object()), stages);
            items.push_back(*item);
        } else if (auto* f = std::get_if<ChainFailure>(&results[i])) {
            tally_provenance(f->provenance, stages);
            failures.push_back(chain_failure_to_json(labels[i].id, *f));
        } else {
            Json j;
            j["schema_version"] = kSchemaVersion;
            j["id"] = labels[i].id;
            j["stage"] = 0;
            j["backend_error"] = std::get<std::string>(results[i]);
            failures.push_back(std::move(j));
        }
    }
    save_benchmark(o.out, items);
    write_file_atomic(o.out + ".failures.jsonl", serialize_jsonl(failures));

    const double rate =
        sources.empty() ? 0.0 : 100.0 * static_cast<double>(items.size()) / sources.size();
    out << fmt::format("chains: {} total, {} built, {} failed, pass rate {:.2f}%\n",
                       sources.size(), items.size(), failures.size(), round_half_up(rate));
    for (const auto& [stage, t] : stages) {
        std::string hist;
        for (const auto& [n, count] : t.attempts_used) hist += fmt::format(" {}:{}", n, count);
        out << fmt::format("stage {} (level {}): {} entered, {} passed; attempts used{}\n", stage,
                           4 - stage, t.entered, t.passed, hist);
    }
    return failures.empty() ? kExitOk : kExitPartial;
}

// ---------------------------------------------------------------------------
// gen-sft

struct SftOptions {
    CommonOptions common;
    std::vector<std::string> images;
    std::string out_dir;
    bool flat = false;
    std::optional<int> budget;
    std::optional<int> top_k;
};

std::vector<std::string> expand_image_list(const std::vector<std::string>& args) {
    std::vector<std::string> out;
    for (const auto& a : args) {
        const auto ext = fs::path(a).extension().string();
        if (ext == ".txt" || ext == ".list") {
            std::istringstream in(read_file(a));
            for (std::string line; std::getline(in, line);) {
                line = trim(line);
                if (!line.empty() && line.front() != '#') out.push_back(line);
            }
        } else {
            out.push_back(a);
        }
    }
    return out;
}

int cmd_gen_sft(const SftOptions& o, std::ostream& out) {
    GenerationConfig config = load_config(o.common);
    if (o.budget) config.mcts.iteration_budget = *o.budget;
    if (o.top_k) config.mcts.top_k = *o.top_k;
    check_config(config);

    std::vector<ImageRef> images;
    std::set<std::string> stems;
    for (const auto& path : expand_image_list(o.images)) {
        images.push_back(ImageRef::from_path(path));
        if (!stems.insert(images.back().stem()).second) {
            throw UsageError("two images share the file stem '" + images.back().stem() + "'");
        }
    }
    if (images.empty()) throw UsageError("no images given");
    if (config.mcts.iteration_budget == 0) {
        spdlog::warn("iteration budget is 0: trees stay empty and the export will be empty");
    }

    auto backend = make_backend(o.common);
    const TemplateSet templates = load_templates(o.common);
    const int workers = workers_for(*backend, o.common.parallel);
    // Inner batches run sequentially when images already run in parallel.
    const TreeSearch search(*backend, config.mcts, templates, images.size() > 1 ? 1 : workers);

    struct ImageResult {
        std::optional<MctsTree> tree;
        std::string error;
    };
    const auto results = indexed_map(images.size(), workers, [&](std::size_t i) {
        spdlog::info("search {} ({}/{})", images[i].path_or_uri, i + 1, images.size());
        try {
            return ImageResult{search.run_search(images[i]), {}};
        } catch (const AuthError&) {
            throw;
        } catch (const BackendError& e) {
            spdlog::error("{}: {}", images[i].path_or_uri, e.what());
            return ImageResult{std::nullopt, e.what()};
        }
    });

    const fs::path dir(o.out_dir);
    std::vector<SftConversation> conversations;
    Json manifest_images = Json::array();
    bool any_failed = false;
    for (std::size_t i = 0; i < images.size(); ++i) {
        Json entry;
        entry["image"] = images[i].path_or_uri;
        entry["stem"] = images[i].stem();
        if (!results[i].tree) {
            any_failed = true;
            entry["status"] = "failed";
            entry["error"] = results[i].error;
            manifest_images.push_back(std::move(entry));
            continue;
        }
        const MctsTree& tree = *results[i].tree;
        const std::string checkpoint = "trees/" + images[i].stem() + ".tree.json";
        checkpoint_tree(tree, dir / checkpoint);
        const auto paths = extract_top_k(tree, static_cast<std::size_t>(config.mcts.top_k));
        auto convs = export_sft(paths, tree, images[i]);
        entry["status"] = "ok";
        entry["checkpoint"] = checkpoint;
        entry["nodes"] = tree.size();
        entry["per_level_counts"] = tree.per_level_counts();
        entry["paths_exported"] = convs.size();
        manifest_images.push_back(std::move(entry));
        conversations.insert(conversations.end(), convs.begin(), convs.end());
    }

    const auto records = sft_records(conversations, o.flat);
    write_file_atomic(dir / "conversations.jsonl", serialize_jsonl(records));

    Json manifest;
    manifest["schema_version"] = kSchemaVersion;
    manifest["command"] = "gen-sft";
    manifest["backend"] = o.common.mock_path.empty() ? "remote" : "mock";
    manifest["model"] = backend->model_id();
    manifest["seed"] = o.common.seed;
    manifest["flat"] = o.flat;
    manifest["config"] = to_json(config);
    manifest["images"] = std::move(manifest_images);
    manifest["conversations"] = Json{{"file", "conversations.jsonl"},
                                     {"conversations", conversations.size()},
                                     {"records", records.size()}};
    write_json_file(dir / "manifest.json", manifest);

    out << fmt::format("images: {}, conversations: {}, records: {}\n", images.size(),
                       conversations.size(), records.size());
    return any_failed ? kExitPartial : kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvalOptions {
    CommonOptions common;
    std::string bench;
    std::string setting;
    std::string out_dir;
};

int cmd_evaluate(const EvalOptions& o, std::ostream& out) {
    const auto setting = setting_from_name(o.setting);
    if (!setting) throw UsageError("--setting must be base or context");
    auto items = load_benchmark(o.bench);
    std::sort(items.begin(), items.end(),
              [](const BenchmarkItem& a, const BenchmarkItem& b) { return a.id < b.id; });
    if (items.empty()) throw UsageError("benchmark " + o.bench + " has no items");

    const fs::path dir(o.out_dir);
    fs::create_directories(dir);
    const fs::path outcomes_path = dir / "outcomes.jsonl";

    std::map<std::string, ChainOutcome> done;
    for (auto& prior : load_outcomes(outcomes_path, true)) {
        if (prior.setting != *setting) {
            throw UsageError(outcomes_path.string() + " holds " +
                             std::string(setting_name(prior.setting)) + " outcomes");
        }
        done.emplace(prior.item_id, std::move(prior));
    }
    std::vector<const BenchmarkItem*> pending;
    std::set<std::string> ids;
    for (const auto& item : items) {
        ids.insert(item.id);
        if (!done.count(item.id)) pending.push_back(&item);
    }
    for (auto it = done.begin(); it != done.end();) {
        it = ids.count(it->first) ? std::next(it) : done.erase(it);
    }
    {
        std::vector<ChainOutcome> kept;
        for (const auto& [id, oc] : done) kept.push_back(oc);
        save_outcomes(outcomes_path, kept);
    }
    if (!done.empty()) spdlog::info("resuming: {} chains already evaluated", done.size());

    auto backend = make_backend(o.common);
    const TemplateSet templates = load_templates(o.common);
    const Evaluator evaluator(*backend, templates);
    std::mutex append_mutex;
    const auto results = indexed_map(
        pending.size(), workers_for(*backend, o.common.parallel),
        [&](std::size_t i) -> std::optional<ChainOutcome> {
            try {
                auto oc = evaluator.evaluate_chain(*pending[i], *setting);
                std::lock_guard lock(append_mutex);
                append_outcome(outcomes_path, oc);
                return oc;
            } catch (const AuthError&) {
                throw;
            } catch (const BackendError& e) {
                spdlog::error("chain {}: {}", pending[i]->id, e.what());
                return std::nullopt;
            }
        });

    std::size_t failed = 0;
    for (const auto& r : results) {
        if (r) {
            done.emplace(r->item_id, *r);
        } else {
            ++failed;
        }
    }
    std::vector<ChainOutcome> all;
    for (const auto& [id, oc] : done) all.push_back(oc);
    save_outcomes(outcomes_path, all);
    if (all.empty()) {
        spdlog::error("no chain could be evaluated");
        return kExitPartial;
    }

    const Report report = build_report(all);
    write_json_file(dir / "report.json", report_to_json(report));
    const std::string table = render_table(report);
    write_file_atomic(dir / "report.txt", table);
    out << table;
    return failed ? kExitPartial : kExitOk;
}

// ---------------------------------------------------------------------------
// report

struct ReportOptions {
    std::vector<std::string> outcomes;
    std::string out;
};

int cmd_report(const ReportOptions& o, std::ostream& out) {
    std::map<EvalSetting, std::vector<ChainOutcome>> by_setting;
    std::set<std::pair<EvalSetting, std::string>> seen;
    for (const auto& path : o.outcomes) {
        if (!fs::exists(path)) throw UsageError("outcome file " + path + " does not exist");
        for (auto& oc : load_outcomes(path)) {
            if (!seen.emplace(oc.setting, oc.item_id).second) {
                throw UsageError("item '" + oc.item_id + "' appears twice for setting " +
                                 std::string(setting_name(oc.setting)));
            }
            by_setting[oc.setting].push_back(std::move(oc));
        }
    }
    if (by_setting.empty()) throw UsageError("no outcomes to report");

    Json doc;
    doc["schema_version"] = kSchemaVersion;
    doc["reports"] = Json::array();
    std::map<EvalSetting, std::optional<double>> overall;
    bool first = true;
    for (const auto& [setting, outcomes] : by_setting) {
        const Report report = build_report(outcomes);
        overall[setting] = report.overall;
        doc["reports"].push_back(report_to_json(report));
        if (!first) out << "\n";
        first = false;
        out << render_table(report);
    }
    std::optional<double> delta;
    if (overall.count(EvalSetting::Base) && overall.count(EvalSetting::Context) &&
        overall[EvalSetting::Base] && overall[EvalSetting::Context]) {
        // Difference of the reported (rounded) scores.
        delta = round_half_up(*overall[EvalSetting::Context]) -
                round_half_up(*overall[EvalSetting::Base]);
        out << fmt::format("\nDelta (context - base): {:+.2f}\n", round_half_up(*delta));
    }
    doc["delta_context_minus_base"] = delta ? Json(round_half_up(*delta)) : Json(nullptr);
    if (!o.out.empty()) write_json_file(o.out, doc);
    return kExitOk;
}

void configure_logging(const std::string& level) {
    static std::once_flag once;
    std::call_once(once, [] {
        auto logger = spdlog::stderr_color_mt("hvcu");
        logger->set_pattern("[%l] %v");
        spdlog::set_default_logger(logger);
    });
    spdlog::set_level(spdlog::level::from_str(level));
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Hierarchical visual-understanding data generation and evaluation", "hvcu"};
    app.footer(kExitHelp);
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));

    BenchOptions bench;
    auto* gen_bench = app.add_subcommand("gen-bench", "Build three-level benchmark chains");
    gen_bench->add_option("--sources", bench.sources, "Raw-source JSONL")
        ->required()
        ->check(CLI::ExistingFile);
    gen_bench->add_option("--out", bench.out, "Benchmark JSONL to write")->required();
    gen_bench->add_option("--task", bench.task, "Task for sources that carry none");
    gen_bench->add_option("--aspect", bench.aspect, "Aspect for sources that carry none");
    add_common(*gen_bench, bench.common);

    SftOptions sft;
    auto* gen_sft = app.add_subcommand("gen-sft", "Grow QA trees and export instruction data");
    gen_sft->add_option("--images", sft.images, "Image paths, or .txt/.list files of paths")
        ->required();
    gen_sft->add_option("--out-dir", sft.out_dir, "Output directory")->required();
    gen_sft->add_flag("--flat", sft.flat, "One record per QA pair instead of per chain");
    gen_sft->add_option("--budget", sft.budget, "Iterations per image");
    gen_sft->add_option("--top-k", sft.top_k, "Paths exported per image");
    add_common(*gen_sft, sft.common);

    EvalOptions eval;
    auto* evaluate = app.add_subcommand("evaluate", "Answer benchmark chains and score them");
    evaluate->add_option("--bench", eval.bench, "Benchmark JSONL")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--setting", eval.setting, "base or context")
        ->required()
        ->check(CLI::IsMember({"base", "context"}));
    evaluate->add_option("--out", eval.out_dir, "Output directory (resumable)")->required();
    add_common(*evaluate, eval.common);

    ReportOptions rep;
    auto* report = app.add_subcommand("report", "Merge outcome files into an aggregate report");
    report->add_option("--outcomes", rep.outcomes, "Outcome JSONL files")->required();
    report->add_option("--out", rep.out, "Also write the report as JSON");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }
    configure_logging(log_level);

    try {
        if (*gen_bench) return cmd_gen_bench(bench, out);
        if (*gen_sft) return cmd_gen_sft(sft, out);
        if (*evaluate) return cmd_evaluate(eval, out);
        return cmd_report(rep, out);
    } catch (const AuthError& e) {
        err << "authentication failed: " << e.what() << "\n";
        return kExitBackend;
    } catch (const BackendError& e) {
        err << "backend failure: " << e.what() << "\n";
        return kExitBackend;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}

}  // namespace hvcu::cli
