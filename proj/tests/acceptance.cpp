// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "cli.hpp"
#include "hvcu/bench_gen.hpp"
#include "hvcu/dataset_io.hpp"
#include "hvcu/errors.hpp"
#include "hvcu/eval.hpp"
#include "hvcu/mcts.hpp"
#include "support.hpp"

using namespace hvcu;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool ok = true;
    std::string detail;

    void require(bool cond, const std::string& what) {
        if (!cond && ok) {
            ok = false;
            detail = what;
        }
    }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Verdict score_arithmetic() {
    Verdict v;
    const auto t0 = Clock::now();
    auto metrics = [](double a, double b, double c) {
        std::vector<TaskMetrics> m(3);
        m[0].task = Task::Implication;
        m[0].acc_full = a;
        m[1].task = Task::Aesthetic;
        m[1].acc_full = b;
        m[2].task = Task::Affective;
        m[2].acc_full = c;
        return m;
    };
    const double base = overall_score(metrics(53.25, 53.14, 50.33));
    const double ctx = overall_score(metrics(65.00, 72.86, 66.67));
    v.require(std::fabs(base - 52.24) <= 0.005, "base score " + std::to_string(base));
    v.require(round_half_up(ctx) == 68.18, "context score " + std::to_string(ctx));
    const double delta = round_half_up(round_half_up(ctx) - round_half_up(base));
    v.require(delta == 15.94, "delta " + std::to_string(delta));
    v.require(seconds_since(t0) < 1.0, "runtime over 1 s");
    if (v.ok) v.detail = "52.24 / 68.18 / delta +15.94";
    return v;
}

Verdict ucb_oracle() {
    Verdict v;
    const auto t0 = Clock::now();
    std::mt19937 rng(2024);
    std::uniform_real_distribution<double> mean(0.0, 1.0);
    std::uniform_int_distribution<std::uint64_t> visits(1, 1000);
    std::uniform_int_distribution<std::size_t> slot(0, 3);
    for (int i = 0; i < 200; ++i) {
        const double m = mean(rng);
        const auto n = visits(rng);
        const auto parent = n + visits(rng) - 1;
        const long double c = i % 3;
        const long double expect =
            m + c * std::sqrt(std::log(static_cast<long double>(parent)) / static_cast<long double>(n));
        const double got = ucb_score(m, n, parent, static_cast<double>(c));
        v.require(std::fabs(static_cast<long double>(got) - expect) <= 1e-9L,
                  "triple " + std::to_string(i) + " off by " +
                      std::to_string(static_cast<double>(got - expect)));
        v.require(std::isinf(ucb_score(m, 0, parent, static_cast<double>(c))), "n = 0 not infinite");

        // A full first level whose one unvisited child must be chosen.
        MctsConfig cfg;
        cfg.level_capacities = {4, 12, 15};
        MctsTree tree(cfg);
        const std::size_t unvisited = slot(rng);
        for (std::size_t k = 0; k < 4; ++k) {
            const NodeId id = tree.insert_child(
                0, QAPair::open_ended(Level::Perception, "q" + std::to_string(k), "a"), 0.9);
            if (k != unvisited) {
                for (std::uint64_t r = 0; r < 1 + k; ++r) backpropagate(tree, id, mean(rng));
            }
        }
        const NodeId chosen = select_expansion_target(tree, static_cast<double>(c));
        v.require(chosen == unvisited + 1, "unvisited child not selected in trial " + std::to_string(i));
    }
    v.require(seconds_since(t0) < 1.0, "runtime over 1 s");
    if (v.ok) v.detail = "200 triples within 1e-9; unvisited child always selected";
    return v;
}

Verdict backprop_oracle() {
    Verdict v;
    std::mt19937 rng(37);
    std::uniform_real_distribution<double> reward(0.0, 1.0);
    std::uniform_int_distribution<int> count(1, 80);
    for (int trial = 0; trial < 100; ++trial) {
        auto tree = test::random_tree(rng, 50);
        std::uniform_int_distribution<std::size_t> pick(0, tree.size() - 1);
        for (int i = 0, n = count(rng); i < n; ++i) backpropagate(tree, pick(rng), reward(rng));

        std::map<NodeId, std::vector<double>> seen;
        for (const auto& e : tree.event_log()) {
            if (e.kind != EventKind::Backprop) continue;
            for (const auto& id : e.payload["path"]) seen[id.get<NodeId>()].push_back(e.payload["reward"]);
        }
        for (const auto& node : tree.nodes()) {
            const auto& rewards = seen[node.id];
            v.require(node.visit_count == rewards.size(),
                      "visit count mismatch at node " + std::to_string(node.id));
            if (rewards.empty()) continue;
            long double sum = 0;
            for (double r : rewards) sum += r;
            const double avg = static_cast<double>(sum / rewards.size());
            v.require(std::fabs(node.mean_reward - avg) <= 1e-9,
                      "mean reward mismatch at node " + std::to_string(node.id));
        }
    }
    if (v.ok) v.detail = "100 trees match the event-log average";
    return v;
}

Verdict topk_oracle() {
    Verdict v;
    std::mt19937 rng(41);
    for (int trial = 0; trial < 100; ++trial) {
        const auto tree = test::random_tree(rng, 35);
        struct Row {
            long long tenths;
            std::array<NodeId, 3> ids;
        };
        std::vector<Row> rows;
        for (NodeId a : tree.root().children) {
            for (NodeId b : tree.node(a).children) {
                for (NodeId c : tree.node(b).children) {
                    const double s = *tree.node(a).quality_score + *tree.node(b).quality_score +
                                     *tree.node(c).quality_score;
                    rows.push_back({std::llround(s * 10), {a, b, c}});
                }
            }
        }
        std::sort(rows.begin(), rows.end(), [](const Row& x, const Row& y) {
            return x.tenths != y.tenths ? x.tenths > y.tenths : x.ids < y.ids;
        });
        if (rows.size() > 10) rows.resize(10);
        const auto top = extract_top_k(tree, 10);
        v.require(top.size() == rows.size(), "length mismatch in trial " + std::to_string(trial));
        for (std::size_t i = 0; v.ok && i < top.size(); ++i) {
            v.require(top[i].node_ids == rows[i].ids,
                      "rank " + std::to_string(i) + " differs in trial " + std::to_string(trial));
        }
    }
    if (v.ok) v.detail = "100 trees match brute-force enumeration";
    return v;
}

Verdict gates() {
    Verdict v;
    struct Step {
        std::string question;
        double score;
        std::string expect;  // admitted or a rejection reason
    };
    const std::vector<Step> steps = {
        {"what color is the car", 0.90, "admitted"},
        {"what color is the car today", 0.95, "sibling_too_similar"},  // 5/6
        {"where does the dog sleep", 0.64, "below_quality_threshold"},
        {"where does the dog sleep", 0.65, "admitted"},
        {"what color is the bus", 0.80, "admitted"},  // 4/6
        {"alpha beta gamma", 0.90, "admitted"},
        {"alpha beta gamma delta", 0.90, "sibling_too_similar"},  // exactly 3/4
        {"one two three four", 0.70, "admitted"},
        {"five six seven eight", 0.66, "admitted"},
        {"nine ten eleven twelve", 0.99, "admitted"},
        {"thirteen fourteen", 0.90, "admitted"},  // level 1 now holds 8
        {"delta epsilon", 0.30, "level_capacity_full"},
        {"zeta eta", 0.90, "level_capacity_full"},
        {"what color is the car", 0.90, "level_capacity_full"},
        {"theta iota", 1.00, "level_capacity_full"},
    };
    std::vector<ScriptEntry> script;
    for (std::size_t it = 0; it < 3; ++it) {
        for (std::size_t k = 0; k < 5; ++k) {
            script.push_back({"", test::node_response(steps[it * 5 + k].question, "an answer")});
        }
        for (std::size_t k = 0; k < 5; ++k) {
            script.push_back({"", test::score_response(steps[it * 5 + k].score)});
        }
    }
    MockBackend mock;
    mock.enqueue(script);
    MctsConfig cfg;
    cfg.iteration_budget = 3;
    const auto tree = TreeSearch(mock, cfg).run_search(ImageRef::from_path("gates.png"));
    std::vector<std::string> labels;
    for (const auto& e : tree.event_log()) {
        if (e.kind == EventKind::Admitted) labels.emplace_back("admitted");
        if (e.kind == EventKind::Rejected) labels.push_back(e.payload["reason"].get<std::string>());
    }
    v.require(labels.size() == steps.size(), "expected 15 gate outcomes, got " + std::to_string(labels.size()));
    for (std::size_t i = 0; v.ok && i < steps.size(); ++i) {
        v.require(labels[i] == steps[i].expect,
                  "candidate " + std::to_string(i) + ": " + labels[i] + " != " + steps[i].expect);
    }
    v.require(tree.per_level_counts()[0] == 8, "level 1 count");

    // Randomized stress: 1000 iterations, a fresh tree whenever one saturates.
    std::mt19937 rng(1000);
    std::uniform_real_distribution<double> score(0.5, 0.8);
    MctsTree stress;
    std::size_t trees = 1;
    for (int it = 0; it < 1000 && v.ok; ++it) {
        NodeId target = 0;
        try {
            target = select_expansion_target(stress, 2.0);
        } catch (const NoExpandableNode&) {
            stress = MctsTree();
            ++trees;
            target = select_expansion_target(stress, 2.0);
        }
        for (int k = 0; k < 5; ++k) {
            const double s = std::round(score(rng) * 100) / 100;
            const auto r = admit_candidate(stress, target, {test::random_question(rng, 3), "a", "r"}, s, stress.config());
            if (const auto* a = std::get_if<Admitted>(&r)) backpropagate(stress, a->id, s);
            for (std::size_t l = 0; l < 3; ++l) {
                v.require(stress.per_level_counts()[l] <= stress.config().level_capacities[l],
                          "capacity exceeded at level " + std::to_string(l + 1));
            }
        }
    }
    if (v.ok) {
        v.detail = "15 scripted outcomes in order; 1000 stress iterations over " + std::to_string(trees) +
                   " trees within capacity";
    }
    return v;
}

Verdict refinement() {
    Verdict v;
    RawSourceItem raw;
    raw.image = ImageRef::from_path("poster.png");
    raw.explanation = "A melting clock hangs over a desk covered in bills.";
    raw.question = "What does the image most likely imply?";
    raw.options = {"Time pressure from debt", "A love of clocks", "Summer heat", "Office decor", "Punctuality"};
    const std::string reason1 = "Level 2 restates level 3 instead of bridging to it.";
    const std::string reason2 = "Level 2 answer \"Deadlines\" is not visible in the image.";
    auto l2 = [](int n) {
        return test::mc_response(Level::Bridge, "How do the clock and the bills relate? #" + std::to_string(n),
                                 {"Waiting", "Deadlines", "Decoration", "Weather"}, 1);
    };
    MockBackend mock;
    mock.enqueue({{"", test::mc_response(Level::Connotation, raw.question,
                                         {"A love of clocks", "Time pressure from debt", "Summer heat", "Punctuality"}, 1)},
                  {"", l2(0)},
                  {"", test::verdict_response(false, 0.9, reason1)},
                  {"", l2(1)},
                  {"", test::verdict_response(false, 0.8, reason2)},
                  {"", l2(2)},
                  {"", test::verdict_response(true, 0.95, "supports")},
                  {"", test::mc_response(Level::Perception, "What is on the desk?", {"Bills", "Plants", "Food", "Cats"}, 0)},
                  {"", test::verdict_response(true, 0.95, "supports")}});
    const auto result = ChainBuilder(mock, BenchConfig{}).build_chain(raw, {"poster-1", Task::Implication, "metaphor"});
    v.require(std::holds_alternative<BenchmarkItem>(result), "chain did not complete");
    if (!v.ok) return v;

    std::vector<MockBackend::Call> gens;
    for (const auto& c : mock.calls()) {
        if (c.tag == "bench-gen-l2") gens.push_back(c);
    }
    v.require(gens.size() == 3, "expected 3 level-2 generations, got " + std::to_string(gens.size()));
    if (!v.ok) return v;
    const double temps[] = {0.7, 0.9, 1.1};
    for (std::size_t i = 0; i < 3; ++i) {
        v.require(std::fabs(gens[i].temperature - temps[i]) < 1e-12,
                  "generation " + std::to_string(i) + " at temperature " + std::to_string(gens[i].temperature));
    }
    v.require(gens[1].prompt.find(reason1) != std::string::npos, "first reason missing from retry 1");
    v.require(gens[2].prompt.find(reason2) != std::string::npos, "second reason missing from retry 2");
    v.require(gens[0].prompt.find(reason1) == std::string::npos, "first attempt carries guidance");

    const auto& item = std::get<BenchmarkItem>(result);
    const auto& stages = (*item.provenance)["stages"];
    v.require(stages.size() == 3, "provenance stage count");
    if (!v.ok) return v;
    const auto& attempts = stages[1]["attempts"];
    v.require(attempts.size() == 3, "provenance attempt count");
    if (!v.ok) return v;
    v.require(attempts[0]["failure_reason"] == reason1 && attempts[1]["failure_reason"] == reason2 &&
                  attempts[2]["outcome"] == "accepted",
              "provenance attempt records");
    v.require(item.at(Level::Bridge).question.find("#2") != std::string::npos, "emitted level 2 is not the accepted one");
    if (v.ok) v.detail = "3 generations at 0.7/0.9/1.1 with verbatim reasons; provenance complete";
    return v;
}

Verdict metric_bound() {
    Verdict v;
    std::mt19937 rng(500);
    std::uniform_real_distribution<double> p(0.0, 1.0);
    std::uniform_int_distribution<int> size(1, 120);
    const auto aspects = aspects_of(Task::Affective);
    for (int trial = 0; trial < 500 && v.ok; ++trial) {
        std::array<std::bernoulli_distribution, 3> level{std::bernoulli_distribution(p(rng)),
                                                         std::bernoulli_distribution(p(rng)),
                                                         std::bernoulli_distribution(p(rng))};
        std::vector<ChainOutcome> set;
        std::array<int, 3> hits{0, 0, 0};
        int full = 0;
        std::map<std::string, std::array<int, 5>> by_aspect;  // n, l1, l2, l3, full
        const int n = size(rng);
        for (int i = 0; i < n; ++i) {
            ChainOutcome o;
            o.item_id = "i" + std::to_string(i);
            o.task = Task::Affective;
            o.aspect = std::string(aspects[static_cast<std::size_t>(i) % aspects.size()]);
            bool all = true;
            auto& a = by_aspect[o.aspect];
            ++a[0];
            for (std::size_t k = 0; k < 3; ++k) {
                const bool c = level[k](rng);
                o.outcomes[k].level = kAllLevels[k];
                o.outcomes[k].correct = c;
                hits[k] += c;
                a[k + 1] += c;
                all = all && c;
            }
            o.full_correct = all;
            full += all;
            a[4] += all;
            set.push_back(o);
        }
        const auto m = compute_task_metrics(set);
        v.require(m.acc_full <= std::min({m.acc_perc, m.acc_bridge, m.acc_conn}) + 1e-9, "bound violated");
        auto pct = [&](int k, int of) { return 100.0 * k / of; };
        v.require(m.n_items == static_cast<std::size_t>(n) && m.acc_perc == pct(hits[0], n) &&
                      m.acc_bridge == pct(hits[1], n) && m.acc_conn == pct(hits[2], n) &&
                      m.acc_full == pct(full, n),
                  "task tally mismatch in trial " + std::to_string(trial));
        for (const auto& [aspect, a] : by_aspect) {
            const auto& got = m.per_aspect.at(aspect);
            v.require(got.n_items == static_cast<std::size_t>(a[0]) && got.acc_perc == pct(a[1], a[0]) &&
                          got.acc_bridge == pct(a[2], a[0]) && got.acc_conn == pct(a[3], a[0]) &&
                          got.acc_full == pct(a[4], a[0]),
                      "aspect tally mismatch in trial " + std::to_string(trial));
        }
    }
    if (v.ok) v.detail = "500 outcome sets: bound holds and tallies agree exactly";
    return v;
}

Verdict parser_fixtures() {
    Verdict v;
    std::ifstream in(std::string(HVCU_FIXTURE_DIR) + "/choice_parser_cases.json");
    v.require(static_cast<bool>(in), "fixture file missing");
    if (!v.ok) return v;
    const auto cases = Json::parse(in);
    v.require(cases.size() == 30, "fixture holds " + std::to_string(cases.size()) + " cases");
    std::size_t agree = 0;
    for (const auto& c : cases) {
        std::vector<OptionEntry> opts;
        for (const auto& t : c["options"]) opts.push_back({t.get<std::string>(), false});
        const auto got = parse_choice(c["response"].get<std::string>(), opts);
        const std::optional<char> want =
            c["expected"].is_null() ? std::nullopt : std::optional<char>(c["expected"].get<std::string>()[0]);
        if (got == want) {
            ++agree;
        } else {
            v.require(false, "case " + c["response"].dump());
        }
    }
    if (v.ok) v.detail = std::to_string(agree) + "/30 agree";
    return v;
}

Verdict e2e_determinism() {
    Verdict v;
    const auto t0 = Clock::now();
    test::TempDir dir;
    std::vector<ScriptEntry> script;
    for (std::uint32_t img = 0; img < 3; ++img) {
        const auto s = test::mcts_script(900 + img, 40);
        script.insert(script.end(), s.begin(), s.end());
    }
    write_json_file(dir / "mock.json", mock_script_to_json(script));
    const std::vector<std::string> images = {"synthetic/alpha.png", "synthetic/beta.png", "synthetic/gamma.png"};

    std::map<std::string, std::string> first;
    for (int run = 0; run < 2 && v.ok; ++run) {
        const auto out = dir / ("run" + std::to_string(run));
        std::vector<std::string> args = {"--log-level", "off", "gen-sft", "--images"};
        args.insert(args.end(), images.begin(), images.end());
        args.emplace_back("--out-dir");
        args.push_back(out.string());
        args.insert(args.end(), {"--mock", (dir / "mock.json").string(), "--seed", "17", "--budget", "40"});
        std::ostringstream sout, serr;
        const int code = cli::run_cli(args, sout, serr);
        v.require(code == 0, "gen-sft exited " + std::to_string(code) + ": " + serr.str());
        if (!v.ok) break;
        std::map<std::string, std::string> files;
        for (const auto& e : fs::recursive_directory_iterator(out)) {
            if (e.is_regular_file()) files[fs::relative(e.path(), out).string()] = read_file(e.path());
        }
        v.require(files.count("conversations.jsonl") && files.count("manifest.json") &&
                      files.count("trees/alpha.tree.json") && files.count("trees/gamma.tree.json"),
                  "missing outputs");
        if (run == 0) {
            first = files;
        } else {
            v.require(files == first, "outputs differ between runs");
        }
    }
    const double elapsed = seconds_since(t0);
    v.require(elapsed < 60.0, "runtime " + std::to_string(elapsed) + " s");
    if (v.ok) {
        const auto m = Json::parse(first["manifest.json"]);
        v.detail = std::to_string(first.size()) + " files byte-identical, " +
                   std::to_string(m["conversations"]["conversations"].get<int>()) + " conversations, " +
                   std::to_string(elapsed).substr(0, 4) + " s";
    }
    return v;
}

Verdict format_stability() {
    Verdict v;
    test::TempDir dir;
    // Unnormalized input: shuffled order, compact lines, keys in arbitrary order.
    std::mt19937 rng(10);
    std::vector<std::string> lines;
    for (int i = 0; i < 100; ++i) {
        const Task t = kAllTasks[static_cast<std::size_t>(i) % 3];
        auto item = test::make_item("bench-" + std::to_string(i), t, std::string(aspects_of(t)[0]));
        nlohmann::json loose = nlohmann::json::parse(benchmark_item_to_json(item).dump());
        lines.push_back(loose.dump());  // nlohmann::json sorts keys alphabetically
    }
    std::shuffle(lines.begin(), lines.end(), rng);
    std::string raw;
    for (const auto& l : lines) raw += l + "\n";
    std::ofstream(dir / "raw.jsonl", std::ios::binary) << raw;

    save_benchmark(dir / "norm.jsonl", load_benchmark(dir / "raw.jsonl"));
    const auto norm = read_file(dir / "norm.jsonl");
    save_benchmark(dir / "again.jsonl", load_benchmark(dir / "norm.jsonl"));
    v.require(load_benchmark(dir / "norm.jsonl").size() == 100, "benchmark item count");
    v.require(read_file(dir / "again.jsonl") == norm, "benchmark bytes changed on round-trip");

    MctsConfig cfg;
    cfg.level_capacities = {10, 20, 30};
    MctsTree tree(cfg);
    std::uniform_real_distribution<double> score(0.0, 1.0);
    while (tree.size() < 50) {
        std::uniform_int_distribution<std::size_t> pick(0, tree.size() - 1);
        const NodeId parent = pick(rng);
        if (!tree.is_expandable(parent)) continue;
        const auto id = tree.insert_child(
            parent, QAPair::open_ended(level_from_int(tree.node(parent).level + 1), test::random_question(rng), "a", "r"),
            score(rng));
        backpropagate(tree, id, score(rng));
    }
    std::ofstream(dir / "raw.tree.json", std::ios::binary)
        << nlohmann::json::parse(tree_to_json(tree).dump()).dump();
    checkpoint_tree(restore_tree(dir / "raw.tree.json"), dir / "norm.tree.json");
    const auto tnorm = read_file(dir / "norm.tree.json");
    const auto restored = restore_tree(dir / "norm.tree.json");
    checkpoint_tree(restored, dir / "again.tree.json");
    const bool same_nodes = std::equal(restored.nodes().begin(), restored.nodes().end(), tree.nodes().begin(),
                                       tree.nodes().end());
    bool same_events = restored.event_log().size() == tree.event_log().size();
    for (std::size_t i = 0; same_events && i < tree.event_log().size(); ++i) {
        // Key order inside payloads was scrambled on purpose; compare as unordered objects.
        const auto& a = restored.event_log()[i];
        const auto& b = tree.event_log()[i];
        same_events = a.kind == b.kind &&
                      nlohmann::json::parse(a.payload.dump()) == nlohmann::json::parse(b.payload.dump());
    }
    v.require(same_nodes && same_events, "restored tree differs");
    v.require(read_file(dir / "again.tree.json") == tnorm, "checkpoint bytes changed on round-trip");
    if (v.ok) v.detail = "100-item benchmark and 50-node checkpoint byte-stable";
    return v;
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::off);
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"score arithmetic", score_arithmetic},
        {"ucb oracle", ucb_oracle},
        {"backpropagation oracle", backprop_oracle},
        {"top-k oracle", topk_oracle},
        {"capacity and threshold gates", gates},
        {"refinement loop", refinement},
        {"metric bound property", metric_bound},
        {"parser fixtures", parser_fixtures},
        {"end-to-end determinism", e2e_determinism},
        {"format stability", format_stability},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        std::cout << (v.ok ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": "
                  << v.detail << "\n";
        failed += v.ok ? 0 : 1;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size()
              << " criteria passed\n";
    return failed == 0 ? 0 : 1;
}
