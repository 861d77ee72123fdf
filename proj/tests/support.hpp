#pragma once

// Shared builders for the test suites: canned model responses, benchmark
// items, random trees and scratch directories.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "hvcu/core.hpp"
#include "hvcu/mcts.hpp"
#include "hvcu/model_client.hpp"

namespace hvcu::test {

inline std::string mc_response(Level level, const std::string& question,
                               const std::vector<std::string>& options, std::size_t correct,
                               const std::string& reasoning = "because") {
    Json j;
    j["level"] = to_int(level);
    j["question"] = question;
    Json opts = Json::array();
    for (std::size_t i = 0; i < options.size(); ++i) {
        opts.push_back(Json{{"option_text", options[i]}, {"is_correct", i == correct}});
    }
    j["options"] = opts;
    j["reasoning"] = reasoning;
    return j.dump();
}

inline std::string verdict_response(bool helpful, double confidence, const std::string& reasoning) {
    return Json{{"is_helpful", helpful}, {"confidence", confidence}, {"reasoning", reasoning}}.dump();
}

inline std::string node_response(const std::string& question, const std::string& answer,
                                 const std::string& reasoning = "seen in the image") {
    return Json{{"question", question}, {"answer", answer}, {"reasoning", reasoning}}.dump();
}

inline std::string score_response(double score, const std::string& reasoning = "fine") {
    return Json{{"quality_score", score}, {"reasoning", reasoning}}.dump();
}

inline QAPair mc_pair(Level level, const std::string& question, std::size_t correct = 0) {
    std::vector<OptionEntry> options;
    for (std::size_t i = 0; i < 4; ++i) {
        options.push_back({question + " option " + std::string(1, static_cast<char>('a' + i)),
                           i == correct});
    }
    return QAPair::multiple_choice(level, question, options, "why");
}

inline BenchmarkItem make_item(const std::string& id, Task task = Task::Implication,
                               const std::string& aspect = "metaphor") {
    BenchmarkItem item;
    item.id = id;
    item.image = ImageRef::from_path("images/" + id + ".png");
    item.task = task;
    item.aspect = aspect;
    item.levels = {mc_pair(Level::Perception, id + " what is shown", 1),
                   mc_pair(Level::Bridge, id + " how do the parts relate", 2),
                   mc_pair(Level::Connotation, id + " what does it imply", 3)};
    return item;
}

/// Words drawn from a fixed vocabulary so Jaccard overlaps stay small.
inline std::string random_question(std::mt19937& rng, std::size_t words = 6) {
    static const std::vector<std::string> vocab = {
        "what", "which", "where", "object", "color", "shape", "mood", "light", "shadow",
        "figure", "symbol", "texture", "contrast", "edge", "pattern", "scene", "motion",
        "glance", "weight", "balance", "tone", "frame", "corner", "memory", "silence",
        "promise", "river", "window", "ladder", "mirror", "garden", "signal"};
    std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
    std::string q;
    for (std::size_t i = 0; i < words; ++i) q += (i ? " " : "") + vocab[pick(rng)];
    return q + "?";
}

/// A random tree grown by raw insertion with scores in [0, 1]; no backprops.
inline MctsTree random_tree(std::mt19937& rng, std::size_t max_nodes, MctsConfig config = {}) {
    MctsTree tree(config);
    std::uniform_real_distribution<double> score(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> count(1, max_nodes);
    const std::size_t target = count(rng);
    for (std::size_t attempts = 0; tree.size() < target && attempts < 10 * max_nodes; ++attempts) {
        std::uniform_int_distribution<std::size_t> pick(0, tree.size() - 1);
        const NodeId parent = pick(rng);
        if (!tree.is_expandable(parent)) continue;
        const Level level = level_from_int(tree.node(parent).level + 1);
        // Coarse scores make exact ties common, which exercises the tie rule.
        const double s = std::round(score(rng) * 10.0) / 10.0;
        tree.insert_child(parent, QAPair::open_ended(level, random_question(rng), "answer"), s);
    }
    return tree;
}

class TempDir {
public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("hvcu-test-" + std::to_string(rd()) + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// A mock script for `iterations` MCTS iterations in which every generation
/// parses: each iteration is `batch` generations followed by `batch` scores.
inline std::vector<ScriptEntry> mcts_script(std::uint32_t seed, int iterations, int batch = 5) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> score(0.4, 1.0);
    std::vector<ScriptEntry> script;
    for (int it = 0; it < iterations; ++it) {
        for (int b = 0; b < batch; ++b) {
            script.push_back({"", node_response(random_question(rng), "a short answer")});
        }
        for (int b = 0; b < batch; ++b) {
            const double s = std::round(score(rng) * 100.0) / 100.0;
            script.push_back({"", score_response(s)});
        }
    }
    return script;
}

}  // namespace hvcu::test
