#include "hvcu/mcts.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "hvcu/errors.hpp"
#include "hvcu/parallel.hpp"

namespace hvcu {

std::string_view event_kind_name(EventKind kind) noexcept {
    switch (kind) {
        case EventKind::Selected: return "selected";
        case EventKind::Generated: return "generated";
        case EventKind::Admitted: return "admitted";
        case EventKind::Rejected: return "rejected";
        case EventKind::Backprop: return "backprop";
    }
    return "";
}

std::optional<EventKind> event_kind_from_name(std::string_view name) noexcept {
    for (auto kind : {EventKind::Selected, EventKind::Generated, EventKind::Admitted,
                      EventKind::Rejected, EventKind::Backprop}) {
        if (event_kind_name(kind) == name) return kind;
    }
    return std::nullopt;
}

std::string_view rejection_reason_name(RejectionReason reason) noexcept {
    switch (reason) {
        case RejectionReason::BelowQualityThreshold: return "below_quality_threshold";
        case RejectionReason::SiblingTooSimilar: return "sibling_too_similar";
        case RejectionReason::LevelCapacityFull: return "level_capacity_full";
        case RejectionReason::ParseFailure: return "parse_failure";
    }
    return "";
}

std::optional<RejectionReason> rejection_reason_from_name(std::string_view name) noexcept {
    for (auto r : {RejectionReason::BelowQualityThreshold, RejectionReason::SiblingTooSimilar,
                   RejectionReason::LevelCapacityFull, RejectionReason::ParseFailure}) {
        if (rejection_reason_name(r) == name) return r;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// tree

MctsTree::MctsTree(MctsConfig config) : config_(config) {
    MctsNode root;
    root.id = 0;
    root.level = 0;
    nodes_.push_back(std::move(root));
}

MctsTree MctsTree::from_parts(MctsConfig config, std::vector<MctsNode> nodes,
                              std::vector<TreeEvent> events) {
    if (nodes.empty()) throw InvariantError("tree has no root");
    MctsTree tree(config);
    std::array<int, 3> counts{0, 0, 0};
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto& n = nodes[i];
        const std::string where = "node " + std::to_string(i);
        if (n.id != i) throw InvariantError(where + ": id does not match position");
        if (i == 0) {
            if (n.level != 0 || n.qa || n.quality_score || n.parent) {
                throw InvariantError("root must be level 0 with no qa, score or parent");
            }
        } else {
            if (!n.parent || *n.parent >= i) throw InvariantError(where + ": bad parent");
            const auto& p = nodes[*n.parent];
            if (n.level != p.level + 1 || n.level > 3) {
                throw InvariantError(where + ": level must be parent level + 1 and <= 3");
            }
            if (std::find(p.children.begin(), p.children.end(), n.id) == p.children.end()) {
                throw InvariantError(where + ": missing from parent's children");
            }
            if (!n.qa || n.qa->answer_mode != AnswerMode::OpenEnded || !n.quality_score) {
                throw InvariantError(where + ": needs an open-ended qa and a quality score");
            }
            if (to_int(n.qa->level) != n.level) throw InvariantError(where + ": qa level mismatch");
            ++counts[static_cast<std::size_t>(n.level - 1)];
        }
        for (NodeId c : n.children) {
            if (c >= nodes.size() || nodes[c].parent != n.id) {
                throw InvariantError(where + ": child " + std::to_string(c) + " does not point back");
            }
        }
    }
    for (std::size_t l = 0; l < 3; ++l) {
        if (counts[l] > config.level_capacities[l]) {
            throw InvariantError("level " + std::to_string(l + 1) + " exceeds its capacity");
        }
    }
    tree.nodes_ = std::move(nodes);
    tree.counts_ = counts;
    tree.events_ = std::move(events);
    return tree;
}

const MctsNode& MctsTree::node(NodeId id) const {
    if (id >= nodes_.size()) throw PreconditionError("unknown node id " + std::to_string(id));
    return nodes_[id];
}

int MctsTree::count_at(int level) const {
    if (level < 1 || level > 3) return 0;
    return counts_[static_cast<std::size_t>(level - 1)];
}

bool MctsTree::level_full(int level) const {
    if (level < 1 || level > 3) return true;
    return count_at(level) >= config_.level_capacities[static_cast<std::size_t>(level - 1)];
}

bool MctsTree::is_expandable(NodeId id) const {
    const auto& n = node(id);
    return n.level < 3 && !level_full(n.level + 1);
}

bool MctsTree::has_expandable() const { return subtree_expandable(root_id()); }

bool MctsTree::subtree_expandable(NodeId id) const {
    if (is_expandable(id)) return true;
    const auto& n = node(id);
    return std::any_of(n.children.begin(), n.children.end(),
                       [&](NodeId c) { return subtree_expandable(c); });
}

void MctsTree::log(EventKind kind, Json payload) {
    events_.push_back(TreeEvent{kind, std::move(payload)});
}

NodeId MctsTree::insert_child(NodeId parent, QAPair qa, double quality_score) {
    const int level = node(parent).level + 1;
    if (level > 3) throw PreconditionError("cannot add children below level 3");
    if (to_int(qa.level) != level) throw PreconditionError("qa level must be parent level + 1");
    if (level_full(level)) throw PreconditionError("level " + std::to_string(level) + " is full");
    MctsNode child;
    child.id = nodes_.size();
    child.level = level;
    child.parent = parent;
    child.qa = std::move(qa);
    child.quality_score = quality_score;
    nodes_.push_back(std::move(child));
    nodes_[parent].children.push_back(nodes_.back().id);
    ++counts_[static_cast<std::size_t>(level - 1)];
    return nodes_.back().id;
}

void MctsTree::record_visit(NodeId id, double reward) {
    if (id >= nodes_.size()) throw PreconditionError("unknown node id " + std::to_string(id));
    auto& n = nodes_[id];
    n.visit_count += 1;
    const double count = static_cast<double>(n.visit_count);
    n.mean_reward = ((count - 1.0) * n.mean_reward + reward) / count;
}

// ---------------------------------------------------------------------------
// search primitives

double ucb_score(double mean_reward, std::uint64_t visit_count, std::uint64_t parent_visits,
                 double c) noexcept {
    if (visit_count == 0) return std::numeric_limits<double>::infinity();
    const double n = static_cast<double>(visit_count);
    const double parent = static_cast<double>(std::max<std::uint64_t>(parent_visits, 1));
    return mean_reward + c * std::sqrt(std::log(parent) / n);
}

NodeId select_expansion_target(MctsTree& tree, double c) {
    Json path = Json::array();
    if (!tree.has_expandable()) {
        tree.log(EventKind::Selected, {{"path", path}, {"target", nullptr},
                                       {"halt", "no_expandable_node"}});
        throw NoExpandableNode();
    }
    NodeId current = tree.root_id();
    path.push_back(current);
    while (!tree.is_expandable(current)) {
        const auto& n = tree.node(current);
        std::optional<NodeId> best;
        double best_score = 0.0;
        for (NodeId child : n.children) {
            if (!tree.subtree_expandable(child)) continue;
            const auto& cn = tree.node(child);
            const double score = ucb_score(cn.mean_reward, cn.visit_count, n.visit_count, c);
            if (!best || score > best_score) {
                best = child;
                best_score = score;
            }
        }
        // has_expandable() guarantees a viable child here.
        current = *best;
        path.push_back(current);
    }
    tree.log(EventKind::Selected, {{"path", path}, {"target", current}});
    return current;
}

namespace {

std::set<std::string> word_set(std::string_view text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (char ch : text) {
        const auto u = static_cast<unsigned char>(ch);
        if (std::ispunct(u)) continue;
        cleaned += static_cast<char>(std::tolower(u));
    }
    std::set<std::string> words;
    std::istringstream in(cleaned);
    for (std::string w; in >> w;) words.insert(w);
    return words;
}

}  // namespace

double sibling_similarity(std::string_view a, std::string_view b) {
    const auto wa = word_set(a);
    const auto wb = word_set(b);
    if (wa.empty() && wb.empty()) return 1.0;
    std::size_t common = 0;
    for (const auto& w : wa) common += wb.count(w);
    const std::size_t union_size = wa.size() + wb.size() - common;
    return static_cast<double>(common) / static_cast<double>(union_size);
}

AdmissionResult admit_candidate(MctsTree& tree, NodeId parent,
                                const GeneratedNodePayload& candidate, double score,
                                const MctsConfig& config) {
    if (!(score >= 0.0 && score <= 1.0)) throw PreconditionError("score must lie in [0, 1]");
    const auto& p = tree.node(parent);
    if (p.level >= 3) throw PreconditionError("level-3 nodes have no children");
    const int level = p.level + 1;

    std::optional<RejectionReason> reason;
    if (tree.count_at(level) >= config.level_capacities[static_cast<std::size_t>(level - 1)]) {
        reason = RejectionReason::LevelCapacityFull;
    } else if (score < config.quality_threshold) {
        reason = RejectionReason::BelowQualityThreshold;
    } else {
        for (NodeId sibling : p.children) {
            const auto& sq = tree.node(sibling).qa->question;
            if (sibling_similarity(candidate.question, sq) >= config.diversity_threshold) {
                reason = RejectionReason::SiblingTooSimilar;
                break;
            }
        }
    }

    if (reason) {
        tree.log(EventKind::Rejected, {{"parent", parent},
                                       {"reason", rejection_reason_name(*reason)},
                                       {"question", candidate.question},
                                       {"score", score}});
        return Rejected{*reason};
    }

    const NodeId id = tree.insert_child(
        parent,
        QAPair::open_ended(level_from_int(level), candidate.question, candidate.answer,
                           candidate.reasoning),
        score);
    tree.log(EventKind::Admitted, {{"node", id},
                                   {"parent", parent},
                                   {"level", level},
                                   {"question", candidate.question},
                                   {"answer", candidate.answer},
                                   {"reasoning", candidate.reasoning},
                                   {"quality_score", score}});
    return Admitted{id};
}

void backpropagate(MctsTree& tree, NodeId from, double reward) {
    Json path = Json::array();
    for (std::optional<NodeId> id = from; id; id = tree.node(*id).parent) {
        tree.record_visit(*id, reward);
        path.push_back(*id);
    }
    tree.log(EventKind::Backprop, {{"from", from}, {"reward", reward}, {"path", path}});
}

std::vector<PathRecord> extract_top_k(const MctsTree& tree, std::size_t k) {
    std::vector<PathRecord> paths;
    for (NodeId a : tree.root().children) {
        const auto& na = tree.node(a);
        for (NodeId b : na.children) {
            const auto& nb = tree.node(b);
            for (NodeId c : nb.children) {
                const auto& nc = tree.node(c);
                const double mean =
                    (*na.quality_score + *nb.quality_score + *nc.quality_score) / 3.0;
                paths.push_back(PathRecord{{a, b, c}, mean});
            }
        }
    }
    // Means that differ only by summation-order rounding count as ties.
    auto key = [](const PathRecord& p) { return std::llround(p.mean_score * 1e12); };
    std::sort(paths.begin(), paths.end(), [&](const PathRecord& x, const PathRecord& y) {
        if (key(x) != key(y)) return key(x) > key(y);
        return x.node_ids < y.node_ids;
    });
    if (paths.size() > k) paths.resize(k);
    return paths;
}

MctsTree replay_event_log(const MctsConfig& config, std::span<const TreeEvent> events) {
    MctsTree tree(config);
    for (const auto& e : events) {
        if (e.kind == EventKind::Admitted) {
            const auto& p = e.payload;
            const int level = p.at("level").get<int>();
            const NodeId id = tree.insert_child(
                p.at("parent").get<NodeId>(),
                QAPair::open_ended(level_from_int(level), p.at("question").get<std::string>(),
                                   p.at("answer").get<std::string>(),
                                   p.at("reasoning").get<std::string>()),
                p.at("quality_score").get<double>());
            if (id != p.at("node").get<NodeId>()) {
                throw InvariantError("event log replay produced node " + std::to_string(id) +
                                     ", log says " + p.at("node").dump());
            }
        } else if (e.kind == EventKind::Backprop) {
            const double reward = e.payload.at("reward").get<double>();
            for (const auto& id : e.payload.at("path")) tree.record_visit(id.get<NodeId>(), reward);
        }
    }
    return tree;
}

// ---------------------------------------------------------------------------
// driver

TreeSearch::TreeSearch(ChatBackend& backend, MctsConfig config, const TemplateSet& templates,
                       int parallel)
    : backend_(backend), config_(config), templates_(templates), parallel_(parallel) {
    const GenerationConfig probe{config_, BenchConfig{}};
    if (auto violations = validate_config(probe); !violations.empty()) {
        throw InvariantError(violations.front());
    }
}

int TreeSearch::workers() const noexcept {
    return backend_.requires_ordered_calls() ? 1 : std::max(1, parallel_);
}

std::vector<Candidate> TreeSearch::generate_candidates(const ImageRef& image,
                                                       const MctsTree& tree, NodeId parent,
                                                       std::size_t count) const {
    const auto& p = tree.node(parent);
    if (p.level >= 3) throw PreconditionError("cannot expand a level-3 node");
    const Level child = level_from_int(p.level + 1);

    std::string guidance;
    if (!p.children.empty()) {
        guidance = "Existing questions at this position (ask something different):";
        for (NodeId c : p.children) guidance += " \"" + tree.node(c).qa->question + "\"";
    }
    Bindings bindings{{"target_level", std::to_string(to_int(child))},
                      {"level_description", std::string(level_description(child))},
                      {"retry_guidance", guidance},
                      {"difficulty_guidance", std::string(difficulty_guidance(child))}};
    if (p.qa) {
        bindings["parent_question"] = p.qa->question;
        bindings["parent_answer"] = p.qa->answer_text;
    }
    const std::string prompt = templates_.render(mcts_generation_template(child), bindings);
    const std::string tag = "mcts-gen-l" + std::to_string(to_int(child));

    return indexed_map(count, workers(), [&](std::size_t) {
        const auto response = backend_.complete(
            make_user_request(prompt, &image, config_.generation_temperature, tag));
        Candidate c;
        c.raw_text = response.text;
        try {
            c.payload = parse_node_payload(response.text, child);
        } catch (const ParseError& e) {
            c.error = e.what();
        }
        return c;
    });
}

double TreeSearch::score_candidate(const ImageRef& image, const MctsTree& tree, NodeId parent,
                                   const GeneratedNodePayload& candidate) const {
    const auto& p = tree.node(parent);
    if (p.level >= 3) throw PreconditionError("level-3 nodes have no children");
    const Level child = level_from_int(p.level + 1);
    const std::string prompt = templates_.render(
        TemplateId::MctsEval,
        {{"parent_level", std::to_string(p.level)},
         {"parent_question", p.qa ? p.qa->question : std::string("N/A (top of the hierarchy)")},
         {"parent_answer", p.qa ? p.qa->answer_text : std::string("N/A")},
         {"child_level", std::to_string(to_int(child))},
         {"child_question", candidate.question},
         {"child_answer", candidate.answer},
         {"level_description", std::string(level_description(child))}});
    const auto response = backend_.complete(make_user_request(
        prompt, &image, config_.evaluation_temperature, "mcts-eval-l" + std::to_string(to_int(child))));
    try {
        return parse_evaluation(response.text).quality_score;
    } catch (const ParseError& e) {
        throw EvaluationParseError(std::string("evaluator response: ") + e.what());
    }
}

void TreeSearch::run(MctsTree& tree, const ImageRef& image) const {
    struct Scored {
        std::optional<double> score;
        std::string error;
    };

    for (int iteration = 0; iteration < config_.iteration_budget; ++iteration) {
        NodeId target = 0;
        try {
            target = select_expansion_target(tree, config_.exploration_c);
        } catch (const NoExpandableNode&) {
            spdlog::info("{}: tree saturated after {} iterations", image.path_or_uri, iteration);
            return;
        }

        const auto candidates = generate_candidates(
            image, tree, target, static_cast<std::size_t>(config_.expansion_batch));
        const auto scored = indexed_map(candidates.size(), workers(), [&](std::size_t i) {
            Scored s;
            if (!candidates[i].payload) return s;
            try {
                s.score = score_candidate(image, tree, target, *candidates[i].payload);
            } catch (const EvaluationParseError& e) {
                s.error = e.what();
            }
            return s;
        });

        for (std::size_t i = 0; i < candidates.size(); ++i) {
            const auto& c = candidates[i];
            Json generated{{"parent", target}, {"index", i}};
            if (c.payload) {
                generated["question"] = c.payload->question;
                generated["answer"] = c.payload->answer;
                generated["reasoning"] = c.payload->reasoning;
            }
            const std::string error = c.payload ? scored[i].error : c.error;
            if (!error.empty()) {
                generated["error"] = error;
                tree.log(EventKind::Generated, std::move(generated));
                tree.log(EventKind::Rejected,
                         {{"parent", target},
                          {"reason", rejection_reason_name(RejectionReason::ParseFailure)},
                          {"error", error}});
                continue;
            }
            const double score = *scored[i].score;
            generated["score"] = score;
            tree.log(EventKind::Generated, std::move(generated));
            const auto result = admit_candidate(tree, target, *c.payload, score, config_);
            if (const auto* admitted = std::get_if<Admitted>(&result)) {
                backpropagate(tree, admitted->id, score);
            }
        }
    }
}

MctsTree TreeSearch::run_search(const ImageRef& image) const {
    MctsTree tree(config_);
    run(tree, image);
    return tree;
}

}  // namespace hvcu
