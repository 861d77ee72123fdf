#pragma once

// Bottom-up search over three-level QA trees. A virtual root (level 0) is
// expanded with batches of generated candidates; each candidate is scored by
// a judge and admitted only if it clears the capacity, quality and sibling
// diversity gates. Admitted scores are backpropagated to every ancestor and
// the best complete level 1 -> 2 -> 3 paths are extracted at the end.

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "hvcu/core.hpp"
#include "hvcu/model_client.hpp"
#include "hvcu/prompts.hpp"

namespace hvcu {

using NodeId = std::size_t;

struct MctsNode {
    NodeId id = 0;
    int level = 0;  // 0 is the virtual root
    std::optional<NodeId> parent;
    std::optional<QAPair> qa;             // open-ended; absent iff root
    std::optional<double> quality_score;  // absent iff root
    std::uint64_t visit_count = 0;
    double mean_reward = 0.0;  // meaningful only when visit_count >= 1
    std::vector<NodeId> children;

    bool operator==(const MctsNode&) const = default;
};

enum class EventKind { Selected, Generated, Admitted, Rejected, Backprop };

std::string_view event_kind_name(EventKind kind) noexcept;
std::optional<EventKind> event_kind_from_name(std::string_view name) noexcept;

struct TreeEvent {
    EventKind kind;
    Json payload;

    bool operator==(const TreeEvent&) const = default;
};

enum class RejectionReason {
    BelowQualityThreshold,
    SiblingTooSimilar,
    LevelCapacityFull,
    ParseFailure,
};

std::string_view rejection_reason_name(RejectionReason reason) noexcept;
std::optional<RejectionReason> rejection_reason_from_name(std::string_view name) noexcept;

class MctsTree {
public:
    explicit MctsTree(MctsConfig config = {});

    /// Rebuilds a tree from stored parts, checking structure and counts.
    /// Throws InvariantError on inconsistency.
    static MctsTree from_parts(MctsConfig config, std::vector<MctsNode> nodes,
                               std::vector<TreeEvent> events);

    const MctsConfig& config() const noexcept { return config_; }
    NodeId root_id() const noexcept { return 0; }
    const MctsNode& root() const { return nodes_.front(); }
    const MctsNode& node(NodeId id) const;
    bool contains(NodeId id) const noexcept { return id < nodes_.size(); }
    std::size_t size() const noexcept { return nodes_.size(); }
    std::span<const MctsNode> nodes() const noexcept { return nodes_; }

    /// Stored nodes at levels 1, 2, 3.
    const std::array<int, 3>& per_level_counts() const noexcept { return counts_; }
    int count_at(int level) const;
    bool level_full(int level) const;

    /// level < 3 and the next level still has capacity.
    bool is_expandable(NodeId id) const;
    bool has_expandable() const;
    /// True when `id` or one of its descendants is expandable.
    bool subtree_expandable(NodeId id) const;

    const std::vector<TreeEvent>& event_log() const noexcept { return events_; }
    void log(EventKind kind, Json payload);

    /// Low-level mutators; prefer admit_candidate / backpropagate.
    NodeId insert_child(NodeId parent, QAPair qa, double quality_score);
    void record_visit(NodeId id, double reward);

    bool operator==(const MctsTree&) const = default;

private:
    MctsConfig config_;
    std::vector<MctsNode> nodes_;
    std::array<int, 3> counts_{0, 0, 0};
    std::vector<TreeEvent> events_;
};

/// mean + c * sqrt(ln(parent_visits) / visits); +infinity when visits == 0.
double ucb_score(double mean_reward, std::uint64_t visit_count, std::uint64_t parent_visits,
                 double c) noexcept;

/// Descends from the root through the max-UCB child (ties -> lowest id) and
/// returns the first expandable node on that path. Children whose subtree holds
/// no expandable node are skipped. Logs a `selected` event. Throws NoExpandableNode.
NodeId select_expansion_target(MctsTree& tree, double c);

/// Jaccard similarity of lowercased, punctuation-stripped word sets.
double sibling_similarity(std::string_view a, std::string_view b);

struct Admitted {
    NodeId id;
};
struct Rejected {
    RejectionReason reason;
};
using AdmissionResult = std::variant<Admitted, Rejected>;

/// Gates in fixed order: capacity, quality, sibling diversity. Logs the outcome.
AdmissionResult admit_candidate(MctsTree& tree, NodeId parent,
                                const GeneratedNodePayload& candidate, double score,
                                const MctsConfig& config);

/// n += 1 and running-mean update on `from` and every ancestor, leaf to root.
void backpropagate(MctsTree& tree, NodeId from, double reward);

struct PathRecord {
    std::array<NodeId, 3> node_ids;  // levels 1, 2, 3
    double mean_score = 0.0;

    bool operator==(const PathRecord&) const = default;
};

/// All complete paths ranked by mean quality score (descending, ties by node
/// ids lexicographically), truncated to k.
std::vector<PathRecord> extract_top_k(const MctsTree& tree, std::size_t k);

/// Rebuilds node state from `admitted` and `backprop` events alone.
MctsTree replay_event_log(const MctsConfig& config, std::span<const TreeEvent> events);

/// One generated candidate: a parsed payload or the reason it failed to parse.
struct Candidate {
    std::optional<GeneratedNodePayload> payload;
    std::string error;
    std::string raw_text;
};

class TreeSearch {
public:
    /// `parallel` bounds concurrent calls within a batch; order-sensitive
    /// backends always run sequentially.
    TreeSearch(ChatBackend& backend, MctsConfig config,
               const TemplateSet& templates = TemplateSet::builtin(), int parallel = 1);

    std::vector<Candidate> generate_candidates(const ImageRef& image, const MctsTree& tree,
                                               NodeId parent, std::size_t count) const;

    /// Judge score in [0, 1]. Throws EvaluationParseError.
    double score_candidate(const ImageRef& image, const MctsTree& tree, NodeId parent,
                           const GeneratedNodePayload& candidate) const;

    /// Iterates until the budget is spent or the tree saturates. Backend errors
    /// propagate and leave `tree` in its last consistent state.
    void run(MctsTree& tree, const ImageRef& image) const;
    MctsTree run_search(const ImageRef& image) const;

    const MctsConfig& config() const noexcept { return config_; }

private:
    int workers() const noexcept;

    ChatBackend& backend_;
    MctsConfig config_;
    const TemplateSet& templates_;
    int parallel_;
};

}  // namespace hvcu
