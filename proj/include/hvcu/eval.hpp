#pragma once

// Hierarchical evaluation: ask each level of a benchmark chain, parse the
// chosen letter, and aggregate per-level, full-chain and overall accuracy.

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hvcu/core.hpp"
#include "hvcu/model_client.hpp"
#include "hvcu/prompts.hpp"

namespace hvcu {

enum class EvalSetting { Base, Context };

std::string_view setting_name(EvalSetting setting) noexcept;
std::optional<EvalSetting> setting_from_name(std::string_view name) noexcept;

/// Rule-based choice extraction, first matching rule wins:
///   1. a standalone A-D at the start ("B", "(B)", "B.", "B:", "B)")
///   2. "answer is X" / "answer: X" (keyword case-insensitive, letter uppercase)
///   3. exactly one option's full text appears in the response (case-insensitive)
/// std::nullopt means unparseable.
std::optional<char> parse_choice(std::string_view text, std::span<const OptionEntry> options);

/// "A. first option\nB. ..." in stored order.
std::string format_options(const QAPair& qa);

struct LevelOutcome {
    Level level = Level::Perception;
    std::string raw_response;
    std::optional<char> parsed_choice;
    bool correct = false;
    std::optional<std::string> context_block;

    bool operator==(const LevelOutcome&) const = default;
};

struct ChainOutcome {
    std::string item_id;
    Task task = Task::Implication;
    std::string aspect;
    EvalSetting setting = EvalSetting::Base;
    std::array<LevelOutcome, 3> outcomes;
    bool full_correct = false;

    bool operator==(const ChainOutcome&) const = default;
};

class Evaluator {
public:
    explicit Evaluator(ChatBackend& backend, const TemplateSet& templates = TemplateSet::builtin());

    /// One question at temperature 0, with the context block when given.
    LevelOutcome ask_level(const ImageRef& image, const QAPair& qa,
                           const std::optional<std::string>& context_block) const;

    /// Levels always run 1 -> 2 -> 3. In the context setting, level k sees the
    /// earlier questions with the model's own predicted answers.
    ChainOutcome evaluate_chain(const BenchmarkItem& item, EvalSetting setting) const;

    std::string render_question(const QAPair& qa,
                                const std::optional<std::string>& context_block) const;

private:
    ChatBackend& backend_;
    const TemplateSet& templates_;
};

/// One prior-level line pair for a context block.
std::string context_entry(const QAPair& qa, const LevelOutcome& outcome);
inline constexpr std::string_view kContextHeader =
    "Earlier questions about this image and your answers:";

struct LevelAccuracy {
    std::size_t n_items = 0;
    double acc_perc = 0.0;
    double acc_bridge = 0.0;
    double acc_conn = 0.0;
    double acc_full = 0.0;
};

struct TaskMetrics {
    Task task = Task::Implication;
    std::size_t n_items = 0;
    double acc_perc = 0.0;  // percentages in [0, 100], unrounded
    double acc_bridge = 0.0;
    double acc_conn = 0.0;
    double acc_full = 0.0;
    std::map<std::string, LevelAccuracy> per_aspect;
};

/// Round half away from zero at `decimals` places, tolerating binary error.
double round_half_up(double value, int decimals = 2) noexcept;

/// Throws EmptyInput for no outcomes and PreconditionError for mixed tasks.
TaskMetrics compute_task_metrics(std::span<const ChainOutcome> outcomes);

/// Unweighted mean of acc_full over the three tasks. Throws MissingTask.
double overall_score(std::span<const TaskMetrics> metrics);

struct Report {
    EvalSetting setting = EvalSetting::Base;
    std::vector<TaskMetrics> per_task;  // canonical task order, present tasks only
    std::map<std::string, LevelAccuracy> per_aspect;
    std::optional<double> overall;  // unrounded
    std::vector<Task> missing_tasks;
};

/// Groups outcomes of a single setting by task. Throws EmptyInput / PreconditionError.
Report build_report(std::span<const ChainOutcome> outcomes);

Json report_to_json(const Report& report);
/// Fixed-width table: per task Acc_perc / Acc_bridge / Acc_conn / Acc_full, then Score.
std::string render_table(const Report& report);

}  // namespace hvcu
