#pragma once

// Domain types shared by every pipeline: abstraction levels, QA pairs,
// benchmark items, judge verdicts and the generation configuration.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace hvcu {

/// Key order is preserved so writers emit records in a fixed, documented layout.
using Json = nlohmann::ordered_json;

enum class Level : int {
    Perception = 1,
    Bridge = 2,
    Connotation = 3,
};

inline constexpr std::array<Level, 3> kAllLevels{Level::Perception, Level::Bridge,
                                                 Level::Connotation};

constexpr int to_int(Level level) noexcept { return static_cast<int>(level); }

/// Throws InvariantError outside 1..3.
Level level_from_int(int value);
std::string_view level_name(Level level) noexcept;
std::optional<Level> level_from_name(std::string_view name) noexcept;

struct OptionEntry {
    std::string option_text;
    bool is_correct = false;

    bool operator==(const OptionEntry&) const = default;
};

enum class AnswerMode { MultipleChoice, OpenEnded };

std::string_view answer_mode_name(AnswerMode mode) noexcept;

struct QAPair {
    Level level = Level::Perception;
    std::string question;
    AnswerMode answer_mode = AnswerMode::MultipleChoice;
    std::vector<OptionEntry> options;  // multiple_choice only
    std::string answer_text;           // open_ended only
    std::optional<std::string> reasoning;

    /// Checked constructors; throw InvariantError listing every violation.
    static QAPair multiple_choice(Level level, std::string question,
                                  std::vector<OptionEntry> options,
                                  std::optional<std::string> reasoning = std::nullopt);
    static QAPair open_ended(Level level, std::string question, std::string answer,
                             std::optional<std::string> reasoning = std::nullopt);

    /// Index of the single correct option, if the pair is well formed.
    std::optional<std::size_t> correct_index() const;
    /// The text a judge should see as "Correct Answer".
    std::string correct_answer_text() const;

    bool operator==(const QAPair&) const = default;
};

enum class Task { Implication, Aesthetic, Affective };

inline constexpr std::array<Task, 3> kAllTasks{Task::Implication, Task::Aesthetic,
                                               Task::Affective};

std::string_view task_name(Task task) noexcept;
std::optional<Task> task_from_name(std::string_view name) noexcept;
/// Display label used in rendered tables ("Implication Understanding", ...).
std::string_view task_title(Task task) noexcept;

inline constexpr std::string_view kUnspecifiedAspect = "unspecified";

/// The fine-grained aspects of a task family, in canonical order.
std::span<const std::string_view> aspects_of(Task task) noexcept;
std::optional<Task> task_of_aspect(std::string_view aspect) noexcept;

struct ImageRef {
    std::string path_or_uri;
    std::string media_type;

    /// Infers media_type from the extension (falls back to application/octet-stream).
    static ImageRef from_path(std::string path);
    /// File name without directories and extension; used for derived ids.
    std::string stem() const;

    bool operator==(const ImageRef&) const = default;
};

std::string media_type_for(std::string_view path);

struct BenchmarkItem {
    std::string id;
    ImageRef image;
    Task task = Task::Implication;
    std::string aspect{kUnspecifiedAspect};
    std::vector<QAPair> levels;  // ascending, one per level
    std::optional<Json> provenance;

    const QAPair& at(Level level) const;

    bool operator==(const BenchmarkItem&) const = default;
};

/// Whether "unspecified" is acceptable as an aspect tag.
enum class AspectPolicy { Strict, AllowUnspecified };

struct ValidationVerdict {
    bool is_helpful = false;
    double confidence = 0.0;
    std::string reasoning;

    bool operator==(const ValidationVerdict&) const = default;
};

struct MctsConfig {
    double exploration_c = 2.0;
    int expansion_batch = 5;
    double quality_threshold = 0.65;
    double diversity_threshold = 0.75;
    std::array<int, 3> level_capacities{8, 12, 15};
    int max_depth = 3;
    int top_k = 10;
    int iteration_budget = 40;
    double generation_temperature = 0.9;
    double evaluation_temperature = 0.0;

    bool operator==(const MctsConfig&) const = default;
};

struct BenchConfig {
    int max_validation_attempts = 3;
    double base_temperature = 0.7;
    double temperature_step = 0.2;
    double temperature_cap = 1.2;
    double validation_temperature = 0.0;

    bool operator==(const BenchConfig&) const = default;
};

struct GenerationConfig {
    MctsConfig mcts;
    BenchConfig bench;

    bool operator==(const GenerationConfig&) const = default;
};

/// Violations of the QAPair invariants, each prefixed with `path`.
std::vector<std::string> validate_qa_pair(const QAPair& qa, std::string_view path = "qa");

/// Empty iff every BenchmarkItem invariant holds. Violations are data, never thrown.
std::vector<std::string> validate_benchmark_item(
    const BenchmarkItem& item, AspectPolicy policy = AspectPolicy::AllowUnspecified);

std::vector<std::string> validate_config(const GenerationConfig& config);

Json to_json(const MctsConfig& config);
Json to_json(const BenchConfig& config);
Json to_json(const GenerationConfig& config);

/// Layers `doc` over `base`: keys present in `doc` override, absent keys keep
/// their base value. Unknown keys throw InvariantError.
MctsConfig mcts_config_from_json(const Json& doc, MctsConfig base = {});
BenchConfig bench_config_from_json(const Json& doc, BenchConfig base = {});
GenerationConfig config_from_json(const Json& doc, GenerationConfig base = {});

/// "<image-stem>-<sequence>".
std::string derive_item_id(const ImageRef& image, int sequence);

/// Strips ASCII whitespace at both ends.
std::string trim(std::string_view text);

}  // namespace hvcu
