#pragma once

// Top-down benchmark construction: connotation first, then the semantic
// bridge, then perception, each lower level checked against the level above
// it by a judge and regenerated with the judge's reason and a hotter sampling
// temperature when the check fails.

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "hvcu/core.hpp"
#include "hvcu/model_client.hpp"
#include "hvcu/prompts.hpp"

namespace hvcu {

struct RawSourceItem {
    ImageRef image;
    std::string explanation;
    std::string question;
    std::vector<std::string> options;
    // Optional labels carried through to the emitted item.
    std::optional<std::string> id;
    std::optional<Task> task;
    std::optional<std::string> aspect;
};

std::vector<std::string> validate_raw_source(const RawSourceItem& raw);

/// min(base + attempt * step, cap)
double refinement_temperature(const BenchConfig& config, int attempt) noexcept;

struct RefinementState {
    int attempt = 0;
    std::optional<std::string> last_failure_reason;
    double temperature = 0.0;

    static RefinementState initial(const BenchConfig& config);
    /// The state for the retry that follows a failure with `reason`.
    RefinementState after_failure(const BenchConfig& config, std::string reason) const;
};

/// Text bound to {retry_guidance}; empty on a first attempt, otherwise it quotes
/// the failure reason verbatim.
std::string retry_guidance_text(const RefinementState& state);

struct ItemLabels {
    std::string id;
    Task task = Task::Implication;
    std::string aspect{kUnspecifiedAspect};
};

struct ChainFailure {
    int stage = 0;  // 1: connotation, 2: semantic bridge, 3: perception
    Level level = Level::Connotation;
    int attempts = 0;
    std::string last_reason;
    Json provenance;
};

using ChainResult = std::variant<BenchmarkItem, ChainFailure>;

inline constexpr std::string_view kUnparseableJudgeReason = "judge response unparseable";

class ChainBuilder {
public:
    ChainBuilder(ChatBackend& backend, BenchConfig config,
                 const TemplateSet& templates = TemplateSet::builtin());

    /// Stage 1. Throws GenerationContractError when the response breaks the
    /// four-option or identical-question rules or uses options not in `raw`.
    QAPair synthesize_l3(const RawSourceItem& raw, double temperature) const;

    /// Stage 2 generation at `state.temperature`.
    QAPair formulate_l2(const ImageRef& image, const std::string& explanation, const QAPair& l3,
                        const RefinementState& state) const;

    /// Stage 3 generation conditioned on both higher levels.
    QAPair ground_l1(const ImageRef& image, const std::string& explanation, const QAPair& l3,
                     const QAPair& l2, const RefinementState& state) const;

    /// Judges whether `lower` supports `higher`. Requires adjacent levels.
    /// Throws ValidationParseError when the judge response is unusable.
    ValidationVerdict validate_support(const ImageRef& image, const QAPair& lower,
                                       const QAPair& higher) const;

    /// Runs the three stages. The returned item's provenance records every attempt.
    ChainResult build_chain(const RawSourceItem& raw, const ItemLabels& labels) const;

    const BenchConfig& config() const noexcept { return config_; }

private:
    ChatBackend& backend_;
    BenchConfig config_;
    const TemplateSet& templates_;
};

}  // namespace hvcu
