#pragma once

// Prompt templates for generation, validation, node evaluation and model
// evaluation, plus parsers for each prompt's JSON response contract.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hvcu/core.hpp"

namespace hvcu {

enum class TemplateId {
    BenchL3Analysis,
    BenchL2Gen,
    BenchL1Gen,
    ValidateL2L3,
    ValidateL1L2,
    MctsL1Gen,
    MctsL2Gen,
    MctsL3Gen,
    MctsEval,
    EvalQuestionBase,
    EvalQuestionContext,
};

inline constexpr std::array<TemplateId, 11> kAllTemplates{
    TemplateId::BenchL3Analysis, TemplateId::BenchL2Gen,       TemplateId::BenchL1Gen,
    TemplateId::ValidateL2L3,    TemplateId::ValidateL1L2,     TemplateId::MctsL1Gen,
    TemplateId::MctsL2Gen,       TemplateId::MctsL3Gen,        TemplateId::MctsEval,
    TemplateId::EvalQuestionBase, TemplateId::EvalQuestionContext,
};

/// Stable key, e.g. "bench_l3_analysis"; also the override file stem.
std::string_view template_key(TemplateId id) noexcept;
/// Throws UnknownTemplate.
TemplateId template_from_key(std::string_view key);

/// Generation template for a child at `level` (mcts_l1_gen ... mcts_l3_gen).
TemplateId mcts_generation_template(Level level) noexcept;

std::string_view builtin_template(TemplateId id) noexcept;

using Bindings = std::map<std::string, std::string, std::less<>>;

/// Distinct `{name}` placeholders (lowercase identifiers) in order of first use.
std::vector<std::string> find_placeholders(std::string_view text);

/// Single-pass substitution: bound values are never re-scanned. Throws
/// MissingBinding for the first placeholder without a binding.
std::string render_text(std::string_view text, const Bindings& bindings);

class TemplateSet {
public:
    /// The built-in templates.
    TemplateSet();

    /// Built-ins with any `<template_key>.txt` files in `dir` substituted.
    static TemplateSet with_overrides(const std::filesystem::path& dir);
    static const TemplateSet& builtin();

    const std::string& text(TemplateId id) const;
    std::vector<std::string> placeholders(TemplateId id) const;

    std::string render(TemplateId id, const Bindings& bindings) const;
    std::string render(std::string_view key, const Bindings& bindings) const;

private:
    std::map<TemplateId, std::string> texts_;
};

// ---------------------------------------------------------------------------
// level vocabulary used in bindings

std::string_view level_description(Level level) noexcept;
std::string_view difficulty_guidance(Level level) noexcept;

// ---------------------------------------------------------------------------
// response parsing

/// The first balanced top-level JSON object in `text`, preferring the inside of
/// a ``` fence when one exists. Throws NoJsonFound or MalformedJson.
Json extract_json(std::string_view text);

struct GeneratedNodePayload {
    std::string question;
    std::string answer;
    std::string reasoning;

    bool operator==(const GeneratedNodePayload&) const = default;
};

struct EvaluationPayload {
    double quality_score = 0.0;
    std::string reasoning;
};

/// Maximum answer length in words (30 / 40 / 50).
std::size_t word_cap(Level level) noexcept;
/// Whitespace-delimited token count.
std::size_t count_words(std::string_view text) noexcept;

GeneratedNodePayload parse_node_payload(std::string_view text, std::optional<Level> level);
ValidationVerdict parse_validation(std::string_view text);
EvaluationPayload parse_evaluation(std::string_view text);

/// Multiple-choice QA object (the bench generation contract): question,
/// exactly four options with one is_correct, optional reasoning, and a
/// "level" field that must match `expected` when present. Option texts are trimmed.
QAPair parse_mc_payload(std::string_view text, Level expected);

/// The JSON handed to templates for an existing multiple-choice pair.
Json mc_payload_json(const QAPair& qa);

}  // namespace hvcu
