#include "hvcu/bench_gen.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "hvcu/errors.hpp"

namespace hvcu {

namespace {

std::string level_suffix(Level level) { return "l" + std::to_string(to_int(level)); }

Json verdict_json(const ValidationVerdict& v) {
    Json j;
    j["is_helpful"] = v.is_helpful;
    j["confidence"] = v.confidence;
    j["reasoning"] = v.reasoning;
    return j;
}

Json stage_record(int stage, Level level) {
    Json j;
    j["stage"] = stage;
    j["level"] = to_int(level);
    j["attempts"] = Json::array();
    return j;
}

Json attempt_record(int attempt, double temperature) {
    Json j;
    j["attempt"] = attempt;
    j["temperature"] = temperature;
    return j;
}

}  // namespace

std::vector<std::string> validate_raw_source(const RawSourceItem& raw) {
    std::vector<std::string> out;
    if (raw.image.path_or_uri.empty()) out.emplace_back("image: must be non-empty");
    if (trim(raw.question).empty()) out.emplace_back("question: must be non-empty");
    if (raw.options.size() < 4) {
        out.push_back("options: expected at least 4, found " + std::to_string(raw.options.size()));
    }
    for (std::size_t i = 0; i < raw.options.size(); ++i) {
        if (trim(raw.options[i]).empty()) {
            out.push_back("options[" + std::to_string(i) + "]: must be non-empty");
        }
    }
    return out;
}

double refinement_temperature(const BenchConfig& config, int attempt) noexcept {
    const double t = std::min(config.base_temperature + attempt * config.temperature_step,
                              config.temperature_cap);
    // Snap away accumulated binary error so 0.7 + 0.2 reads back as 0.9.
    return std::round(t * 1e9) / 1e9;
}

RefinementState RefinementState::initial(const BenchConfig& config) {
    return RefinementState{0, std::nullopt, refinement_temperature(config, 0)};
}

RefinementState RefinementState::after_failure(const BenchConfig& config,
                                               std::string reason) const {
    return RefinementState{attempt + 1, std::move(reason),
                           refinement_temperature(config, attempt + 1)};
}

std::string retry_guidance_text(const RefinementState& state) {
    if (!state.last_failure_reason) return {};
    return "- RETRY GUIDANCE: A previous attempt was rejected by validation for this reason: " +
           *state.last_failure_reason + "\n- Avoid repeating that flaw in the new question.";
}

ChainBuilder::ChainBuilder(ChatBackend& backend, BenchConfig config, const TemplateSet& templates)
    : backend_(backend), config_(config), templates_(templates) {
    const GenerationConfig probe{MctsConfig{}, config_};
    if (auto violations = validate_config(probe); !violations.empty()) {
        throw InvariantError(violations.front());
    }
}

QAPair ChainBuilder::synthesize_l3(const RawSourceItem& raw, double temperature) const {
    if (auto violations = validate_raw_source(raw); !violations.empty()) {
        throw PreconditionError("raw source: " + violations.front());
    }
    Json input;
    input["explanation"] = raw.explanation;
    input["question"] = raw.question;
    input["options"] = raw.options;
    const std::string prompt =
        templates_.render(TemplateId::BenchL3Analysis, {{"json_data", input.dump(2)}});

    const auto response =
        backend_.complete(make_user_request(prompt, &raw.image, temperature, "bench-gen-l3"));

    QAPair l3;
    try {
        l3 = parse_mc_payload(response.text, Level::Connotation);
    } catch (const ParseError& e) {
        throw GenerationContractError(std::string("level-3 response: ") + e.what());
    }
    if (l3.question != trim(raw.question)) {
        throw GenerationContractError("level-3 response altered the question text");
    }
    for (const auto& option : l3.options) {
        const bool known = std::any_of(raw.options.begin(), raw.options.end(),
                                       [&](const std::string& o) { return trim(o) == option.option_text; });
        if (!known) {
            throw GenerationContractError("level-3 option '" + option.option_text +
                                          "' is not among the source options");
        }
    }
    for (std::size_t i = 0; i < l3.options.size(); ++i) {
        for (std::size_t j = i + 1; j < l3.options.size(); ++j) {
            if (l3.options[i].option_text == l3.options[j].option_text) {
                throw GenerationContractError("level-3 options repeat '" +
                                              l3.options[i].option_text + "'");
            }
        }
    }
    return l3;
}

QAPair ChainBuilder::formulate_l2(const ImageRef& image, const std::string& explanation,
                                  const QAPair& l3, const RefinementState& state) const {
    if (l3.level != Level::Connotation) throw PreconditionError("formulate_l2 needs a level-3 pair");
    const std::string prompt =
        templates_.render(TemplateId::BenchL2Gen,
                          {{"retry_guidance", retry_guidance_text(state)},
                           {"explanation_text", Json(explanation).dump()},
                           {"level_3_data", mc_payload_json(l3).dump(2)}});
    const auto response =
        backend_.complete(make_user_request(prompt, &image, state.temperature, "bench-gen-l2"));
    try {
        return parse_mc_payload(response.text, Level::Bridge);
    } catch (const ParseError& e) {
        throw GenerationContractError(std::string("level-2 response: ") + e.what());
    }
}

QAPair ChainBuilder::ground_l1(const ImageRef& image, const std::string& explanation,
                               const QAPair& l3, const QAPair& l2,
                               const RefinementState& state) const {
    if (l3.level != Level::Connotation || l2.level != Level::Bridge) {
        throw PreconditionError("ground_l1 needs level-3 and level-2 pairs");
    }
    const std::string prompt =
        templates_.render(TemplateId::BenchL1Gen,
                          {{"retry_guidance", retry_guidance_text(state)},
                           {"explanation_text", Json(explanation).dump()},
                           {"level_3_data", mc_payload_json(l3).dump(2)},
                           {"level_2_data", mc_payload_json(l2).dump(2)}});
    const auto response =
        backend_.complete(make_user_request(prompt, &image, state.temperature, "bench-gen-l1"));
    try {
        return parse_mc_payload(response.text, Level::Perception);
    } catch (const ParseError& e) {
        throw GenerationContractError(std::string("level-1 response: ") + e.what());
    }
}

ValidationVerdict ChainBuilder::validate_support(const ImageRef& image, const QAPair& lower,
                                                 const QAPair& higher) const {
    if (to_int(lower.level) + 1 != to_int(higher.level)) {
        throw PreconditionError("validate_support needs adjacent levels, got " +
                                std::to_string(to_int(lower.level)) + " and " +
                                std::to_string(to_int(higher.level)));
    }
    const TemplateId id =
        lower.level == Level::Perception ? TemplateId::ValidateL1L2 : TemplateId::ValidateL2L3;
    const std::string lo = level_suffix(lower.level);
    const std::string hi = level_suffix(higher.level);
    const std::string prompt = templates_.render(id, {{"question_" + lo, lower.question},
                                                      {"answer_" + lo, lower.correct_answer_text()},
                                                      {"question_" + hi, higher.question},
                                                      {"answer_" + hi, higher.correct_answer_text()}});
    const auto response = backend_.complete(make_user_request(
        prompt, &image, config_.validation_temperature, "validate-" + lo + "-" + hi));
    try {
        return parse_validation(response.text);
    } catch (const ParseError& e) {
        throw ValidationParseError(std::string("validation response: ") + e.what());
    }
}

ChainResult ChainBuilder::build_chain(const RawSourceItem& raw, const ItemLabels& labels) const {
    Json provenance;
    provenance["stages"] = Json::array();
    const int max_attempts = config_.max_validation_attempts;

    // Stage 1: connotation. Only the response contract can fail here.
    Json stage1 = stage_record(1, Level::Connotation);
    std::optional<QAPair> l3;
    std::string last_reason;
    for (int attempt = 0; attempt < max_attempts && !l3; ++attempt) {
        const double temperature = refinement_temperature(config_, attempt);
        Json record = attempt_record(attempt, temperature);
        try {
            l3 = synthesize_l3(raw, temperature);
            record["candidate"] = mc_payload_json(*l3);
            record["outcome"] = "accepted";
        } catch (const GenerationContractError& e) {
            last_reason = e.what();
            record["outcome"] = "contract_error";
            record["failure_reason"] = last_reason;
        }
        stage1["attempts"].push_back(std::move(record));
    }
    provenance["stages"].push_back(stage1);
    if (!l3) {
        return ChainFailure{1, Level::Connotation, max_attempts, last_reason, provenance};
    }

    // Stages 2 and 3 share the generate/validate/refine loop.
    auto run_stage = [&](int stage, Level level, auto&& generate,
                         const QAPair& higher) -> std::optional<QAPair> {
        Json record_stage = stage_record(stage, level);
        auto state = RefinementState::initial(config_);
        std::optional<QAPair> accepted;
        for (int attempt = 0; attempt < max_attempts; ++attempt) {
            Json record = attempt_record(attempt, state.temperature);
            if (state.last_failure_reason) record["retry_reason"] = *state.last_failure_reason;
            std::string reason;
            try {
                QAPair candidate = generate(state);
                record["candidate"] = mc_payload_json(candidate);
                try {
                    const auto verdict = validate_support(raw.image, candidate, higher);
                    record["verdict"] = verdict_json(verdict);
                    if (verdict.is_helpful) {
                        record["outcome"] = "accepted";
                        accepted = std::move(candidate);
                    } else {
                        reason = trim(verdict.reasoning).empty() ? "validation failed"
                                                                 : verdict.reasoning;
                        record["outcome"] = "rejected";
                    }
                } catch (const ValidationParseError&) {
                    reason = std::string(kUnparseableJudgeReason);
                    record["outcome"] = "judge_unparseable";
                }
            } catch (const GenerationContractError& e) {
                reason = e.what();
                record["outcome"] = "contract_error";
            }
            if (!reason.empty()) record["failure_reason"] = reason;
            record_stage["attempts"].push_back(std::move(record));
            if (accepted) break;

            spdlog::debug("chain {} stage {} attempt {} failed: {}", labels.id, stage, attempt,
                          reason);
            last_reason = reason;
            state = state.after_failure(config_, reason);
        }
        provenance["stages"].push_back(std::move(record_stage));
        return accepted;
    };

    const auto l2 = run_stage(
        2, Level::Bridge,
        [&](const RefinementState& s) { return formulate_l2(raw.image, raw.explanation, *l3, s); },
        *l3);
    if (!l2) return ChainFailure{2, Level::Bridge, max_attempts, last_reason, provenance};

    const auto l1 = run_stage(
        3, Level::Perception,
        [&](const RefinementState& s) {
            return ground_l1(raw.image, raw.explanation, *l3, *l2, s);
        },
        *l2);
    if (!l1) return ChainFailure{3, Level::Perception, max_attempts, last_reason, provenance};

    BenchmarkItem item;
    item.id = labels.id;
    item.image = raw.image;
    item.task = labels.task;
    item.aspect = labels.aspect;
    item.levels = {*l1, *l2, *l3};
    item.provenance = std::move(provenance);
    return item;
}

}  // namespace hvcu
