#include "hvcu/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "hvcu/errors.hpp"

namespace hvcu {

namespace {

constexpr std::array<std::string_view, 11> kTemplateKeys{
    "bench_l3_analysis", "bench_l2_gen",  "bench_l1_gen", "validate_l2_l3",
    "validate_l1_l2",    "mcts_l1_gen",   "mcts_l2_gen",  "mcts_l3_gen",
    "mcts_eval",         "eval_question_base", "eval_question_context",
};

bool is_ident_start(char c) { return (c >= 'a' && c <= 'z') || c == '_'; }
bool is_ident_char(char c) { return is_ident_start(c) || (c >= '0' && c <= '9'); }

/// Length of a `{identifier}` token starting at `pos`, or 0.
std::size_t placeholder_at(std::string_view text, std::size_t pos) {
    if (text[pos] != '{' || pos + 2 >= text.size() || !is_ident_start(text[pos + 1])) return 0;
    std::size_t end = pos + 1;
    while (end < text.size() && is_ident_char(text[end])) ++end;
    if (end >= text.size() || text[end] != '}') return 0;
    return end - pos + 1;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::string_view template_key(TemplateId id) noexcept {
    return kTemplateKeys[static_cast<std::size_t>(id)];
}

TemplateId template_from_key(std::string_view key) {
    for (TemplateId id : kAllTemplates) {
        if (template_key(id) == key) return id;
    }
    throw UnknownTemplate("unknown template '" + std::string(key) + "'");
}

TemplateId mcts_generation_template(Level level) noexcept {
    switch (level) {
        case Level::Perception: return TemplateId::MctsL1Gen;
        case Level::Bridge: return TemplateId::MctsL2Gen;
        case Level::Connotation: return TemplateId::MctsL3Gen;
    }
    return TemplateId::MctsL1Gen;
}

std::vector<std::string> find_placeholders(std::string_view text) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (auto len = placeholder_at(text, i)) {
            std::string name(text.substr(i + 1, len - 2));
            if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
            i += len - 1;
        }
    }
    return out;
}

std::string render_text(std::string_view text, const Bindings& bindings) {
    std::string out;
    out.reserve(text.size() + 256);
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (auto len = placeholder_at(text, i)) {
            const auto name = text.substr(i + 1, len - 2);
            auto it = bindings.find(name);
            if (it == bindings.end()) throw MissingBinding(std::string(name));
            out += it->second;
            i += len - 1;
        } else {
            out += text[i];
        }
    }
    return out;
}

TemplateSet::TemplateSet() {
    for (TemplateId id : kAllTemplates) texts_.emplace(id, std::string(builtin_template(id)));
}

TemplateSet TemplateSet::with_overrides(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("templates directory " + dir.string() + " does not exist");
    }
    TemplateSet set;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
        const TemplateId id = template_from_key(entry.path().stem().string());
        set.texts_[id] = read_file(entry.path());
    }
    return set;
}

const TemplateSet& TemplateSet::builtin() {
    static const TemplateSet set;
    return set;
}

const std::string& TemplateSet::text(TemplateId id) const { return texts_.at(id); }

std::vector<std::string> TemplateSet::placeholders(TemplateId id) const {
    return find_placeholders(text(id));
}

std::string TemplateSet::render(TemplateId id, const Bindings& bindings) const {
    return render_text(text(id), bindings);
}

std::string TemplateSet::render(std::string_view key, const Bindings& bindings) const {
    return render(template_from_key(key), bindings);
}

std::string_view level_description(Level level) noexcept {
    switch (level) {
        case Level::Perception: return "basic perception";
        case Level::Bridge: return "connection and comprehensive understanding";
        case Level::Connotation: return "high-level abstract reasoning";
    }
    return "";
}

std::string_view difficulty_guidance(Level level) noexcept {
    switch (level) {
        case Level::Perception: return "straightforward and clearly observable";
        case Level::Bridge: return "requires linking two facts";
        case Level::Connotation: return "requires abstract inference";
    }
    return "";
}

// ---------------------------------------------------------------------------

namespace {

/// End offset (exclusive) of the balanced object starting at `start`, or npos.
std::size_t balanced_end(std::string_view text, std::size_t start) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) return i + 1;
        }
    }
    return std::string_view::npos;
}

struct ScanFailure {
    std::size_t offset;
    std::string message;
};

std::optional<Json> scan_region(std::string_view text, std::size_t base,
                                std::optional<ScanFailure>& first_failure) {
    for (std::size_t pos = text.find('{'); pos != std::string_view::npos;
         pos = text.find('{', pos + 1)) {
        const auto end = balanced_end(text, pos);
        if (end == std::string_view::npos) {
            if (!first_failure) first_failure = ScanFailure{base + pos, "unbalanced JSON object"};
            continue;
        }
        try {
            return Json::parse(text.substr(pos, end - pos));
        } catch (const Json::parse_error& e) {
            if (!first_failure) {
                const std::size_t at = e.byte > 0 ? e.byte - 1 : 0;
                first_failure = ScanFailure{base + pos + at, "malformed JSON object"};
            }
        }
    }
    return std::nullopt;
}

}  // namespace

Json extract_json(std::string_view text) {
    if (text.find('{') == std::string_view::npos) throw NoJsonFound();
    std::optional<ScanFailure> failure;

    // Fenced blocks first.
    for (std::size_t open = text.find("```"); open != std::string_view::npos;) {
        std::size_t body = text.find('\n', open + 3);
        if (body == std::string_view::npos) break;
        ++body;
        const std::size_t close = text.find("```", body);
        if (close == std::string_view::npos) break;
        if (auto found = scan_region(text.substr(body, close - body), body, failure)) {
            return *found;
        }
        open = text.find("```", close + 3);
    }

    if (auto found = scan_region(text, 0, failure)) return *found;
    throw MalformedJson(failure ? failure->message : "malformed JSON",
                        failure ? failure->offset : 0);
}

std::size_t word_cap(Level level) noexcept {
    switch (level) {
        case Level::Perception: return 30;
        case Level::Bridge: return 40;
        case Level::Connotation: return 50;
    }
    return 0;
}

std::size_t count_words(std::string_view text) noexcept {
    std::size_t n = 0;
    bool in_word = false;
    for (char c : text) {
        const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
        if (!space && !in_word) ++n;
        in_word = !space;
    }
    return n;
}

namespace {

const Json& require(const Json& obj, const char* field) {
    auto it = obj.find(field);
    if (it == obj.end()) throw SchemaError(field, "missing");
    return *it;
}

std::string require_string(const Json& obj, const char* field, bool non_empty) {
    const auto& v = require(obj, field);
    if (!v.is_string()) throw SchemaError(field, "expected a string");
    auto s = v.get<std::string>();
    if (non_empty && trim(s).empty()) throw SchemaError(field, "must be non-empty");
    return s;
}

double require_unit(const Json& obj, const char* field) {
    const auto& v = require(obj, field);
    if (!v.is_number()) throw SchemaError(field, "expected a number");
    const double x = v.get<double>();
    if (!(x >= 0.0 && x <= 1.0)) throw RangeError(field, x);
    return x;
}

Json require_object(std::string_view text) {
    Json doc = extract_json(text);
    if (!doc.is_object()) throw SchemaError("$", "expected a JSON object");
    return doc;
}

}  // namespace

GeneratedNodePayload parse_node_payload(std::string_view text, std::optional<Level> level) {
    const Json doc = require_object(text);
    GeneratedNodePayload p;
    p.question = trim(require_string(doc, "question", true));
    p.answer = trim(require_string(doc, "answer", true));
    p.reasoning = require_string(doc, "reasoning", false);
    if (level) {
        const auto words = count_words(p.answer);
        if (words > word_cap(*level)) throw CapExceeded(to_int(*level), words);
    }
    return p;
}

ValidationVerdict parse_validation(std::string_view text) {
    const Json doc = require_object(text);
    ValidationVerdict v;
    const auto& helpful = require(doc, "is_helpful");
    if (!helpful.is_boolean()) throw SchemaError("is_helpful", "expected a boolean");
    v.is_helpful = helpful.get<bool>();
    v.confidence = require_unit(doc, "confidence");
    v.reasoning = require_string(doc, "reasoning", false);
    return v;
}

EvaluationPayload parse_evaluation(std::string_view text) {
    const Json doc = require_object(text);
    EvaluationPayload e;
    e.quality_score = require_unit(doc, "quality_score");
    e.reasoning = require_string(doc, "reasoning", false);
    return e;
}

QAPair parse_mc_payload(std::string_view text, Level expected) {
    const Json doc = require_object(text);
    if (auto it = doc.find("level"); it != doc.end()) {
        if (!it->is_number_integer() || it->get<int>() != to_int(expected)) {
            throw SchemaError("level", "expected " + std::to_string(to_int(expected)));
        }
    }
    std::string question = trim(require_string(doc, "question", true));

    const auto& options = require(doc, "options");
    if (!options.is_array()) throw SchemaError("options", "expected an array");
    if (options.size() != 4) {
        throw SchemaError("options",
                          "expected exactly 4 options, found " + std::to_string(options.size()));
    }
    std::vector<OptionEntry> entries;
    int correct = 0;
    for (std::size_t i = 0; i < options.size(); ++i) {
        const auto& o = options[i];
        const std::string field = "options[" + std::to_string(i) + "]";
        if (!o.is_object()) throw SchemaError(field, "expected an object");
        const auto text_it = o.find("option_text");
        if (text_it == o.end() || !text_it->is_string()) {
            throw SchemaError(field + ".option_text", "expected a string");
        }
        const auto correct_it = o.find("is_correct");
        if (correct_it == o.end() || !correct_it->is_boolean()) {
            throw SchemaError(field + ".is_correct", "expected a boolean");
        }
        OptionEntry entry{trim(text_it->get<std::string>()), correct_it->get<bool>()};
        if (entry.option_text.empty()) throw SchemaError(field + ".option_text", "empty");
        correct += entry.is_correct ? 1 : 0;
        entries.push_back(std::move(entry));
    }
    if (correct != 1) {
        throw SchemaError("options",
                          "expected exactly 1 correct option, found " + std::to_string(correct));
    }

    std::optional<std::string> reasoning;
    if (auto it = doc.find("reasoning"); it != doc.end()) {
        if (!it->is_string()) throw SchemaError("reasoning", "expected a string");
        reasoning = it->get<std::string>();
    }
    return QAPair::multiple_choice(expected, std::move(question), std::move(entries),
                                   std::move(reasoning));
}

Json mc_payload_json(const QAPair& qa) {
    Json j;
    j["level"] = to_int(qa.level);
    j["level_name"] = level_name(qa.level);
    j["question"] = qa.question;
    Json options = Json::array();
    for (const auto& o : qa.options) {
        options.push_back({{"option_text", o.option_text}, {"is_correct", o.is_correct}});
    }
    j["options"] = std::move(options);
    if (qa.reasoning) j["reasoning"] = *qa.reasoning;
    return j;
}

}  // namespace hvcu
