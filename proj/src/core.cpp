#include "hvcu/core.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>

#include "hvcu/errors.hpp"

namespace hvcu {

namespace {

constexpr std::array<std::string_view, 5> kImplicationAspects{
    "metaphor", "symbolism", "contrast", "exaggeration", "dislocation"};
constexpr std::array<std::string_view, 4> kAestheticAspects{"color", "composition", "font",
                                                            "graphics"};
constexpr std::array<std::string_view, 6> kAffectiveAspects{"joy",  "affection", "wonder",
                                                            "anger", "fear",     "sadness"};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

}  // namespace

Level level_from_int(int value) {
    if (value < 1 || value > 3) {
        throw InvariantError("abstraction level must be 1, 2 or 3, got " + std::to_string(value));
    }
    return static_cast<Level>(value);
}

std::string_view level_name(Level level) noexcept {
    switch (level) {
        case Level::Perception: return "Perception";
        case Level::Bridge: return "Semantic Bridge (Comprehensive Understanding)";
        case Level::Connotation: return "Connotation";
    }
    return "";
}

std::optional<Level> level_from_name(std::string_view name) noexcept {
    for (Level level : kAllLevels) {
        if (level_name(level) == name) return level;
    }
    return std::nullopt;
}

std::string_view answer_mode_name(AnswerMode mode) noexcept {
    return mode == AnswerMode::MultipleChoice ? "multiple_choice" : "open_ended";
}

std::string trim(std::string_view text) {
    std::size_t begin = 0;
    std::size_t end = text.size();
    while (begin < end && is_space(text[begin])) ++begin;
    while (end > begin && is_space(text[end - 1])) --end;
    return std::string(text.substr(begin, end - begin));
}

// ---------------------------------------------------------------------------

QAPair QAPair::multiple_choice(Level level, std::string question,
                               std::vector<OptionEntry> options,
                               std::optional<std::string> reasoning) {
    QAPair qa;
    qa.level = level;
    qa.question = std::move(question);
    qa.answer_mode = AnswerMode::MultipleChoice;
    qa.options = std::move(options);
    qa.reasoning = std::move(reasoning);
    if (auto violations = validate_qa_pair(qa); !violations.empty()) {
        throw InvariantError(join(violations, "; "));
    }
    return qa;
}

QAPair QAPair::open_ended(Level level, std::string question, std::string answer,
                          std::optional<std::string> reasoning) {
    QAPair qa;
    qa.level = level;
    qa.question = std::move(question);
    qa.answer_mode = AnswerMode::OpenEnded;
    qa.answer_text = std::move(answer);
    qa.reasoning = std::move(reasoning);
    if (auto violations = validate_qa_pair(qa); !violations.empty()) {
        throw InvariantError(join(violations, "; "));
    }
    return qa;
}

std::optional<std::size_t> QAPair::correct_index() const {
    std::optional<std::size_t> found;
    for (std::size_t i = 0; i < options.size(); ++i) {
        if (!options[i].is_correct) continue;
        if (found) return std::nullopt;
        found = i;
    }
    return found;
}

std::string QAPair::correct_answer_text() const {
    if (answer_mode == AnswerMode::OpenEnded) return answer_text;
    if (auto idx = correct_index()) return options[*idx].option_text;
    return {};
}

// ---------------------------------------------------------------------------

std::string_view task_name(Task task) noexcept {
    switch (task) {
        case Task::Implication: return "implication";
        case Task::Aesthetic: return "aesthetic";
        case Task::Affective: return "affective";
    }
    return "";
}

std::string_view task_title(Task task) noexcept {
    switch (task) {
        case Task::Implication: return "Implication Understanding";
        case Task::Aesthetic: return "Aesthetic Appreciation";
        case Task::Affective: return "Affective Reasoning";
    }
    return "";
}

std::optional<Task> task_from_name(std::string_view name) noexcept {
    for (Task task : kAllTasks) {
        if (task_name(task) == name) return task;
    }
    return std::nullopt;
}

std::span<const std::string_view> aspects_of(Task task) noexcept {
    switch (task) {
        case Task::Implication: return kImplicationAspects;
        case Task::Aesthetic: return kAestheticAspects;
        case Task::Affective: return kAffectiveAspects;
    }
    return {};
}

std::optional<Task> task_of_aspect(std::string_view aspect) noexcept {
    for (Task task : kAllTasks) {
        auto aspects = aspects_of(task);
        if (std::find(aspects.begin(), aspects.end(), aspect) != aspects.end()) return task;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------

std::string media_type_for(std::string_view path) {
    std::string ext = std::filesystem::path(std::string(path)).extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".gif") return "image/gif";
    if (ext == ".webp") return "image/webp";
    if (ext == ".bmp") return "image/bmp";
    return "application/octet-stream";
}

ImageRef ImageRef::from_path(std::string path) {
    ImageRef ref;
    ref.media_type = media_type_for(path);
    ref.path_or_uri = std::move(path);
    return ref;
}

std::string ImageRef::stem() const {
    std::string_view uri = path_or_uri;
    if (auto q = uri.find_first_of("?#"); q != std::string_view::npos) uri = uri.substr(0, q);
    auto stem = std::filesystem::path(std::string(uri)).stem().string();
    return stem.empty() ? std::string("image") : stem;
}

std::string derive_item_id(const ImageRef& image, int sequence) {
    return image.stem() + "-" + std::to_string(sequence);
}

const QAPair& BenchmarkItem::at(Level level) const {
    for (const auto& qa : levels) {
        if (qa.level == level) return qa;
    }
    throw PreconditionError("item " + id + " has no level " + std::to_string(to_int(level)));
}

// ---------------------------------------------------------------------------

std::vector<std::string> validate_qa_pair(const QAPair& qa, std::string_view path) {
    std::vector<std::string> out;
    const std::string p(path);
    if (to_int(qa.level) < 1 || to_int(qa.level) > 3) {
        out.push_back(p + ".level: must be 1, 2 or 3");
    }
    if (trim(qa.question).empty()) out.push_back(p + ".question: must be non-empty");

    if (qa.answer_mode == AnswerMode::MultipleChoice) {
        if (qa.options.size() != 4) {
            out.push_back(p + ": expected exactly 4 options, found " +
                          std::to_string(qa.options.size()));
        }
        const auto correct = std::count_if(qa.options.begin(), qa.options.end(),
                                           [](const OptionEntry& o) { return o.is_correct; });
        if (correct != 1) {
            out.push_back(p + ": expected exactly 1 correct option, found " +
                          std::to_string(correct));
        }
        for (std::size_t i = 0; i < qa.options.size(); ++i) {
            const auto& text = qa.options[i].option_text;
            if (text.empty()) {
                out.push_back(p + ".options[" + std::to_string(i) + "]: option_text is empty");
            } else if (trim(text) != text) {
                out.push_back(p + ".options[" + std::to_string(i) +
                              "]: option_text has leading/trailing whitespace");
            }
        }
        if (!qa.answer_text.empty()) {
            out.push_back(p + ".answer_text: must be absent for multiple_choice");
        }
    } else {
        if (!qa.options.empty()) out.push_back(p + ".options: must be absent for open_ended");
        if (trim(qa.answer_text).empty()) {
            out.push_back(p + ".answer_text: must be non-empty for open_ended");
        }
    }
    return out;
}

std::vector<std::string> validate_benchmark_item(const BenchmarkItem& item, AspectPolicy policy) {
    std::vector<std::string> out;
    if (trim(item.id).empty()) out.emplace_back("id: must be non-empty");
    if (item.image.path_or_uri.empty()) out.emplace_back("image.path_or_uri: must be non-empty");

    if (item.aspect == kUnspecifiedAspect) {
        if (policy == AspectPolicy::Strict) {
            out.emplace_back("aspect: 'unspecified' is not allowed in benchmark files");
        }
    } else if (auto owner = task_of_aspect(item.aspect); !owner) {
        out.push_back("aspect: unknown aspect '" + item.aspect + "'");
    } else if (*owner != item.task) {
        out.push_back("aspect: '" + item.aspect + "' belongs to task '" +
                      std::string(task_name(*owner)) + "', not '" +
                      std::string(task_name(item.task)) + "'");
    }

    for (Level level : kAllLevels) {
        const auto n = std::count_if(item.levels.begin(), item.levels.end(),
                                     [&](const QAPair& qa) { return qa.level == level; });
        if (n == 0) {
            out.push_back("levels: level " + std::to_string(to_int(level)) + " absent");
        } else if (n > 1) {
            out.push_back("levels: level " + std::to_string(to_int(level)) + " appears " +
                          std::to_string(n) + " times");
        }
    }
    if (!std::is_sorted(item.levels.begin(), item.levels.end(),
                        [](const QAPair& a, const QAPair& b) { return a.level < b.level; })) {
        out.emplace_back("levels: must be sorted ascending by level");
    }

    for (std::size_t i = 0; i < item.levels.size(); ++i) {
        const auto& qa = item.levels[i];
        const std::string path = "levels[" + std::to_string(i) + "]";
        if (qa.answer_mode != AnswerMode::MultipleChoice) {
            out.push_back(path + ": benchmark levels must be multiple_choice");
        }
        auto sub = validate_qa_pair(qa, path);
        out.insert(out.end(), sub.begin(), sub.end());
    }
    return out;
}

std::vector<std::string> validate_config(const GenerationConfig& config) {
    std::vector<std::string> out;
    const auto& m = config.mcts;
    if (m.exploration_c < 0) out.emplace_back("mcts.exploration_c: must be >= 0");
    if (m.expansion_batch < 1) out.emplace_back("mcts.expansion_batch: must be positive");
    if (m.quality_threshold < 0 || m.quality_threshold > 1) {
        out.emplace_back("mcts.quality_threshold: must be in [0, 1]");
    }
    if (m.diversity_threshold < 0 || m.diversity_threshold > 1) {
        out.emplace_back("mcts.diversity_threshold: must be in [0, 1]");
    }
    for (std::size_t i = 0; i < m.level_capacities.size(); ++i) {
        if (m.level_capacities[i] < 1) {
            out.push_back("mcts.level_capacities[" + std::to_string(i) + "]: must be positive");
        }
    }
    if (m.max_depth != 3) out.emplace_back("mcts.max_depth: must be 3");
    if (m.top_k < 1) out.emplace_back("mcts.top_k: must be positive");
    if (m.iteration_budget < 0) out.emplace_back("mcts.iteration_budget: must be >= 0");
    if (m.generation_temperature < 0) out.emplace_back("mcts.generation_temperature: must be >= 0");
    if (m.evaluation_temperature < 0) out.emplace_back("mcts.evaluation_temperature: must be >= 0");

    const auto& b = config.bench;
    if (b.max_validation_attempts < 1) {
        out.emplace_back("bench.max_validation_attempts: must be positive");
    }
    if (b.base_temperature < 0) out.emplace_back("bench.base_temperature: must be >= 0");
    if (b.temperature_step < 0) out.emplace_back("bench.temperature_step: must be >= 0");
    if (b.temperature_cap < b.base_temperature) {
        out.emplace_back("bench.temperature_cap: must be >= base_temperature");
    }
    if (b.validation_temperature < 0) out.emplace_back("bench.validation_temperature: must be >= 0");
    return out;
}

// ---------------------------------------------------------------------------

Json to_json(const MctsConfig& c) {
    Json j;
    j["exploration_c"] = c.exploration_c;
    j["expansion_batch"] = c.expansion_batch;
    j["quality_threshold"] = c.quality_threshold;
    j["diversity_threshold"] = c.diversity_threshold;
    j["level_capacities"] = c.level_capacities;
    j["max_depth"] = c.max_depth;
    j["top_k"] = c.top_k;
    j["iteration_budget"] = c.iteration_budget;
    j["generation_temperature"] = c.generation_temperature;
    j["evaluation_temperature"] = c.evaluation_temperature;
    return j;
}

Json to_json(const BenchConfig& c) {
    Json j;
    j["max_validation_attempts"] = c.max_validation_attempts;
    j["base_temperature"] = c.base_temperature;
    j["temperature_step"] = c.temperature_step;
    j["temperature_cap"] = c.temperature_cap;
    j["validation_temperature"] = c.validation_temperature;
    return j;
}

Json to_json(const GenerationConfig& c) {
    Json j;
    j["mcts"] = to_json(c.mcts);
    j["bench"] = to_json(c.bench);
    return j;
}

namespace {

template <typename T>
void read_field(const Json& doc, const char* key, T& out, const std::string& section) {
    auto it = doc.find(key);
    if (it == doc.end()) return;
    try {
        out = it->template get<T>();
    } catch (const Json::exception& e) {
        throw InvariantError(section + "." + key + ": " + e.what());
    }
}

void reject_unknown(const Json& doc, std::initializer_list<std::string_view> known,
                    const std::string& section) {
    if (!doc.is_object()) throw InvariantError(section + ": expected an object");
    for (const auto& [key, _] : doc.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw InvariantError(section + ": unknown key '" + key + "'");
        }
    }
}

}  // namespace

MctsConfig mcts_config_from_json(const Json& doc, MctsConfig c) {
    reject_unknown(doc,
                   {"exploration_c", "expansion_batch", "quality_threshold",
                    "diversity_threshold", "level_capacities", "max_depth", "top_k",
                    "iteration_budget", "generation_temperature", "evaluation_temperature"},
                   "mcts");
    read_field(doc, "exploration_c", c.exploration_c, "mcts");
    read_field(doc, "expansion_batch", c.expansion_batch, "mcts");
    read_field(doc, "quality_threshold", c.quality_threshold, "mcts");
    read_field(doc, "diversity_threshold", c.diversity_threshold, "mcts");
    if (doc.contains("level_capacities")) {
        const auto& caps = doc["level_capacities"];
        if (!caps.is_array() || caps.size() != 3) {
            throw InvariantError("mcts.level_capacities: expected 3 integers");
        }
        read_field(doc, "level_capacities", c.level_capacities, "mcts");
    }
    read_field(doc, "max_depth", c.max_depth, "mcts");
    read_field(doc, "top_k", c.top_k, "mcts");
    read_field(doc, "iteration_budget", c.iteration_budget, "mcts");
    read_field(doc, "generation_temperature", c.generation_temperature, "mcts");
    read_field(doc, "evaluation_temperature", c.evaluation_temperature, "mcts");
    return c;
}

BenchConfig bench_config_from_json(const Json& doc, BenchConfig c) {
    reject_unknown(doc,
                   {"max_validation_attempts", "base_temperature", "temperature_step",
                    "temperature_cap", "validation_temperature"},
                   "bench");
    read_field(doc, "max_validation_attempts", c.max_validation_attempts, "bench");
    read_field(doc, "base_temperature", c.base_temperature, "bench");
    read_field(doc, "temperature_step", c.temperature_step, "bench");
    read_field(doc, "temperature_cap", c.temperature_cap, "bench");
    read_field(doc, "validation_temperature", c.validation_temperature, "bench");
    return c;
}

GenerationConfig config_from_json(const Json& doc, GenerationConfig c) {
    reject_unknown(doc, {"mcts", "bench"}, "config");
    if (doc.contains("mcts")) c.mcts = mcts_config_from_json(doc["mcts"], c.mcts);
    if (doc.contains("bench")) c.bench = bench_config_from_json(doc["bench"], c.bench);
    return c;
}

}  // namespace hvcu
