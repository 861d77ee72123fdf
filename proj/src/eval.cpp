#include "hvcu/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <fmt/format.h>

#include "hvcu/errors.hpp"

namespace hvcu {

std::string_view setting_name(EvalSetting setting) noexcept {
    return setting == EvalSetting::Base ? "base" : "context";
}

std::optional<EvalSetting> setting_from_name(std::string_view name) noexcept {
    if (name == "base") return EvalSetting::Base;
    if (name == "context") return EvalSetting::Context;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// choice parsing

namespace {

bool is_choice_letter(char c) { return c >= 'A' && c <= 'D'; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string lowercase(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::optional<char> leading_letter(std::string_view text) {
    std::size_t i = 0;
    while (i < text.size() && (is_space(text[i]) || text[i] == '*' || text[i] == '"' ||
                               text[i] == '\'' || text[i] == '`')) {
        ++i;
    }
    bool wrapped = false;
    if (i < text.size() && (text[i] == '(' || text[i] == '[')) {
        wrapped = true;
        ++i;
    }
    if (i >= text.size() || !is_choice_letter(text[i])) return std::nullopt;
    const char letter = text[i++];
    if (wrapped) {
        return (i < text.size() && (text[i] == ')' || text[i] == ']')) ? std::optional(letter)
                                                                       : std::nullopt;
    }
    if (i == text.size()) return letter;
    const char next = text[i];
    if (next == '.' || next == ':' || next == ')' || next == ']' || next == ',' || next == ';' ||
        next == '*' || next == '"' || next == '\'' || next == '`' || next == '\n' ||
        next == '\r') {
        return letter;
    }
    // Trailing whitespace only.
    if (std::all_of(text.begin() + static_cast<std::ptrdiff_t>(i), text.end(), is_space)) {
        return letter;
    }
    return std::nullopt;
}

std::optional<char> answer_phrase_letter(std::string_view text) {
    const std::string lower = lowercase(text);
    for (std::size_t pos = lower.find("answer"); pos != std::string::npos;
         pos = lower.find("answer", pos + 1)) {
        std::size_t i = pos + 6;
        auto skip_spaces = [&] {
            while (i < lower.size() && is_space(lower[i])) ++i;
        };
        skip_spaces();
        bool linked = false;
        if (lower.compare(i, 2, "is") == 0 && (i + 2 == lower.size() || !is_alnum(lower[i + 2]))) {
            linked = true;
            i += 2;
            skip_spaces();
        }
        if (i < lower.size() && lower[i] == ':') {
            linked = true;
            ++i;
            skip_spaces();
        }
        if (!linked) continue;
        if (lower.compare(i, 6, "option") == 0) {
            i += 6;
            skip_spaces();
        }
        while (i < lower.size() && (lower[i] == '(' || lower[i] == '[' || lower[i] == '*' ||
                                    lower[i] == '"' || lower[i] == '\'')) {
            ++i;
        }
        if (i >= text.size() || !is_choice_letter(text[i])) continue;
        if (i + 1 < text.size() && is_alnum(text[i + 1])) continue;
        return text[i];
    }
    return std::nullopt;
}

std::optional<char> option_text_letter(std::string_view text,
                                       std::span<const OptionEntry> options) {
    const std::string lower = lowercase(text);
    std::optional<char> found;
    for (std::size_t i = 0; i < options.size() && i < 4; ++i) {
        const std::string needle = lowercase(trim(options[i].option_text));
        if (needle.empty() || lower.find(needle) == std::string::npos) continue;
        if (found) return std::nullopt;  // ambiguous
        found = static_cast<char>('A' + i);
    }
    return found;
}

}  // namespace

std::optional<char> parse_choice(std::string_view text, std::span<const OptionEntry> options) {
    if (auto c = leading_letter(text)) return c;
    if (auto c = answer_phrase_letter(text)) return c;
    return option_text_letter(text, options);
}

std::string format_options(const QAPair& qa) {
    std::string out;
    for (std::size_t i = 0; i < qa.options.size(); ++i) {
        if (i) out += '\n';
        out += static_cast<char>('A' + i);
        out += ". ";
        out += qa.options[i].option_text;
    }
    return out;
}

// ---------------------------------------------------------------------------
// evaluator

Evaluator::Evaluator(ChatBackend& backend, const TemplateSet& templates)
    : backend_(backend), templates_(templates) {}

std::string Evaluator::render_question(const QAPair& qa,
                                       const std::optional<std::string>& context_block) const {
    if (context_block) {
        return templates_.render(TemplateId::EvalQuestionContext,
                                 {{"context_block", *context_block},
                                  {"question", qa.question},
                                  {"options", format_options(qa)}});
    }
    return templates_.render(TemplateId::EvalQuestionBase,
                             {{"question", qa.question}, {"options", format_options(qa)}});
}

LevelOutcome Evaluator::ask_level(const ImageRef& image, const QAPair& qa,
                                  const std::optional<std::string>& context_block) const {
    if (qa.answer_mode != AnswerMode::MultipleChoice || qa.options.size() != 4) {
        throw PreconditionError("ask_level needs a four-option multiple-choice pair");
    }
    const auto response = backend_.complete(make_user_request(
        render_question(qa, context_block), &image, 0.0,
        "eval-l" + std::to_string(to_int(qa.level))));
    LevelOutcome outcome;
    outcome.level = qa.level;
    outcome.raw_response = response.text;
    outcome.parsed_choice = parse_choice(response.text, qa.options);
    outcome.context_block = context_block;
    const auto correct = qa.correct_index();
    outcome.correct = outcome.parsed_choice && correct &&
                      static_cast<std::size_t>(*outcome.parsed_choice - 'A') == *correct;
    return outcome;
}

std::string context_entry(const QAPair& qa, const LevelOutcome& outcome) {
    std::string out = "Level " + std::to_string(to_int(qa.level)) + " question: " + qa.question +
                      "\nYour answer: ";
    if (outcome.parsed_choice) {
        const auto idx = static_cast<std::size_t>(*outcome.parsed_choice - 'A');
        out += "(";
        out += *outcome.parsed_choice;
        out += ") " + qa.options.at(idx).option_text;
    } else {
        out += "(no valid choice)";
    }
    return out;
}

ChainOutcome Evaluator::evaluate_chain(const BenchmarkItem& item, EvalSetting setting) const {
    ChainOutcome chain;
    chain.item_id = item.id;
    chain.task = item.task;
    chain.aspect = item.aspect;
    chain.setting = setting;

    std::string block(kContextHeader);
    for (std::size_t i = 0; i < 3; ++i) {
        const QAPair& qa = item.at(kAllLevels[i]);
        std::optional<std::string> context;
        if (setting == EvalSetting::Context && i > 0) context = block;
        chain.outcomes[i] = ask_level(item.image, qa, context);
        block += "\n" + context_entry(qa, chain.outcomes[i]);
    }
    chain.full_correct = std::all_of(chain.outcomes.begin(), chain.outcomes.end(),
                                     [](const LevelOutcome& o) { return o.correct; });
    return chain;
}

// ---------------------------------------------------------------------------
// metrics

double round_half_up(double value, int decimals) noexcept {
    const double scale = std::pow(10.0, decimals);
    const double magnitude = std::floor(std::fabs(value) * scale + 0.5 + 1e-7) / scale;
    return std::copysign(magnitude, value);
}

namespace {

struct Tally {
    std::size_t n = 0;
    std::array<std::size_t, 3> level{0, 0, 0};
    std::size_t full = 0;

    void add(const ChainOutcome& o) {
        ++n;
        for (std::size_t i = 0; i < 3; ++i) level[i] += o.outcomes[i].correct ? 1 : 0;
        full += o.full_correct ? 1 : 0;
    }

    LevelAccuracy accuracy() const {
        const auto pct = [&](std::size_t k) {
            return 100.0 * static_cast<double>(k) / static_cast<double>(n);
        };
        return LevelAccuracy{n, pct(level[0]), pct(level[1]), pct(level[2]), pct(full)};
    }
};

Json accuracy_json(const LevelAccuracy& a) {
    Json j;
    j["n_items"] = a.n_items;
    j["acc_perc"] = round_half_up(a.acc_perc);
    j["acc_bridge"] = round_half_up(a.acc_bridge);
    j["acc_conn"] = round_half_up(a.acc_conn);
    j["acc_full"] = round_half_up(a.acc_full);
    return j;
}

}  // namespace

TaskMetrics compute_task_metrics(std::span<const ChainOutcome> outcomes) {
    if (outcomes.empty()) throw EmptyInput("no chain outcomes to aggregate");
    const Task task = outcomes.front().task;
    Tally total;
    std::map<std::string, Tally> aspects;
    for (const auto& o : outcomes) {
        if (o.task != task) throw PreconditionError("outcomes mix several tasks");
        total.add(o);
        aspects[o.aspect].add(o);
    }
    const auto acc = total.accuracy();
    TaskMetrics m;
    m.task = task;
    m.n_items = acc.n_items;
    m.acc_perc = acc.acc_perc;
    m.acc_bridge = acc.acc_bridge;
    m.acc_conn = acc.acc_conn;
    m.acc_full = acc.acc_full;
    for (const auto& [aspect, tally] : aspects) m.per_aspect.emplace(aspect, tally.accuracy());
    return m;
}

double overall_score(std::span<const TaskMetrics> metrics) {
    double sum = 0.0;
    for (Task task : kAllTasks) {
        const auto n = std::count_if(metrics.begin(), metrics.end(),
                                     [&](const TaskMetrics& m) { return m.task == task; });
        if (n == 0) throw MissingTask("missing " + std::string(task_name(task)));
        if (n > 1) throw PreconditionError("task " + std::string(task_name(task)) + " given twice");
    }
    for (const auto& m : metrics) sum += m.acc_full;
    return sum / 3.0;
}

Report build_report(std::span<const ChainOutcome> outcomes) {
    if (outcomes.empty()) throw EmptyInput("no chain outcomes to report");
    Report report;
    report.setting = outcomes.front().setting;
    std::map<Task, std::vector<ChainOutcome>> by_task;
    std::map<std::string, Tally> aspects;
    for (const auto& o : outcomes) {
        if (o.setting != report.setting) {
            throw PreconditionError("outcomes mix base and context settings");
        }
        by_task[o.task].push_back(o);
        aspects[o.aspect].add(o);
    }
    for (Task task : kAllTasks) {
        auto it = by_task.find(task);
        if (it == by_task.end()) {
            report.missing_tasks.push_back(task);
        } else {
            report.per_task.push_back(compute_task_metrics(it->second));
        }
    }
    for (const auto& [aspect, tally] : aspects) report.per_aspect.emplace(aspect, tally.accuracy());
    if (report.missing_tasks.empty()) report.overall = overall_score(report.per_task);
    return report;
}

Json report_to_json(const Report& report) {
    Json j;
    j["schema_version"] = 1;
    j["setting"] = setting_name(report.setting);
    Json per_task = Json::object();
    for (const auto& m : report.per_task) {
        Json t = accuracy_json(LevelAccuracy{m.n_items, m.acc_perc, m.acc_bridge, m.acc_conn,
                                             m.acc_full});
        Json aspects = Json::object();
        for (const auto& [aspect, acc] : m.per_aspect) aspects[aspect] = accuracy_json(acc);
        t["per_aspect"] = std::move(aspects);
        per_task[std::string(task_name(m.task))] = std::move(t);
    }
    j["per_task"] = std::move(per_task);
    Json per_aspect = Json::object();
    for (const auto& [aspect, acc] : report.per_aspect) per_aspect[aspect] = accuracy_json(acc);
    j["per_aspect"] = std::move(per_aspect);
    j["overall_score"] = report.overall ? Json(round_half_up(*report.overall)) : Json(nullptr);
    Json missing = Json::array();
    for (Task t : report.missing_tasks) missing.push_back(task_name(t));
    j["missing_tasks"] = std::move(missing);
    return j;
}

std::string render_table(const Report& report) {
    constexpr int kGroupWidth = 37;
    std::string header1 = fmt::format("{:<10}", "Setting");
    std::string header2 = fmt::format("{:<10}", "");
    std::string row = fmt::format("{:<10}", setting_name(report.setting));
    for (Task task : kAllTasks) {
        header1 += fmt::format("| {:<{}}", task_title(task), kGroupWidth);
        header2 += fmt::format("| {:>8} {:>10} {:>8} {:>8} ", "Acc_perc", "Acc_bridge", "Acc_conn",
                               "Acc_full");
        auto it = std::find_if(report.per_task.begin(), report.per_task.end(),
                               [&](const TaskMetrics& m) { return m.task == task; });
        if (it == report.per_task.end()) {
            row += fmt::format("| {:>8} {:>10} {:>8} {:>8} ", "-", "-", "-", "-");
        } else {
            row += fmt::format("| {:>8.2f} {:>10.2f} {:>8.2f} {:>8.2f} ",
                               round_half_up(it->acc_perc), round_half_up(it->acc_bridge),
                               round_half_up(it->acc_conn), round_half_up(it->acc_full));
        }
    }
    header1 += "|";
    header2 += fmt::format("| {:>6}", "Score");
    row += report.overall ? fmt::format("| {:>6.2f}", round_half_up(*report.overall))
                          : fmt::format("| {:>6}", "-");

    std::string out = header1 + "\n" + header2 + "\n" + row + "\n\n";
    out += fmt::format("{:<14} {:>6} {:>8} {:>10} {:>8} {:>8}\n", "Aspect", "N", "Acc_perc",
                       "Acc_bridge", "Acc_conn", "Acc_full");
    for (const auto& [aspect, a] : report.per_aspect) {
        out += fmt::format("{:<14} {:>6} {:>8.2f} {:>10.2f} {:>8.2f} {:>8.2f}\n", aspect, a.n_items,
                           round_half_up(a.acc_perc), round_half_up(a.acc_bridge),
                           round_half_up(a.acc_conn), round_half_up(a.acc_full));
    }
    out += "\n";
    if (report.overall) {
        out += fmt::format("Score: {:.2f}\n", round_half_up(*report.overall));
    } else {
        std::string missing;
        for (std::size_t i = 0; i < report.missing_tasks.size(); ++i) {
            if (i) missing += ", ";
            missing += task_name(report.missing_tasks[i]);
        }
        out += "Score: unavailable (missing " + missing + ")\n";
    }
    return out;
}

}  // namespace hvcu
