#include "hvcu/dataset_io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <system_error>

#include <unistd.h>

#include "hvcu/errors.hpp"

namespace fs = std::filesystem;

namespace hvcu {

namespace {

const Json& need(const Json& j, const char* key) {
    if (!j.is_object()) throw SchemaError(key, "record is not an object");
    auto it = j.find(key);
    if (it == j.end()) throw SchemaError(key, "missing field");
    return *it;
}

std::string need_string(const Json& j, const char* key) {
    const Json& v = need(j, key);
    if (!v.is_string()) throw SchemaError(key, "expected a string");
    return v.get<std::string>();
}

bool need_bool(const Json& j, const char* key) {
    const Json& v = need(j, key);
    if (!v.is_boolean()) throw SchemaError(key, "expected a boolean");
    return v.get<bool>();
}

double need_number(const Json& j, const char* key) {
    const Json& v = need(j, key);
    if (!v.is_number()) throw SchemaError(key, "expected a number");
    return v.get<double>();
}

std::uint64_t need_unsigned(const Json& j, const char* key) {
    const Json& v = need(j, key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        throw SchemaError(key, "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

std::optional<std::string> optional_string(const Json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw SchemaError(key, "expected a string or null");
    return it->get<std::string>();
}

Json nullable(const std::optional<std::string>& v) { return v ? Json(*v) : Json(nullptr); }

/// Absent is accepted for hand-authored inputs; a present value must match.
void check_version(const Json& j, bool required) {
    auto it = j.find("schema_version");
    if (it == j.end()) {
        if (required) throw SchemaVersionMismatch("schema_version missing");
        return;
    }
    if (!it->is_number_integer() || it->get<std::int64_t>() != kSchemaVersion) {
        throw SchemaVersionMismatch("unsupported schema_version " + it->dump() + " (expected " +
                                    std::to_string(kSchemaVersion) + ")");
    }
}

Task need_task(const Json& j) {
    const auto name = need_string(j, "task");
    auto task = task_from_name(name);
    if (!task) throw SchemaError("task", "unknown task '" + name + "'");
    return *task;
}

Json image_json(const ImageRef& image) {
    Json j;
    j["path_or_uri"] = image.path_or_uri;
    j["media_type"] = image.media_type;
    return j;
}

ImageRef image_from_json(const Json& j) {
    const Json& v = need(j, "image");
    if (v.is_string()) return ImageRef::from_path(v.get<std::string>());
    ImageRef image;
    image.path_or_uri = need_string(v, "path_or_uri");
    image.media_type = v.contains("media_type") ? need_string(v, "media_type")
                                                : media_type_for(image.path_or_uri);
    return image;
}

/// Calls `fn(line_no, json)` for each non-blank line, wrapping failures in FormatError.
template <typename Fn>
void for_each_jsonl(const std::string& text, Fn&& fn) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        Json record;
        try {
            record = Json::parse(line);
        } catch (const Json::parse_error& e) {
            throw FormatError(line_no, std::string("invalid JSON: ") + e.what());
        }
        try {
            fn(line_no, record);
        } catch (const SchemaVersionMismatch& e) {
            throw SchemaVersionMismatch("line " + std::to_string(line_no) + ": " + e.what());
        } catch (const FormatError&) {
            throw;
        } catch (const Error& e) {
            throw FormatError(line_no, e.what());
        } catch (const Json::exception& e) {
            throw FormatError(line_no, e.what());
        }
    }
}

std::string join_lines(const std::vector<Json>& records) {
    std::string out;
    for (const auto& r : records) {
        out += r.dump();
        out += '\n';
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// files

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw IoError("read failed for " + path.string());
    return buf.str();
}

void write_file_atomic(const fs::path& path, const std::string& content) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    fs::path tmp = path;
    tmp += ".tmp-" + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot create " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            fs::remove(tmp, ec);
            throw IoError("write failed for " + tmp.string());
        }
    }
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("cannot rename onto " + path.string());
    }
}

void write_json_file(const fs::path& path, const Json& doc) {
    write_file_atomic(path, doc.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// benchmark items

Json benchmark_item_to_json(const BenchmarkItem& item) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["id"] = item.id;
    j["image"] = image_json(item.image);
    j["task"] = task_name(item.task);
    j["aspect"] = item.aspect;
    Json levels = Json::array();
    for (const auto& qa : item.levels) {
        Json l;
        l["level"] = to_int(qa.level);
        l["level_name"] = level_name(qa.level);
        l["question"] = qa.question;
        Json options = Json::array();
        for (const auto& o : qa.options) {
            options.push_back(Json{{"option_text", o.option_text}, {"is_correct", o.is_correct}});
        }
        l["options"] = std::move(options);
        l["reasoning"] = nullable(qa.reasoning);
        levels.push_back(std::move(l));
    }
    j["levels"] = std::move(levels);
    if (item.provenance) j["provenance"] = *item.provenance;
    return j;
}

BenchmarkItem benchmark_item_from_json(const Json& record) {
    check_version(record, false);
    BenchmarkItem item;
    item.id = need_string(record, "id");
    item.image = image_from_json(record);
    item.task = need_task(record);
    item.aspect = optional_string(record, "aspect").value_or(std::string(kUnspecifiedAspect));
    const Json& levels = need(record, "levels");
    if (!levels.is_array()) throw SchemaError("levels", "expected an array");
    for (const auto& l : levels) {
        QAPair qa;
        const auto level = need(l, "level");
        if (!level.is_number_integer()) throw SchemaError("level", "expected an integer");
        qa.level = level_from_int(level.get<int>());
        qa.question = need_string(l, "question");
        qa.answer_mode = AnswerMode::MultipleChoice;
        const Json& options = need(l, "options");
        if (!options.is_array()) throw SchemaError("options", "expected an array");
        for (const auto& o : options) {
            qa.options.push_back(OptionEntry{need_string(o, "option_text"), need_bool(o, "is_correct")});
        }
        qa.reasoning = optional_string(l, "reasoning");
        item.levels.push_back(std::move(qa));
    }
    if (auto it = record.find("provenance"); it != record.end() && !it->is_null()) {
        item.provenance = *it;
    }
    return item;
}

std::string serialize_benchmark(std::vector<BenchmarkItem> items) {
    std::stable_sort(items.begin(), items.end(),
                     [](const BenchmarkItem& a, const BenchmarkItem& b) { return a.id < b.id; });
    std::vector<Json> records;
    records.reserve(items.size());
    for (const auto& item : items) records.push_back(benchmark_item_to_json(item));
    return join_lines(records);
}

std::vector<BenchmarkItem> parse_benchmark(const std::string& text, AspectPolicy policy) {
    std::vector<BenchmarkItem> items;
    for_each_jsonl(text, [&](std::size_t line, const Json& record) {
        auto item = benchmark_item_from_json(record);
        const auto violations = validate_benchmark_item(item, policy);
        if (!violations.empty()) {
            std::string joined;
            for (const auto& v : violations) joined += (joined.empty() ? "" : "; ") + v;
            throw FormatError(line, joined);
        }
        items.push_back(std::move(item));
    });
    return items;
}

std::vector<BenchmarkItem> load_benchmark(const fs::path& path, AspectPolicy policy) {
    return parse_benchmark(read_file(path), policy);
}

void save_benchmark(const fs::path& path, std::vector<BenchmarkItem> items) {
    write_file_atomic(path, serialize_benchmark(std::move(items)));
}

// ---------------------------------------------------------------------------
// raw sources

RawSourceItem raw_source_from_json(const Json& record) {
    check_version(record, false);
    RawSourceItem raw;
    raw.image = image_from_json(record);
    raw.explanation = need_string(record, "explanation");
    raw.question = need_string(record, "question");
    const Json& options = need(record, "options");
    if (!options.is_array()) throw SchemaError("options", "expected an array");
    for (const auto& o : options) {
        if (!o.is_string()) throw SchemaError("options", "expected strings");
        raw.options.push_back(o.get<std::string>());
    }
    raw.id = optional_string(record, "id");
    if (record.contains("task") && !record["task"].is_null()) raw.task = need_task(record);
    raw.aspect = optional_string(record, "aspect");
    return raw;
}

Json raw_source_to_json(const RawSourceItem& raw) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    if (raw.id) j["id"] = *raw.id;
    j["image"] = image_json(raw.image);
    if (raw.task) j["task"] = task_name(*raw.task);
    if (raw.aspect) j["aspect"] = *raw.aspect;
    j["explanation"] = raw.explanation;
    j["question"] = raw.question;
    j["options"] = raw.options;
    return j;
}

std::vector<RawSourceItem> parse_raw_sources(const std::string& text) {
    std::vector<RawSourceItem> out;
    for_each_jsonl(text, [&](std::size_t line, const Json& record) {
        auto raw = raw_source_from_json(record);
        if (auto v = validate_raw_source(raw); !v.empty()) throw FormatError(line, v.front());
        out.push_back(std::move(raw));
    });
    return out;
}

std::vector<RawSourceItem> load_raw_sources(const fs::path& path) {
    return parse_raw_sources(read_file(path));
}

Json chain_failure_to_json(const std::string& id, const ChainFailure& failure) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["id"] = id;
    j["stage"] = failure.stage;
    j["level"] = to_int(failure.level);
    j["attempts"] = failure.attempts;
    j["last_reason"] = failure.last_reason;
    j["provenance"] = failure.provenance;
    return j;
}

// ---------------------------------------------------------------------------
// trees

Json tree_to_json(const MctsTree& tree) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["config"] = to_json(tree.config());
    j["root_id"] = tree.root_id();
    j["per_level_counts"] = tree.per_level_counts();
    Json nodes = Json::array();
    for (const auto& n : tree.nodes()) {
        Json node;
        node["id"] = n.id;
        node["level"] = n.level;
        node["parent"] = n.parent ? Json(*n.parent) : Json(nullptr);
        node["question"] = n.qa ? Json(n.qa->question) : Json(nullptr);
        node["answer"] = n.qa ? Json(n.qa->answer_text) : Json(nullptr);
        node["reasoning"] = n.qa ? nullable(n.qa->reasoning) : Json(nullptr);
        node["quality_score"] = n.quality_score ? Json(*n.quality_score) : Json(nullptr);
        node["visit_count"] = n.visit_count;
        node["mean_reward"] = n.visit_count > 0 ? Json(n.mean_reward) : Json(nullptr);
        node["children"] = n.children;
        nodes.push_back(std::move(node));
    }
    j["nodes"] = std::move(nodes);
    Json events = Json::array();
    for (const auto& e : tree.event_log()) {
        events.push_back(Json{{"kind", event_kind_name(e.kind)}, {"payload", e.payload}});
    }
    j["event_log"] = std::move(events);
    return j;
}

MctsTree tree_from_json(const Json& doc) {
    if (!doc.is_object()) throw SchemaError("checkpoint", "expected an object");
    check_version(doc, true);
    const MctsConfig config = mcts_config_from_json(need(doc, "config"));
    if (need_unsigned(doc, "root_id") != 0) throw SchemaError("root_id", "expected 0");

    std::vector<MctsNode> nodes;
    const Json& jn = need(doc, "nodes");
    if (!jn.is_array()) throw SchemaError("nodes", "expected an array");
    for (const auto& n : jn) {
        MctsNode node;
        node.id = need_unsigned(n, "id");
        const Json& level = need(n, "level");
        if (!level.is_number_integer()) throw SchemaError("level", "expected an integer");
        node.level = level.get<int>();
        if (!need(n, "parent").is_null()) node.parent = need_unsigned(n, "parent");
        if (node.level > 0) {
            node.qa = QAPair{};
            node.qa->level = level_from_int(node.level);
            node.qa->answer_mode = AnswerMode::OpenEnded;
            node.qa->question = need_string(n, "question");
            node.qa->answer_text = need_string(n, "answer");
            node.qa->reasoning = optional_string(n, "reasoning");
            node.quality_score = need_number(n, "quality_score");
        }
        node.visit_count = need_unsigned(n, "visit_count");
        if (node.visit_count > 0) node.mean_reward = need_number(n, "mean_reward");
        const Json& children = need(n, "children");
        if (!children.is_array()) throw SchemaError("children", "expected an array");
        for (const auto& c : children) {
            if (!c.is_number_unsigned()) throw SchemaError("children", "expected node ids");
            node.children.push_back(c.get<NodeId>());
        }
        nodes.push_back(std::move(node));
    }

    std::vector<TreeEvent> events;
    const Json& je = need(doc, "event_log");
    if (!je.is_array()) throw SchemaError("event_log", "expected an array");
    for (const auto& e : je) {
        const auto name = need_string(e, "kind");
        auto kind = event_kind_from_name(name);
        if (!kind) throw SchemaError("kind", "unknown event kind '" + name + "'");
        events.push_back(TreeEvent{*kind, need(e, "payload")});
    }

    MctsTree tree = MctsTree::from_parts(config, std::move(nodes), std::move(events));
    const Json& counts = need(doc, "per_level_counts");
    if (counts != Json(tree.per_level_counts())) {
        throw InvariantError("per_level_counts disagree with the stored nodes");
    }
    return tree;
}

void checkpoint_tree(const MctsTree& tree, const fs::path& path) {
    write_json_file(path, tree_to_json(tree));
}

MctsTree restore_tree(const fs::path& path) {
    const std::string text = read_file(path);
    Json doc;
    try {
        doc = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw FormatError(0, std::string("checkpoint is not valid JSON: ") + e.what());
    }
    try {
        return tree_from_json(doc);
    } catch (const Json::exception& e) {
        throw FormatError(0, std::string("checkpoint: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// SFT export

std::string sft_conversation_id(const ImageRef& image, std::size_t rank) {
    std::string digits = std::to_string(rank);
    if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
    return image.stem() + "-" + digits;
}

std::vector<SftConversation> export_sft(std::span<const PathRecord> paths, const MctsTree& tree,
                                        const ImageRef& image) {
    std::vector<SftConversation> out;
    out.reserve(paths.size());
    for (std::size_t rank = 0; rank < paths.size(); ++rank) {
        const auto& path = paths[rank];
        SftConversation conv;
        conv.id = sft_conversation_id(image, rank + 1);
        conv.image = image;
        conv.node_ids = path.node_ids;
        conv.mean_score = path.mean_score;
        std::optional<NodeId> expected_parent = tree.root_id();
        for (std::size_t k = 0; k < 3; ++k) {
            const NodeId id = path.node_ids[k];
            if (!tree.contains(id)) {
                throw DanglingNodeId("path " + std::to_string(rank) + " references unknown node " +
                                     std::to_string(id));
            }
            const auto& node = tree.node(id);
            if (node.level != static_cast<int>(k) + 1 || node.parent != expected_parent || !node.qa) {
                throw DanglingNodeId("path " + std::to_string(rank) + " node " + std::to_string(id) +
                                     " is not the level-" + std::to_string(k + 1) +
                                     " link of a chain");
            }
            conv.turns.push_back(SftTurn{node.qa->question, node.qa->answer_text});
            expected_parent = id;
        }
        out.push_back(std::move(conv));
    }
    return out;
}

std::vector<Json> sft_records(std::span<const SftConversation> conversations, bool flat) {
    std::vector<Json> out;
    auto message = [](const char* role, const std::string& content) {
        return Json{{"role", role}, {"content", content}};
    };
    for (const auto& conv : conversations) {
        if (flat) {
            for (std::size_t k = 0; k < conv.turns.size(); ++k) {
                Json r;
                r["schema_version"] = kSchemaVersion;
                r["id"] = conv.id + "-l" + std::to_string(k + 1);
                r["images"] = Json::array({conv.image.path_or_uri});
                r["messages"] = Json::array({message("user", "<image>" + conv.turns[k].user_text),
                                             message("assistant", conv.turns[k].assistant_text)});
                r["level"] = k + 1;
                r["node_id"] = conv.node_ids[k];
                out.push_back(std::move(r));
            }
            continue;
        }
        Json r;
        r["schema_version"] = kSchemaVersion;
        r["id"] = conv.id;
        r["images"] = Json::array({conv.image.path_or_uri});
        Json messages = Json::array();
        for (std::size_t k = 0; k < conv.turns.size(); ++k) {
            messages.push_back(
                message("user", (k == 0 ? "<image>" : "") + conv.turns[k].user_text));
            messages.push_back(message("assistant", conv.turns[k].assistant_text));
        }
        r["messages"] = std::move(messages);
        r["node_ids"] = conv.node_ids;
        r["mean_score"] = conv.mean_score;
        out.push_back(std::move(r));
    }
    return out;
}

std::string serialize_jsonl(std::vector<Json> records, const char* id_key) {
    std::stable_sort(records.begin(), records.end(), [&](const Json& a, const Json& b) {
        return a.at(id_key).get<std::string>() < b.at(id_key).get<std::string>();
    });
    return join_lines(records);
}

// ---------------------------------------------------------------------------
// outcomes

Json outcome_to_json(const ChainOutcome& outcome) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["item_id"] = outcome.item_id;
    j["task"] = task_name(outcome.task);
    j["aspect"] = outcome.aspect;
    j["setting"] = setting_name(outcome.setting);
    Json levels = Json::array();
    for (const auto& o : outcome.outcomes) {
        Json l;
        l["level"] = to_int(o.level);
        l["raw_response"] = o.raw_response;
        l["parsed_choice"] =
            o.parsed_choice ? Json(std::string(1, *o.parsed_choice)) : Json(nullptr);
        l["correct"] = o.correct;
        l["context_block"] = nullable(o.context_block);
        levels.push_back(std::move(l));
    }
    j["levels"] = std::move(levels);
    j["full_correct"] = outcome.full_correct;
    return j;
}

ChainOutcome outcome_from_json(const Json& record) {
    check_version(record, true);
    ChainOutcome o;
    o.item_id = need_string(record, "item_id");
    o.task = need_task(record);
    o.aspect = need_string(record, "aspect");
    const auto setting = need_string(record, "setting");
    auto s = setting_from_name(setting);
    if (!s) throw SchemaError("setting", "unknown setting '" + setting + "'");
    o.setting = *s;
    const Json& levels = need(record, "levels");
    if (!levels.is_array() || levels.size() != 3) {
        throw SchemaError("levels", "expected exactly 3 entries");
    }
    for (std::size_t i = 0; i < 3; ++i) {
        const Json& l = levels[i];
        LevelOutcome& lo = o.outcomes[i];
        const Json& level = need(l, "level");
        if (!level.is_number_integer() || level.get<int>() != static_cast<int>(i) + 1) {
            throw SchemaError("level", "levels must appear in order 1, 2, 3");
        }
        lo.level = kAllLevels[i];
        lo.raw_response = need_string(l, "raw_response");
        if (auto c = optional_string(l, "parsed_choice")) {
            if (c->size() != 1 || (*c)[0] < 'A' || (*c)[0] > 'D') {
                throw SchemaError("parsed_choice", "expected one of A-D or null");
            }
            lo.parsed_choice = (*c)[0];
        }
        lo.correct = need_bool(l, "correct");
        lo.context_block = optional_string(l, "context_block");
    }
    o.full_correct = need_bool(record, "full_correct");
    const bool all = std::all_of(o.outcomes.begin(), o.outcomes.end(),
                                 [](const LevelOutcome& l) { return l.correct; });
    if (all != o.full_correct) throw SchemaError("full_correct", "disagrees with the level results");
    return o;
}

std::vector<ChainOutcome> parse_outcomes(const std::string& text, bool tolerate_torn_tail) {
    std::string body = text;
    if (tolerate_torn_tail && !body.empty() && body.back() != '\n') {
        const auto cut = body.find_last_of('\n');
        const std::string tail = cut == std::string::npos ? body : body.substr(cut + 1);
        bool parses = true;
        try {
            outcome_from_json(Json::parse(tail));
        } catch (const std::exception&) {
            parses = false;
        }
        if (!parses) body.erase(cut == std::string::npos ? 0 : cut + 1);
    }
    std::vector<ChainOutcome> out;
    for_each_jsonl(body, [&](std::size_t, const Json& record) {
        out.push_back(outcome_from_json(record));
    });
    return out;
}

std::vector<ChainOutcome> load_outcomes(const fs::path& path, bool tolerate_torn_tail) {
    std::error_code ec;
    if (!fs::exists(path, ec)) return {};
    return parse_outcomes(read_file(path), tolerate_torn_tail);
}

void append_outcome(const fs::path& path, const ChainOutcome& outcome) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw IoError("cannot append to " + path.string());
    out << outcome_to_json(outcome).dump() << '\n';
    out.flush();
    if (!out) throw IoError("append failed for " + path.string());
}

void save_outcomes(const fs::path& path, std::vector<ChainOutcome> outcomes) {
    std::stable_sort(outcomes.begin(), outcomes.end(),
                     [](const ChainOutcome& a, const ChainOutcome& b) { return a.item_id < b.item_id; });
    std::vector<Json> records;
    for (const auto& o : outcomes) records.push_back(outcome_to_json(o));
    write_file_atomic(path, join_lines(records));
}

}  // namespace hvcu
