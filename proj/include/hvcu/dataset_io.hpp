#pragma once

// On-disk formats. Every writer sorts records by id and emits keys in a fixed
// order, so equal in-memory states serialize to equal bytes. Every record or
// document carries schema_version; readers reject versions they do not know.

#include <filesystem>
#include <string>
#include <vector>

#include "hvcu/bench_gen.hpp"
#include "hvcu/core.hpp"
#include "hvcu/eval.hpp"
#include "hvcu/mcts.hpp"

namespace hvcu {

inline constexpr int kSchemaVersion = 1;

/// Whole-file read. Throws IoError.
std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temp file, then renames over `path`. Throws IoError.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
/// Pretty JSON document with a trailing newline, written atomically.
void write_json_file(const std::filesystem::path& path, const Json& doc);

// ---------------------------------------------------------------------------
// benchmark items

Json benchmark_item_to_json(const BenchmarkItem& item);
/// Throws SchemaError, SchemaVersionMismatch or InvariantError on bad records.
BenchmarkItem benchmark_item_from_json(const Json& record);

/// One JSON object per line, ordered by id.
std::string serialize_benchmark(std::vector<BenchmarkItem> items);
/// Throws FormatError{line} for any unparseable or invalid line.
std::vector<BenchmarkItem> parse_benchmark(const std::string& text,
                                           AspectPolicy policy = AspectPolicy::AllowUnspecified);
std::vector<BenchmarkItem> load_benchmark(const std::filesystem::path& path,
                                          AspectPolicy policy = AspectPolicy::AllowUnspecified);
void save_benchmark(const std::filesystem::path& path, std::vector<BenchmarkItem> items);

// ---------------------------------------------------------------------------
// raw sources and chain failures

RawSourceItem raw_source_from_json(const Json& record);
Json raw_source_to_json(const RawSourceItem& raw);
std::vector<RawSourceItem> parse_raw_sources(const std::string& text);
std::vector<RawSourceItem> load_raw_sources(const std::filesystem::path& path);

Json chain_failure_to_json(const std::string& id, const ChainFailure& failure);

// ---------------------------------------------------------------------------
// MCTS trees

Json tree_to_json(const MctsTree& tree);
/// Throws SchemaVersionMismatch, SchemaError or InvariantError.
MctsTree tree_from_json(const Json& doc);
void checkpoint_tree(const MctsTree& tree, const std::filesystem::path& path);
/// Never returns a partially built tree.
MctsTree restore_tree(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// SFT export

struct SftTurn {
    std::string user_text;
    std::string assistant_text;

    bool operator==(const SftTurn&) const = default;
};

struct SftConversation {
    std::string id;
    ImageRef image;
    std::vector<SftTurn> turns;  // levels 1, 2, 3
    std::array<NodeId, 3> node_ids{};
    double mean_score = 0.0;

    bool operator==(const SftConversation&) const = default;
};

/// One conversation per path. Throws DanglingNodeId for ids absent from `tree`
/// or ids that do not form a level 1 -> 2 -> 3 chain.
std::vector<SftConversation> export_sft(std::span<const PathRecord> paths, const MctsTree& tree,
                                        const ImageRef& image);

/// Conversation ids are "<image-stem>-<rank>" with a four-digit rank.
std::string sft_conversation_id(const ImageRef& image, std::size_t rank);

/// One chat record per conversation, or one per QA pair in flat mode.
std::vector<Json> sft_records(std::span<const SftConversation> conversations, bool flat);
/// JSONL sorted by record id.
std::string serialize_jsonl(std::vector<Json> records, const char* id_key = "id");

// ---------------------------------------------------------------------------
// evaluation outcomes

Json outcome_to_json(const ChainOutcome& outcome);
ChainOutcome outcome_from_json(const Json& record);
/// Throws FormatError{line}. With `tolerate_torn_tail`, an unterminated final
/// line that fails to parse is dropped instead.
std::vector<ChainOutcome> parse_outcomes(const std::string& text, bool tolerate_torn_tail = false);
/// Missing file reads as empty.
std::vector<ChainOutcome> load_outcomes(const std::filesystem::path& path,
                                        bool tolerate_torn_tail = false);
/// Appends one line and flushes; used as the resume checkpoint.
void append_outcome(const std::filesystem::path& path, const ChainOutcome& outcome);
/// Rewrites the file sorted by item id.
void save_outcomes(const std::filesystem::path& path, std::vector<ChainOutcome> outcomes);

}  // namespace hvcu
