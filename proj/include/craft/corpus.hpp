#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace craft {

struct TableRecord {
    std::string table_id;
    std::string title;
    std::vector<std::string> headers;
    std::vector<std::vector<std::string>> rows;  // rows[i].size() == headers.size()
    std::optional<std::string> description;
    std::optional<std::string> source_uri;

    std::size_t row_count() const { return rows.size(); }
    std::size_t column_count() const { return headers.size(); }
};

struct QueryRecord {
    std::string qid;
    std::string question;
    std::vector<std::string> sub_questions;
    std::vector<std::string> gold_table_ids;  // treated as a set
    std::vector<std::string> answers;
    std::optional<std::string> perturbed_of;  // links a perturbed variant to its original
};

enum class StageTag { Stage1, Stage2, Stage3, Final };

std::string_view stage_tag_name(StageTag tag);
StageTag stage_tag_from_name(std::string_view name);

struct RankingEntry {
    std::string table_id;
    double score = 0.0;
};

// Ordered candidate list for one query at one stage. Entries are kept in
// canonical order: score descending, ties broken by ascending table_id.
struct Ranking {
    std::string qid;
    StageTag stage = StageTag::Stage1;
    std::vector<RankingEntry> entries;
    std::string run_tag;

    void sort_canonical();
    void validate() const;  // canonical order + no duplicate table ids
    bool contains(std::string_view table_id, std::size_t top_k) const;
};

struct CorpusStats {
    std::size_t table_count = 0;
    double avg_rows = 0.0;
    double avg_cols = 0.0;
};

class Corpus {
public:
    Corpus() = default;

    // Validates the record's invariants and rejects duplicate ids.
    void add_table(TableRecord table);

    const TableRecord* find(std::string_view table_id) const;
    const TableRecord& at(const std::string& table_id) const;
    bool empty() const { return tables_.size() == 0; }
    std::size_t size() const { return tables_.size(); }

    // Ordered by table_id, so every corpus traversal is deterministic.
    const std::map<std::string, TableRecord>& tables() const { return tables_; }
    std::map<std::string, TableRecord>& tables_mutable() { return tables_; }

    CorpusStats stats() const;

private:
    std::map<std::string, TableRecord> tables_;
};

// JSONL ingestion. All text fields are NFC-normalized on load. Errors carry
// the offending line number or table id.
Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

std::vector<QueryRecord> load_queries(const std::filesystem::path& path);
void save_queries(const std::vector<QueryRecord>& queries, const std::filesystem::path& path);

// "h1: c1 | h2: c2 | ... | hm: cm"
std::string serialize_row(const TableRecord& table, std::size_t row_index);

// title, newline, headers joined by " | ", newline, one serialized row per
// line, then the description on its own line when present and requested.
std::string full_table_text(const TableRecord& table, bool with_description = true);

// TREC run format: "qid Q0 table_id rank score run_tag", rank starting at 1.
void write_run_file(const std::filesystem::path& path, const std::vector<Ranking>& rankings);
std::vector<Ranking> read_run_file(const std::filesystem::path& path);

}  // namespace craft
