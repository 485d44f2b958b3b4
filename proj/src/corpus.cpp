#include "craft/corpus.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "craft/error.hpp"
#include "craft/util.hpp"

using nlohmann::json;

namespace craft {

std::string_view stage_tag_name(StageTag tag) {
    switch (tag) {
        case StageTag::Stage1: return "stage1";
        case StageTag::Stage2: return "stage2";
        case StageTag::Stage3: return "stage3";
        case StageTag::Final: return "final";
    }
    return "final";
}

StageTag stage_tag_from_name(std::string_view name) {
    if (name == "stage1") return StageTag::Stage1;
    if (name == "stage2") return StageTag::Stage2;
    if (name == "stage3") return StageTag::Stage3;
    if (name == "final") return StageTag::Final;
    throw data_error("unknown stage tag: " + std::string(name));
}

void Ranking::sort_canonical() {
    std::sort(entries.begin(), entries.end(), [](const RankingEntry& a, const RankingEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.table_id < b.table_id;
    });
}

void Ranking::validate() const {
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!seen.insert(entries[i].table_id).second) {
            throw data_error("ranking for qid " + qid + " has duplicate table_id " +
                             entries[i].table_id);
        }
        if (i > 0) {
            const auto& prev = entries[i - 1];
            const auto& cur = entries[i];
            bool ordered = prev.score > cur.score ||
                           (prev.score == cur.score && prev.table_id < cur.table_id);
            if (!ordered) {
                throw data_error("ranking for qid " + qid + " is not in canonical order at rank " +
                                 std::to_string(i + 1));
            }
        }
    }
}

bool Ranking::contains(std::string_view table_id, std::size_t top_k) const {
    std::size_t limit = std::min(top_k, entries.size());
    for (std::size_t i = 0; i < limit; ++i) {
        if (entries[i].table_id == table_id) return true;
    }
    return false;
}

namespace {

void validate_table(const TableRecord& table) {
    if (table.table_id.empty()) throw data_error("table_id must be non-empty");
    if (table.headers.empty()) throw data_error("table " + table.table_id + " has no headers");
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        if (table.rows[r].size() != table.headers.size()) {
            throw data_error("table " + table.table_id + ": row " + std::to_string(r) + " has " +
                             std::to_string(table.rows[r].size()) + " cells, expected " +
                             std::to_string(table.headers.size()));
        }
    }
}

}  // namespace

void Corpus::add_table(TableRecord table) {
    validate_table(table);
    auto [it, inserted] = tables_.emplace(table.table_id, std::move(table));
    if (!inserted) throw data_error("duplicate table_id: " + it->first);
}

const TableRecord* Corpus::find(std::string_view table_id) const {
    auto it = tables_.find(std::string(table_id));
    return it == tables_.end() ? nullptr : &it->second;
}

const TableRecord& Corpus::at(const std::string& table_id) const {
    const TableRecord* t = find(table_id);
    if (!t) throw data_error("unknown table_id: " + table_id);
    return *t;
}

CorpusStats Corpus::stats() const {
    CorpusStats s;
    s.table_count = tables_.size();
    if (tables_.empty()) return s;
    double rows = 0.0;
    double cols = 0.0;
    for (const auto& [id, t] : tables_) {
        rows += static_cast<double>(t.row_count());
        cols += static_cast<double>(t.column_count());
    }
    s.avg_rows = rows / static_cast<double>(s.table_count);
    s.avg_cols = cols / static_cast<double>(s.table_count);
    return s;
}

namespace {

std::string nfc_string(const json& j, const char* field, std::size_t line) {
    if (!j.contains(field) || !j[field].is_string()) {
        throw data_error("line " + std::to_string(line) + ": missing or non-string field \"" +
                         field + "\"");
    }
    return normalize_nfc(j[field].get<std::string>());
}

std::vector<std::string> nfc_string_array(const json& j, const char* field, std::size_t line) {
    if (!j.contains(field) || !j[field].is_array()) {
        throw data_error("line " + std::to_string(line) + ": missing or non-array field \"" +
                         field + "\"");
    }
    std::vector<std::string> out;
    out.reserve(j[field].size());
    for (const auto& v : j[field]) {
        if (!v.is_string()) {
            throw data_error("line " + std::to_string(line) + ": non-string element in \"" +
                             field + "\"");
        }
        out.push_back(normalize_nfc(v.get<std::string>()));
    }
    return out;
}

json parse_line(const std::string& line, std::size_t line_no) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw data_error("line " + std::to_string(line_no) + ": malformed JSON record");
    }
    return j;
}

template <typename Fn>
void for_each_jsonl_line(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open file: " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        fn(line, line_no);
    }
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path) {
    Corpus corpus;
    for_each_jsonl_line(path, [&](const std::string& line, std::size_t line_no) {
        json j = parse_line(line, line_no);
        TableRecord t;
        t.table_id = nfc_string(j, "table_id", line_no);
        t.title = nfc_string(j, "title", line_no);
        t.headers = nfc_string_array(j, "headers", line_no);
        if (!j.contains("rows") || !j["rows"].is_array()) {
            throw data_error("line " + std::to_string(line_no) + ": missing \"rows\" array");
        }
        for (const auto& row : j["rows"]) {
            if (!row.is_array()) {
                throw data_error("line " + std::to_string(line_no) + ": row is not an array");
            }
            std::vector<std::string> cells;
            cells.reserve(row.size());
            for (const auto& cell : row) {
                if (!cell.is_string()) {
                    throw data_error("line " + std::to_string(line_no) +
                                     ": non-string cell in table " + t.table_id);
                }
                cells.push_back(normalize_nfc(cell.get<std::string>()));
            }
            t.rows.push_back(std::move(cells));
        }
        if (j.contains("description") && !j["description"].is_null()) {
            t.description = normalize_nfc(j["description"].get<std::string>());
        }
        if (j.contains("source_uri") && !j["source_uri"].is_null()) {
            t.source_uri = normalize_nfc(j["source_uri"].get<std::string>());
        }
        corpus.add_table(std::move(t));
    });
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    std::ostringstream out;
    for (const auto& [id, t] : corpus.tables()) {
        json j;
        j["table_id"] = t.table_id;
        j["title"] = t.title;
        j["headers"] = t.headers;
        j["rows"] = t.rows;
        if (t.description) j["description"] = *t.description;
        if (t.source_uri) j["source_uri"] = *t.source_uri;
        out << j.dump() << "\n";
    }
    write_file(path, out.str());
}

std::vector<QueryRecord> load_queries(const std::filesystem::path& path) {
    std::vector<QueryRecord> queries;
    std::unordered_set<std::string> seen;
    for_each_jsonl_line(path, [&](const std::string& line, std::size_t line_no) {
        json j = parse_line(line, line_no);
        QueryRecord q;
        q.qid = nfc_string(j, "qid", line_no);
        q.question = nfc_string(j, "question", line_no);
        if (j.contains("sub_questions")) {
            q.sub_questions = nfc_string_array(j, "sub_questions", line_no);
        }
        q.gold_table_ids = nfc_string_array(j, "gold_table_ids", line_no);
        if (q.gold_table_ids.empty()) {
            throw data_error("line " + std::to_string(line_no) + ": query " + q.qid +
                             " has empty gold_table_ids");
        }
        q.answers = nfc_string_array(j, "answers", line_no);
        if (j.contains("perturbed_of") && !j["perturbed_of"].is_null()) {
            q.perturbed_of = normalize_nfc(j["perturbed_of"].get<std::string>());
        }
        if (!seen.insert(q.qid).second) {
            throw data_error("line " + std::to_string(line_no) + ": duplicate qid " + q.qid);
        }
        queries.push_back(std::move(q));
    });
    return queries;
}

void save_queries(const std::vector<QueryRecord>& queries, const std::filesystem::path& path) {
    std::ostringstream out;
    for (const auto& q : queries) {
        json j;
        j["qid"] = q.qid;
        j["question"] = q.question;
        if (!q.sub_questions.empty()) j["sub_questions"] = q.sub_questions;
        j["gold_table_ids"] = q.gold_table_ids;
        j["answers"] = q.answers;
        if (q.perturbed_of) j["perturbed_of"] = *q.perturbed_of;
        out << j.dump() << "\n";
    }
    write_file(path, out.str());
}

std::string serialize_row(const TableRecord& table, std::size_t row_index) {
    if (row_index >= table.rows.size()) {
        throw data_error("table " + table.table_id + ": row index " + std::to_string(row_index) +
                         " out of range (" + std::to_string(table.rows.size()) + " rows)");
    }
    const auto& row = table.rows[row_index];
    std::string out;
    for (std::size_t c = 0; c < table.headers.size(); ++c) {
        if (c > 0) out += " | ";
        out += table.headers[c];
        out += ": ";
        out += row[c];
    }
    return out;
}

std::string full_table_text(const TableRecord& table, bool with_description) {
    std::string out = table.title;
    out += "\n";
    out += join(table.headers, " | ");
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        out += "\n";
        out += serialize_row(table, r);
    }
    if (with_description && table.description) {
        out += "\n";
        out += *table.description;
    }
    return out;
}

void write_run_file(const std::filesystem::path& path, const std::vector<Ranking>& rankings) {
    std::ostringstream out;
    for (const auto& ranking : rankings) {
        for (std::size_t i = 0; i < ranking.entries.size(); ++i) {
            const auto& e = ranking.entries[i];
            out << ranking.qid << " Q0 " << e.table_id << " " << (i + 1) << " "
                << format_score(e.score) << " " << ranking.run_tag << "\n";
        }
    }
    write_file(path, out.str());
}

std::vector<Ranking> read_run_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open run file: " + path.string());
    std::vector<Ranking> rankings;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::istringstream ss(line);
        std::string qid, q0, table_id, run_tag;
        std::size_t rank = 0;
        double score = 0.0;
        if (!(ss >> qid >> q0 >> table_id >> rank >> score >> run_tag) || q0 != "Q0") {
            throw data_error("run file " + path.string() + " line " + std::to_string(line_no) +
                             ": malformed TREC entry");
        }
        if (rankings.empty() || rankings.back().qid != qid) {
            Ranking r;
            r.qid = qid;
            r.stage = StageTag::Final;
            r.run_tag = run_tag;
            rankings.push_back(std::move(r));
        }
        if (rank != rankings.back().entries.size() + 1) {
            throw data_error("run file " + path.string() + " line " + std::to_string(line_no) +
                             ": rank must increase from 1 per qid");
        }
        rankings.back().entries.push_back({table_id, score});
    }
    return rankings;
}

}  // namespace craft
