#include "craft/qa.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <map>
#include <sstream>
#include <unordered_set>

#include "craft/error.hpp"
#include "craft/evaluation.hpp"
#include "craft/sparse.hpp"
#include "craft/util.hpp"

namespace craft {

namespace {

constexpr const char* kInstruction =
    "You are a question answering assistant. Answer using only the tables provided. "
    "Reply with the answer text only, or Pass if the answer cannot be found.";
constexpr const char* kContextMarker = "### Context";
constexpr const char* kQuestionMarker = "### Question";

}  // namespace

ContextForm context_form_from_name(std::string_view name) {
    if (name == "minitable") return ContextForm::MiniTable;
    if (name == "fulltable") return ContextForm::FullTable;
    throw usage_error("unknown context form: " + std::string(name));
}

std::string_view context_form_name(ContextForm form) {
    return form == ContextForm::MiniTable ? "minitable" : "fulltable";
}

void QAPromptConfig::validate() const {
    if (n_tables < 1) throw usage_error("qa config: n_tables must be >= 1");
    if (fewshot_count < 0 || fewshot_count > 5) {
        throw usage_error("qa config: fewshot_count must be in 0..5");
    }
}

std::string render_table_block(const TableRecord& table, const MiniTable* mini, ContextForm form) {
    std::string block = "Table: " + table.title + "\n";
    block += "Columns: " + join(table.headers, " | ") + "\n";
    if (form == ContextForm::MiniTable) {
        if (!mini) throw data_error("render_table_block: mini-table required for " + table.table_id);
        std::vector<std::uint32_t> order;
        order.reserve(mini->selected_rows.size());
        for (const auto& [row, rel] : mini->selected_rows) order.push_back(row);
        std::sort(order.begin(), order.end());
        for (std::uint32_t row : order) {
            block += serialize_row(table, row) + "\n";
        }
    } else {
        for (std::size_t r = 0; r < table.row_count(); ++r) {
            block += serialize_row(table, r) + "\n";
        }
    }
    return block;
}

AssembledPrompt assemble_prompt(const QueryRecord& query, const Ranking& final_ranking,
                                const std::vector<MiniTable>& minitables, const Corpus& corpus,
                                const QAPromptConfig& config,
                                const std::vector<FewshotExample>& fewshot,
                                const std::optional<std::string>& oracle_passage) {
    config.validate();
    if (final_ranking.entries.empty()) {
        throw data_error("assemble_prompt: empty ranking for qid " + query.qid);
    }

    std::map<std::string, const MiniTable*> mini_by_id;
    for (const auto& m : minitables) mini_by_id[m.table_id] = &m;

    std::size_t n = config.n_tables;
    if (final_ranking.entries.size() < n) {
        spdlog::warn("qid {}: ranking has {} entries, wanted {} tables", query.qid,
                     final_ranking.entries.size(), n);
        n = final_ranking.entries.size();
    }

    std::string prompt = kInstruction;
    prompt += "\n";
    for (int i = 0; i < config.fewshot_count && i < static_cast<int>(fewshot.size()); ++i) {
        prompt += "\n### Example\n";
        prompt += fewshot[i].table_block;
        prompt += "Question: " + fewshot[i].question + "\n";
        prompt += "Answer: " + fewshot[i].answer + "\n";
    }

    std::string context;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string& table_id = final_ranking.entries[i].table_id;
        const TableRecord* table = corpus.find(table_id);
        if (!table) throw data_error("assemble_prompt: table " + table_id + " missing from corpus");
        const MiniTable* mini = nullptr;
        if (config.context_form == ContextForm::MiniTable) {
            auto it = mini_by_id.find(table_id);
            if (it == mini_by_id.end()) {
                throw data_error("assemble_prompt: no mini-table for " + table_id);
            }
            mini = it->second;
        }
        context += render_table_block(*table, mini, config.context_form);
    }
    if (config.oracle_passages && oracle_passage) {
        context += "Passage: " + *oracle_passage + "\n";
    }

    prompt += "\n";
    prompt += kContextMarker;
    prompt += "\n";
    prompt += context;
    prompt += "\n";
    prompt += kQuestionMarker;
    prompt += "\n";
    prompt += query.question;
    prompt += "\n\nAnswer:";

    AssembledPrompt out;
    out.text = std::move(prompt);
    out.context_tokens = whitespace_token_count(context);
    out.tables_used = n;
    return out;
}

namespace {

struct ParsedCell {
    std::string value;
    std::size_t overlap = 0;
};

// Least query-like non-empty cell from the most query-like row; ties prefer
// the earliest row and the latest cell. Single-character tokens are ignored
// when counting overlap: possessives tokenize to a stray "s" that would
// otherwise tie answer cells to the question.
std::string extractive_answer(const std::string& prompt) {
    std::size_t ctx_pos = prompt.rfind(kContextMarker);
    std::size_t q_pos = prompt.rfind(kQuestionMarker);
    if (ctx_pos == std::string::npos || q_pos == std::string::npos || q_pos < ctx_pos) {
        return "Pass";
    }
    std::string context = prompt.substr(ctx_pos + std::strlen(kContextMarker),
                                        q_pos - ctx_pos - std::strlen(kContextMarker));
    std::string question = prompt.substr(q_pos + std::strlen(kQuestionMarker));
    if (auto answer_pos = question.rfind("\nAnswer:"); answer_pos != std::string::npos) {
        question = question.substr(0, answer_pos);
    }

    std::unordered_set<std::string> q_set;
    for (auto& t : tokenize(question)) {
        if (t.size() >= 2) q_set.insert(std::move(t));
    }

    std::string best_cell;
    std::size_t best_row_overlap = 0;
    bool found_row = false;

    for (const auto& raw : split(context, '\n')) {
        std::string line = trim(raw);
        if (line.empty() || line.rfind("Table: ", 0) == 0 || line.rfind("Columns: ", 0) == 0 ||
            line.rfind("Passage: ", 0) == 0) {
            continue;
        }
        std::unordered_set<std::string> line_tokens;
        for (auto& t : tokenize(line)) {
            if (t.size() >= 2) line_tokens.insert(std::move(t));
        }
        std::size_t row_overlap = 0;
        for (const auto& t : line_tokens) row_overlap += q_set.count(t);
        if (row_overlap == 0) continue;
        if (found_row && row_overlap <= best_row_overlap) continue;

        // Split "h1: v1 | h2: v2" into cell values.
        std::vector<ParsedCell> cells;
        std::size_t start = 0;
        while (start <= line.size()) {
            std::size_t bar = line.find(" | ", start);
            std::string segment =
                bar == std::string::npos ? line.substr(start) : line.substr(start, bar - start);
            std::size_t colon = segment.find(": ");
            std::string value = colon == std::string::npos ? segment : segment.substr(colon + 2);
            value = trim(value);
            if (!value.empty()) {
                ParsedCell cell;
                cell.value = value;
                for (const auto& t : tokenize(value)) cell.overlap += q_set.count(t);
                cells.push_back(std::move(cell));
            }
            if (bar == std::string::npos) break;
            start = bar + 3;
        }
        if (cells.empty()) continue;
        const ParsedCell* chosen = &cells[0];
        for (const auto& c : cells) {
            if (c.overlap <= chosen->overlap) chosen = &c;  // ties go to the latest cell
        }
        best_cell = chosen->value;
        best_row_overlap = row_overlap;
        found_row = true;
    }
    return found_row ? best_cell : "Pass";
}

std::string postprocess_answer(const std::string& raw) {
    for (const auto& line : split(raw, '\n')) {
        std::string candidate = trim(line);
        if (candidate.empty()) continue;
        if (candidate.size() >= 2 &&
            ((candidate.front() == '"' && candidate.back() == '"') ||
             (candidate.front() == '\'' && candidate.back() == '\''))) {
            candidate = trim(candidate.substr(1, candidate.size() - 2));
        }
        return candidate;
    }
    return "";
}

}  // namespace

std::string generate_answer(const std::string& prompt, TextGenClient& provider) {
    if (prompt.empty()) throw usage_error("generate_answer: empty prompt");
    if (provider.config().is_local()) {
        provider.count_local_call();
        return extractive_answer(prompt);
    }
    return postprocess_answer(provider.generate(prompt));
}

E2EScore score_e2e(const std::vector<QueryRecord>& queries, std::vector<QAResult> results) {
    std::map<std::string, QAResult> by_qid;
    for (auto& r : results) {
        auto [it, inserted] = by_qid.emplace(r.qid, std::move(r));
        if (!inserted) throw data_error("score_e2e: duplicate result for qid " + it->first);
    }

    E2EScore score;
    double sum = 0.0;
    for (const auto& q : queries) {
        auto it = by_qid.find(q.qid);
        if (it == by_qid.end()) {
            score.missing_qids.push_back(q.qid);
            continue;
        }
        QAResult r = it->second;
        r.f1 = answer_f1(r.prediction, q.answers);
        sum += r.f1;
        score.per_query.push_back(std::move(r));
    }
    if (!score.missing_qids.empty()) {
        spdlog::warn("score_e2e: {} queries missing results", score.missing_qids.size());
    }
    score.mean_f1 = score.per_query.empty()
                        ? 0.0
                        : sum / static_cast<double>(score.per_query.size());
    return score;
}

std::string qa_results_csv(const std::vector<QAResult>& results, int fewshot, ContextForm form) {
    std::string out = "qid,prediction,f1,context_tokens,n_tables,fewshot,context_form\n";
    for (const auto& r : results) {
        std::string prediction = r.prediction;
        std::replace(prediction.begin(), prediction.end(), ',', ';');
        out += r.qid + "," + prediction + "," + format_score(r.f1) + "," +
               std::to_string(r.context_tokens) + "," + std::to_string(r.n_tables) + "," +
               std::to_string(fewshot) + "," + std::string(context_form_name(form)) + "\n";
    }
    return out;
}

}  // namespace craft
