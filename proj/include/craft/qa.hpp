#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "craft/corpus.hpp"
#include "craft/dense.hpp"
#include "craft/enrichment.hpp"

namespace craft {

enum class ContextForm { MiniTable, FullTable };

ContextForm context_form_from_name(std::string_view name);
std::string_view context_form_name(ContextForm form);

struct QAPromptConfig {
    std::size_t n_tables = 5;  // typically one of {1, 3, 5, 8, 10}
    int fewshot_count = 0;     // 0..5, examples from a disjoint split
    ContextForm context_form = ContextForm::MiniTable;
    bool oracle_passages = false;

    void validate() const;
};

struct FewshotExample {
    std::string table_block;  // rendered context lines for the example's gold table
    std::string question;
    std::string answer;
};

struct AssembledPrompt {
    std::string text;
    std::size_t context_tokens = 0;  // whitespace tokens of the context section
    std::size_t tables_used = 0;
};

// Instruction block, few-shot examples, one block per retrieved table (mini
// or full rows), the optional gold passage, then the question. Deterministic
// for fixed inputs; a ranking shorter than n_tables uses what is available.
AssembledPrompt assemble_prompt(const QueryRecord& query, const Ranking& final_ranking,
                                const std::vector<MiniTable>& minitables, const Corpus& corpus,
                                const QAPromptConfig& config,
                                const std::vector<FewshotExample>& fewshot = {},
                                const std::optional<std::string>& oracle_passage = std::nullopt);

// Renders one table context block (Table:/Columns:/rows) as used inside
// prompts; shared by assemble_prompt and few-shot example construction.
std::string render_table_block(const TableRecord& table, const MiniTable* mini, ContextForm form);

// LLM call with post-processing: first non-empty line, surrounding quotes
// stripped. The local fallback extracts the least query-like cell from the
// most query-like context row, or answers "Pass".
std::string generate_answer(const std::string& prompt, TextGenClient& provider);

struct QAResult {
    std::string qid;
    std::string prediction;
    double f1 = 0.0;
    std::size_t context_tokens = 0;
    std::size_t n_tables = 0;
};

struct E2EScore {
    double mean_f1 = 0.0;
    std::vector<QAResult> per_query;         // f1 filled in, ordered by qid
    std::vector<std::string> missing_qids;   // queries without a result row
};

E2EScore score_e2e(const std::vector<QueryRecord>& queries, std::vector<QAResult> results);

// QA run CSV: qid, prediction, f1, context_tokens, n_tables, fewshot, context_form.
std::string qa_results_csv(const std::vector<QAResult>& results, int fewshot, ContextForm form);

}  // namespace craft
