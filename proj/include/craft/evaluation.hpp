#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "craft/corpus.hpp"

namespace craft {

struct RecallReport {
    std::vector<std::size_t> ks;
    std::vector<double> recall_pct;  // aligned with ks, values in [0, 100]
    std::size_t query_count = 0;
};

// A query is a hit at k iff any of its gold table ids appears in the top-k.
// Queries missing from the run count as misses at every k.
RecallReport recall_at_k(const std::vector<Ranking>& run, const std::vector<QueryRecord>& queries,
                         std::vector<std::size_t> ks);
RecallReport recall_at_k(const std::filesystem::path& run_file,
                         const std::vector<QueryRecord>& queries, std::vector<std::size_t> ks);

// SQuAD-style normalization: lowercase, strip punctuation, drop the articles
// a/an/the, collapse whitespace. Exposed for the metric oracle tests.
std::vector<std::string> normalize_answer(std::string_view text);

// Token-multiset F1 against the best-matching gold answer.
double answer_f1(const std::string& prediction, const std::vector<std::string>& golds);

using TokenCounter = std::function<std::size_t(std::string_view)>;
std::size_t whitespace_token_count(std::string_view text);

struct ContextSample {
    std::string qid;
    std::string mini_text;
    std::string full_text;
};

struct TokenStatsEntry {
    std::string qid;
    std::size_t mini_tokens = 0;
    std::size_t full_tokens = 0;
};

struct TokenReport {
    std::string tokenizer_name;
    double mean_mini = 0.0;
    double mean_full = 0.0;
    double savings_pct = 0.0;  // 100 * (1 - mini/full)
    std::vector<TokenStatsEntry> per_query;
};

// Counts tokens per query and enforces mini <= full for every sample.
TokenReport token_stats(const std::vector<ContextSample>& samples,
                        const TokenCounter& tokenizer = whitespace_token_count,
                        std::string tokenizer_name = "whitespace");

struct PerturbationReport {
    std::vector<std::size_t> ks;
    std::vector<double> original_pct;
    std::vector<double> perturbed_pct;
    double delta_avg = 0.0;  // mean over ks of (perturbed - original); negative = degradation
};

PerturbationReport perturbation_delta(const RecallReport& original, const RecallReport& perturbed);

struct PlotPoint {
    std::size_t n = 0;
    double mean_context_tokens = 0.0;
    double mean_f1 = 0.0;
};

// Report emission: stable column order in every format.
std::string to_csv(const RecallReport& report);
std::string to_markdown(const RecallReport& report, std::string_view label = "run");
nlohmann::json to_json(const RecallReport& report);
RecallReport recall_from_csv(const std::string& csv);

std::string to_csv(const TokenReport& report);
std::string to_markdown(const TokenReport& report);
nlohmann::json to_json(const TokenReport& report);

std::string to_csv(const PerturbationReport& report);
std::string to_markdown(const PerturbationReport& report);
nlohmann::json to_json(const PerturbationReport& report);

std::string plotdata_csv(const std::vector<PlotPoint>& points);

// Minimal structural JSON-schema check (type / required / properties /
// items); enough to validate emitted reports against the shipped schema.
bool matches_schema(const nlohmann::json& value, const nlohmann::json& schema,
                    std::string* error = nullptr);

}  // namespace craft
