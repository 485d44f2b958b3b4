#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "craft/corpus.hpp"
#include "craft/dense.hpp"
#include "craft/embeddings.hpp"
#include "craft/enrichment.hpp"
#include "craft/rerank.hpp"
#include "craft/sparse.hpp"

namespace craft {

struct CascadeToggles {
    bool descriptions = true;   // description text inside indexed/scored table text
    bool subquestions = true;   // Stage-1 query expansion
    bool stage2 = true;
    bool stage3 = true;
    bool minitable = true;      // false: Stage 2 scores full-table text
};

inline EmbeddingProviderConfig make_local_provider(std::string model_id) {
    EmbeddingProviderConfig c;
    c.model_id = std::move(model_id);
    return c;
}

struct CascadeConfig {
    std::size_t n1 = 5000;
    std::size_t n2 = 100;
    std::size_t n3_in = 100;
    std::size_t n3_out = 100;
    std::size_t rows_k = 5;
    CascadeToggles toggles;
    Stage2Mode mode = Stage2Mode::MinitableText;
    std::string run_tag = "craft";

    // Distinct per-stage model ids mirror the cascade's two dense models and
    // keep their cache entries apart.
    EmbeddingProviderConfig stage2_provider = make_local_provider("local-hash-stage2");
    EmbeddingProviderConfig stage3_provider = make_local_provider("local-hash-stage3");
    TextGenProviderConfig enrich_provider;
    TextGenProviderConfig qa_provider;

    std::string sparse_query_vectors;  // optional JSONL paths; both set = impact scoring
    std::string sparse_doc_vectors;

    bool use_ann = false;
    double recall_target = 0.95;
    std::uint64_t seed = 42;

    void validate() const;  // n3_in <= n2 <= n1, rows_k >= 1
    nlohmann::json to_json() const;
    static CascadeConfig from_json(const nlohmann::json& j);
    static CascadeConfig load(const std::filesystem::path& config_file);
};

struct EmbedCallCounts {
    std::uint64_t query_embeds = 0;
    std::uint64_t minitable_embeds = 0;
};

struct StageTimings {
    double stage1_ms = 0.0;
    double stage2_ms = 0.0;
    double stage3_ms = 0.0;
};

struct CascadeResult {
    std::string qid;
    Ranking stage1;
    Ranking stage2;
    Ranking stage3;
    Ranking final;
    std::vector<MiniTable> minitables;  // aligned with the final ranking
    EmbedCallCounts calls;
    StageTimings timings;
};

struct CascadeArtifacts {
    const Corpus* corpus = nullptr;
    const InvertedIndex* index = nullptr;
    const RowEmbeddingStore* store = nullptr;
    Embedder* stage2_embedder = nullptr;
    Embedder* stage3_embedder = nullptr;
    const SparseVectorMap* query_vectors = nullptr;  // optional impact-scoring pair
    const ImpactIndex* impact_index = nullptr;
    const AnnIndex* ann = nullptr;  // required when use_ann with max_row mode
};

// Fails fast on config/artifact skew (index description flag, store model id);
// called by run_cascade before any scoring.
void validate_artifacts(const CascadeConfig& config, const CascadeArtifacts& artifacts);

// Stages run in order; disabled stages pass the previous ranking through
// unchanged. Embedding-call accounting: one query embed per executed stage,
// mini-table embeds are the provider texts actually requested.
CascadeResult run_cascade(const QueryRecord& query, const CascadeConfig& config,
                          const CascadeArtifacts& artifacts);

struct BatchFailure {
    std::string qid;
    std::string error;
};

struct BatchOutput {
    std::vector<CascadeResult> results;  // ordered by qid
    std::vector<BatchFailure> failures;  // ordered by qid
};

// Bounded worker pool over queries; artifacts are shared read-only. Provider
// failures isolate per query.
BatchOutput run_batch(const std::vector<QueryRecord>& queries, const CascadeConfig& config,
                      const CascadeArtifacts& artifacts, std::size_t jobs = 1);

// One TREC run file per enabled stage plus "final", and failures.jsonl when
// any query failed. Returns the written file paths.
std::vector<std::filesystem::path> write_batch_run_files(const std::filesystem::path& out_dir,
                                                         const BatchOutput& batch,
                                                         const CascadeConfig& config);

struct EfficiencyReport {
    std::size_t corpus_size = 0;
    std::size_t query_count = 0;
    double mean_query_embeds = 0.0;
    double mean_minitable_embeds = 0.0;
    double candidate_reduction_pct = 0.0;  // 100 * (1 - n1/corpus)
    double dense_call_ratio = 0.0;         // corpus / (n1 + n2 + 3)
    StageTimings mean_timings;
};

EfficiencyReport efficiency_report(const std::vector<CascadeResult>& results,
                                   const CascadeConfig& config, std::size_t corpus_size);

nlohmann::json to_json(const EfficiencyReport& report);

}  // namespace craft
