#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "craft/corpus.hpp"
#include "craft/embeddings.hpp"

namespace craft {

struct RowRef {
    std::string table_id;
    std::uint32_t row = 0;

    auto operator<=>(const RowRef&) const = default;
};

// One embedding per table row, aligned with row indices; built exactly once
// per corpus and persisted (vectors file + table_id -> (offset, row_count)
// index file).
class RowEmbeddingStore {
public:
    RowEmbeddingStore() = default;

    const std::string& model_id() const { return model_id_; }
    const std::string& built_at() const { return built_at_; }
    std::size_t dim() const { return dim_; }
    std::size_t total_rows() const;
    bool covers(std::string_view table_id) const;
    const std::vector<EmbeddingVector>& rows_for(const std::string& table_id) const;
    const std::map<std::string, std::vector<EmbeddingVector>>& tables() const { return rows_; }

    void save(const std::filesystem::path& vectors_path) const;
    static RowEmbeddingStore load(const std::filesystem::path& vectors_path);

    friend RowEmbeddingStore precompute_row_embeddings(const Corpus& corpus, Embedder& embedder);

private:
    std::map<std::string, std::vector<EmbeddingVector>> rows_;
    std::string model_id_;
    std::string built_at_;
    std::size_t dim_ = 0;
};

RowEmbeddingStore precompute_row_embeddings(const Corpus& corpus, Embedder& embedder);

// Headers plus the top-k query-relevant rows of one table. selected_rows is
// sorted by (relevance desc, row asc); the text serialization lists the
// selected rows in their original table order.
struct MiniTable {
    std::string table_id;
    std::vector<std::string> headers;
    std::vector<std::pair<std::uint32_t, double>> selected_rows;
    std::string text;
};

MiniTable build_minitable(const TableRecord& table, const EmbeddingVector& query_vec,
                          const RowEmbeddingStore& store, std::size_t k = 5,
                          bool include_description = false);

enum class Stage2Mode { MinitableText, MaxRow };

Stage2Mode stage2_mode_from_name(std::string_view name);
std::string_view stage2_mode_name(Stage2Mode mode);

class AnnIndex;

struct Stage2Options {
    std::size_t n2 = 100;
    std::size_t rows_k = 5;
    Stage2Mode mode = Stage2Mode::MinitableText;
    bool minitable_context = true;     // false: embed the full-table text instead
    bool include_description = false;  // description inside the scored text
    const AnnIndex* ann = nullptr;     // MaxRow accelerator; approximate by nature
};

struct Stage2Output {
    Ranking ranking;                    // top-n2, stage tag stage2
    std::vector<MiniTable> minitables;  // aligned with ranking entries
    std::size_t query_provider_texts = 0;
    std::size_t minitable_provider_texts = 0;
};

// Dense rerank of the Stage-1 candidates. In MinitableText mode each
// candidate's mini-table text is embedded on the fly and scored against the
// query embedding; in MaxRow mode the score is the best precomputed row
// cosine.
Stage2Output stage2_rerank(const QueryRecord& query, const Ranking& stage1, const Corpus& corpus,
                           const RowEmbeddingStore& store, Embedder& embedder,
                           const Stage2Options& options);

// Exact top-k over every row vector in the store; the ANN oracle.
std::vector<RowRef> exact_search(const RowEmbeddingStore& store, const EmbeddingVector& query_vec,
                                 std::size_t k);

struct AnnParams {
    std::size_t max_degree = 24;       // graph degree (doubled on the base layer)
    std::size_t ef_construction = 320;
    std::size_t ef_search = 0;         // 0: max(256, 5k) at query time
    double recall_target = 0.95;
    std::uint64_t seed = 42;
};

// Small-world graph over the store's row vectors. Optional accelerator for
// MaxRow mode; results must stay reproducible with exact_search.
class AnnIndex {
public:
    static AnnIndex build(const RowEmbeddingStore& store, AnnParams params = {});

    std::vector<RowRef> query(const EmbeddingVector& query_vec, std::size_t k) const;
    double measured_recall(const RowEmbeddingStore& store,
                           const std::vector<EmbeddingVector>& probes, std::size_t k) const;

    bool built() const { return built_; }
    std::size_t size() const { return ids_.size(); }
    const AnnParams& params() const { return params_; }

private:
    float dot(std::size_t node, const float* query) const;

    struct SearchHit {
        float dist;
        std::uint32_t node;
    };
    void search_layer(const float* query, std::size_t ef, int layer,
                      std::vector<SearchHit>& out, std::uint32_t entry) const;
    std::vector<std::uint32_t> select_neighbors(const float* query,
                                                std::vector<SearchHit>& candidates,
                                                std::size_t m) const;

    AnnParams params_;
    bool built_ = false;
    std::size_t dim_ = 0;
    std::vector<RowRef> ids_;
    std::vector<float> vectors_;                               // ids_.size() x dim_
    std::vector<std::vector<std::vector<std::uint32_t>>> links_;  // node -> layer -> neighbors
    std::vector<int> levels_;
    std::uint32_t entry_point_ = 0;
    int max_level_ = -1;
};

}  // namespace craft
