#pragma once

#include <cstddef>
#include <vector>

#include "craft/corpus.hpp"
#include "craft/dense.hpp"
#include "craft/embeddings.hpp"

namespace craft {

struct RerankConfig {
    std::size_t n_in = 100;   // candidates consumed
    std::size_t n_out = 100;  // final list length, <= n_in

    void validate() const;
};

struct Stage3Output {
    Ranking ranking;  // stage tag stage3
    std::size_t query_provider_texts = 0;
    std::size_t minitable_provider_texts = 0;
};

// High-precision rerank of the top mini-tables: raw question vs mini-table
// text under the stage-3 provider, no augmentation. Embedding calls per query
// are 1 + |minitables|.
Stage3Output stage3_rerank(const QueryRecord& query, const std::vector<MiniTable>& minitables,
                           Embedder& embedder, const RerankConfig& config);

}  // namespace craft
