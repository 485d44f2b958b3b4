#include "craft/rerank.hpp"

#include <algorithm>

#include "craft/error.hpp"

namespace craft {

void RerankConfig::validate() const {
    if (n_out < 1 || n_out > n_in) {
        throw usage_error("rerank config requires 1 <= n_out <= n_in");
    }
}

Stage3Output stage3_rerank(const QueryRecord& query, const std::vector<MiniTable>& minitables,
                           Embedder& embedder, const RerankConfig& config) {
    config.validate();
    if (minitables.size() > config.n_in) {
        throw usage_error("stage3_rerank: got " + std::to_string(minitables.size()) +
                          " mini-tables, n_in is " + std::to_string(config.n_in));
    }

    Stage3Output out;
    out.ranking.qid = query.qid;
    out.ranking.stage = StageTag::Stage3;
    out.ranking.run_tag = "craft";

    if (minitables.empty()) return out;

    EmbedResult query_embed = embedder.embed(std::vector<std::string>{query.question});
    out.query_provider_texts = query_embed.provider_texts;
    const EmbeddingVector& query_vec = query_embed.vectors[0];

    std::vector<std::string> texts;
    texts.reserve(minitables.size());
    for (const auto& mini : minitables) {
        if (mini.text.empty()) {
            throw data_error("stage3_rerank: empty mini-table text for " + mini.table_id);
        }
        texts.push_back(mini.text);
    }
    EmbedResult embedded = embedder.embed(texts);
    out.minitable_provider_texts = embedded.provider_texts;

    out.ranking.entries.reserve(minitables.size());
    for (std::size_t i = 0; i < minitables.size(); ++i) {
        out.ranking.entries.push_back(
            {minitables[i].table_id, cosine(query_vec, embedded.vectors[i])});
    }
    out.ranking.sort_canonical();
    if (out.ranking.entries.size() > config.n_out) out.ranking.entries.resize(config.n_out);
    return out;
}

}  // namespace craft
