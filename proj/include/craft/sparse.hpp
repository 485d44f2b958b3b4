#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "craft/corpus.hpp"

namespace craft {

// Lowercases and splits on Unicode whitespace and punctuation; punctuation is
// dropped, digits are kept. Non-ASCII letters pass through unchanged.
std::vector<std::string> tokenize(std::string_view text);

struct Posting {
    std::uint32_t doc = 0;  // ordinal into doc_ids
    std::uint32_t tf = 0;
};

class InvertedIndex {
public:
    static InvertedIndex build(const Corpus& corpus, bool use_descriptions, double k1 = 1.2,
                               double b = 0.75);

    // Okapi BM25 with idf = ln(1 + (N - df + 0.5) / (df + 0.5)); the +1 keeps
    // scores non-negative. Terms absent from the document contribute 0.
    double bm25_score(const std::vector<std::string>& query_terms, std::uint32_t doc) const;

    // Top-n candidates with score > 0, canonical tie-break.
    std::vector<RankingEntry> retrieve(const std::vector<std::string>& query_terms,
                                       std::size_t n) const;

    std::size_t doc_count() const { return doc_ids_.size(); }
    double avgdl() const { return avgdl_; }
    double k1() const { return k1_; }
    double b() const { return b_; }
    bool with_descriptions() const { return with_descriptions_; }
    const std::vector<std::string>& doc_ids() const { return doc_ids_; }
    const std::vector<std::uint32_t>& doc_lengths() const { return doc_lengths_; }
    const std::map<std::string, std::vector<Posting>>& postings() const { return postings_; }
    std::optional<std::uint32_t> doc_ordinal(std::string_view table_id) const;

    void save(const std::filesystem::path& path) const;
    static InvertedIndex load(const std::filesystem::path& path);

private:
    std::map<std::string, std::vector<Posting>> postings_;
    std::vector<std::uint32_t> doc_lengths_;
    std::vector<std::string> doc_ids_;
    double avgdl_ = 0.0;
    double k1_ = 1.2;
    double b_ = 0.75;
    bool with_descriptions_ = true;
};

InvertedIndex build_index(const Corpus& corpus, bool use_descriptions);

// Imported learned-sparse (SPLADE-style) term weights.
struct SparseVector {
    std::map<std::string, double> weights;  // strictly positive entries only
};

using SparseVectorMap = std::map<std::string, SparseVector>;

// JSONL: {"id": str, "weights": {term: float}}
SparseVectorMap import_sparse_vectors(const std::filesystem::path& path);

double impact_score(const SparseVector& query, const SparseVector& doc);

// Inverted view over imported document vectors for impact-scored retrieval.
class ImpactIndex {
public:
    explicit ImpactIndex(const SparseVectorMap& doc_vectors);

    std::vector<RankingEntry> retrieve(const SparseVector& query, std::size_t n) const;
    std::size_t doc_count() const { return doc_ids_.size(); }

private:
    std::map<std::string, std::vector<std::pair<std::uint32_t, double>>> postings_;
    std::vector<std::string> doc_ids_;
};

// Stage 1: BM25 over the inverted index, or impact scoring when sparse
// vectors are bound for both query and documents. With expansion on, the
// query terms are the question's tokens concatenated with every
// sub-question's tokens.
Ranking stage1_retrieve(const QueryRecord& query, const InvertedIndex& index, std::size_t n1,
                        bool expand_subquestions, const SparseVectorMap* query_vectors = nullptr,
                        const ImpactIndex* impact_index = nullptr);

}  // namespace craft
