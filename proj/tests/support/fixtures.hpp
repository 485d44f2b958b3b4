#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "craft/corpus.hpp"

namespace craft::testing {

struct Fixture {
    Corpus corpus;
    std::vector<QueryRecord> queries;
};

// Random filler table with a shared "record" token in the title so broad
// queries match every document.
TableRecord make_filler_table(std::string table_id, std::mt19937_64& rng, std::size_t rows = 6,
                              std::size_t cols = 3);

// 1,000 tables / 100 queries with one planted gold table per query. The gold
// table carries a single row holding the query's subject/attribute pair plus
// the answer token.
Fixture make_planted_fixture(std::size_t n_tables = 1000, std::size_t n_queries = 100,
                             std::uint64_t seed = 7, std::size_t gold_rows = 6);

// Planted fixture variant where each query also gets dedicated lexical
// distractor tables: they repeat the query's subject/attribute tokens often
// enough to beat the gold table at BM25, but never carry them together in a
// single concentrated row. heavy_share of the queries get enough distractors
// to push the gold table out of the sparse top-10.
Fixture make_distractor_fixture(std::size_t n_queries = 100, std::uint64_t seed = 11);

// Wide fixture for embedding-call accounting: every table matches the single
// query, so Stage 1 fills its full candidate budget.
Fixture make_wide_fixture(std::size_t n_tables, std::uint64_t seed = 3);

// 50 natural-language questions over the planted fixture for the
// perturbation protocol.
std::vector<QueryRecord> make_perturbation_questions(const Fixture& fixture, std::size_t count = 50);

// Case-study micro-corpora: minitable context isolates the answer row while
// the full table contains a diluted high-overlap distractor row.
struct CaseStudy {
    Corpus corpus;
    QueryRecord query;
    std::vector<std::string> ranked_ids;  // final ranking order, gold not first
    std::string gold_id;
};

CaseStudy make_case_study_one();  // draft pick lookup, gold ranked third
CaseStudy make_case_study_two();  // song catalogue lookup, gold ranked second

}  // namespace craft::testing
