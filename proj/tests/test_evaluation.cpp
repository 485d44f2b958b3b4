#include <doctest.h>

#include <cmath>
#include <random>

#include "craft/error.hpp"
#include "craft/evaluation.hpp"
#include "craft/util.hpp"
#include "fixtures.hpp"

using namespace craft;

namespace {

Ranking ranking_with_gold_at(const std::string& qid, const std::string& gold, std::size_t rank,
                             std::size_t depth) {
    Ranking r;
    r.qid = qid;
    r.stage = StageTag::Final;
    r.run_tag = "t";
    double score = static_cast<double>(depth + 1);
    for (std::size_t i = 1; i <= depth; ++i) {
        r.entries.push_back({i == rank ? gold : "filler-" + qid + "-" + std::to_string(i), score});
        score -= 1.0;
    }
    return r;
}

QueryRecord query(const std::string& qid, const std::string& gold) {
    QueryRecord q;
    q.qid = qid;
    q.question = "q";
    q.gold_table_ids = {gold};
    q.answers = {"a"};
    return q;
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("recall_at_k hand-counted fixture: golds at ranks 1, 7, 60") {
    std::vector<QueryRecord> queries = {query("q1", "g1"), query("q2", "g2"), query("q3", "g3")};
    std::vector<Ranking> run = {ranking_with_gold_at("q1", "g1", 1, 70),
                                ranking_with_gold_at("q2", "g2", 7, 70),
                                ranking_with_gold_at("q3", "g3", 60, 70)};
    RecallReport report = recall_at_k(run, queries, {1, 10, 50});
    CHECK(report.recall_pct[0] == doctest::Approx(100.0 / 3.0).epsilon(1e-9));
    CHECK(report.recall_pct[1] == doctest::Approx(200.0 / 3.0).epsilon(1e-9));
    CHECK(report.recall_pct[2] == doctest::Approx(200.0 / 3.0).epsilon(1e-9));
    CHECK(report.query_count == 3);

    SUBCASE("gold at rank 1 for all queries gives R@1 = 100") {
        std::vector<Ranking> perfect = {ranking_with_gold_at("q1", "g1", 1, 5),
                                        ranking_with_gold_at("q2", "g2", 1, 5),
                                        ranking_with_gold_at("q3", "g3", 1, 5)};
        RecallReport p = recall_at_k(perfect, queries, {1});
        CHECK(p.recall_pct[0] == 100.0);
    }
    SUBCASE("queries absent from the run count as misses") {
        run.pop_back();
        RecallReport p = recall_at_k(run, queries, {1, 10, 50});
        CHECK(p.recall_pct[2] == doctest::Approx(200.0 / 3.0).epsilon(1e-9));
        CHECK(p.recall_pct[1] == doctest::Approx(200.0 / 3.0).epsilon(1e-9));
    }
    SUBCASE("unknown qid in the run is an error") {
        run.push_back(ranking_with_gold_at("q-mystery", "g", 1, 3));
        CHECK_THROWS_AS(recall_at_k(run, queries, {1}), CraftError);
    }
    SUBCASE("unsorted ks are rejected") {
        CHECK_THROWS_AS(recall_at_k(run, queries, {10, 1}), CraftError);
    }
    SUBCASE("any-gold semantics for multi-gold queries") {
        std::vector<QueryRecord> multi = {query("q1", "nope")};
        multi[0].gold_table_ids.push_back("filler-q1-2");
        RecallReport p = recall_at_k({run[0]}, multi, {1, 10});
        CHECK(p.recall_pct[0] == 0.0);
        CHECK(p.recall_pct[1] == 100.0);
    }
}

TEST_CASE("recall is monotone in k") {
    std::mt19937_64 rng(17);
    std::vector<QueryRecord> queries;
    std::vector<Ranking> run;
    for (int i = 0; i < 25; ++i) {
        std::string qid = "q" + std::to_string(i);
        std::string gold = "g" + std::to_string(i);
        queries.push_back(query(qid, gold));
        run.push_back(ranking_with_gold_at(qid, gold, 1 + rng() % 80, 80));
    }
    RecallReport report = recall_at_k(run, queries, {1, 5, 10, 20, 40, 80});
    for (std::size_t i = 1; i < report.recall_pct.size(); ++i) {
        CHECK(report.recall_pct[i] >= report.recall_pct[i - 1]);
    }
}

TEST_CASE("answer_f1 matches the normalization oracle") {
    CHECK(answer_f1("Jamie Elliott", {"Jamie Elliott"}) == 1.0);
    CHECK(answer_f1("Asile's World (2000)", {"Asile's World"}) ==
          doctest::Approx(0.8).epsilon(1e-12));
    CHECK(answer_f1("Pass", {"Jamie Elliott"}) == 0.0);
    CHECK(answer_f1("the answer", {"answer"}) == 1.0);  // article dropped
    CHECK(answer_f1("", {""}) == 1.0);                  // empty vs empty
    CHECK(answer_f1("", {"x"}) == 0.0);
    CHECK(answer_f1("x", {"the a an"}) == 0.0);         // gold normalizes to empty
    CHECK(answer_f1("x x y", {"x y y"}) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(answer_f1("b", {"zzz", "b"}) == 1.0);         // max over golds

    SUBCASE("normalization steps") {
        CHECK(normalize_answer("Asile's World (2000)") ==
              std::vector<std::string>{"asiles", "world", "2000"});
        CHECK(normalize_answer("The  Quick,   brown fox!") ==
              std::vector<std::string>{"quick", "brown", "fox"});
        CHECK(normalize_answer("a an the") == std::vector<std::string>{});
    }

    SUBCASE("symmetry when each side is the other's sole gold") {
        std::mt19937_64 rng(23);
        const char* words[] = {"alpha", "beta", "gamma", "delta", "2000"};
        for (int i = 0; i < 30; ++i) {
            std::string a;
            std::string b;
            for (int w = 0; w < 4; ++w) {
                a += std::string(words[rng() % 5]) + " ";
                b += std::string(words[rng() % 5]) + " ";
            }
            CHECK(answer_f1(a, {b}) == doctest::Approx(answer_f1(b, {a})).epsilon(1e-12));
        }
    }

    CHECK_THROWS_AS(answer_f1("x", {}), CraftError);
}

TEST_CASE("token_stats computes savings and enforces mini <= full") {
    std::vector<ContextSample> samples = {{"q1", "a b c", "a b c d e f"},
                                          {"q2", "one two", "one two"}};
    TokenReport report = token_stats(samples);
    CHECK(report.per_query[0].mini_tokens == 3);
    CHECK(report.per_query[0].full_tokens == 6);
    CHECK(report.mean_mini == doctest::Approx(2.5));
    CHECK(report.mean_full == doctest::Approx(4.0));
    CHECK(report.savings_pct == doctest::Approx(100.0 * (1.0 - 5.0 / 8.0)).epsilon(1e-12));

    SUBCASE("identical contexts give zero savings") {
        TokenReport same = token_stats({{"q", "x y", "x y"}});
        CHECK(same.savings_pct == 0.0);
    }
    SUBCASE("mini larger than full is a data error") {
        CHECK_THROWS_AS(token_stats({{"q", "a b c", "a"}}), CraftError);
    }
    SUBCASE("pluggable tokenizer") {
        TokenReport chars = token_stats({{"q", "ab", "abcd"}},
                                        [](std::string_view s) { return s.size(); }, "bytes");
        CHECK(chars.mean_mini == doctest::Approx(2.0));
        CHECK(chars.mean_full == doctest::Approx(4.0));
        CHECK(chars.tokenizer_name == "bytes");
    }
}

TEST_CASE("perturbation_delta follows the documented arithmetic") {
    RecallReport orig;
    orig.ks = {1, 10, 50};
    orig.recall_pct = {41.13, 87.16, 96.84};
    orig.query_count = 966;
    RecallReport pert;
    pert.ks = {1, 10, 50};
    pert.recall_pct = {41.02, 86.83, 96.08};
    pert.query_count = 966;

    PerturbationReport delta = perturbation_delta(orig, pert);
    // ((-0.11) + (-0.33) + (-0.76)) / 3 = -0.40
    CHECK(delta.delta_avg == doctest::Approx(-0.40).epsilon(1e-9));

    double recomputed = 0.0;
    for (std::size_t i = 0; i < delta.ks.size(); ++i) {
        recomputed += delta.perturbed_pct[i] - delta.original_pct[i];
    }
    recomputed /= static_cast<double>(delta.ks.size());
    CHECK(std::abs(recomputed - delta.delta_avg) < 1e-12);

    SUBCASE("identical reports give exactly zero") {
        PerturbationReport zero = perturbation_delta(orig, orig);
        CHECK(zero.delta_avg == 0.0);
    }
    SUBCASE("improvement is positive") {
        PerturbationReport up = perturbation_delta(pert, orig);
        CHECK(up.delta_avg > 0.0);
    }
    SUBCASE("k mismatch is an error") {
        RecallReport other = orig;
        other.ks = {1, 10};
        other.recall_pct = {1.0, 2.0};
        CHECK_THROWS_AS(perturbation_delta(orig, other), CraftError);
    }
}

TEST_CASE("report emission round-trips and validates against the shipped schema") {
    RecallReport report;
    report.ks = {1, 10, 50};
    report.recall_pct = {33.25, 66.5, 99.875};
    report.query_count = 8;

    SUBCASE("csv round-trip") {
        RecallReport back = recall_from_csv(to_csv(report));
        CHECK(back.ks == report.ks);
        for (std::size_t i = 0; i < report.ks.size(); ++i) {
            CHECK(back.recall_pct[i] == doctest::Approx(report.recall_pct[i]).epsilon(1e-9));
        }
    }
    SUBCASE("markdown has one row per run label") {
        std::string md = to_markdown(report, "craft");
        CHECK(md.find("| craft |") != std::string::npos);
        CHECK(md.find("R@50") != std::string::npos);
    }
    SUBCASE("json validates against the shipped schema") {
        nlohmann::json schema =
            nlohmann::json::parse(read_file(std::string(CRAFT_SOURCE_DIR) +
                                            "/docs/report_schema.json"));
        std::string error;
        CHECK(matches_schema(to_json(report), schema["recall"], &error));
        CHECK(error.empty());

        PerturbationReport delta;
        delta.ks = {1};
        delta.original_pct = {1.0};
        delta.perturbed_pct = {2.0};
        delta.delta_avg = 1.0;
        CHECK(matches_schema(to_json(delta), schema["perturbation"], &error));

        TokenReport tokens = token_stats({{"q", "a", "a b"}});
        CHECK(matches_schema(to_json(tokens), schema["tokens"], &error));

        nlohmann::json wrong = {{"ks", "oops"}};
        CHECK_FALSE(matches_schema(wrong, schema["recall"], &error));
    }
    SUBCASE("plotdata csv shape") {
        std::string csv = plotdata_csv({{1, 362.7, 0.5676}, {5, 1561.34, 0.6772}});
        CHECK(csv.rfind("n,mean_context_tokens,mean_f1\n", 0) == 0);
        CHECK(csv.find("5,1561.34,0.6772") != std::string::npos);
    }
}

}  // TEST_SUITE
