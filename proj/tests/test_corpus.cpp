#include <doctest.h>

#include <filesystem>
#include <random>

#include "craft/corpus.hpp"
#include "craft/error.hpp"
#include "craft/util.hpp"
#include "fixtures.hpp"

using namespace craft;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "craft_corpus_tests";
    fs::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("load_corpus parses and validates jsonl") {
    auto path = temp_file("ok.jsonl");
    write_file(path,
               R"({"table_id": "t1", "title": "Picks", "headers": ["Pick", "Player"], "rows": [["11", "Jamie Elliott"]]})"
               "\n"
               R"({"table_id": "t2", "title": "Empty", "headers": ["A"], "rows": [], "description": "desc", "source_uri": "wiki://x"})"
               "\n");
    Corpus corpus = load_corpus(path);
    CHECK(corpus.size() == 2);
    CHECK(corpus.at("t1").rows.size() == 1);
    CHECK(corpus.at("t2").rows.empty());
    CHECK(corpus.at("t2").description == "desc");
    CorpusStats stats = corpus.stats();
    CHECK(stats.table_count == 2);
    CHECK(stats.avg_rows == doctest::Approx(0.5));
    CHECK(stats.avg_cols == doctest::Approx(1.5));
}

TEST_CASE("load_corpus empty file yields empty corpus") {
    auto path = temp_file("empty.jsonl");
    write_file(path, "");
    Corpus corpus = load_corpus(path);
    CHECK(corpus.size() == 0);
    CHECK(corpus.stats().table_count == 0);
}

TEST_CASE("load_corpus row width mismatch names the table") {
    auto path = temp_file("badrow.jsonl");
    write_file(path,
               R"({"table_id": "short-row", "title": "T", "headers": ["a","b","c","d"], "rows": [["1","2","3","4"],["1","2","3"]]})"
               "\n");
    CHECK_THROWS_WITH_AS(load_corpus(path),
                         doctest::Contains("short-row"), CraftError);
}

TEST_CASE("load_corpus rejects duplicates and malformed lines with line numbers") {
    auto dup = temp_file("dup.jsonl");
    write_file(dup,
               R"({"table_id": "t1", "title": "", "headers": ["a"], "rows": []})"
               "\n"
               R"({"table_id": "t1", "title": "", "headers": ["a"], "rows": []})"
               "\n");
    CHECK_THROWS_WITH_AS(load_corpus(dup), doctest::Contains("duplicate table_id"), CraftError);

    auto bad = temp_file("bad.jsonl");
    write_file(bad, "{\"table_id\": \"t1\"\nnot json\n");
    CHECK_THROWS_WITH_AS(load_corpus(bad), doctest::Contains("line 1"), CraftError);
}

TEST_CASE("load_queries defaults and validation") {
    auto path = temp_file("queries.jsonl");
    write_file(path,
               R"({"qid": "q1", "question": "who", "gold_table_ids": ["t1"], "answers": ["x"]})"
               "\n"
               R"({"qid": "q2", "question": "what", "sub_questions": ["a", "b"], "gold_table_ids": ["t2"], "answers": [], "perturbed_of": "q1"})"
               "\n");
    auto queries = load_queries(path);
    REQUIRE(queries.size() == 2);
    CHECK(queries[0].sub_questions.empty());
    CHECK(queries[1].sub_questions.size() == 2);
    CHECK(queries[1].perturbed_of == "q1");

    auto dup = temp_file("dupq.jsonl");
    write_file(dup,
               R"({"qid": "q1", "question": "a", "gold_table_ids": ["t"], "answers": []})"
               "\n"
               R"({"qid": "q1", "question": "b", "gold_table_ids": ["t"], "answers": []})"
               "\n");
    CHECK_THROWS_WITH_AS(load_queries(dup), doctest::Contains("duplicate qid"), CraftError);

    auto nogold = temp_file("nogold.jsonl");
    write_file(nogold, R"({"qid": "q1", "question": "a", "gold_table_ids": [], "answers": []})"
                       "\n");
    CHECK_THROWS_WITH_AS(load_queries(nogold), doctest::Contains("gold_table_ids"), CraftError);
}

TEST_CASE("serialize_row template") {
    TableRecord t;
    t.table_id = "t";
    t.title = "T";
    t.headers = {"Pick", "Player"};
    t.rows = {{"11", "Jamie Elliott"}};
    CHECK(serialize_row(t, 0) == "Pick: 11 | Player: Jamie Elliott");

    TableRecord single;
    single.table_id = "s";
    single.headers = {"col"};
    single.rows = {{"x"}};
    CHECK(serialize_row(single, 0) == "col: x");

    TableRecord empty_cell;
    empty_cell.table_id = "e";
    empty_cell.headers = {"h"};
    empty_cell.rows = {{""}};
    CHECK(serialize_row(empty_cell, 0) == "h: ");

    CHECK_THROWS_AS(serialize_row(t, 1), CraftError);
}

TEST_CASE("full_table_text layout and determinism") {
    TableRecord t;
    t.table_id = "t";
    t.title = "Draft";
    t.headers = {"Pick", "Player"};
    t.rows = {{"11", "Jamie Elliott"}, {"12", "Lee Walker"}};

    SUBCASE("without description text ends at last row") {
        CHECK(full_table_text(t) ==
              "Draft\nPick | Player\nPick: 11 | Player: Jamie Elliott\nPick: 12 | Player: Lee Walker");
    }
    SUBCASE("description is the final block") {
        t.description = "all picks";
        std::string text = full_table_text(t);
        CHECK(text.substr(text.size() - 9) == "all picks");
        CHECK(full_table_text(t, false).find("all picks") == std::string::npos);
    }
    SUBCASE("byte-identical across calls") {
        CHECK(full_table_text(t) == full_table_text(t));
    }
    SUBCASE("length monotone in row count") {
        TableRecord grow = t;
        std::size_t prev = full_table_text(grow).size();
        for (int i = 0; i < 4; ++i) {
            grow.rows.push_back({"1", "x"});
            std::size_t cur = full_table_text(grow).size();
            CHECK(cur >= prev);
            prev = cur;
        }
    }
}

TEST_CASE("corpus jsonl round-trip is field-for-field equal") {
    auto fixture = craft::testing::make_planted_fixture(40, 5, 123);
    auto path = temp_file("roundtrip.jsonl");
    save_corpus(fixture.corpus, path);
    Corpus reloaded = load_corpus(path);
    REQUIRE(reloaded.size() == fixture.corpus.size());
    for (const auto& [id, t] : fixture.corpus.tables()) {
        const TableRecord& r = reloaded.at(id);
        CHECK(r.title == t.title);
        CHECK(r.headers == t.headers);
        CHECK(r.rows == t.rows);
        CHECK(r.description == t.description);
        CHECK(r.source_uri == t.source_uri);
    }
}

TEST_CASE("ingestion applies NFC normalization") {
    auto path = temp_file("nfc.jsonl");
    // "e" + combining acute in the title must compose to a single codepoint.
    write_file(path,
               std::string(R"({"table_id": "t1", "title": "cafe)") + "\xcc\x81" +
                   R"(", "headers": ["h"], "rows": []})" + "\n");
    Corpus corpus = load_corpus(path);
    CHECK(corpus.at("t1").title == "caf\xc3\xa9");
}

TEST_CASE("ranking canonical order and validation") {
    Ranking r;
    r.qid = "q";
    r.entries = {{"b", 1.0}, {"a", 1.0}, {"c", 2.0}};
    r.sort_canonical();
    CHECK(r.entries[0].table_id == "c");
    CHECK(r.entries[1].table_id == "a");  // tie broken by ascending id
    CHECK(r.entries[2].table_id == "b");
    CHECK_NOTHROW(r.validate());

    Ranking again = r;
    again.sort_canonical();
    CHECK(again.entries[0].table_id == r.entries[0].table_id);
    CHECK(again.entries[2].table_id == r.entries[2].table_id);

    r.entries.push_back({"a", 0.5});
    CHECK_THROWS_WITH_AS(r.validate(), doctest::Contains("duplicate"), CraftError);
}

TEST_CASE("trec run file round-trip") {
    Ranking r1;
    r1.qid = "q1";
    r1.run_tag = "craft";
    r1.entries = {{"t3", 2.5}, {"t1", 1.25}};
    Ranking r2;
    r2.qid = "q2";
    r2.run_tag = "craft";
    r2.entries = {{"t9", 0.125}};

    auto path = temp_file("run.trec");
    write_run_file(path, {r1, r2});
    std::string content = read_file(path);
    CHECK(content.find("q1 Q0 t3 1 2.5 craft") != std::string::npos);
    CHECK(content.find("q1 Q0 t1 2 1.25 craft") != std::string::npos);

    auto reloaded = read_run_file(path);
    REQUIRE(reloaded.size() == 2);
    CHECK(reloaded[0].entries.size() == 2);
    CHECK(reloaded[0].entries[0].table_id == "t3");
    CHECK(reloaded[1].entries[0].score == doctest::Approx(0.125));
}

}  // TEST_SUITE
