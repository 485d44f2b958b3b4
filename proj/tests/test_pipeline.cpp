#include <doctest.h>

#include <filesystem>
#include <set>

#include "craft/error.hpp"
#include "craft/evaluation.hpp"
#include "craft/pipeline.hpp"
#include "craft/util.hpp"
#include "fixtures.hpp"

using namespace craft;
namespace fs = std::filesystem;

namespace {

struct PipelineRig {
    Corpus corpus;
    std::vector<QueryRecord> queries;
    InvertedIndex index;
    EmbeddingCache cache;
    Embedder stage2;
    Embedder stage3;
    RowEmbeddingStore store;
    CascadeConfig config;

    explicit PipelineRig(craft::testing::Fixture fixture, CascadeConfig cfg = small_config())
        : corpus(std::move(fixture.corpus)),
          queries(std::move(fixture.queries)),
          index(InvertedIndex::build(corpus, cfg.toggles.descriptions)),
          stage2(cfg.stage2_provider, &cache),
          stage3(cfg.stage3_provider, &cache),
          store(precompute_row_embeddings(corpus, stage2)),
          config(std::move(cfg)) {}

    static CascadeConfig small_config() {
        CascadeConfig cfg;
        cfg.n1 = 20;
        cfg.n2 = 10;
        cfg.n3_in = 5;
        cfg.n3_out = 5;
        cfg.stage2_provider.model_id = "local-hash-stage2";
        cfg.stage3_provider.model_id = "local-hash-stage3";
        return cfg;
    }

    CascadeArtifacts artifacts() {
        CascadeArtifacts a;
        a.corpus = &corpus;
        a.index = &index;
        a.store = &store;
        a.stage2_embedder = &stage2;
        a.stage3_embedder = &stage3;
        return a;
    }
};

std::set<std::string> table_set(const Ranking& r) {
    std::set<std::string> out;
    for (const auto& e : r.entries) out.insert(e.table_id);
    return out;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("containment chain holds for every query") {
    PipelineRig rig(craft::testing::make_planted_fixture(60, 10, 111));
    for (const auto& q : rig.queries) {
        CascadeResult r = run_cascade(q, rig.config, rig.artifacts());
        auto s1 = table_set(r.stage1);
        auto s2 = table_set(r.stage2);
        auto s3 = table_set(r.stage3);
        CHECK(std::includes(s1.begin(), s1.end(), s2.begin(), s2.end()));
        CHECK(std::includes(s2.begin(), s2.end(), s3.begin(), s3.end()));
        CHECK(table_set(r.final) == s3);
        CHECK(r.minitables.size() == r.final.entries.size());
    }
}

TEST_CASE("disabled stages pass the previous ranking through") {
    CascadeConfig cfg = PipelineRig::small_config();
    cfg.toggles.stage2 = false;
    cfg.toggles.stage3 = false;
    PipelineRig rig(craft::testing::make_planted_fixture(40, 5, 112), cfg);
    CascadeResult r = run_cascade(rig.queries[0], rig.config, rig.artifacts());
    REQUIRE(r.final.entries.size() == r.stage1.entries.size());
    for (std::size_t i = 0; i < r.final.entries.size(); ++i) {
        CHECK(r.final.entries[i].table_id == r.stage1.entries[i].table_id);
        CHECK(r.final.entries[i].score == r.stage1.entries[i].score);
    }
    CHECK(r.calls.query_embeds == 1);  // stage-1 only
    CHECK(r.calls.minitable_embeds == 0);
}

TEST_CASE("embedding-call accounting: cold (3, n1 + n3_in), warm (3, 0)") {
    // Every table shares the query's "record" token, so Stage 1 fills n1.
    auto fixture = craft::testing::make_wide_fixture(60);
    CascadeConfig cfg = PipelineRig::small_config();
    cfg.n1 = 30;
    cfg.n2 = 10;
    cfg.n3_in = 10;
    cfg.n3_out = 10;
    PipelineRig rig(std::move(fixture), cfg);

    CascadeResult cold = run_cascade(rig.queries[0], rig.config, rig.artifacts());
    REQUIRE(cold.stage1.entries.size() == 30);
    CHECK(cold.calls.query_embeds == 3);
    CHECK(cold.calls.minitable_embeds == 30 + 10);

    CascadeResult warm = run_cascade(rig.queries[0], rig.config, rig.artifacts());
    CHECK(warm.calls.query_embeds == 3);
    CHECK(warm.calls.minitable_embeds == 0);
    REQUIRE(warm.final.entries.size() == cold.final.entries.size());
    for (std::size_t i = 0; i < warm.final.entries.size(); ++i) {
        CHECK(warm.final.entries[i].table_id == cold.final.entries[i].table_id);
        CHECK(warm.final.entries[i].score == cold.final.entries[i].score);
    }
}

TEST_CASE("artifact/config mismatches fail fast") {
    PipelineRig rig(craft::testing::make_planted_fixture(30, 3, 113));

    SUBCASE("store model vs stage-2 provider") {
        CascadeConfig cfg = rig.config;
        cfg.stage2_provider.model_id = "some-other-model";
        CHECK_THROWS_WITH_AS(run_cascade(rig.queries[0], cfg, rig.artifacts()),
                             doctest::Contains("row store model"), CraftError);
    }
    SUBCASE("index description flag vs toggle") {
        CascadeConfig cfg = rig.config;
        cfg.toggles.descriptions = false;
        CHECK_THROWS_WITH_AS(run_cascade(rig.queries[0], cfg, rig.artifacts()),
                             doctest::Contains("descriptions"), CraftError);
    }
    SUBCASE("invalid widths") {
        CascadeConfig cfg = rig.config;
        cfg.n2 = cfg.n1 + 1;
        CHECK_THROWS_AS(cfg.validate(), CraftError);
        CascadeConfig cfg2 = rig.config;
        cfg2.n3_in = cfg2.n2 + 1;
        CHECK_THROWS_AS(cfg2.validate(), CraftError);
    }
}

TEST_CASE("run_batch isolates failures and orders results by qid") {
    auto fixture = craft::testing::make_planted_fixture(30, 3, 114);
    // Build the index over a corpus containing one extra matching table, then
    // run against the smaller corpus: queries retrieving the ghost fail in
    // Stage 2, the others succeed.
    Corpus with_ghost;
    for (const auto& [id, t] : fixture.corpus.tables()) with_ghost.add_table(t);
    TableRecord ghost;
    ghost.table_id = "zz-ghost";
    ghost.title = "subject0001 aspect0001";  // matches only q0001's rare terms
    ghost.headers = {"x"};
    with_ghost.add_table(ghost);

    CascadeConfig cfg = PipelineRig::small_config();
    EmbeddingCache cache;
    Embedder stage2(cfg.stage2_provider, &cache);
    Embedder stage3(cfg.stage3_provider, &cache);
    InvertedIndex index = InvertedIndex::build(with_ghost, true);
    RowEmbeddingStore store = precompute_row_embeddings(fixture.corpus, stage2);

    CascadeArtifacts artifacts;
    artifacts.corpus = &fixture.corpus;
    artifacts.index = &index;
    artifacts.store = &store;
    artifacts.stage2_embedder = &stage2;
    artifacts.stage3_embedder = &stage3;

    BatchOutput out = run_batch(fixture.queries, cfg, artifacts, 2);
    CHECK(out.results.size() == 2);
    REQUIRE(out.failures.size() == 1);
    CHECK(out.failures[0].qid == "q0001");
    CHECK(out.failures[0].error.find("zz-ghost") != std::string::npos);
    for (std::size_t i = 1; i < out.results.size(); ++i) {
        CHECK(out.results[i - 1].qid < out.results[i].qid);
    }

    auto dir = fs::temp_directory_path() / "craft_pipeline_tests" / "batch";
    fs::remove_all(dir);
    auto written = write_batch_run_files(dir, out, cfg);
    CHECK(fs::exists(dir / "stage1.trec"));
    CHECK(fs::exists(dir / "stage2.trec"));
    CHECK(fs::exists(dir / "stage3.trec"));
    CHECK(fs::exists(dir / "final.trec"));
    CHECK(fs::exists(dir / "failures.jsonl"));
    CHECK(read_file(dir / "failures.jsonl").find("q0001") != std::string::npos);

    auto final_run = read_run_file(dir / "final.trec");
    CHECK(final_run.size() == 2);
}

TEST_CASE("deterministic run files across repeated batches") {
    auto fixture = craft::testing::make_planted_fixture(50, 8, 115);
    PipelineRig rig(std::move(fixture));
    auto dir_a = fs::temp_directory_path() / "craft_pipeline_tests" / "det_a";
    auto dir_b = fs::temp_directory_path() / "craft_pipeline_tests" / "det_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    BatchOutput a = run_batch(rig.queries, rig.config, rig.artifacts(), 4);
    BatchOutput b = run_batch(rig.queries, rig.config, rig.artifacts(), 1);
    write_batch_run_files(dir_a, a, rig.config);
    write_batch_run_files(dir_b, b, rig.config);
    for (const char* name : {"stage1.trec", "stage2.trec", "stage3.trec", "final.trec"}) {
        CHECK(read_file(dir_a / name) == read_file(dir_b / name));
    }
}

TEST_CASE("stage-2 recall at n1 is preserved when n2 == n1") {
    auto fixture = craft::testing::make_planted_fixture(80, 10, 116);
    CascadeConfig cfg = PipelineRig::small_config();
    cfg.n1 = 25;
    cfg.n2 = 25;
    cfg.n3_in = 5;
    cfg.n3_out = 5;
    PipelineRig rig(std::move(fixture), cfg);
    std::vector<Ranking> stage1_runs;
    std::vector<Ranking> stage2_runs;
    for (const auto& q : rig.queries) {
        CascadeResult r = run_cascade(q, rig.config, rig.artifacts());
        stage1_runs.push_back(r.stage1);
        stage2_runs.push_back(r.stage2);
    }
    RecallReport r1 = recall_at_k(stage1_runs, rig.queries, {25});
    RecallReport r2 = recall_at_k(stage2_runs, rig.queries, {25});
    CHECK(r1.recall_pct[0] == r2.recall_pct[0]);
}

TEST_CASE("minitable toggle off scores full-table text in stage 2") {
    auto fixture = craft::testing::make_planted_fixture(40, 4, 117);
    CascadeConfig cfg = PipelineRig::small_config();
    cfg.toggles.minitable = false;
    PipelineRig rig(std::move(fixture), cfg);
    const QueryRecord& q = rig.queries[0];
    CascadeResult r = run_cascade(q, rig.config, rig.artifacts());

    // Stage-2 scores must equal the cosine between the query and the
    // full-table text (with description, since that toggle is on).
    EmbeddingVector qv = hashed_embed(q.question, rig.config.stage2_provider.dim);
    for (const auto& e : r.stage2.entries) {
        EmbeddingVector tv =
            hashed_embed(full_table_text(rig.corpus.at(e.table_id), true),
                         rig.config.stage2_provider.dim);
        CHECK(e.score == doctest::Approx(cosine(qv, tv)).epsilon(1e-9));
    }
}

TEST_CASE("efficiency report reproduces the documented ratios") {
    std::vector<CascadeResult> results(2);
    results[0].calls = {3, 5100};
    results[1].calls = {3, 5100};
    CascadeConfig cfg;
    cfg.n1 = 5000;
    cfg.n2 = 100;
    cfg.n3_in = 100;
    cfg.n3_out = 100;

    EfficiencyReport report = efficiency_report(results, cfg, 169898);
    CHECK(report.mean_query_embeds == doctest::Approx(3.0));
    CHECK(report.mean_minitable_embeds == doctest::Approx(5100.0));
    CHECK(report.candidate_reduction_pct ==
          doctest::Approx(100.0 * (1.0 - 5000.0 / 169898.0)).epsilon(1e-12));
    CHECK(report.candidate_reduction_pct > 97.0);
    CHECK(report.dense_call_ratio == doctest::Approx(169898.0 / 5103.0).epsilon(1e-12));
    CHECK(report.dense_call_ratio > 33.0);

    SUBCASE("n1 equal to corpus size means no pruning") {
        cfg.n1 = 169898;
        EfficiencyReport none = efficiency_report(results, cfg, 169898);
        CHECK(none.candidate_reduction_pct == 0.0);
    }
}

TEST_CASE("cascade config json round-trip") {
    CascadeConfig cfg = PipelineRig::small_config();
    cfg.toggles.subquestions = false;
    cfg.mode = Stage2Mode::MaxRow;
    cfg.run_tag = "trial";
    CascadeConfig back = CascadeConfig::from_json(cfg.to_json());
    CHECK(back.n1 == cfg.n1);
    CHECK(back.n3_out == cfg.n3_out);
    CHECK(back.toggles.subquestions == false);
    CHECK(back.mode == Stage2Mode::MaxRow);
    CHECK(back.run_tag == "trial");
    CHECK(back.stage2_provider.model_id == cfg.stage2_provider.model_id);
}

}  // TEST_SUITE
