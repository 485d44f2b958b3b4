#include "craft/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <mutex>
#include <thread>

#include "craft/error.hpp"
#include "craft/util.hpp"

using nlohmann::json;

namespace craft {

void CascadeConfig::validate() const {
    if (rows_k < 1) throw usage_error("cascade config: rows_k must be >= 1");
    if (!(n3_in <= n2 && n2 <= n1)) {
        throw usage_error("cascade config: requires n3_in <= n2 <= n1");
    }
    if (n3_out < 1 || n3_out > n3_in) {
        throw usage_error("cascade config: requires 1 <= n3_out <= n3_in");
    }
    if (sparse_query_vectors.empty() != sparse_doc_vectors.empty()) {
        throw usage_error("cascade config: sparse vectors must be bound for both sides or neither");
    }
}

namespace {

json provider_to_json(const EmbeddingProviderConfig& p) {
    return json{{"endpoint", p.endpoint}, {"name", p.name},   {"model_id", p.model_id},
                {"dim", p.dim},           {"batch_size", p.batch_size},
                {"rate_limit", p.rate_limit}, {"timeout_s", p.timeout_s},
                {"max_retries", p.max_retries}};
}

EmbeddingProviderConfig provider_from_json(const json& j, EmbeddingProviderConfig base) {
    if (j.contains("endpoint")) base.endpoint = j["endpoint"];
    if (j.contains("name")) base.name = j["name"];
    if (j.contains("model_id")) base.model_id = j["model_id"];
    if (j.contains("dim")) base.dim = j["dim"];
    if (j.contains("batch_size")) base.batch_size = j["batch_size"];
    if (j.contains("rate_limit")) base.rate_limit = j["rate_limit"];
    if (j.contains("timeout_s")) base.timeout_s = j["timeout_s"];
    if (j.contains("max_retries")) base.max_retries = j["max_retries"];
    return base;
}

json textgen_to_json(const TextGenProviderConfig& p) {
    return json{{"endpoint", p.endpoint},       {"name", p.name},
                {"model_id", p.model_id},       {"request_timeout_s", p.request_timeout_s},
                {"max_retries", p.max_retries}, {"rate_limit", p.rate_limit}};
}

TextGenProviderConfig textgen_from_json(const json& j, TextGenProviderConfig base) {
    if (j.contains("endpoint")) base.endpoint = j["endpoint"];
    if (j.contains("name")) base.name = j["name"];
    if (j.contains("model_id")) base.model_id = j["model_id"];
    if (j.contains("request_timeout_s")) base.request_timeout_s = j["request_timeout_s"];
    if (j.contains("max_retries")) base.max_retries = j["max_retries"];
    if (j.contains("rate_limit")) base.rate_limit = j["rate_limit"];
    return base;
}

}  // namespace

json CascadeConfig::to_json() const {
    json j;
    j["n1"] = n1;
    j["n2"] = n2;
    j["n3_in"] = n3_in;
    j["n3_out"] = n3_out;
    j["rows_k"] = rows_k;
    j["mode"] = std::string(stage2_mode_name(mode));
    j["run_tag"] = run_tag;
    j["toggles"] = {{"descriptions", toggles.descriptions},
                    {"subquestions", toggles.subquestions},
                    {"stage2", toggles.stage2},
                    {"stage3", toggles.stage3},
                    {"minitable", toggles.minitable}};
    j["providers"] = {{"stage2", provider_to_json(stage2_provider)},
                      {"stage3", provider_to_json(stage3_provider)},
                      {"enrich", textgen_to_json(enrich_provider)},
                      {"qa", textgen_to_json(qa_provider)}};
    j["sparse_vectors"] = {{"queries", sparse_query_vectors}, {"docs", sparse_doc_vectors}};
    j["use_ann"] = use_ann;
    j["recall_target"] = recall_target;
    j["seed"] = seed;
    return j;
}

CascadeConfig CascadeConfig::from_json(const json& j) {
    CascadeConfig c;
    if (j.contains("n1")) c.n1 = j["n1"];
    if (j.contains("n2")) c.n2 = j["n2"];
    if (j.contains("n3_in")) c.n3_in = j["n3_in"];
    if (j.contains("n3_out")) c.n3_out = j["n3_out"];
    else if (j.contains("n3_in")) c.n3_out = c.n3_in;
    if (j.contains("rows_k")) c.rows_k = j["rows_k"];
    if (j.contains("mode")) c.mode = stage2_mode_from_name(j["mode"].get<std::string>());
    if (j.contains("run_tag")) c.run_tag = j["run_tag"];
    if (j.contains("toggles")) {
        const auto& t = j["toggles"];
        if (t.contains("descriptions")) c.toggles.descriptions = t["descriptions"];
        if (t.contains("subquestions")) c.toggles.subquestions = t["subquestions"];
        if (t.contains("stage2")) c.toggles.stage2 = t["stage2"];
        if (t.contains("stage3")) c.toggles.stage3 = t["stage3"];
        if (t.contains("minitable")) c.toggles.minitable = t["minitable"];
    }
    if (j.contains("providers")) {
        const auto& p = j["providers"];
        if (p.contains("stage2")) c.stage2_provider = provider_from_json(p["stage2"], c.stage2_provider);
        if (p.contains("stage3")) c.stage3_provider = provider_from_json(p["stage3"], c.stage3_provider);
        if (p.contains("enrich")) c.enrich_provider = textgen_from_json(p["enrich"], c.enrich_provider);
        if (p.contains("qa")) c.qa_provider = textgen_from_json(p["qa"], c.qa_provider);
    }
    if (j.contains("sparse_vectors")) {
        const auto& s = j["sparse_vectors"];
        if (s.contains("queries")) c.sparse_query_vectors = s["queries"];
        if (s.contains("docs")) c.sparse_doc_vectors = s["docs"];
    }
    if (j.contains("use_ann")) c.use_ann = j["use_ann"];
    if (j.contains("recall_target")) c.recall_target = j["recall_target"];
    if (j.contains("seed")) c.seed = j["seed"];
    c.validate();
    return c;
}

CascadeConfig CascadeConfig::load(const std::filesystem::path& config_file) {
    json j = json::parse(read_file(config_file), nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw data_error("config file " + config_file.string() + ": malformed JSON");
    }
    return from_json(j);
}

void validate_artifacts(const CascadeConfig& config, const CascadeArtifacts& artifacts) {
    config.validate();
    if (!artifacts.corpus || !artifacts.index) {
        throw data_error("cascade artifacts: corpus and index are required");
    }
    if (artifacts.index->with_descriptions() != config.toggles.descriptions) {
        throw data_error("cascade artifacts: index was built with descriptions " +
                         std::string(artifacts.index->with_descriptions() ? "on" : "off") +
                         " but config wants " +
                         std::string(config.toggles.descriptions ? "on" : "off"));
    }
    bool needs_store = config.toggles.stage2 || config.toggles.stage3;
    if (needs_store) {
        if (!artifacts.store || !artifacts.stage2_embedder) {
            throw data_error("cascade artifacts: row store and stage-2 embedder are required");
        }
        if (artifacts.store->model_id() != config.stage2_provider.model_id) {
            throw data_error("cascade artifacts: row store model '" + artifacts.store->model_id() +
                             "' does not match stage-2 provider '" +
                             config.stage2_provider.model_id + "'");
        }
    }
    if (config.toggles.stage3 && !artifacts.stage3_embedder) {
        throw data_error("cascade artifacts: stage-3 embedder is required");
    }
    if (config.use_ann && config.mode == Stage2Mode::MaxRow && config.toggles.stage2 &&
        !artifacts.ann) {
        throw data_error("cascade artifacts: use_ann requires a built ANN index");
    }
}

namespace {

Ranking retag(const Ranking& src, StageTag tag) {
    Ranking out = src;
    out.stage = tag;
    return out;
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
}

}  // namespace

CascadeResult run_cascade(const QueryRecord& query, const CascadeConfig& config,
                          const CascadeArtifacts& artifacts) {
    validate_artifacts(config, artifacts);

    CascadeResult result;
    result.qid = query.qid;

    auto t1 = std::chrono::steady_clock::now();
    result.stage1 = stage1_retrieve(query, *artifacts.index, config.n1, config.toggles.subquestions,
                                    artifacts.query_vectors, artifacts.impact_index);
    result.stage1.run_tag = config.run_tag;
    result.calls.query_embeds += 1;  // the Stage-1 query encoding counts as one of the three
    result.timings.stage1_ms = elapsed_ms(t1);

    std::vector<MiniTable> stage2_minitables;
    if (config.toggles.stage2 && !result.stage1.entries.empty()) {
        auto t2 = std::chrono::steady_clock::now();
        Stage2Options options;
        options.n2 = config.n2;
        options.rows_k = config.rows_k;
        options.mode = config.mode;
        options.minitable_context = config.toggles.minitable;
        options.include_description = !config.toggles.minitable && config.toggles.descriptions;
        if (config.use_ann && config.mode == Stage2Mode::MaxRow) options.ann = artifacts.ann;
        Stage2Output stage2 = stage2_rerank(query, result.stage1, *artifacts.corpus,
                                            *artifacts.store, *artifacts.stage2_embedder, options);
        result.stage2 = std::move(stage2.ranking);
        stage2_minitables = std::move(stage2.minitables);
        result.calls.query_embeds += 1;
        result.calls.minitable_embeds += stage2.minitable_provider_texts;
        result.timings.stage2_ms = elapsed_ms(t2);
    } else {
        result.stage2 = retag(result.stage1, StageTag::Stage2);
    }

    if (config.toggles.stage3 && !result.stage2.entries.empty()) {
        auto t3 = std::chrono::steady_clock::now();
        std::size_t take = std::min(config.n3_in, result.stage2.entries.size());
        std::vector<MiniTable> candidates;
        candidates.reserve(take);
        if (!stage2_minitables.empty()) {
            candidates.assign(stage2_minitables.begin(),
                              stage2_minitables.begin() + static_cast<std::ptrdiff_t>(take));
        } else {
            // Stage 2 disabled: build mini-tables for the top candidates with
            // the store-model query embedding (counts as a query embed).
            EmbeddingVector query_vec = artifacts.stage2_embedder->embed_one(query.question);
            result.calls.query_embeds += 1;
            for (std::size_t i = 0; i < take; ++i) {
                const TableRecord& table = artifacts.corpus->at(result.stage2.entries[i].table_id);
                candidates.push_back(
                    build_minitable(table, query_vec, *artifacts.store, config.rows_k));
            }
        }
        RerankConfig rerank;
        rerank.n_in = config.n3_in;
        rerank.n_out = config.n3_out;
        Stage3Output stage3 =
            stage3_rerank(query, candidates, *artifacts.stage3_embedder, rerank);
        result.stage3 = std::move(stage3.ranking);
        result.stage3.run_tag = config.run_tag;
        result.calls.query_embeds += 1;
        result.calls.minitable_embeds += stage3.minitable_provider_texts;
        result.timings.stage3_ms = elapsed_ms(t3);

        std::map<std::string, MiniTable> by_id;
        for (auto& m : candidates) by_id.emplace(m.table_id, std::move(m));
        for (const auto& entry : result.stage3.entries) {
            result.minitables.push_back(by_id.at(entry.table_id));
        }
    } else {
        result.stage3 = retag(result.stage2, StageTag::Stage3);
        std::map<std::string, const MiniTable*> by_id;
        for (const auto& m : stage2_minitables) by_id.emplace(m.table_id, &m);
        for (const auto& entry : result.stage3.entries) {
            auto it = by_id.find(entry.table_id);
            if (it != by_id.end()) result.minitables.push_back(*it->second);
        }
    }

    result.final = retag(result.stage3, StageTag::Final);
    return result;
}

BatchOutput run_batch(const std::vector<QueryRecord>& queries, const CascadeConfig& config,
                      const CascadeArtifacts& artifacts, std::size_t jobs) {
    validate_artifacts(config, artifacts);  // artifact errors abort before any work
    if (jobs < 1) jobs = 1;

    std::vector<std::optional<CascadeResult>> slots(queries.size());
    std::vector<std::optional<BatchFailure>> failures(queries.size());
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};

    auto worker = [&] {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= queries.size()) return;
            try {
                slots[i] = run_cascade(queries[i], config, artifacts);
            } catch (const std::exception& e) {
                failures[i] = BatchFailure{queries[i].qid, e.what()};
                spdlog::warn("query {} failed: {}", queries[i].qid, e.what());
            }
            std::size_t d = done.fetch_add(1) + 1;
            if (d % 100 == 0 || d == queries.size()) {
                spdlog::info("processed {}/{} queries", d, queries.size());
            }
        }
    };

    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(jobs);
        for (std::size_t t = 0; t < jobs; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    BatchOutput out;
    for (auto& slot : slots) {
        if (slot) out.results.push_back(std::move(*slot));
    }
    for (auto& f : failures) {
        if (f) out.failures.push_back(std::move(*f));
    }
    std::sort(out.results.begin(), out.results.end(),
              [](const CascadeResult& a, const CascadeResult& b) { return a.qid < b.qid; });
    std::sort(out.failures.begin(), out.failures.end(),
              [](const BatchFailure& a, const BatchFailure& b) { return a.qid < b.qid; });
    return out;
}

std::vector<std::filesystem::path> write_batch_run_files(const std::filesystem::path& out_dir,
                                                         const BatchOutput& batch,
                                                         const CascadeConfig& config) {
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> written;

    auto collect = [&](auto proj) {
        std::vector<Ranking> rankings;
        rankings.reserve(batch.results.size());
        for (const auto& r : batch.results) rankings.push_back(proj(r));
        return rankings;
    };

    auto emit = [&](const char* name, std::vector<Ranking> rankings) {
        std::filesystem::path p = out_dir / name;
        write_run_file(p, rankings);
        written.push_back(p);
    };

    emit("stage1.trec", collect([](const CascadeResult& r) { return r.stage1; }));
    if (config.toggles.stage2) {
        emit("stage2.trec", collect([](const CascadeResult& r) { return r.stage2; }));
    }
    if (config.toggles.stage3) {
        emit("stage3.trec", collect([](const CascadeResult& r) { return r.stage3; }));
    }
    emit("final.trec", collect([](const CascadeResult& r) { return r.final; }));

    if (!batch.failures.empty()) {
        std::string lines;
        for (const auto& f : batch.failures) {
            lines += json{{"qid", f.qid}, {"error", f.error}}.dump() + "\n";
        }
        std::filesystem::path p = out_dir / "failures.jsonl";
        write_file(p, lines);
        written.push_back(p);
    }
    return written;
}

EfficiencyReport efficiency_report(const std::vector<CascadeResult>& results,
                                   const CascadeConfig& config, std::size_t corpus_size) {
    if (results.empty()) throw data_error("efficiency_report: no results");
    EfficiencyReport report;
    report.corpus_size = corpus_size;
    report.query_count = results.size();

    double qe = 0.0;
    double me = 0.0;
    for (const auto& r : results) {
        qe += static_cast<double>(r.calls.query_embeds);
        me += static_cast<double>(r.calls.minitable_embeds);
        report.mean_timings.stage1_ms += r.timings.stage1_ms;
        report.mean_timings.stage2_ms += r.timings.stage2_ms;
        report.mean_timings.stage3_ms += r.timings.stage3_ms;
    }
    const auto n = static_cast<double>(results.size());
    report.mean_query_embeds = qe / n;
    report.mean_minitable_embeds = me / n;
    report.mean_timings.stage1_ms /= n;
    report.mean_timings.stage2_ms /= n;
    report.mean_timings.stage3_ms /= n;

    if (corpus_size > 0) {
        double kept = static_cast<double>(std::min(config.n1, corpus_size));
        report.candidate_reduction_pct =
            100.0 * (1.0 - kept / static_cast<double>(corpus_size));
        report.dense_call_ratio = static_cast<double>(corpus_size) /
                                  static_cast<double>(config.n1 + config.n2 + 3);
    }
    return report;
}

// Timings stay out of the emitted report so identical runs produce
// byte-identical files; they are logged instead.
json to_json(const EfficiencyReport& report) {
    json j;
    j["corpus_size"] = report.corpus_size;
    j["query_count"] = report.query_count;
    j["mean_query_embeds"] = report.mean_query_embeds;
    j["mean_minitable_embeds"] = report.mean_minitable_embeds;
    j["candidate_reduction_pct"] = report.candidate_reduction_pct;
    j["dense_call_ratio"] = report.dense_call_ratio;
    return j;
}

}  // namespace craft
