// craft - cascaded table retrieval and table-QA toolkit.
//
// Subcommands: ingest, enrich, index, embed, retrieve, eval, perturb-eval,
// qa, ablate, report. Every run writes a manifest with content hashes of the
// artifacts it consumed and the files it produced.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "craft/corpus.hpp"
#include "craft/dense.hpp"
#include "craft/embeddings.hpp"
#include "craft/enrichment.hpp"
#include "craft/error.hpp"
#include "craft/evaluation.hpp"
#include "craft/manifest.hpp"
#include "craft/pipeline.hpp"
#include "craft/qa.hpp"
#include "craft/rerank.hpp"
#include "craft/sparse.hpp"
#include "craft/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace craft;

namespace {

struct CommonArgs {
    std::string config_file;
    std::string corpus_file;
    std::string queries_file;
    std::string out;
    std::string cache_dir;
    std::size_t jobs = 1;
    std::uint64_t seed = 42;
    bool force = false;
    std::vector<std::string> toggles;
    std::vector<std::string> providers;
    std::string provider_stage2;  // dotted-flag aliases (--provider.stage2 etc.)
    std::string provider_stage3;
    std::string provider_enrich;
    std::string provider_qa;
    std::string ks = "1,10,50";

    std::vector<std::string> all_providers() const {
        std::vector<std::string> out = providers;
        if (!provider_stage2.empty()) out.push_back("stage2=" + provider_stage2);
        if (!provider_stage3.empty()) out.push_back("stage3=" + provider_stage3);
        if (!provider_enrich.empty()) out.push_back("enrich=" + provider_enrich);
        if (!provider_qa.empty()) out.push_back("qa=" + provider_qa);
        return out;
    }
};

std::vector<std::size_t> parse_ks(const std::string& spec) {
    std::vector<std::size_t> ks;
    for (const auto& part : split(spec, ',')) {
        std::string p = trim(part);
        if (p.empty()) continue;
        ks.push_back(std::stoull(p));
    }
    if (ks.empty()) throw usage_error("--ks produced no values");
    if (!std::is_sorted(ks.begin(), ks.end())) throw usage_error("--ks must be sorted ascending");
    return ks;
}

bool parse_on_off(const std::string& value) {
    if (value == "on" || value == "true" || value == "1") return true;
    if (value == "off" || value == "false" || value == "0") return false;
    throw usage_error("toggle value must be on/off, got '" + value + "'");
}

void apply_toggles(CascadeConfig& config, const std::vector<std::string>& toggles) {
    for (const auto& t : toggles) {
        auto eq = t.find('=');
        if (eq == std::string::npos) throw usage_error("--toggle expects name=on|off, got '" + t + "'");
        std::string name = t.substr(0, eq);
        bool value = parse_on_off(t.substr(eq + 1));
        if (name == "descriptions") config.toggles.descriptions = value;
        else if (name == "subquestions") config.toggles.subquestions = value;
        else if (name == "stage2") config.toggles.stage2 = value;
        else if (name == "stage3") config.toggles.stage3 = value;
        else if (name == "minitable") config.toggles.minitable = value;
        else throw usage_error("unknown toggle '" + name + "'");
    }
}

// Provider override: --provider <stage>=<endpoint>[|model_id[|dim]]
void apply_providers(CascadeConfig& config, const std::vector<std::string>& providers) {
    for (const auto& p : providers) {
        auto eq = p.find('=');
        if (eq == std::string::npos) throw usage_error("--provider expects stage=spec, got '" + p + "'");
        std::string stage = p.substr(0, eq);
        std::vector<std::string> parts = split(p.substr(eq + 1), '|');
        auto apply_embed = [&](EmbeddingProviderConfig& cfg) {
            if (!parts.empty() && !parts[0].empty()) cfg.endpoint = parts[0];
            if (parts.size() > 1 && !parts[1].empty()) cfg.model_id = parts[1];
            if (parts.size() > 2 && !parts[2].empty()) cfg.dim = std::stoull(parts[2]);
        };
        auto apply_textgen = [&](TextGenProviderConfig& cfg) {
            if (!parts.empty() && !parts[0].empty()) cfg.endpoint = parts[0];
            if (parts.size() > 1 && !parts[1].empty()) cfg.model_id = parts[1];
        };
        if (stage == "stage2") apply_embed(config.stage2_provider);
        else if (stage == "stage3") apply_embed(config.stage3_provider);
        else if (stage == "enrich") apply_textgen(config.enrich_provider);
        else if (stage == "qa") apply_textgen(config.qa_provider);
        else throw usage_error("unknown provider stage '" + stage + "'");
    }
}

CascadeConfig resolve_config(const CommonArgs& args) {
    CascadeConfig config = args.config_file.empty() ? CascadeConfig::from_json(json::object())
                                                    : CascadeConfig::load(args.config_file);
    apply_toggles(config, args.toggles);
    apply_providers(config, args.all_providers());
    config.seed = args.seed;
    config.validate();
    return config;
}

fs::path resolve_cache_file(const CommonArgs& args) {
    fs::path dir;
    if (!args.cache_dir.empty()) {
        dir = args.cache_dir;
    } else if (const char* env = std::getenv("CRAFT_CACHE_DIR")) {
        dir = env;
    } else {
        dir = fs::path(args.out.empty() ? "." : args.out);
        if (dir.has_extension()) dir = dir.parent_path();
    }
    fs::create_directories(dir.empty() ? "." : dir);
    return dir / "craft.embcache.bin";
}

void verify_artifact(const fs::path& artifact, bool force) {
    if (force) return;
    if (!fs::exists(artifact)) throw data_error("artifact missing: " + artifact.string());
    fs::path manifest_path = artifact;
    manifest_path += ".manifest.json";
    if (!fs::exists(manifest_path)) return;  // unmanaged artifact, nothing to verify against
    RunManifest m = load_manifest(manifest_path);
    auto it = m.output_hashes.find(artifact.string());
    if (it == m.output_hashes.end()) return;
    if (hash_file_hex(artifact) != it->second) {
        throw data_error("artifact " + artifact.string() +
                         " does not match its manifest hash (use --force to override)");
    }
}

struct LoadedArtifacts {
    Corpus corpus;
    InvertedIndex index;
    RowEmbeddingStore store;
    std::unique_ptr<EmbeddingCache> cache;
    std::unique_ptr<Embedder> stage2;
    std::unique_ptr<Embedder> stage3;
    SparseVectorMap query_vectors;
    SparseVectorMap doc_vectors;
    std::unique_ptr<ImpactIndex> impact;
    std::unique_ptr<AnnIndex> ann;

    CascadeArtifacts view(const CascadeConfig& config) {
        CascadeArtifacts a;
        a.corpus = &corpus;
        a.index = &index;
        a.store = &store;
        a.stage2_embedder = stage2.get();
        a.stage3_embedder = stage3.get();
        if (!config.sparse_query_vectors.empty()) {
            a.query_vectors = &query_vectors;
            a.impact_index = impact.get();
        }
        a.ann = ann.get();
        return a;
    }
};

LoadedArtifacts load_artifacts(const CascadeConfig& config, const std::string& corpus_file,
                               const std::string& index_file, const std::string& store_file,
                               const fs::path& cache_file, bool force) {
    verify_artifact(corpus_file, force);
    verify_artifact(index_file, force);
    LoadedArtifacts a;
    a.corpus = load_corpus(corpus_file);
    a.index = InvertedIndex::load(index_file);
    if (!store_file.empty()) {
        verify_artifact(store_file, force);
        a.store = RowEmbeddingStore::load(store_file);
    }
    a.cache = std::make_unique<EmbeddingCache>(cache_file);
    a.stage2 = std::make_unique<Embedder>(config.stage2_provider, a.cache.get());
    a.stage3 = std::make_unique<Embedder>(config.stage3_provider, a.cache.get());
    if (!config.sparse_query_vectors.empty()) {
        a.query_vectors = import_sparse_vectors(config.sparse_query_vectors);
        a.doc_vectors = import_sparse_vectors(config.sparse_doc_vectors);
        a.impact = std::make_unique<ImpactIndex>(a.doc_vectors);
    }
    if (config.use_ann && config.mode == Stage2Mode::MaxRow && a.store.total_rows() > 0) {
        AnnParams params;
        params.recall_target = config.recall_target;
        params.seed = config.seed;
        a.ann = std::make_unique<AnnIndex>(AnnIndex::build(a.store, params));
        spdlog::info("built ann index over {} row vectors", a.ann->size());
    }
    return a;
}

RunManifest base_manifest(const std::string& command, const CascadeConfig& config,
                          std::uint64_t seed) {
    RunManifest m;
    m.command = command;
    m.config_snapshot = config.to_json();
    m.provider_models["stage2"] = config.stage2_provider.model_id;
    m.provider_models["stage3"] = config.stage3_provider.model_id;
    m.provider_models["enrich"] = config.enrich_provider.model_id;
    m.provider_models["qa"] = config.qa_provider.model_id;
    m.seed = seed;
    return m;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_ingest(const CommonArgs& args) {
    fs::path out(args.out);
    fs::create_directories(out);
    Corpus corpus = load_corpus(args.corpus_file);
    CorpusStats stats = corpus.stats();
    save_corpus(corpus, out / "corpus.jsonl");
    json stats_json = {{"table_count", stats.table_count},
                       {"avg_rows", stats.avg_rows},
                       {"avg_cols", stats.avg_cols}};

    RunManifest m = base_manifest("ingest", resolve_config(args), args.seed);
    m.add_artifact("corpus_input", args.corpus_file);
    m.add_output(out / "corpus.jsonl");

    if (!args.queries_file.empty()) {
        std::vector<QueryRecord> queries = load_queries(args.queries_file);
        save_queries(queries, out / "queries.jsonl");
        stats_json["query_count"] = queries.size();
        m.add_artifact("queries_input", args.queries_file);
        m.add_output(out / "queries.jsonl");
    }
    write_file(out / "stats.json", stats_json.dump(2) + "\n");
    m.add_output(out / "stats.json");
    write_manifest(out / "manifest.json", std::move(m));
    spdlog::info("ingested {} tables (avg rows {:.2f}, avg cols {:.2f})", stats.table_count,
                 stats.avg_rows, stats.avg_cols);
    return 0;
}

int cmd_enrich(const CommonArgs& args) {
    CascadeConfig config = resolve_config(args);
    fs::path out(args.out);
    fs::create_directories(out);

    Corpus corpus = load_corpus(args.corpus_file);
    fs::path cache_path = fs::path(args.corpus_file);
    cache_path += ".enrich.jsonl";
    EnrichmentCache cache(cache_path);
    TextGenClient client(config.enrich_provider);
    PromptTemplate desc_tmpl = PromptTemplate::default_for(TemplateKind::TableDescription);
    PromptTemplate subq_tmpl = PromptTemplate::default_for(TemplateKind::QueryExpansion);

    std::size_t described = 0;
    for (auto& [id, table] : corpus.tables_mutable()) {
        if (table.description) continue;
        auto [title, description] = generate_description(table, client, desc_tmpl, &cache);
        if (table.title.empty()) table.title = title;
        table.description = description;
        ++described;
    }
    save_corpus(corpus, out / "corpus.jsonl");

    RunManifest m = base_manifest("enrich", config, args.seed);
    m.add_artifact("corpus_input", args.corpus_file);
    m.add_output(out / "corpus.jsonl");

    std::size_t expanded = 0;
    if (!args.queries_file.empty()) {
        std::vector<QueryRecord> queries = load_queries(args.queries_file);
        for (auto& q : queries) {
            if (!q.sub_questions.empty()) continue;
            if (!decompose_query(q, client, subq_tmpl, &cache).empty()) ++expanded;
        }
        save_queries(queries, out / "queries.jsonl");
        m.add_artifact("queries_input", args.queries_file);
        m.add_output(out / "queries.jsonl");
    }
    write_manifest(out / "manifest.json", std::move(m));
    spdlog::info("enriched {} tables, expanded {} queries ({} provider calls)", described,
                 expanded, client.provider_call_count());
    return 0;
}

int cmd_index(const CommonArgs& args) {
    CascadeConfig config = resolve_config(args);
    Corpus corpus = load_corpus(args.corpus_file);
    InvertedIndex index = build_index(corpus, config.toggles.descriptions);
    fs::path out(args.out);
    index.save(out);

    RunManifest m = base_manifest("index", config, args.seed);
    m.add_artifact("corpus", args.corpus_file);
    m.add_output(out);
    fs::path manifest_path = out;
    manifest_path += ".manifest.json";
    write_manifest(manifest_path, std::move(m));
    spdlog::info("indexed {} docs, avgdl {:.2f}, descriptions {}", index.doc_count(),
                 index.avgdl(), index.with_descriptions() ? "on" : "off");
    return 0;
}

int cmd_embed(const CommonArgs& args) {
    CascadeConfig config = resolve_config(args);
    Corpus corpus = load_corpus(args.corpus_file);
    EmbeddingCache cache(resolve_cache_file(args));
    Embedder embedder(config.stage2_provider, &cache);
    RowEmbeddingStore store = precompute_row_embeddings(corpus, embedder);
    fs::path out(args.out);
    store.save(out);

    RunManifest m = base_manifest("embed", config, args.seed);
    m.add_artifact("corpus", args.corpus_file);
    m.add_output(out);
    fs::path idx = out;
    idx += ".idx";
    m.add_output(idx);
    fs::path manifest_path = out;
    manifest_path += ".manifest.json";
    write_manifest(manifest_path, std::move(m));
    spdlog::info("embedded {} rows under model {} ({} provider texts)", store.total_rows(),
                 store.model_id(), embedder.provider_call_count());
    return 0;
}

int cmd_retrieve(const CommonArgs& args, const std::string& index_file,
                 const std::string& store_file) {
    CascadeConfig config = resolve_config(args);
    fs::path out(args.out);
    fs::create_directories(out);
    LoadedArtifacts artifacts = load_artifacts(config, args.corpus_file, index_file, store_file,
                                               resolve_cache_file(args), args.force);
    std::vector<QueryRecord> queries = load_queries(args.queries_file);

    BatchOutput batch = run_batch(queries, config, artifacts.view(config), args.jobs);
    std::vector<fs::path> written = write_batch_run_files(out, batch, config);

    RunManifest m = base_manifest("retrieve", config, args.seed);
    m.add_artifact("corpus", args.corpus_file);
    m.add_artifact("index", index_file);
    if (!store_file.empty()) m.add_artifact("store", store_file);
    m.add_artifact("queries", args.queries_file);
    if (!batch.results.empty()) {
        EfficiencyReport eff = efficiency_report(batch.results, config, artifacts.corpus.size());
        write_file(out / "efficiency.json", to_json(eff).dump(2) + "\n");
        m.add_output(out / "efficiency.json");
        spdlog::info("mean stage wall-clock ms: stage1 {:.2f}, stage2 {:.2f}, stage3 {:.2f}",
                     eff.mean_timings.stage1_ms, eff.mean_timings.stage2_ms,
                     eff.mean_timings.stage3_ms);
    }
    for (const auto& p : written) m.add_output(p);
    write_manifest(out / "manifest.json", std::move(m));
    spdlog::info("retrieved {} queries ({} failures)", batch.results.size(),
                 batch.failures.size());
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& run_file, const std::string& label_arg) {
    CascadeConfig config = resolve_config(args);
    fs::path out(args.out);
    fs::create_directories(out);
    std::vector<QueryRecord> queries = load_queries(args.queries_file);
    std::vector<std::size_t> ks = parse_ks(args.ks);
    RecallReport report = recall_at_k(fs::path(run_file), queries, ks);

    std::string label = label_arg.empty() ? fs::path(run_file).stem().string() : label_arg;
    RunManifest m = base_manifest("eval", config, args.seed);
    m.add_artifact("run", run_file);
    m.add_artifact("queries", args.queries_file);
    write_file(out / (label + ".recall.csv"), to_csv(report));
    write_file(out / (label + ".recall.md"), to_markdown(report, label));
    write_file(out / (label + ".recall.json"), to_json(report).dump(2) + "\n");
    m.add_output(out / (label + ".recall.csv"));
    m.add_output(out / (label + ".recall.md"));
    m.add_output(out / (label + ".recall.json"));
    write_manifest(out / (label + ".manifest.json"), std::move(m));

    for (std::size_t i = 0; i < ks.size(); ++i) {
        std::cout << "R@" << ks[i] << " = " << format_score(report.recall_pct[i]) << "\n";
    }
    return 0;
}

int cmd_perturb_eval(const CommonArgs& args, const std::string& index_file,
                     const std::string& store_file) {
    CascadeConfig config = resolve_config(args);
    fs::path out(args.out);
    fs::create_directories(out);
    LoadedArtifacts artifacts = load_artifacts(config, args.corpus_file, index_file, store_file,
                                               resolve_cache_file(args), args.force);
    std::vector<QueryRecord> originals = load_queries(args.queries_file);

    fs::path cache_path = fs::path(args.corpus_file);
    cache_path += ".enrich.jsonl";
    EnrichmentCache cache(cache_path);
    TextGenClient client(config.enrich_provider);
    PromptTemplate tmpl = PromptTemplate::default_for(TemplateKind::Perturbation);

    std::vector<QueryRecord> perturbed;
    perturbed.reserve(originals.size());
    for (const auto& q : originals) {
        if (q.perturbed_of) continue;
        perturbed.push_back(perturb_query(q, client, tmpl, &cache));
    }
    save_queries(perturbed, out / "perturbed.jsonl");

    CascadeArtifacts view = artifacts.view(config);
    BatchOutput orig_batch = run_batch(originals, config, view, args.jobs);
    BatchOutput pert_batch = run_batch(perturbed, config, view, args.jobs);
    write_batch_run_files(out / "original", orig_batch, config);
    write_batch_run_files(out / "perturbed", pert_batch, config);

    std::vector<std::size_t> ks = parse_ks(args.ks);
    RecallReport orig_report = recall_at_k(out / "original" / "final.trec", originals, ks);
    RecallReport pert_report = recall_at_k(out / "perturbed" / "final.trec", perturbed, ks);
    PerturbationReport delta = perturbation_delta(orig_report, pert_report);
    write_file(out / "delta.csv", to_csv(delta));
    write_file(out / "delta.md", to_markdown(delta));
    write_file(out / "delta.json", to_json(delta).dump(2) + "\n");

    RunManifest m = base_manifest("perturb-eval", config, args.seed);
    m.add_artifact("corpus", args.corpus_file);
    m.add_artifact("queries", args.queries_file);
    m.add_output(out / "perturbed.jsonl");
    m.add_output(out / "original" / "final.trec");
    m.add_output(out / "perturbed" / "final.trec");
    m.add_output(out / "delta.csv");
    m.add_output(out / "delta.md");
    m.add_output(out / "delta.json");
    write_manifest(out / "manifest.json", std::move(m));
    std::cout << "delta_avg = " << format_score(delta.delta_avg) << "\n";
    return 0;
}

std::vector<FewshotExample> build_fewshot(const std::string& train_file, int count,
                                          std::uint64_t seed, const Corpus& corpus,
                                          const RowEmbeddingStore& store, Embedder& embedder,
                                          std::size_t rows_k, ContextForm form,
                                          const std::set<std::string>& eval_qids) {
    std::vector<FewshotExample> examples;
    if (count <= 0 || train_file.empty()) return examples;
    std::vector<QueryRecord> pool = load_queries(train_file);
    std::mt19937_64 rng(seed);
    std::shuffle(pool.begin(), pool.end(), rng);
    std::size_t overlap = 0;
    for (const auto& q : pool) {
        if (static_cast<int>(examples.size()) >= count) break;
        if (q.answers.empty()) continue;
        if (eval_qids.count(q.qid)) {  // examples must come from a disjoint split
            ++overlap;
            continue;
        }
        const TableRecord* gold = corpus.find(q.gold_table_ids.front());
        if (!gold || !store.covers(gold->table_id)) continue;
        EmbeddingVector qv = embedder.embed_one(q.question);
        MiniTable mini = build_minitable(*gold, qv, store, rows_k);
        FewshotExample ex;
        ex.table_block = render_table_block(*gold, &mini, form);
        ex.question = q.question;
        ex.answer = q.answers.front();
        examples.push_back(std::move(ex));
    }
    if (overlap > 0) {
        spdlog::warn("fewshot: skipped {} train queries overlapping the evaluated set", overlap);
    }
    return examples;
}

int cmd_qa(const CommonArgs& args, const std::string& run_file, const std::string& store_file,
           std::size_t n_tables, int fewshot, const std::string& context,
           const std::string& train_file, const std::string& oracle_file) {
    CascadeConfig config = resolve_config(args);
    fs::path out(args.out);
    fs::create_directories(out);

    Corpus corpus = load_corpus(args.corpus_file);
    RowEmbeddingStore store = RowEmbeddingStore::load(store_file);
    EmbeddingCache cache(resolve_cache_file(args));
    Embedder stage2(config.stage2_provider, &cache);
    if (store.model_id() != config.stage2_provider.model_id) {
        throw data_error("qa: row store model '" + store.model_id() +
                         "' does not match stage-2 provider '" + config.stage2_provider.model_id +
                         "'");
    }
    std::vector<QueryRecord> queries = load_queries(args.queries_file);
    std::vector<Ranking> run = read_run_file(run_file);
    std::map<std::string, const Ranking*> run_by_qid;
    for (const auto& r : run) run_by_qid[r.qid] = &r;

    std::map<std::string, std::string> oracle_passages;
    if (!oracle_file.empty()) {
        for (const auto& line : split(read_file(oracle_file), '\n')) {
            if (trim(line).empty()) continue;
            json j = json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.contains("qid") || !j.contains("passage")) {
                throw data_error("oracle passage file: malformed record");
            }
            oracle_passages[j["qid"]] = j["passage"];
        }
    }

    QAPromptConfig prompt_config;
    prompt_config.n_tables = n_tables;
    prompt_config.fewshot_count = fewshot;
    prompt_config.context_form = context_form_from_name(context);
    prompt_config.oracle_passages = !oracle_file.empty();
    prompt_config.validate();

    std::set<std::string> eval_qids;
    for (const auto& q : queries) eval_qids.insert(q.qid);
    std::vector<FewshotExample> fewshot_examples =
        build_fewshot(train_file, fewshot, args.seed, corpus, store, stage2, config.rows_k,
                      prompt_config.context_form, eval_qids);

    TextGenClient answerer(config.qa_provider);
    std::vector<QAResult> results;
    std::vector<ContextSample> context_samples;
    for (const auto& q : queries) {
        auto it = run_by_qid.find(q.qid);
        if (it == run_by_qid.end()) continue;  // scored as missing by score_e2e
        EmbeddingVector qv = stage2.embed_one(q.question);
        std::vector<MiniTable> minis;
        std::size_t limit = std::min(n_tables, it->second->entries.size());
        std::string mini_context;
        std::string full_context;
        for (std::size_t i = 0; i < limit; ++i) {
            const TableRecord& table = corpus.at(it->second->entries[i].table_id);
            minis.push_back(build_minitable(table, qv, store, config.rows_k));
            mini_context += render_table_block(table, &minis.back(), ContextForm::MiniTable);
            full_context += render_table_block(table, nullptr, ContextForm::FullTable);
        }
        context_samples.push_back({q.qid, std::move(mini_context), std::move(full_context)});
        std::optional<std::string> passage;
        if (auto p = oracle_passages.find(q.qid); p != oracle_passages.end()) passage = p->second;
        AssembledPrompt prompt =
            assemble_prompt(q, *it->second, minis, corpus, prompt_config, fewshot_examples, passage);
        QAResult r;
        r.qid = q.qid;
        r.prediction = generate_answer(prompt.text, answerer);
        r.context_tokens = prompt.context_tokens;
        r.n_tables = prompt.tables_used;
        results.push_back(std::move(r));
    }

    E2EScore score = score_e2e(queries, std::move(results));
    write_file(out / "qa.csv", qa_results_csv(score.per_query, fewshot, prompt_config.context_form));
    TokenReport token_report = token_stats(context_samples);

    double mean_tokens = 0.0;
    for (const auto& r : score.per_query) mean_tokens += static_cast<double>(r.context_tokens);
    if (!score.per_query.empty()) mean_tokens /= static_cast<double>(score.per_query.size());
    json summary = {{"mean_f1", score.mean_f1},
                    {"n_tables", n_tables},
                    {"fewshot", fewshot},
                    {"context_form", std::string(context_form_name(prompt_config.context_form))},
                    {"oracle", prompt_config.oracle_passages},
                    {"scored", score.per_query.size()},
                    {"missing", score.missing_qids},
                    {"mean_mini_tokens", token_report.mean_mini},
                    {"mean_full_tokens", token_report.mean_full},
                    {"token_savings_pct", token_report.savings_pct}};
    write_file(out / "qa_summary.json", summary.dump(2) + "\n");
    write_file(out / "qa.tokens.csv", to_csv(token_report));
    write_file(out / "qa.plotdata.csv",
               plotdata_csv({PlotPoint{n_tables, mean_tokens, score.mean_f1}}));

    RunManifest m = base_manifest("qa", config, args.seed);
    m.add_artifact("corpus", args.corpus_file);
    m.add_artifact("run", run_file);
    m.add_artifact("queries", args.queries_file);
    m.add_output(out / "qa.csv");
    m.add_output(out / "qa_summary.json");
    m.add_output(out / "qa.tokens.csv");
    m.add_output(out / "qa.plotdata.csv");
    write_manifest(out / "manifest.json", std::move(m));
    std::cout << "mean_f1 = " << format_score(score.mean_f1) << " over "
              << score.per_query.size() << " queries\n";
    return 0;
}

int cmd_ablate(const CommonArgs& args_in, std::string toggle_name) {
    // "--toggle subquestions" (bare name) selects the sweep toggle; entries
    // with "=" remain ordinary config overrides.
    CommonArgs args = args_in;
    std::vector<std::string> overrides;
    for (const auto& t : args.toggles) {
        if (t.find('=') == std::string::npos && toggle_name.empty()) {
            toggle_name = t;
        } else {
            overrides.push_back(t);
        }
    }
    args.toggles = std::move(overrides);
    if (toggle_name.empty()) {
        throw usage_error("ablate requires a toggle name (--ablate-toggle or bare --toggle)");
    }
    CascadeConfig base = resolve_config(args);
    fs::path out(args.out);
    fs::create_directories(out);
    Corpus corpus = load_corpus(args.corpus_file);
    std::vector<QueryRecord> queries = load_queries(args.queries_file);
    std::vector<std::size_t> ks = parse_ks(args.ks);
    EmbeddingCache cache(resolve_cache_file(args));

    auto run_arm = [&](bool value) {
        CascadeConfig config = base;
        apply_toggles(config, {toggle_name + std::string(value ? "=on" : "=off")});
        config.run_tag = base.run_tag + "-" + toggle_name + (value ? "-on" : "-off");
        InvertedIndex index = build_index(corpus, config.toggles.descriptions);
        Embedder stage2(config.stage2_provider, &cache);
        Embedder stage3(config.stage3_provider, &cache);
        RowEmbeddingStore store = precompute_row_embeddings(corpus, stage2);
        CascadeArtifacts artifacts;
        artifacts.corpus = &corpus;
        artifacts.index = &index;
        artifacts.store = &store;
        artifacts.stage2_embedder = &stage2;
        artifacts.stage3_embedder = &stage3;
        BatchOutput batch = run_batch(queries, config, artifacts, args.jobs);
        fs::path arm_dir = out / (value ? "on" : "off");
        write_batch_run_files(arm_dir, batch, config);
        return recall_at_k(arm_dir / "final.trec", queries, ks);
    };

    RecallReport on = run_arm(true);
    RecallReport off = run_arm(false);

    std::string csv = "k,on,off,diff\n";
    std::string md = "| k | " + toggle_name + "=on | " + toggle_name + "=off | diff |\n";
    md += "| --- | --- | --- | --- |\n";
    for (std::size_t i = 0; i < ks.size(); ++i) {
        double diff = on.recall_pct[i] - off.recall_pct[i];
        csv += std::to_string(ks[i]) + "," + format_score(on.recall_pct[i]) + "," +
               format_score(off.recall_pct[i]) + "," + format_score(diff) + "\n";
        md += "| " + std::to_string(ks[i]) + " | " + format_score(on.recall_pct[i]) + " | " +
              format_score(off.recall_pct[i]) + " | " + format_score(diff) + " |\n";
    }
    write_file(out / "ablation.csv", csv);
    write_file(out / "ablation.md", md);

    RunManifest m = base_manifest("ablate", base, args.seed);
    m.add_artifact("corpus", args.corpus_file);
    m.add_artifact("queries", args.queries_file);
    m.add_output(out / "on" / "final.trec");
    m.add_output(out / "off" / "final.trec");
    m.add_output(out / "ablation.csv");
    m.add_output(out / "ablation.md");
    write_manifest(out / "manifest.json", std::move(m));
    std::cout << csv;
    return 0;
}

int cmd_report(const std::string& in_dir, const std::string& out_file) {
    std::string md = "# Run report\n";
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(in_dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
        std::string name = p.filename().string();
        if (name.size() > 11 && name.substr(name.size() - 11) == ".recall.csv") {
            RecallReport r = recall_from_csv(read_file(p));
            md += "\n## " + name + "\n\n" + to_markdown(r, name.substr(0, name.size() - 11));
        } else if (name == "delta.csv" || name == "ablation.csv" ||
                   (name.size() > 13 && name.substr(name.size() - 13) == ".plotdata.csv") ||
                   (name.size() > 11 && name.substr(name.size() - 11) == ".tokens.csv")) {
            md += "\n## " + name + "\n\n";
            bool header = true;
            for (const auto& line : split(read_file(p), '\n')) {
                if (trim(line).empty()) continue;
                std::string row = "| ";
                for (const auto& cell : split(line, ',')) row += cell + " | ";
                md += row + "\n";
                if (header) {
                    std::string rule = "| ";
                    for (std::size_t i = 0; i < split(line, ',').size(); ++i) rule += "--- | ";
                    md += rule + "\n";
                    header = false;
                }
            }
        } else if (name == "efficiency.json" || name == "qa_summary.json") {
            md += "\n## " + name + "\n\n```json\n" + read_file(p) + "```\n";
        }
    }
    write_file(out_file, md);
    std::cout << "wrote " << out_file << "\n";
    return 0;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_corpus = true,
                bool needs_queries = true, bool needs_out = true) {
    cmd->add_option("--config", args.config_file, "Cascade config JSON");
    auto* corpus = cmd->add_option("--corpus", args.corpus_file, "Corpus JSONL");
    auto* queries = cmd->add_option("--queries", args.queries_file, "Queries JSONL");
    auto* out = cmd->add_option("--out", args.out, "Output directory or file");
    cmd->add_option("--jobs", args.jobs, "Worker threads");
    cmd->add_option("--seed", args.seed, "Deterministic seed");
    cmd->add_option("--cache", args.cache_dir, "Embedding cache dir (or env CRAFT_CACHE_DIR)");
    cmd->add_flag("--force", args.force, "Skip artifact hash verification");
    cmd->add_option("--toggle", args.toggles, "Feature toggle name=on|off")->allow_extra_args(false);
    cmd->add_option("--provider", args.providers,
                    "Provider override stage=endpoint|model|dim (stages: stage2, stage3, enrich, qa)")
        ->allow_extra_args(false);
    cmd->add_option("--provider.stage2", args.provider_stage2, "Stage-2 provider endpoint|model|dim");
    cmd->add_option("--provider.stage3", args.provider_stage3, "Stage-3 provider endpoint|model|dim");
    cmd->add_option("--provider.enrich", args.provider_enrich, "Enrichment provider endpoint|model");
    cmd->add_option("--provider.qa", args.provider_qa, "QA provider endpoint|model");
    cmd->add_option("--ks", args.ks, "Recall cutoffs, ascending (default 1,10,50)");
    if (needs_corpus) corpus->required();
    if (needs_queries) queries->required();
    if (needs_out) out->required();
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_pattern("[%^%l%$] %v");
    CLI::App app{"craft: cascaded table retrieval and table QA"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string index_file;
    std::string store_file;
    std::string run_file;
    std::string label;
    std::string toggle_name;
    std::string context = "minitable";
    std::string train_file;
    std::string oracle_file;
    std::string report_in;
    std::string report_out;
    std::size_t n_tables = 5;
    int fewshot = 0;

    auto* ingest = app.add_subcommand("ingest", "Validate and normalize corpus/query files");
    add_common(ingest, args, true, false, true);

    auto* enrich = app.add_subcommand("enrich", "Generate table descriptions and sub-questions");
    add_common(enrich, args, true, false, true);

    auto* index_cmd = app.add_subcommand("index", "Build the Stage-1 inverted index");
    add_common(index_cmd, args, true, false, true);

    auto* embed = app.add_subcommand("embed", "Precompute row embeddings");
    add_common(embed, args, true, false, true);

    auto* retrieve = app.add_subcommand("retrieve", "Run the retrieval cascade");
    add_common(retrieve, args);
    retrieve->add_option("--index", index_file, "Inverted index file")->required();
    retrieve->add_option("--store", store_file, "Row embedding store")->required();

    auto* eval = app.add_subcommand("eval", "Recall@k over a TREC run file");
    add_common(eval, args, false, true, true);
    eval->add_option("--run", run_file, "TREC run file")->required();
    eval->add_option("--label", label, "Report label (default: run file stem)");

    auto* perturb = app.add_subcommand("perturb-eval", "Perturbed-query robustness study");
    add_common(perturb, args);
    perturb->add_option("--index", index_file, "Inverted index file")->required();
    perturb->add_option("--store", store_file, "Row embedding store")->required();

    auto* qa = app.add_subcommand("qa", "End-to-end answer generation and F1 scoring");
    add_common(qa, args);
    qa->add_option("--run", run_file, "Final TREC run file")->required();
    qa->add_option("--store", store_file, "Row embedding store")->required();
    qa->add_option("--n-tables", n_tables, "Tables per prompt");
    qa->add_option("--fewshot", fewshot, "Few-shot examples (0..5)");
    qa->add_option("--context", context, "minitable|fulltable");
    qa->add_option("--train", train_file, "Few-shot source queries (disjoint split)");
    qa->add_option("--oracle-passages", oracle_file, "Oracle passage JSONL {qid, passage}");

    auto* ablate = app.add_subcommand("ablate", "Toggle on/off comparison run");
    add_common(ablate, args);
    ablate->add_option("--ablate-toggle", toggle_name,
                       "Toggle to sweep (or pass a bare --toggle name)");

    auto* report = app.add_subcommand("report", "Merge CSV/JSON reports into markdown");
    report->add_option("--in", report_in, "Directory of report files")->required();
    report->add_option("--report-out", report_out, "Output markdown file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (ingest->parsed()) return cmd_ingest(args);
        if (enrich->parsed()) return cmd_enrich(args);
        if (index_cmd->parsed()) return cmd_index(args);
        if (embed->parsed()) return cmd_embed(args);
        if (retrieve->parsed()) return cmd_retrieve(args, index_file, store_file);
        if (eval->parsed()) return cmd_eval(args, run_file, label);
        if (perturb->parsed()) return cmd_perturb_eval(args, index_file, store_file);
        if (qa->parsed()) return cmd_qa(args, run_file, store_file, n_tables, fewshot, context,
                                        train_file, oracle_file);
        if (ablate->parsed()) return cmd_ablate(args, toggle_name);
        if (report->parsed()) return cmd_report(report_in, report_out);
    } catch (const CraftError& e) {
        const char* kind = e.kind() == ErrorKind::Usage ? "usage"
                           : e.kind() == ErrorKind::Data ? "data"
                                                         : "provider";
        std::cerr << "craft-error[" << kind << "]: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "craft-error[data]: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
