#include "craft/dense.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <queue>
#include <random>
#include <set>
#include <unordered_set>

#include "craft/error.hpp"
#include "craft/util.hpp"

using nlohmann::json;

namespace craft {

// ---------------------------------------------------------------------------
// RowEmbeddingStore
// ---------------------------------------------------------------------------

std::size_t RowEmbeddingStore::total_rows() const {
    std::size_t n = 0;
    for (const auto& [id, vecs] : rows_) n += vecs.size();
    return n;
}

bool RowEmbeddingStore::covers(std::string_view table_id) const {
    return rows_.find(std::string(table_id)) != rows_.end();
}

const std::vector<EmbeddingVector>& RowEmbeddingStore::rows_for(const std::string& table_id) const {
    auto it = rows_.find(table_id);
    if (it == rows_.end()) throw data_error("row store does not cover table " + table_id);
    return it->second;
}

RowEmbeddingStore precompute_row_embeddings(const Corpus& corpus, Embedder& embedder) {
    RowEmbeddingStore store;
    store.model_id_ = embedder.config().model_id;
    store.dim_ = embedder.config().dim;
    {
        auto now = std::chrono::system_clock::now();
        auto t = std::chrono::system_clock::to_time_t(now);
        char buf[32];
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
        store.built_at_ = buf;
    }

    std::vector<std::string> texts;
    std::vector<std::pair<std::string, std::uint32_t>> refs;
    for (const auto& [id, table] : corpus.tables()) {
        store.rows_[id] = {};  // header-only tables keep an empty slot
        for (std::size_t r = 0; r < table.row_count(); ++r) {
            texts.push_back(serialize_row(table, r));
            refs.emplace_back(id, static_cast<std::uint32_t>(r));
        }
    }
    if (!texts.empty()) {
        EmbedResult result = embedder.embed(texts);
        for (std::size_t i = 0; i < refs.size(); ++i) {
            auto& slot = store.rows_[refs[i].first];
            if (slot.size() != refs[i].second) {
                throw data_error("row embedding order mismatch for table " + refs[i].first);
            }
            slot.push_back(std::move(result.vectors[i]));
        }
    }
    return store;
}

namespace {

constexpr char kStoreMagic[5] = {'C', 'R', 'F', 'V', '1'};
constexpr std::uint32_t kStoreVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& in, T& v, const char* what) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw data_error(std::string("row store truncated reading ") + what);
}

void write_lp_string(std::ostream& out, const std::string& s) {
    write_pod(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_lp_string(std::istream& in, const char* what) {
    std::uint32_t len = 0;
    read_pod(in, len, what);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw data_error(std::string("row store truncated reading ") + what);
    return s;
}

std::filesystem::path store_index_path(const std::filesystem::path& vectors_path) {
    std::filesystem::path p = vectors_path;
    p += ".idx";
    return p;
}

}  // namespace

void RowEmbeddingStore::save(const std::filesystem::path& vectors_path) const {
    if (vectors_path.has_parent_path()) {
        std::filesystem::create_directories(vectors_path.parent_path());
    }
    std::ofstream out(vectors_path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot write row store: " + vectors_path.string());
    out.write(kStoreMagic, 5);
    write_pod(out, kStoreVersion);
    write_lp_string(out, model_id_);
    write_lp_string(out, built_at_);
    write_pod(out, static_cast<std::uint32_t>(dim_));

    json index = json::object();
    std::uint64_t offset = 0;  // in vectors, not bytes
    for (const auto& [id, vecs] : rows_) {
        index[id] = {offset, vecs.size()};
        for (const auto& v : vecs) {
            if (v.dim() != dim_) throw data_error("row store: vector dim mismatch in " + id);
            out.write(reinterpret_cast<const char*>(v.values.data()),
                      static_cast<std::streamsize>(dim_ * sizeof(float)));
        }
        offset += vecs.size();
    }
    write_file(store_index_path(vectors_path), index.dump());
}

RowEmbeddingStore RowEmbeddingStore::load(const std::filesystem::path& vectors_path) {
    std::ifstream in(vectors_path, std::ios::binary);
    if (!in) throw data_error("cannot open row store: " + vectors_path.string());
    char magic[5];
    in.read(magic, 5);
    std::uint32_t version = 0;
    if (!in || std::memcmp(magic, kStoreMagic, 5) != 0) {
        throw data_error("row store " + vectors_path.string() + ": bad magic");
    }
    read_pod(in, version, "version");
    if (version != kStoreVersion) {
        throw data_error("row store " + vectors_path.string() + ": unsupported version");
    }
    RowEmbeddingStore store;
    store.model_id_ = read_lp_string(in, "model_id");
    store.built_at_ = read_lp_string(in, "built_at");
    std::uint32_t dim = 0;
    read_pod(in, dim, "dim");
    store.dim_ = dim;

    json index = json::parse(read_file(store_index_path(vectors_path)), nullptr, false);
    if (index.is_discarded() || !index.is_object()) {
        throw data_error("row store index " + store_index_path(vectors_path).string() +
                         ": malformed");
    }
    auto data_begin = in.tellg();
    for (const auto& [id, entry] : index.items()) {
        std::uint64_t offset = entry[0].get<std::uint64_t>();
        std::uint64_t count = entry[1].get<std::uint64_t>();
        std::vector<EmbeddingVector> vecs(count);
        in.seekg(data_begin + static_cast<std::streamoff>(offset * dim * sizeof(float)));
        for (auto& v : vecs) {
            v.values.resize(dim);
            in.read(reinterpret_cast<char*>(v.values.data()),
                    static_cast<std::streamsize>(dim * sizeof(float)));
            if (!in) throw data_error("row store " + vectors_path.string() + ": truncated vectors");
            v.normalized = true;
        }
        store.rows_[id] = std::move(vecs);
    }
    return store;
}

// ---------------------------------------------------------------------------
// MiniTable
// ---------------------------------------------------------------------------

MiniTable build_minitable(const TableRecord& table, const EmbeddingVector& query_vec,
                          const RowEmbeddingStore& store, std::size_t k,
                          bool include_description) {
    const auto& row_vecs = store.rows_for(table.table_id);
    if (row_vecs.size() != table.row_count()) {
        throw data_error("row store for table " + table.table_id + " has " +
                         std::to_string(row_vecs.size()) + " vectors, table has " +
                         std::to_string(table.row_count()) + " rows");
    }

    MiniTable mini;
    mini.table_id = table.table_id;
    mini.headers = table.headers;

    std::vector<std::pair<std::uint32_t, double>> scored;
    scored.reserve(row_vecs.size());
    for (std::size_t r = 0; r < row_vecs.size(); ++r) {
        scored.emplace_back(static_cast<std::uint32_t>(r), cosine(query_vec, row_vecs[r]));
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (scored.size() > k) scored.resize(k);
    mini.selected_rows = scored;

    std::vector<std::uint32_t> order;
    order.reserve(scored.size());
    for (const auto& [row, rel] : scored) order.push_back(row);
    std::sort(order.begin(), order.end());

    mini.text = table.title;
    mini.text += "\n";
    mini.text += join(table.headers, " | ");
    for (std::uint32_t row : order) {
        mini.text += "\n";
        mini.text += serialize_row(table, row);
    }
    if (include_description && table.description) {
        mini.text += "\n";
        mini.text += *table.description;
    }
    return mini;
}

Stage2Mode stage2_mode_from_name(std::string_view name) {
    if (name == "minitable_text") return Stage2Mode::MinitableText;
    if (name == "max_row") return Stage2Mode::MaxRow;
    throw usage_error("unknown stage2 mode: " + std::string(name));
}

std::string_view stage2_mode_name(Stage2Mode mode) {
    return mode == Stage2Mode::MinitableText ? "minitable_text" : "max_row";
}

Stage2Output stage2_rerank(const QueryRecord& query, const Ranking& stage1, const Corpus& corpus,
                           const RowEmbeddingStore& store, Embedder& embedder,
                           const Stage2Options& options) {
    if (stage1.entries.empty()) throw data_error("stage2_rerank: empty stage-1 ranking");

    Stage2Output out;
    out.ranking.qid = query.qid;
    out.ranking.stage = StageTag::Stage2;
    out.ranking.run_tag = stage1.run_tag;

    EmbedResult query_embed = embedder.embed(std::vector<std::string>{query.question});
    const EmbeddingVector& query_vec = query_embed.vectors[0];
    out.query_provider_texts = query_embed.provider_texts;

    struct Candidate {
        MiniTable mini;
        double score = 0.0;
    };
    std::vector<Candidate> candidates;
    candidates.reserve(stage1.entries.size());
    for (const auto& entry : stage1.entries) {
        const TableRecord* table = corpus.find(entry.table_id);
        if (!table) throw data_error("stage2_rerank: candidate table " + entry.table_id +
                                     " missing from corpus");
        Candidate c;
        c.mini = build_minitable(*table, query_vec, store, options.rows_k,
                                 options.include_description && options.minitable_context);
        candidates.push_back(std::move(c));
    }

    if (options.mode == Stage2Mode::MinitableText) {
        std::vector<std::string> texts;
        texts.reserve(candidates.size());
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            if (options.minitable_context) {
                texts.push_back(candidates[i].mini.text);
            } else {
                const TableRecord& table = corpus.at(stage1.entries[i].table_id);
                texts.push_back(full_table_text(table, options.include_description));
            }
        }
        EmbedResult embedded = embedder.embed(texts);
        out.minitable_provider_texts = embedded.provider_texts;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            candidates[i].score = cosine(query_vec, embedded.vectors[i]);
        }
    } else if (options.ann) {
        // Approximate path: one global row search; a candidate's score is the
        // exact cosine of its best row found, or sinks below any true cosine
        // when the search never reached it.
        std::unordered_map<std::string, double> best;
        std::size_t k = std::min(store.total_rows(),
                                 std::max<std::size_t>(8 * options.n2, 512));
        for (const RowRef& hit : options.ann->query(query_vec, k)) {
            auto it = best.find(hit.table_id);
            if (it != best.end()) continue;  // hits arrive nearest-first
            best.emplace(hit.table_id, cosine(query_vec, store.rows_for(hit.table_id)[hit.row]));
        }
        for (auto& c : candidates) {
            auto it = best.find(c.mini.table_id);
            c.score = it == best.end() ? -2.0 : it->second;
        }
    } else {
        for (auto& c : candidates) {
            c.score = c.mini.selected_rows.empty() ? -2.0 : c.mini.selected_rows.front().second;
        }
    }

    std::vector<std::size_t> order(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (candidates[a].score != candidates[b].score) {
            return candidates[a].score > candidates[b].score;
        }
        return candidates[a].mini.table_id < candidates[b].mini.table_id;
    });
    std::size_t keep = std::min(options.n2, order.size());
    out.ranking.entries.reserve(keep);
    out.minitables.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
        const Candidate& c = candidates[order[i]];
        out.ranking.entries.push_back({c.mini.table_id, c.score});
        out.minitables.push_back(c.mini);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Exact search
// ---------------------------------------------------------------------------

std::vector<RowRef> exact_search(const RowEmbeddingStore& store, const EmbeddingVector& query_vec,
                                 std::size_t k) {
    struct Hit {
        double score;
        RowRef ref;
    };
    std::vector<Hit> hits;
    hits.reserve(store.total_rows());
    for (const auto& [id, vecs] : store.tables()) {
        for (std::size_t r = 0; r < vecs.size(); ++r) {
            hits.push_back({cosine(query_vec, vecs[r]), {id, static_cast<std::uint32_t>(r)}});
        }
    }
    auto better = [](const Hit& a, const Hit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.ref < b.ref;
    };
    if (hits.size() > k) {
        std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(),
                          better);
        hits.resize(k);
    } else {
        std::sort(hits.begin(), hits.end(), better);
    }
    std::vector<RowRef> out;
    out.reserve(hits.size());
    for (auto& h : hits) out.push_back(std::move(h.ref));
    return out;
}

// ---------------------------------------------------------------------------
// AnnIndex: hierarchical small-world graph, cosine distance (1 - dot).
// ---------------------------------------------------------------------------

float AnnIndex::dot(std::size_t node, const float* query) const {
    const float* v = vectors_.data() + node * dim_;
    float acc = 0.0f;
    for (std::size_t i = 0; i < dim_; ++i) acc += v[i] * query[i];
    return acc;
}

void AnnIndex::search_layer(const float* query, std::size_t ef, int layer,
                            std::vector<SearchHit>& out, std::uint32_t entry) const {
    auto dist = [&](std::uint32_t n) { return 1.0f - dot(n, query); };

    std::unordered_set<std::uint32_t> visited{entry};
    auto worse = [](const SearchHit& a, const SearchHit& b) { return a.dist < b.dist; };
    auto closer = [](const SearchHit& a, const SearchHit& b) { return a.dist > b.dist; };
    // candidates: nearest first; results: farthest first, capped at ef.
    std::priority_queue<SearchHit, std::vector<SearchHit>, decltype(closer)> candidates(closer);
    std::priority_queue<SearchHit, std::vector<SearchHit>, decltype(worse)> results(worse);
    SearchHit first{dist(entry), entry};
    candidates.push(first);
    results.push(first);

    while (!candidates.empty()) {
        SearchHit current = candidates.top();
        candidates.pop();
        if (current.dist > results.top().dist && results.size() >= ef) break;
        for (std::uint32_t neighbor : links_[current.node][static_cast<std::size_t>(layer)]) {
            if (!visited.insert(neighbor).second) continue;
            float d = dist(neighbor);
            if (results.size() < ef || d < results.top().dist) {
                SearchHit hit{d, neighbor};
                candidates.push(hit);
                results.push(hit);
                if (results.size() > ef) results.pop();
            }
        }
    }
    out.clear();
    out.reserve(results.size());
    while (!results.empty()) {
        out.push_back(results.top());
        results.pop();
    }
    std::reverse(out.begin(), out.end());  // nearest first
}

std::vector<std::uint32_t> AnnIndex::select_neighbors(const float* query,
                                                      std::vector<SearchHit>& candidates,
                                                      std::size_t m) const {
    // Relative-neighborhood pruning: keep a candidate only if it is closer to
    // the query than to every neighbor already kept; backfill with pruned
    // candidates when fewer than m survive.
    std::sort(candidates.begin(), candidates.end(),
              [](const SearchHit& a, const SearchHit& b) { return a.dist < b.dist; });
    std::vector<std::uint32_t> selected;
    std::vector<std::uint32_t> pruned;
    for (const SearchHit& c : candidates) {
        if (selected.size() >= m) break;
        bool keep = true;
        const float* cv = vectors_.data() + c.node * dim_;
        for (std::uint32_t s : selected) {
            float d_cs = 1.0f - dot(s, cv);
            if (d_cs < c.dist) {
                keep = false;
                break;
            }
        }
        if (keep) {
            selected.push_back(c.node);
        } else {
            pruned.push_back(c.node);
        }
    }
    for (std::uint32_t p : pruned) {
        if (selected.size() >= m) break;
        selected.push_back(p);
    }
    return selected;
}

AnnIndex AnnIndex::build(const RowEmbeddingStore& store, AnnParams params) {
    if (store.total_rows() == 0) throw data_error("ann_build: row store is empty");
    AnnIndex index;
    index.params_ = params;
    index.dim_ = store.dim() ? store.dim() : 0;

    for (const auto& [id, vecs] : store.tables()) {
        for (std::size_t r = 0; r < vecs.size(); ++r) {
            if (index.dim_ == 0) index.dim_ = vecs[r].dim();
            if (vecs[r].dim() != index.dim_) {
                throw data_error("ann_build: inconsistent vector dims in store");
            }
            index.ids_.push_back({id, static_cast<std::uint32_t>(r)});
            index.vectors_.insert(index.vectors_.end(), vecs[r].values.begin(),
                                  vecs[r].values.end());
        }
    }

    const std::size_t n = index.ids_.size();
    const std::size_t m = params.max_degree;
    const double level_mult = 1.0 / std::log(static_cast<double>(m));
    std::mt19937_64 rng(params.seed);
    std::uniform_real_distribution<double> uniform(std::nextafter(0.0, 1.0), 1.0);

    index.links_.resize(n);
    index.levels_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        int level = static_cast<int>(std::floor(-std::log(uniform(rng)) * level_mult));
        index.levels_[i] = level;
        index.links_[i].resize(static_cast<std::size_t>(level) + 1);
    }

    auto max_links = [&](int layer) { return layer == 0 ? 2 * m : m; };

    for (std::uint32_t node = 0; node < n; ++node) {
        const float* q = index.vectors_.data() + static_cast<std::size_t>(node) * index.dim_;
        int node_level = index.levels_[node];
        if (index.max_level_ < 0) {
            index.entry_point_ = node;
            index.max_level_ = node_level;
            continue;
        }

        std::uint32_t ep = index.entry_point_;
        std::vector<SearchHit> hits;
        for (int layer = index.max_level_; layer > node_level; --layer) {
            index.search_layer(q, 1, layer, hits, ep);
            ep = hits.front().node;
        }
        for (int layer = std::min(index.max_level_, node_level); layer >= 0; --layer) {
            index.search_layer(q, params.ef_construction, layer, hits, ep);
            std::vector<std::uint32_t> neighbors = index.select_neighbors(q, hits, m);
            auto& node_links = index.links_[node][static_cast<std::size_t>(layer)];
            node_links = neighbors;
            for (std::uint32_t neighbor : neighbors) {
                auto& back = index.links_[neighbor][static_cast<std::size_t>(layer)];
                back.push_back(node);
                if (back.size() > max_links(layer)) {
                    const float* nv =
                        index.vectors_.data() + static_cast<std::size_t>(neighbor) * index.dim_;
                    std::vector<SearchHit> back_hits;
                    back_hits.reserve(back.size());
                    for (std::uint32_t b : back) {
                        back_hits.push_back({1.0f - index.dot(b, nv), b});
                    }
                    back = index.select_neighbors(nv, back_hits, max_links(layer));
                }
            }
            ep = hits.front().node;
        }
        if (node_level > index.max_level_) {
            index.max_level_ = node_level;
            index.entry_point_ = node;
        }
    }
    index.built_ = true;
    return index;
}

std::vector<RowRef> AnnIndex::query(const EmbeddingVector& query_vec, std::size_t k) const {
    if (!built_) throw data_error("ann_query: index not built");
    if (query_vec.dim() != dim_) throw data_error("ann_query: query dim mismatch");
    const float* q = query_vec.values.data();

    std::uint32_t ep = entry_point_;
    std::vector<SearchHit> hits;
    for (int layer = max_level_; layer > 0; --layer) {
        search_layer(q, 1, layer, hits, ep);
        ep = hits.front().node;
    }
    std::size_t ef = params_.ef_search ? params_.ef_search : std::max<std::size_t>(256, 5 * k);
    search_layer(q, std::max(ef, k), 0, hits, ep);

    std::sort(hits.begin(), hits.end(), [&](const SearchHit& a, const SearchHit& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        return ids_[a.node] < ids_[b.node];
    });
    if (hits.size() > k) hits.resize(k);
    std::vector<RowRef> out;
    out.reserve(hits.size());
    for (const SearchHit& h : hits) out.push_back(ids_[h.node]);
    return out;
}

double AnnIndex::measured_recall(const RowEmbeddingStore& store,
                                 const std::vector<EmbeddingVector>& probes, std::size_t k) const {
    if (probes.empty()) throw data_error("measured_recall: no probes");
    double total = 0.0;
    for (const auto& probe : probes) {
        std::vector<RowRef> exact = exact_search(store, probe, k);
        std::vector<RowRef> approx = query(probe, k);
        std::set<RowRef> exact_set(exact.begin(), exact.end());
        std::size_t hit = 0;
        for (const RowRef& r : approx) hit += exact_set.count(r);
        total += exact.empty() ? 1.0 : static_cast<double>(hit) / static_cast<double>(exact.size());
    }
    return total / static_cast<double>(probes.size());
}

}  // namespace craft
