#include "craft/sparse.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "craft/error.hpp"
#include "craft/util.hpp"

using nlohmann::json;

namespace craft {

namespace {

// Decodes one UTF-8 codepoint; invalid sequences yield U+FFFD and advance one byte.
char32_t decode_utf8(std::string_view text, std::size_t& i) {
    unsigned char c = text[i];
    if (c < 0x80) {
        ++i;
        return c;
    }
    int extra = 0;
    char32_t cp = 0;
    if ((c & 0xE0) == 0xC0) {
        cp = c & 0x1F;
        extra = 1;
    } else if ((c & 0xF0) == 0xE0) {
        cp = c & 0x0F;
        extra = 2;
    } else if ((c & 0xF8) == 0xF0) {
        cp = c & 0x07;
        extra = 3;
    } else {
        ++i;
        return 0xFFFD;
    }
    if (i + static_cast<std::size_t>(extra) >= text.size()) {
        ++i;
        return 0xFFFD;
    }
    for (int k = 1; k <= extra; ++k) {
        unsigned char cc = text[i + static_cast<std::size_t>(k)];
        if ((cc & 0xC0) != 0x80) {
            ++i;
            return 0xFFFD;
        }
        cp = (cp << 6) | (cc & 0x3F);
    }
    i += static_cast<std::size_t>(extra) + 1;
    return cp;
}

bool is_separator(char32_t cp) {
    if (cp < 0x80) {
        return !((cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z'));
    }
    // Unicode whitespace and the common punctuation blocks.
    if (cp == 0x00A0 || cp == 0x00A1 || cp == 0x00AB || cp == 0x00B7 || cp == 0x00BB ||
        cp == 0x00BF || cp == 0x1680 || cp == 0xFFFD) {
        return true;
    }
    if (cp >= 0x2000 && cp <= 0x206F) return true;  // general punctuation incl. spaces
    if (cp >= 0x3000 && cp <= 0x303F) return true;  // CJK symbols and punctuation
    return false;
}

void append_codepoint(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    std::size_t i = 0;
    while (i < text.size()) {
        char32_t cp = decode_utf8(text, i);
        if (is_separator(cp)) {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
            continue;
        }
        if (cp >= 'A' && cp <= 'Z') cp = cp - 'A' + 'a';
        append_codepoint(current, cp);
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

// ---------------------------------------------------------------------------
// InvertedIndex
// ---------------------------------------------------------------------------

InvertedIndex InvertedIndex::build(const Corpus& corpus, bool use_descriptions, double k1,
                                   double b) {
    if (corpus.empty()) throw data_error("build_index: corpus is empty");
    InvertedIndex index;
    index.k1_ = k1;
    index.b_ = b;
    index.with_descriptions_ = use_descriptions;
    index.doc_ids_.reserve(corpus.size());
    index.doc_lengths_.reserve(corpus.size());

    double total_len = 0.0;
    for (const auto& [id, table] : corpus.tables()) {
        auto doc = static_cast<std::uint32_t>(index.doc_ids_.size());
        index.doc_ids_.push_back(id);
        std::vector<std::string> terms = tokenize(full_table_text(table, use_descriptions));
        index.doc_lengths_.push_back(static_cast<std::uint32_t>(terms.size()));
        total_len += static_cast<double>(terms.size());

        std::unordered_map<std::string, std::uint32_t> tf;
        for (auto& t : terms) ++tf[std::move(t)];
        for (auto& [term, count] : tf) {
            index.postings_[term].push_back({doc, count});
        }
    }
    // Docs were ingested in ascending table_id order, so postings are already
    // sorted by ordinal.
    index.avgdl_ = total_len / static_cast<double>(index.doc_ids_.size());
    return index;
}

InvertedIndex build_index(const Corpus& corpus, bool use_descriptions) {
    return InvertedIndex::build(corpus, use_descriptions);
}

std::optional<std::uint32_t> InvertedIndex::doc_ordinal(std::string_view table_id) const {
    auto it = std::lower_bound(doc_ids_.begin(), doc_ids_.end(), table_id);
    if (it == doc_ids_.end() || *it != table_id) return std::nullopt;
    return static_cast<std::uint32_t>(it - doc_ids_.begin());
}

double InvertedIndex::bm25_score(const std::vector<std::string>& query_terms,
                                 std::uint32_t doc) const {
    if (doc >= doc_ids_.size()) throw data_error("bm25_score: doc ordinal out of range");
    const double n_docs = static_cast<double>(doc_ids_.size());
    const double dl = doc_lengths_[doc];
    const double norm = k1_ * (1.0 - b_ + b_ * dl / avgdl_);
    double score = 0.0;
    for (const auto& term : query_terms) {
        auto it = postings_.find(term);
        if (it == postings_.end()) continue;
        const auto& plist = it->second;
        auto pit = std::lower_bound(plist.begin(), plist.end(), doc,
                                    [](const Posting& p, std::uint32_t d) { return p.doc < d; });
        if (pit == plist.end() || pit->doc != doc) continue;
        const double df = static_cast<double>(plist.size());
        const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
        const double tf = static_cast<double>(pit->tf);
        score += idf * tf * (k1_ + 1.0) / (tf + norm);
    }
    return score;
}

std::vector<RankingEntry> InvertedIndex::retrieve(const std::vector<std::string>& query_terms,
                                                  std::size_t n) const {
    const double n_docs = static_cast<double>(doc_ids_.size());
    std::unordered_map<std::uint32_t, double> acc;
    for (const auto& term : query_terms) {
        auto it = postings_.find(term);
        if (it == postings_.end()) continue;
        const auto& plist = it->second;
        const double df = static_cast<double>(plist.size());
        const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
        for (const Posting& p : plist) {
            const double dl = doc_lengths_[p.doc];
            const double norm = k1_ * (1.0 - b_ + b_ * dl / avgdl_);
            const double tf = static_cast<double>(p.tf);
            acc[p.doc] += idf * tf * (k1_ + 1.0) / (tf + norm);
        }
    }
    std::vector<RankingEntry> entries;
    entries.reserve(acc.size());
    for (const auto& [doc, score] : acc) {
        if (score > 0.0) entries.push_back({doc_ids_[doc], score});
    }
    std::sort(entries.begin(), entries.end(), [](const RankingEntry& a, const RankingEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.table_id < b.table_id;
    });
    if (entries.size() > n) entries.resize(n);
    return entries;
}

// ---------------------------------------------------------------------------
// Persistence: header {magic "CRFT1", version, N, avgdl, k1, b, flags},
// doc table, postings with delta-encoded ordinals.
// ---------------------------------------------------------------------------

namespace {

constexpr char kIndexMagic[5] = {'C', 'R', 'F', 'T', '1'};
constexpr std::uint32_t kIndexVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& in, T& v, const char* what) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw data_error(std::string("index file truncated reading ") + what);
}

void write_varint(std::ostream& out, std::uint64_t v) {
    while (v >= 0x80) {
        out.put(static_cast<char>((v & 0x7F) | 0x80));
        v >>= 7;
    }
    out.put(static_cast<char>(v));
}

std::uint64_t read_varint(std::istream& in) {
    std::uint64_t v = 0;
    int shift = 0;
    while (true) {
        int c = in.get();
        if (c == EOF) throw data_error("index file truncated reading varint");
        v |= static_cast<std::uint64_t>(c & 0x7F) << shift;
        if ((c & 0x80) == 0) break;
        shift += 7;
    }
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_varint(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    auto len = read_varint(in);
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw data_error("index file truncated reading string");
    return s;
}

}  // namespace

void InvertedIndex::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot write index file: " + path.string());
    out.write(kIndexMagic, 5);
    write_pod(out, kIndexVersion);
    write_pod(out, static_cast<std::uint64_t>(doc_ids_.size()));
    write_pod(out, avgdl_);
    write_pod(out, k1_);
    write_pod(out, b_);
    write_pod(out, static_cast<std::uint32_t>(with_descriptions_ ? 1 : 0));
    for (std::size_t i = 0; i < doc_ids_.size(); ++i) {
        write_string(out, doc_ids_[i]);
        write_varint(out, doc_lengths_[i]);
    }
    write_pod(out, static_cast<std::uint64_t>(postings_.size()));
    for (const auto& [term, plist] : postings_) {
        write_string(out, term);
        write_varint(out, plist.size());
        std::uint32_t prev = 0;
        for (const Posting& p : plist) {
            write_varint(out, p.doc - prev);
            write_varint(out, p.tf);
            prev = p.doc;
        }
    }
}

InvertedIndex InvertedIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open index file: " + path.string());
    char magic[5];
    in.read(magic, 5);
    if (!in || std::memcmp(magic, kIndexMagic, 5) != 0) {
        throw data_error("index file " + path.string() + ": bad magic");
    }
    std::uint32_t version = 0;
    read_pod(in, version, "version");
    if (version != kIndexVersion) {
        throw data_error("index file " + path.string() + ": unsupported version");
    }
    InvertedIndex index;
    std::uint64_t n = 0;
    read_pod(in, n, "doc count");
    read_pod(in, index.avgdl_, "avgdl");
    read_pod(in, index.k1_, "k1");
    read_pod(in, index.b_, "b");
    std::uint32_t flags = 0;
    read_pod(in, flags, "flags");
    index.with_descriptions_ = (flags & 1) != 0;
    index.doc_ids_.reserve(n);
    index.doc_lengths_.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        index.doc_ids_.push_back(read_string(in));
        index.doc_lengths_.push_back(static_cast<std::uint32_t>(read_varint(in)));
    }
    std::uint64_t term_count = 0;
    read_pod(in, term_count, "term count");
    for (std::uint64_t t = 0; t < term_count; ++t) {
        std::string term = read_string(in);
        auto df = read_varint(in);
        std::vector<Posting> plist;
        plist.reserve(df);
        std::uint32_t prev = 0;
        for (std::uint64_t i = 0; i < df; ++i) {
            auto delta = static_cast<std::uint32_t>(read_varint(in));
            auto tf = static_cast<std::uint32_t>(read_varint(in));
            std::uint32_t doc = prev + delta;
            if (doc >= n) throw data_error("index file " + path.string() + ": ordinal out of range");
            plist.push_back({doc, tf});
            prev = doc;
        }
        index.postings_.emplace(std::move(term), std::move(plist));
    }
    return index;
}

// ---------------------------------------------------------------------------
// Imported sparse vectors / impact scoring
// ---------------------------------------------------------------------------

SparseVectorMap import_sparse_vectors(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open sparse vector file: " + path.string());
    SparseVectorMap out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j["id"].is_string() ||
            !j.contains("weights") || !j["weights"].is_object()) {
            throw data_error("sparse vector file " + path.string() + " line " +
                             std::to_string(line_no) + ": malformed record");
        }
        SparseVector v;
        for (const auto& [term, weight] : j["weights"].items()) {
            if (!weight.is_number()) {
                throw data_error("sparse vector file " + path.string() + " line " +
                                 std::to_string(line_no) + ": non-numeric weight");
            }
            double w = weight.get<double>();
            if (w < 0.0) {
                throw data_error("sparse vector file " + path.string() + " line " +
                                 std::to_string(line_no) + ": negative weight for term " + term);
            }
            if (w > 0.0) v.weights[term] = w;
        }
        out[j["id"].get<std::string>()] = std::move(v);
    }
    return out;
}

double impact_score(const SparseVector& query, const SparseVector& doc) {
    double score = 0.0;
    for (const auto& [term, qw] : query.weights) {
        auto it = doc.weights.find(term);
        if (it != doc.weights.end()) score += qw * it->second;
    }
    return score;
}

ImpactIndex::ImpactIndex(const SparseVectorMap& doc_vectors) {
    doc_ids_.reserve(doc_vectors.size());
    for (const auto& [id, vec] : doc_vectors) {
        auto doc = static_cast<std::uint32_t>(doc_ids_.size());
        doc_ids_.push_back(id);
        for (const auto& [term, w] : vec.weights) {
            postings_[term].emplace_back(doc, w);
        }
    }
}

std::vector<RankingEntry> ImpactIndex::retrieve(const SparseVector& query, std::size_t n) const {
    std::unordered_map<std::uint32_t, double> acc;
    for (const auto& [term, qw] : query.weights) {
        auto it = postings_.find(term);
        if (it == postings_.end()) continue;
        for (const auto& [doc, dw] : it->second) acc[doc] += qw * dw;
    }
    std::vector<RankingEntry> entries;
    entries.reserve(acc.size());
    for (const auto& [doc, score] : acc) {
        if (score > 0.0) entries.push_back({doc_ids_[doc], score});
    }
    std::sort(entries.begin(), entries.end(), [](const RankingEntry& a, const RankingEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.table_id < b.table_id;
    });
    if (entries.size() > n) entries.resize(n);
    return entries;
}

Ranking stage1_retrieve(const QueryRecord& query, const InvertedIndex& index, std::size_t n1,
                        bool expand_subquestions, const SparseVectorMap* query_vectors,
                        const ImpactIndex* impact_index) {
    if (n1 < 1) throw usage_error("stage1_retrieve: N1 must be >= 1");
    Ranking ranking;
    ranking.qid = query.qid;
    ranking.stage = StageTag::Stage1;
    ranking.run_tag = "craft";

    if (query_vectors && impact_index) {
        auto it = query_vectors->find(query.qid);
        if (it != query_vectors->end()) {
            if (impact_index->doc_count() < index.doc_count()) {
                spdlog::warn("stage1: {} of {} docs have no sparse vector and score 0",
                             index.doc_count() - impact_index->doc_count(), index.doc_count());
            }
            ranking.entries = impact_index->retrieve(it->second, n1);
            return ranking;
        }
        spdlog::warn("stage1: no sparse vector for qid {}, falling back to BM25", query.qid);
    }

    std::vector<std::string> terms = tokenize(query.question);
    if (expand_subquestions) {
        for (const auto& sub : query.sub_questions) {
            std::vector<std::string> extra = tokenize(sub);
            terms.insert(terms.end(), extra.begin(), extra.end());
        }
    }
    ranking.entries = index.retrieve(terms, n1);
    return ranking;
}

}  // namespace craft
