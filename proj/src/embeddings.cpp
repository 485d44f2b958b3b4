#include "craft/embeddings.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <thread>

#include "craft/error.hpp"
#include "craft/sparse.hpp"
#include "craft/util.hpp"

using nlohmann::json;

namespace craft {

void l2_normalize(EmbeddingVector& v) {
    double sq = 0.0;
    for (float x : v.values) sq += static_cast<double>(x) * x;
    if (sq == 0.0) {
        if (!v.values.empty()) v.values[0] = 1.0f;
        v.normalized = true;
        return;
    }
    const auto inv = static_cast<float>(1.0 / std::sqrt(sq));
    for (float& x : v.values) x *= inv;
    v.normalized = true;
}

double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
    if (u.dim() != v.dim()) {
        throw data_error("cosine: dimension mismatch (" + std::to_string(u.dim()) + " vs " +
                         std::to_string(v.dim()) + ")");
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < u.values.size(); ++i) {
        dot += static_cast<double>(u.values[i]) * v.values[i];
    }
    return dot;
}

EmbeddingVector hashed_embed(std::string_view text, std::size_t dim) {
    if (dim < 16) throw data_error("hashed_embed: dim must be >= 16");
    EmbeddingVector v;
    v.values.assign(dim, 0.0f);

    std::vector<std::string> tokens = tokenize(text);
    std::set<std::string> features(tokens.begin(), tokens.end());
    std::string canonical = join(tokens, " ");
    if (canonical.size() >= 3) {
        for (std::size_t i = 0; i + 3 <= canonical.size(); ++i) {
            features.insert(canonical.substr(i, 3));
        }
    }
    for (const std::string& feature : features) {
        std::uint64_t h = fnv1a64(feature);
        std::size_t idx = static_cast<std::size_t>(h % dim);
        v.values[idx] += (h >> 63) == 0 ? 1.0f : -1.0f;
    }
    l2_normalize(v);
    return v;
}

// ---------------------------------------------------------------------------
// EmbeddingCache
// ---------------------------------------------------------------------------

namespace {

constexpr char kCacheMagic[5] = {'C', 'R', 'F', 'E', '1'};
constexpr std::uint32_t kCacheVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
bool read_pod(std::istream& in, T& value) {
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    return static_cast<bool>(in);
}

}  // namespace

EmbeddingCache::EmbeddingCache(std::filesystem::path backing_file) : path_(std::move(backing_file)) {
    load();
}

void EmbeddingCache::load() {
    std::ifstream in(path_, std::ios::binary);
    if (!in) return;  // fresh cache
    char magic[5];
    in.read(magic, 5);
    std::uint32_t version = 0;
    if (!in || std::memcmp(magic, kCacheMagic, 5) != 0 || !read_pod(in, version) ||
        version != kCacheVersion) {
        throw data_error("embedding cache " + path_.string() + ": bad header");
    }
    while (true) {
        std::uint32_t model_len = 0;
        if (!read_pod(in, model_len)) break;
        std::string model(model_len, '\0');
        in.read(model.data(), model_len);
        std::uint64_t key = 0;
        std::uint32_t dim = 0;
        if (!read_pod(in, key) || !read_pod(in, dim)) {
            throw data_error("embedding cache " + path_.string() + ": truncated record");
        }
        std::vector<float> values(dim);
        in.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(dim * sizeof(float)));
        if (!in) throw data_error("embedding cache " + path_.string() + ": truncated vector");
        entries_[model][key] = std::move(values);
    }
}

std::optional<std::vector<float>> EmbeddingCache::get(const std::string& model_id,
                                                      std::string_view text) const {
    std::lock_guard lock(mutex_);
    auto mit = entries_.find(model_id);
    if (mit == entries_.end()) return std::nullopt;
    auto it = mit->second.find(fnv1a64(text));
    if (it == mit->second.end()) return std::nullopt;
    return it->second;
}

void EmbeddingCache::put(const std::string& model_id, std::string_view text,
                         const std::vector<float>& values) {
    std::uint64_t key = fnv1a64(text);
    std::lock_guard lock(mutex_);
    auto [it, inserted] = entries_[model_id].emplace(key, values);
    if (!inserted) return;
    if (!path_.empty()) append_record(model_id, key, values);
}

void EmbeddingCache::append_record(const std::string& model_id, std::uint64_t key,
                                   const std::vector<float>& values) {
    bool fresh = !std::filesystem::exists(path_);
    if (fresh && path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) throw data_error("cannot write embedding cache: " + path_.string());
    if (fresh) {
        out.write(kCacheMagic, 5);
        write_pod(out, kCacheVersion);
    }
    write_pod(out, static_cast<std::uint32_t>(model_id.size()));
    out.write(model_id.data(), static_cast<std::streamsize>(model_id.size()));
    write_pod(out, key);
    write_pod(out, static_cast<std::uint32_t>(values.size()));
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
}

std::size_t EmbeddingCache::size() const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (const auto& [model, entries] : entries_) n += entries.size();
    return n;
}

// ---------------------------------------------------------------------------
// Embedder
// ---------------------------------------------------------------------------

Embedder::Embedder(EmbeddingProviderConfig config, EmbeddingCache* cache)
    : config_(std::move(config)), cache_(cache) {
    if (config_.dim == 0) throw usage_error("embedding provider dim must be > 0");
    if (config_.batch_size == 0) throw usage_error("embedding provider batch_size must be >= 1");
}

void Embedder::rate_limit_wait() {
    if (config_.rate_limit <= 0.0) return;
    std::lock_guard lock(rate_mutex_);
    auto min_gap = std::chrono::duration<double>(1.0 / config_.rate_limit);
    auto now = std::chrono::steady_clock::now();
    auto earliest = last_request_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(min_gap);
    if (last_request_.time_since_epoch().count() != 0 && now < earliest) {
        std::this_thread::sleep_until(earliest);
        now = std::chrono::steady_clock::now();
    }
    last_request_ = now;
}

std::vector<std::vector<float>> Embedder::request_batch(const std::vector<std::string>& texts) {
    if (config_.is_local()) {
        std::vector<std::vector<float>> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(hashed_embed(t, config_.dim).values);
        provider_texts_ += texts.size();
        return out;
    }

    auto slash = config_.endpoint.find('/', config_.endpoint.find("//") + 2);
    std::string base = slash == std::string::npos ? config_.endpoint : config_.endpoint.substr(0, slash);
    std::string route = slash == std::string::npos ? "/" : config_.endpoint.substr(slash);

    json body;
    body["model"] = config_.model_id;
    body["input"] = texts;
    std::string payload = body.dump();

    std::string api_key;
    std::string env_name = "CRAFT_API_KEY_" + to_lower_ascii(config_.name);
    for (char& c : env_name) c = std::isalnum(static_cast<unsigned char>(c)) ? std::toupper(c) : '_';
    if (const char* key = std::getenv(env_name.c_str())) api_key = key;

    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        rate_limit_wait();
        httplib::Client client(base);
        client.set_connection_timeout(std::chrono::duration<double>(config_.timeout_s));
        client.set_read_timeout(std::chrono::duration<double>(config_.timeout_s));
        httplib::Headers headers;
        if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
        auto res = client.Post(route, headers, payload, "application/json");
        if (!res || res->status != 200) {
            spdlog::warn("embedding provider {} attempt {}/{} failed ({})", config_.model_id,
                         attempt + 1, config_.max_retries + 1,
                         res ? std::to_string(res->status) : "transport error");
            continue;
        }
        json reply = json::parse(res->body, nullptr, false);
        if (reply.is_discarded() || !reply.contains("embeddings") || !reply["embeddings"].is_array() ||
            reply["embeddings"].size() != texts.size()) {
            throw provider_error("embedding provider " + config_.model_id +
                                 ": malformed response body");
        }
        std::vector<std::vector<float>> out;
        out.reserve(texts.size());
        for (const auto& e : reply["embeddings"]) {
            std::vector<float> values = e.get<std::vector<float>>();
            if (values.size() != config_.dim) {
                throw provider_error("embedding provider " + config_.model_id +
                                     ": got dim " + std::to_string(values.size()) + ", expected " +
                                     std::to_string(config_.dim));
            }
            out.push_back(std::move(values));
        }
        provider_texts_ += texts.size();
        return out;
    }
    throw provider_error("embedding provider " + config_.model_id + ": request failed after " +
                         std::to_string(config_.max_retries + 1) + " attempts");
}

void Embedder::release_inflight(const std::vector<std::string>& texts) {
    std::lock_guard lock(inflight_mutex_);
    for (const auto& t : texts) inflight_.erase(fnv1a64(t));
    inflight_cv_.notify_all();
}

EmbedResult Embedder::embed(std::span<const std::string> texts) {
    EmbedResult result;
    result.vectors.resize(texts.size());

    // Cache lookups first; misses are deduplicated within the batch, and a
    // text already being fetched by another thread is waited on instead of
    // re-requested.
    std::vector<std::string> owned;
    std::vector<std::size_t> waiting;
    std::unordered_map<std::string, std::vector<std::size_t>> positions;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (auto hit = cache_ ? cache_->get(config_.model_id, texts[i]) : std::nullopt) {
            result.vectors[i].values = std::move(*hit);
            result.vectors[i].normalized = true;
            continue;
        }
        auto [it, first_seen] = positions.try_emplace(texts[i]);
        it->second.push_back(i);
        if (!first_seen) continue;
        bool claimed = true;
        if (cache_) {
            std::lock_guard lock(inflight_mutex_);
            claimed = inflight_.insert(fnv1a64(texts[i])).second;
        }
        if (claimed) {
            owned.push_back(texts[i]);
        } else {
            waiting.push_back(i);
        }
    }

    try {
        for (std::size_t offset = 0; offset < owned.size(); offset += config_.batch_size) {
            std::size_t end = std::min(offset + config_.batch_size, owned.size());
            std::vector<std::string> batch(owned.begin() + static_cast<std::ptrdiff_t>(offset),
                                           owned.begin() + static_cast<std::ptrdiff_t>(end));
            std::vector<std::vector<float>> raw;
            try {
                raw = request_batch(batch);
            } catch (const CraftError& e) {
                throw provider_error(std::string(e.what()) + " (batch offset " +
                                     std::to_string(offset) + ")");
            }
            for (std::size_t j = 0; j < batch.size(); ++j) {
                EmbeddingVector v;
                v.values = std::move(raw[j]);
                l2_normalize(v);
                if (cache_) cache_->put(config_.model_id, batch[j], v.values);
                for (std::size_t pos : positions[batch[j]]) result.vectors[pos] = v;
            }
            result.provider_texts += batch.size();
            release_inflight(batch);
        }
    } catch (...) {
        release_inflight(owned);  // unblock waiters before propagating
        throw;
    }

    for (std::size_t i : waiting) {
        std::unique_lock lock(inflight_mutex_);
        inflight_cv_.wait(lock, [&] {
            return inflight_.count(fnv1a64(texts[i])) == 0;
        });
        lock.unlock();
        auto hit = cache_->get(config_.model_id, texts[i]);
        if (!hit) {
            throw provider_error("embedding for a shared in-flight text failed upstream");
        }
        for (std::size_t pos : positions[texts[i]]) {
            result.vectors[pos].values = *hit;
            result.vectors[pos].normalized = true;
        }
    }
    return result;
}

EmbeddingVector Embedder::embed_one(const std::string& text) {
    std::vector<std::string> one{text};
    return std::move(embed(one).vectors[0]);
}

}  // namespace craft
