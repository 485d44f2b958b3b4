#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace craft {

struct EmbeddingVector {
    std::vector<float> values;
    bool normalized = false;

    std::size_t dim() const { return values.size(); }
};

// L2-normalize in place; an all-zero vector becomes the first basis vector.
void l2_normalize(EmbeddingVector& v);

double cosine(const EmbeddingVector& u, const EmbeddingVector& v);

// Deterministic offline embedder. Features are the union of lowercase tokens
// and character 3-grams of the token-joined text; each feature is FNV-1a
// hashed, bucketed mod dim, and accumulated with sign +1 when bit 63 of the
// hash is clear, -1 otherwise. Bit-identical across platforms.
EmbeddingVector hashed_embed(std::string_view text, std::size_t dim = 256);

struct EmbeddingProviderConfig {
    std::string endpoint = "local-hash";  // "local-hash" or an http(s) URL
    std::string name = "local";           // key for CRAFT_API_KEY_<NAME>
    std::string model_id = "hash-256";
    std::size_t dim = 256;
    std::size_t batch_size = 64;
    double rate_limit = 0.0;  // requests/second, 0 = unlimited
    double timeout_s = 30.0;
    int max_retries = 2;

    bool is_local() const { return endpoint == "local-hash"; }
};

// Disk-backed embedding cache keyed by (model_id, fnv1a64(text)).
// File layout: magic "CRFE1", version u32, then records of
// {model_id_len u32, model_id, key_hash u64, dim u32, dim x f32}.
class EmbeddingCache {
public:
    EmbeddingCache() = default;  // memory-only
    explicit EmbeddingCache(std::filesystem::path backing_file);

    std::optional<std::vector<float>> get(const std::string& model_id, std::string_view text) const;
    void put(const std::string& model_id, std::string_view text, const std::vector<float>& values);

    std::size_t size() const;
    const std::filesystem::path& backing_file() const { return path_; }

private:
    void load();
    void append_record(const std::string& model_id, std::uint64_t key,
                       const std::vector<float>& values);

    std::filesystem::path path_;
    mutable std::mutex mutex_;
    std::unordered_map<std::string, std::unordered_map<std::uint64_t, std::vector<float>>> entries_;
};

struct EmbedResult {
    std::vector<EmbeddingVector> vectors;  // one per input text, order-preserving
    std::size_t provider_texts = 0;        // texts actually sent to the provider
};

// Cache-first embedding client. The provider is called only for cache misses,
// deduplicated within a batch and across concurrent callers (single-flight),
// so the call counter equals the number of unique uncached texts, never more.
class Embedder {
public:
    Embedder(EmbeddingProviderConfig config, EmbeddingCache* cache);

    EmbedResult embed(std::span<const std::string> texts);
    EmbeddingVector embed_one(const std::string& text);

    const EmbeddingProviderConfig& config() const { return config_; }
    std::uint64_t provider_call_count() const { return provider_texts_.load(); }

private:
    std::vector<std::vector<float>> request_batch(const std::vector<std::string>& texts);
    void rate_limit_wait();
    void release_inflight(const std::vector<std::string>& texts);

    EmbeddingProviderConfig config_;
    EmbeddingCache* cache_;
    std::atomic<std::uint64_t> provider_texts_{0};
    std::mutex rate_mutex_;
    std::chrono::steady_clock::time_point last_request_{};
    std::mutex inflight_mutex_;
    std::condition_variable inflight_cv_;
    std::unordered_set<std::uint64_t> inflight_;  // content hashes being fetched
};

}  // namespace craft
