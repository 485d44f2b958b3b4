#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "craft/corpus.hpp"

namespace craft {

struct TextGenProviderConfig {
    std::string endpoint = "local-fallback";  // "local-fallback" or an http(s) URL
    std::string name = "local";
    std::string model_id = "fallback-v1";
    double request_timeout_s = 30.0;
    int max_retries = 2;
    double rate_limit = 0.0;  // requests/second, 0 = unlimited

    bool is_local() const { return endpoint == "local-fallback"; }
};

enum class TemplateKind { TableDescription, QueryExpansion, Perturbation };

struct PromptTemplate {
    TemplateKind kind = TemplateKind::TableDescription;
    std::string body;

    // Substitutes {placeholder} occurrences; every requested placeholder must
    // appear in the body.
    std::string render(const std::map<std::string, std::string>& values) const;
    std::uint64_t content_hash() const;

    static PromptTemplate default_for(TemplateKind kind);
    static const char* kind_name(TemplateKind kind);
};

// JSONL sidecar: {"kind": "description"|"subq"|"perturb", "key": str,
// "model_id": str, "output": ...}. Appended on write, loaded wholesale on
// startup, so re-runs never re-call providers.
class EnrichmentCache {
public:
    EnrichmentCache() = default;  // memory-only
    explicit EnrichmentCache(std::filesystem::path path);

    std::optional<nlohmann::json> get(const std::string& kind, const std::string& key,
                                      const std::string& model_id) const;
    void put(const std::string& kind, const std::string& key, const std::string& model_id,
             const nlohmann::json& output);
    std::size_t size() const;

private:
    std::filesystem::path path_;
    mutable std::mutex mutex_;
    std::map<std::string, nlohmann::json> entries_;
};

// POST {"model", "prompt"} -> {"text"} with retry/rate-limit handling. The
// call counter also covers local-fallback computations so cache behaviour is
// observable in tests.
class TextGenClient {
public:
    explicit TextGenClient(TextGenProviderConfig config);

    std::string generate(const std::string& prompt);
    const TextGenProviderConfig& config() const { return config_; }
    std::uint64_t provider_call_count() const { return calls_.load(); }
    void count_local_call() { ++calls_; }

private:
    void rate_limit_wait();

    TextGenProviderConfig config_;
    std::atomic<std::uint64_t> calls_{0};
    std::mutex rate_mutex_;
    std::chrono::steady_clock::time_point last_request_{};
};

// Generated (title, description) for one table; cached by
// (model_id, table_id, template hash).
std::pair<std::string, std::string> generate_description(const TableRecord& table,
                                                         TextGenClient& provider,
                                                         const PromptTemplate& tmpl,
                                                         EnrichmentCache* cache);

// 0..4 sub-questions, stored on the record. Provider failures degrade to an
// empty list with a warning; the pipeline proceeds unexpanded.
std::vector<std::string> decompose_query(QueryRecord& query, TextGenClient& provider,
                                         const PromptTemplate& tmpl, EnrichmentCache* cache);

// Paraphrased copy with a fresh qid, perturbed_of set, and identical gold
// labels and answers.
QueryRecord perturb_query(const QueryRecord& query, TextGenClient& provider,
                          const PromptTemplate& tmpl, EnrichmentCache* cache);

}  // namespace craft
