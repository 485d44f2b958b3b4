#include "craft/enrichment.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

#include "craft/error.hpp"
#include "craft/util.hpp"

using nlohmann::json;

namespace craft {

// ---------------------------------------------------------------------------
// PromptTemplate
// ---------------------------------------------------------------------------

const char* PromptTemplate::kind_name(TemplateKind kind) {
    switch (kind) {
        case TemplateKind::TableDescription: return "table_description";
        case TemplateKind::QueryExpansion: return "query_expansion";
        case TemplateKind::Perturbation: return "perturbation";
    }
    return "table_description";
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& values) const {
    std::string out = body;
    for (const auto& [name, value] : values) {
        std::string needle = "{" + name + "}";
        std::size_t pos = out.find(needle);
        if (pos == std::string::npos) {
            throw usage_error("template " + std::string(kind_name(kind)) +
                              " is missing placeholder " + needle);
        }
        while (pos != std::string::npos) {
            out.replace(pos, needle.size(), value);
            pos = out.find(needle, pos + value.size());
        }
    }
    return out;
}

std::uint64_t PromptTemplate::content_hash() const {
    return fnv1a64(std::string(kind_name(kind)) + "\x1f" + body);
}

PromptTemplate PromptTemplate::default_for(TemplateKind kind) {
    PromptTemplate t;
    t.kind = kind;
    switch (kind) {
        case TemplateKind::TableDescription:
            t.body =
                "Write a short informative title and a detailed description for the table "
                "below. Reply with the title on the first line and the description on the "
                "following lines.\n\n{table}\n";
            break;
        case TemplateKind::QueryExpansion:
            t.body =
                "Break the question into at most 4 self-contained sub-questions, one per "
                "line, and reply with nothing else. If the question is already atomic, "
                "reply with an empty line.\n\nQuestion: {question}\n";
            break;
        case TemplateKind::Perturbation:
            t.body =
                "Rewrite the question so it asks for exactly the same fact with different "
                "wording. Reply with the rewritten question only.\n\nQuestion: {question}\n";
            break;
    }
    return t;
}

// ---------------------------------------------------------------------------
// EnrichmentCache
// ---------------------------------------------------------------------------

namespace {

std::string cache_map_key(const std::string& kind, const std::string& model_id,
                          const std::string& key) {
    return kind + "\x1f" + model_id + "\x1f" + key;
}

}  // namespace

EnrichmentCache::EnrichmentCache(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) return;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("kind") || !j.contains("key") ||
            !j.contains("model_id") || !j.contains("output")) {
            throw data_error("enrichment cache " + path_.string() + " line " +
                             std::to_string(line_no) + ": malformed record");
        }
        entries_[cache_map_key(j["kind"], j["model_id"], j["key"])] = j["output"];
    }
}

std::optional<json> EnrichmentCache::get(const std::string& kind, const std::string& key,
                                         const std::string& model_id) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(cache_map_key(kind, model_id, key));
    if (it == entries_.end()) return std::nullopt;
    return std::optional<json>(it->second);
}

void EnrichmentCache::put(const std::string& kind, const std::string& key,
                          const std::string& model_id, const json& output) {
    std::lock_guard lock(mutex_);
    auto [it, inserted] = entries_.emplace(cache_map_key(kind, model_id, key), output);
    if (!inserted) return;
    if (path_.empty()) return;
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::app);
    if (!out) throw data_error("cannot append enrichment cache: " + path_.string());
    json record;
    record["kind"] = kind;
    record["key"] = key;
    record["model_id"] = model_id;
    record["output"] = output;
    out << record.dump() << "\n";
}

std::size_t EnrichmentCache::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

// ---------------------------------------------------------------------------
// TextGenClient
// ---------------------------------------------------------------------------

TextGenClient::TextGenClient(TextGenProviderConfig config) : config_(std::move(config)) {
    if (config_.request_timeout_s <= 0.0) throw usage_error("textgen timeout must be > 0");
    if (config_.max_retries < 0) throw usage_error("textgen retries must be >= 0");
}

void TextGenClient::rate_limit_wait() {
    if (config_.rate_limit <= 0.0) return;
    std::lock_guard lock(rate_mutex_);
    auto min_gap = std::chrono::duration<double>(1.0 / config_.rate_limit);
    auto now = std::chrono::steady_clock::now();
    auto earliest =
        last_request_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(min_gap);
    if (last_request_.time_since_epoch().count() != 0 && now < earliest) {
        std::this_thread::sleep_until(earliest);
        now = std::chrono::steady_clock::now();
    }
    last_request_ = now;
}

std::string TextGenClient::generate(const std::string& prompt) {
    if (config_.is_local()) {
        throw usage_error("TextGenClient::generate called on a local-fallback provider");
    }
    auto slash = config_.endpoint.find('/', config_.endpoint.find("//") + 2);
    std::string base =
        slash == std::string::npos ? config_.endpoint : config_.endpoint.substr(0, slash);
    std::string route = slash == std::string::npos ? "/" : config_.endpoint.substr(slash);

    json body;
    body["model"] = config_.model_id;
    body["prompt"] = prompt;
    std::string payload = body.dump();

    std::string api_key;
    std::string env_name = "CRAFT_API_KEY_" + config_.name;
    for (char& c : env_name) c = std::isalnum(static_cast<unsigned char>(c)) ? std::toupper(c) : '_';
    if (const char* key = std::getenv(env_name.c_str())) api_key = key;

    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        rate_limit_wait();
        httplib::Client client(base);
        client.set_connection_timeout(std::chrono::duration<double>(config_.request_timeout_s));
        client.set_read_timeout(std::chrono::duration<double>(config_.request_timeout_s));
        httplib::Headers headers;
        if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
        auto res = client.Post(route, headers, payload, "application/json");
        ++calls_;
        if (!res || res->status != 200) {
            spdlog::warn("textgen provider {} attempt {}/{} failed ({})", config_.model_id,
                         attempt + 1, config_.max_retries + 1,
                         res ? std::to_string(res->status) : "transport error");
            continue;
        }
        json reply = json::parse(res->body, nullptr, false);
        if (reply.is_discarded() || !reply.contains("text") || !reply["text"].is_string()) {
            throw provider_error("textgen provider " + config_.model_id +
                                 ": malformed response body");
        }
        return reply["text"].get<std::string>();
    }
    throw provider_error("textgen provider " + config_.model_id + ": request failed after " +
                         std::to_string(config_.max_retries + 1) + " attempts");
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> nonempty_lines(const std::string& text) {
    std::vector<std::string> out;
    for (const auto& raw : split(text, '\n')) {
        std::string line = trim(raw);
        if (!line.empty()) out.push_back(std::move(line));
    }
    return out;
}

// "1. foo" / "- foo" / "* foo" -> "foo"
std::string strip_enumeration(const std::string& line) {
    std::size_t i = 0;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) {
        return trim(line.substr(i + 1));
    }
    if (!line.empty() && (line[0] == '-' || line[0] == '*')) return trim(line.substr(1));
    return line;
}

std::string cache_key(const std::string& id, const PromptTemplate& tmpl) {
    return id + "#" + to_hex(tmpl.content_hash());
}

std::vector<std::string> split_clauses(const std::string& question) {
    std::string marked = question;
    const std::string kAnd = " and ";
    std::size_t pos = 0;
    while ((pos = marked.find(kAnd, pos)) != std::string::npos) {
        marked.replace(pos, kAnd.size(), "\x1f");
    }
    std::replace(marked.begin(), marked.end(), ',', '\x1f');
    std::vector<std::string> clauses;
    for (const auto& piece : split(marked, '\x1f')) {
        std::string c = trim(piece);
        if (!c.empty()) clauses.push_back(std::move(c));
    }
    return clauses;
}

const std::vector<std::pair<std::string, std::string>>& synonym_table() {
    static const std::vector<std::pair<std::string, std::string>> table = {
        {"who", "which person"},   {"what", "which"},
        {"when", "at what time"},  {"where", "in which place"},
        {"why", "for what reason"}, {"how many", "what number of"},
        {"largest", "biggest"},    {"smallest", "tiniest"},
    };
    return table;
}

bool replace_word_ci(std::string& text, const std::string& from, const std::string& to) {
    std::string lower = to_lower_ascii(text);
    std::size_t pos = 0;
    while ((pos = lower.find(from, pos)) != std::string::npos) {
        bool start_ok = pos == 0 || !std::isalnum(static_cast<unsigned char>(lower[pos - 1]));
        std::size_t end = pos + from.size();
        bool end_ok = end >= lower.size() || !std::isalnum(static_cast<unsigned char>(lower[end]));
        if (start_ok && end_ok) {
            text.replace(pos, from.size(), to);
            return true;
        }
        pos = end;
    }
    return false;
}

// Deterministic paraphrase: wh-word synonyms, then fronting of the trailing
// prepositional phrase; a fixed prefix guarantees output != input when
// neither rewrite fires.
std::string fallback_perturb(const std::string& question) {
    std::string out = question;
    for (const auto& [from, to] : synonym_table()) {
        replace_word_ci(out, from, to);
    }
    bool had_qmark = !out.empty() && out.back() == '?';
    std::string core = had_qmark ? trim(out.substr(0, out.size() - 1)) : out;
    static const std::vector<std::string> preps = {" in ", " on ", " at ", " during ", " from "};
    std::size_t best = std::string::npos;
    std::string best_prep;
    for (const auto& prep : preps) {
        std::size_t pos = core.rfind(prep);
        if (pos != std::string::npos && (best == std::string::npos || pos > best)) {
            best = pos;
            best_prep = prep;
        }
    }
    if (best != std::string::npos && best > 0) {
        std::string head = trim(core.substr(0, best));
        std::string tail = trim(core.substr(best + best_prep.size()));
        if (!head.empty() && !tail.empty()) {
            std::string prep_word = trim(best_prep);
            prep_word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(prep_word[0])));
            if (!head.empty()) head[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(head[0])));
            out = prep_word + " " + tail + ", " + head + (had_qmark ? "?" : "");
        }
    }
    if (out == question) out = "Could you tell me: " + question;
    return out;
}

}  // namespace

std::pair<std::string, std::string> generate_description(const TableRecord& table,
                                                         TextGenClient& provider,
                                                         const PromptTemplate& tmpl,
                                                         EnrichmentCache* cache) {
    if (tmpl.kind != TemplateKind::TableDescription) {
        throw usage_error("generate_description requires a table_description template");
    }
    const std::string key = cache_key(table.table_id, tmpl);
    const std::string& model = provider.config().model_id;
    if (cache) {
        if (auto hit = cache->get("description", key, model)) {
            return {(*hit)["title"].get<std::string>(), (*hit)["description"].get<std::string>()};
        }
    }

    std::string title;
    std::string description;
    if (provider.config().is_local()) {
        provider.count_local_call();
        title = table.title.empty() ? join(table.headers, " ") : table.title;
        description = "Table with columns: " + join(table.headers, ", ") + ".";
        if (!table.rows.empty()) {
            description += " Sample values: " + serialize_row(table, 0) + ".";
        }
    } else {
        std::string text;
        try {
            text = provider.generate(tmpl.render({{"table", full_table_text(table, false)}}));
        } catch (const CraftError& e) {
            throw provider_error("generate_description for table " + table.table_id + ": " +
                                 e.what());
        }
        std::vector<std::string> lines = nonempty_lines(text);
        if (lines.empty()) {
            throw provider_error("generate_description for table " + table.table_id +
                                 ": provider returned empty output");
        }
        if (lines.size() == 1) {
            title = table.title.empty() ? join(table.headers, " ") : table.title;
            description = lines[0];
        } else {
            title = lines[0];
            description = join({lines.begin() + 1, lines.end()}, " ");
        }
    }
    if (title.empty() || description.empty()) {
        throw provider_error("generate_description for table " + table.table_id +
                             ": empty title or description");
    }
    if (cache) {
        cache->put("description", key, model, json{{"title", title}, {"description", description}});
    }
    return {title, description};
}

std::vector<std::string> decompose_query(QueryRecord& query, TextGenClient& provider,
                                         const PromptTemplate& tmpl, EnrichmentCache* cache) {
    if (tmpl.kind != TemplateKind::QueryExpansion) {
        throw usage_error("decompose_query requires a query_expansion template");
    }
    if (query.question.empty()) throw data_error("decompose_query: empty question");
    const std::string key = cache_key(query.qid, tmpl);
    const std::string& model = provider.config().model_id;
    if (cache) {
        if (auto hit = cache->get("subq", key, model)) {
            query.sub_questions = hit->get<std::vector<std::string>>();
            return query.sub_questions;
        }
    }

    std::vector<std::string> subs;
    if (provider.config().is_local()) {
        provider.count_local_call();
        std::vector<std::string> clauses = split_clauses(query.question);
        if (clauses.size() > 1) subs = std::move(clauses);
    } else {
        try {
            std::string text = provider.generate(tmpl.render({{"question", query.question}}));
            for (const auto& line : nonempty_lines(text)) {
                std::string sub = strip_enumeration(line);
                if (!sub.empty()) subs.push_back(std::move(sub));
            }
        } catch (const CraftError& e) {
            spdlog::warn("decompose_query for qid {}: {} (proceeding without expansion)",
                         query.qid, e.what());
            subs.clear();
        }
    }
    if (subs.size() > 4) subs.resize(4);

    if (cache) cache->put("subq", key, model, json(subs));
    query.sub_questions = subs;
    return subs;
}

QueryRecord perturb_query(const QueryRecord& query, TextGenClient& provider,
                          const PromptTemplate& tmpl, EnrichmentCache* cache) {
    if (tmpl.kind != TemplateKind::Perturbation) {
        throw usage_error("perturb_query requires a perturbation template");
    }
    if (query.perturbed_of) {
        throw data_error("perturb_query: " + query.qid + " is already a perturbed variant");
    }
    const std::string key = cache_key(query.qid, tmpl);
    const std::string& model = provider.config().model_id;

    std::string perturbed;
    if (cache) {
        if (auto hit = cache->get("perturb", key, model)) perturbed = hit->get<std::string>();
    }
    if (perturbed.empty()) {
        if (provider.config().is_local()) {
            provider.count_local_call();
            perturbed = fallback_perturb(query.question);
        } else {
            for (int attempt = 0; attempt < 2; ++attempt) {
                std::string text = provider.generate(tmpl.render({{"question", query.question}}));
                std::vector<std::string> lines = nonempty_lines(text);
                if (!lines.empty() && lines[0] != query.question) {
                    perturbed = lines[0];
                    break;
                }
            }
            if (perturbed.empty()) {
                throw provider_error("perturb_query for qid " + query.qid +
                                     ": provider kept returning the original question");
            }
        }
        if (cache) cache->put("perturb", key, model, json(perturbed));
    }

    QueryRecord out;
    out.qid = query.qid + "-pert";
    out.question = perturbed;
    out.gold_table_ids = query.gold_table_ids;
    out.answers = query.answers;
    out.perturbed_of = query.qid;
    return out;
}

}  // namespace craft
