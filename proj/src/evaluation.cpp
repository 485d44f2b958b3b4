#include "craft/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "craft/error.hpp"
#include "craft/util.hpp"

using nlohmann::json;

namespace craft {

namespace {

void check_ks(const std::vector<std::size_t>& ks) {
    if (ks.empty()) throw usage_error("recall_at_k: ks must be non-empty");
    if (!std::is_sorted(ks.begin(), ks.end())) {
        throw usage_error("recall_at_k: ks must be sorted ascending");
    }
}

}  // namespace

RecallReport recall_at_k(const std::vector<Ranking>& run, const std::vector<QueryRecord>& queries,
                         std::vector<std::size_t> ks) {
    check_ks(ks);
    std::unordered_map<std::string, const QueryRecord*> by_qid;
    for (const auto& q : queries) by_qid[q.qid] = &q;

    std::unordered_map<std::string, const Ranking*> run_by_qid;
    for (const auto& r : run) {
        if (!by_qid.count(r.qid)) {
            throw data_error("recall_at_k: run contains unknown qid " + r.qid);
        }
        run_by_qid[r.qid] = &r;
    }

    RecallReport report;
    report.ks = ks;
    report.query_count = queries.size();
    report.recall_pct.assign(ks.size(), 0.0);

    std::vector<std::size_t> hits(ks.size(), 0);
    for (const auto& q : queries) {
        auto it = run_by_qid.find(q.qid);
        if (it == run_by_qid.end()) continue;  // absent from run: miss at every k
        const Ranking& r = *it->second;
        for (std::size_t i = 0; i < ks.size(); ++i) {
            bool hit = false;
            for (const auto& gold : q.gold_table_ids) {
                if (r.contains(gold, ks[i])) {
                    hit = true;
                    break;
                }
            }
            if (hit) ++hits[i];
        }
    }
    for (std::size_t i = 0; i < ks.size(); ++i) {
        report.recall_pct[i] =
            queries.empty() ? 0.0
                            : 100.0 * static_cast<double>(hits[i]) / static_cast<double>(queries.size());
    }
    return report;
}

RecallReport recall_at_k(const std::filesystem::path& run_file,
                         const std::vector<QueryRecord>& queries, std::vector<std::size_t> ks) {
    return recall_at_k(read_run_file(run_file), queries, std::move(ks));
}

std::vector<std::string> normalize_answer(std::string_view text) {
    std::string lowered = to_lower_ascii(text);
    std::string stripped;
    stripped.reserve(lowered.size());
    for (char c : lowered) {
        if (std::ispunct(static_cast<unsigned char>(c))) continue;
        stripped.push_back(c);
    }
    std::vector<std::string> tokens;
    std::istringstream ss(stripped);
    std::string token;
    while (ss >> token) {
        if (token == "a" || token == "an" || token == "the") continue;
        tokens.push_back(token);
    }
    return tokens;
}

namespace {

double f1_single(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
    if (pred.empty() && gold.empty()) return 1.0;
    if (pred.empty() || gold.empty()) return 0.0;
    std::map<std::string, std::size_t> gold_counts;
    for (const auto& t : gold) ++gold_counts[t];
    std::size_t overlap = 0;
    for (const auto& t : pred) {
        auto it = gold_counts.find(t);
        if (it != gold_counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
    double recall = static_cast<double>(overlap) / static_cast<double>(gold.size());
    return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

double answer_f1(const std::string& prediction, const std::vector<std::string>& golds) {
    if (golds.empty()) throw usage_error("answer_f1: golds must be non-empty");
    std::vector<std::string> pred = normalize_answer(prediction);
    double best = 0.0;
    for (const auto& gold : golds) {
        best = std::max(best, f1_single(pred, normalize_answer(gold)));
    }
    return best;
}

std::size_t whitespace_token_count(std::string_view text) {
    std::size_t count = 0;
    bool in_token = false;
    for (char c : text) {
        bool space = std::isspace(static_cast<unsigned char>(c));
        if (!space && !in_token) ++count;
        in_token = !space;
    }
    return count;
}

TokenReport token_stats(const std::vector<ContextSample>& samples, const TokenCounter& tokenizer,
                        std::string tokenizer_name) {
    TokenReport report;
    report.tokenizer_name = std::move(tokenizer_name);
    if (samples.empty()) return report;
    double mini_sum = 0.0;
    double full_sum = 0.0;
    for (const auto& s : samples) {
        TokenStatsEntry entry;
        entry.qid = s.qid;
        entry.mini_tokens = tokenizer(s.mini_text);
        entry.full_tokens = tokenizer(s.full_text);
        if (entry.mini_tokens > entry.full_tokens) {
            throw data_error("token_stats: mini context exceeds full context for qid " + s.qid);
        }
        mini_sum += static_cast<double>(entry.mini_tokens);
        full_sum += static_cast<double>(entry.full_tokens);
        report.per_query.push_back(std::move(entry));
    }
    report.mean_mini = mini_sum / static_cast<double>(samples.size());
    report.mean_full = full_sum / static_cast<double>(samples.size());
    report.savings_pct = full_sum == 0.0 ? 0.0 : 100.0 * (1.0 - mini_sum / full_sum);
    return report;
}

PerturbationReport perturbation_delta(const RecallReport& original, const RecallReport& perturbed) {
    if (original.ks != perturbed.ks) {
        throw data_error("perturbation_delta: reports evaluate different ks");
    }
    if (original.query_count != perturbed.query_count) {
        throw data_error("perturbation_delta: reports cover different query universes");
    }
    PerturbationReport report;
    report.ks = original.ks;
    report.original_pct = original.recall_pct;
    report.perturbed_pct = perturbed.recall_pct;
    double sum = 0.0;
    for (std::size_t i = 0; i < report.ks.size(); ++i) {
        sum += perturbed.recall_pct[i] - original.recall_pct[i];
    }
    report.delta_avg = sum / static_cast<double>(report.ks.size());
    return report;
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

// Wide form: one column per evaluated k, a single value row.
std::string to_csv(const RecallReport& report) {
    std::string head;
    std::string row;
    for (std::size_t i = 0; i < report.ks.size(); ++i) {
        if (i > 0) {
            head += ",";
            row += ",";
        }
        head += "R@" + std::to_string(report.ks[i]);
        row += format_score(report.recall_pct[i]);
    }
    return head + "\n" + row + "\n";
}

std::string to_markdown(const RecallReport& report, std::string_view label) {
    std::string head = "| run |";
    std::string rule = "| --- |";
    std::string row = "| " + std::string(label) + " |";
    for (std::size_t i = 0; i < report.ks.size(); ++i) {
        head += " R@" + std::to_string(report.ks[i]) + " |";
        rule += " --- |";
        row += " " + format_score(report.recall_pct[i]) + " |";
    }
    return head + "\n" + rule + "\n" + row + "\n";
}

json to_json(const RecallReport& report) {
    json j;
    j["query_count"] = report.query_count;
    j["ks"] = report.ks;
    j["recall_pct"] = report.recall_pct;
    return j;
}

RecallReport recall_from_csv(const std::string& csv) {
    RecallReport report;
    std::istringstream ss(csv);
    std::string head;
    std::string row;
    if (!std::getline(ss, head) || !std::getline(ss, row)) {
        throw data_error("recall csv: expected a header and a value row");
    }
    std::vector<std::string> ks = split(trim(head), ',');
    std::vector<std::string> values = split(trim(row), ',');
    if (ks.empty() || ks.size() != values.size()) {
        throw data_error("recall csv: header/value column mismatch");
    }
    for (std::size_t i = 0; i < ks.size(); ++i) {
        if (ks[i].rfind("R@", 0) != 0) throw data_error("recall csv: unexpected header " + ks[i]);
        report.ks.push_back(std::stoull(ks[i].substr(2)));
        report.recall_pct.push_back(std::stod(values[i]));
    }
    return report;
}

std::string to_csv(const TokenReport& report) {
    std::string out = "qid,mini_tokens,full_tokens\n";
    for (const auto& e : report.per_query) {
        out += e.qid + "," + std::to_string(e.mini_tokens) + "," + std::to_string(e.full_tokens) +
               "\n";
    }
    return out;
}

std::string to_markdown(const TokenReport& report) {
    std::string out = "| tokenizer | mean mini | mean full | savings % |\n";
    out += "| --- | --- | --- | --- |\n";
    out += "| " + report.tokenizer_name + " | " + format_score(report.mean_mini) + " | " +
           format_score(report.mean_full) + " | " + format_score(report.savings_pct) + " |\n";
    return out;
}

json to_json(const TokenReport& report) {
    json j;
    j["tokenizer"] = report.tokenizer_name;
    j["mean_mini"] = report.mean_mini;
    j["mean_full"] = report.mean_full;
    j["savings_pct"] = report.savings_pct;
    json rows = json::array();
    for (const auto& e : report.per_query) {
        rows.push_back({{"qid", e.qid}, {"mini", e.mini_tokens}, {"full", e.full_tokens}});
    }
    j["per_query"] = rows;
    return j;
}

std::string to_csv(const PerturbationReport& report) {
    std::string out = "k,original,perturbed,delta\n";
    for (std::size_t i = 0; i < report.ks.size(); ++i) {
        out += std::to_string(report.ks[i]) + "," + format_score(report.original_pct[i]) + "," +
               format_score(report.perturbed_pct[i]) + "," +
               format_score(report.perturbed_pct[i] - report.original_pct[i]) + "\n";
    }
    out += "avg,,," + format_score(report.delta_avg) + "\n";
    return out;
}

std::string to_markdown(const PerturbationReport& report) {
    std::string out = "| k | original | perturbed | delta |\n| --- | --- | --- | --- |\n";
    for (std::size_t i = 0; i < report.ks.size(); ++i) {
        out += "| " + std::to_string(report.ks[i]) + " | " + format_score(report.original_pct[i]) +
               " | " + format_score(report.perturbed_pct[i]) + " | " +
               format_score(report.perturbed_pct[i] - report.original_pct[i]) + " |\n";
    }
    out += "| avg | | | " + format_score(report.delta_avg) + " |\n";
    return out;
}

json to_json(const PerturbationReport& report) {
    json j;
    j["ks"] = report.ks;
    j["original_pct"] = report.original_pct;
    j["perturbed_pct"] = report.perturbed_pct;
    j["delta_avg"] = report.delta_avg;
    return j;
}

std::string plotdata_csv(const std::vector<PlotPoint>& points) {
    std::string out = "n,mean_context_tokens,mean_f1\n";
    for (const auto& p : points) {
        out += std::to_string(p.n) + "," + format_score(p.mean_context_tokens) + "," +
               format_score(p.mean_f1) + "\n";
    }
    return out;
}

bool matches_schema(const json& value, const json& schema, std::string* error) {
    auto fail = [&](const std::string& msg) {
        if (error) *error = msg;
        return false;
    };
    if (schema.contains("type")) {
        const std::string type = schema["type"];
        bool ok = (type == "object" && value.is_object()) || (type == "array" && value.is_array()) ||
                  (type == "string" && value.is_string()) ||
                  (type == "number" && value.is_number()) ||
                  (type == "integer" && value.is_number_integer()) ||
                  (type == "boolean" && value.is_boolean());
        if (!ok) return fail("expected type " + type + ", got " + value.type_name());
    }
    if (schema.contains("required")) {
        for (const auto& key : schema["required"]) {
            if (!value.contains(key.get<std::string>())) {
                return fail("missing required key " + key.get<std::string>());
            }
        }
    }
    if (schema.contains("properties") && value.is_object()) {
        for (const auto& [key, sub] : schema["properties"].items()) {
            if (value.contains(key) && !matches_schema(value[key], sub, error)) return false;
        }
    }
    if (schema.contains("items") && value.is_array()) {
        for (const auto& item : value) {
            if (!matches_schema(item, schema["items"], error)) return false;
        }
    }
    return true;
}

}  // namespace craft
