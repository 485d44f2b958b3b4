#include "craft/manifest.hpp"

#include <chrono>
#include <ctime>

#include "craft/error.hpp"
#include "craft/util.hpp"

using nlohmann::json;

namespace craft {

void RunManifest::add_artifact(const std::string& label, const std::filesystem::path& path) {
    artifact_hashes[label] = hash_file_hex(path);
}

void RunManifest::add_output(const std::filesystem::path& path) {
    outputs.push_back(path.string());
    output_hashes[path.string()] = hash_file_hex(path);
}

void write_manifest(const std::filesystem::path& path, RunManifest manifest) {
    if (manifest.created_at.empty()) {
        auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        char buf[32];
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
        manifest.created_at = buf;
    }
    json j;
    j["command"] = manifest.command;
    j["config"] = manifest.config_snapshot;
    j["artifact_hashes"] = manifest.artifact_hashes;
    j["provider_models"] = manifest.provider_models;
    j["outputs"] = manifest.outputs;
    j["output_hashes"] = manifest.output_hashes;
    j["created_at"] = manifest.created_at;
    j["seed"] = manifest.seed;
    write_file(path, j.dump(2) + "\n");
}

RunManifest load_manifest(const std::filesystem::path& path) {
    json j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw data_error("manifest " + path.string() + ": malformed JSON");
    }
    RunManifest m;
    m.command = j.value("command", "");
    m.config_snapshot = j.value("config", json::object());
    if (j.contains("artifact_hashes")) {
        m.artifact_hashes = j["artifact_hashes"].get<std::map<std::string, std::string>>();
    }
    if (j.contains("provider_models")) {
        m.provider_models = j["provider_models"].get<std::map<std::string, std::string>>();
    }
    if (j.contains("outputs")) m.outputs = j["outputs"].get<std::vector<std::string>>();
    if (j.contains("output_hashes")) {
        m.output_hashes = j["output_hashes"].get<std::map<std::string, std::string>>();
    }
    m.created_at = j.value("created_at", "");
    m.seed = j.value("seed", std::uint64_t{0});
    return m;
}

void verify_manifest(const RunManifest& manifest) {
    for (const auto& [path, recorded] : manifest.output_hashes) {
        std::string actual = hash_file_hex(path);
        if (actual != recorded) {
            throw data_error("manifest verification failed for " + path + ": recorded " +
                             recorded + ", actual " + actual);
        }
    }
}

}  // namespace craft
