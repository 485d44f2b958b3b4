#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace craft {

// Reproducibility ledger written by every CLI run: the exact config, content
// hashes of the artifacts consumed and the files produced, provider model
// ids, seed and timestamps.
struct RunManifest {
    std::string command;
    nlohmann::json config_snapshot;
    std::map<std::string, std::string> artifact_hashes;  // label -> fnv1a64 hex
    std::map<std::string, std::string> provider_models;  // stage -> model id
    std::map<std::string, std::string> output_hashes;    // path -> fnv1a64 hex
    std::vector<std::string> outputs;                    // relative or absolute paths
    std::string created_at;
    std::uint64_t seed = 0;

    void add_artifact(const std::string& label, const std::filesystem::path& path);
    void add_output(const std::filesystem::path& path);
};

void write_manifest(const std::filesystem::path& path, RunManifest manifest);
RunManifest load_manifest(const std::filesystem::path& path);

// Recomputes every artifact and output hash; throws on mismatch or missing file.
void verify_manifest(const RunManifest& manifest);

}  // namespace craft
