#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace craft {

// FNV-1a 64-bit. Used for content hashing of cache keys, sparse feature
// hashing and artifact fingerprints. Pure integer arithmetic, so results
// are identical on every platform.
inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

constexpr std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = kFnvOffset) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

// Unicode NFC normalization (ICU-backed). ASCII input is returned as-is.
std::string normalize_nfc(std::string_view text);

// ASCII lowercase; bytes >= 0x80 pass through untouched.
std::string to_lower_ascii(std::string_view text);

std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::vector<std::string> split(std::string_view text, char sep);
std::string trim(std::string_view text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

// FNV-1a over a file's bytes, rendered as 16 hex digits. Artifact fingerprint
// for run manifests.
std::string hash_file_hex(const std::filesystem::path& path);
std::string to_hex(std::uint64_t value);

// Fixed-format floating point rendering ("%.9g") so that run files and
// reports are byte-identical across runs.
std::string format_score(double value);

}  // namespace craft
