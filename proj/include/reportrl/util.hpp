// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace reportrl {

// FNV-1a 64-bit over raw bytes. Used for config/vocab/content hashes
// (equality checks, not security).
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= static_cast<std::uint64_t>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hash_hex(std::uint64_t h);

// Reads a whole file; throws std::runtime_error naming the path on failure.
std::string read_text_file(const std::string& path);

// Writes atomically enough for our purposes (truncate + write + flush).
void write_text_file(const std::string& path, std::string_view content);

bool file_exists(const std::string& path);

// Hash of a file's bytes, for checkpoint/artifact identity.
std::uint64_t file_content_hash(const std::string& path);

} // namespace reportrl
