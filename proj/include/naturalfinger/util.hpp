#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"

namespace nf {

std::string sha256_hex(std::string_view bytes);
/// Stable 64-bit seed derived from a base seed and a tag.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);
/// Hash of the canonical (sorted-key, compact) serialization; stable under key reordering.
std::string json_hash(const nlohmann::json& j);
/// Writes to a sibling temporary file and renames it over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);
/// Two-space indented dump with a trailing newline.
std::string pretty(const nlohmann::json& j);

}  // namespace nf
