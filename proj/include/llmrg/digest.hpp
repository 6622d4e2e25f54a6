#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace llmrg {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

/// SHA-256 of a file's contents. Throws std::runtime_error when unreadable.
std::string sha256_file(const std::string& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
std::string read_file_text(const std::string& path);

/// Writes through a temporary sibling and renames, so readers never see a partial file.
void write_file_atomic(const std::string& path, std::string_view contents);

}  // namespace llmrg
