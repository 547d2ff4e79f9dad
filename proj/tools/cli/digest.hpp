#pragma once

#include <string>
#include <string_view>

namespace rbsde::cli {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// SHA-256 of a file's bytes; empty string when the file cannot be read.
std::string sha256_file(const std::string& path);

}  // namespace rbsde::cli
