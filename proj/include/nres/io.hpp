#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace nres::io {

namespace fs = std::filesystem;
using Json = nlohmann::json;

/// Little-endian raw float64 array. `name` labels errors.
void write_f64(const fs::path& path, const std::vector<double>& values);
std::vector<double> read_f64(const fs::path& path, const std::string& name);
/// As read_f64, but fails with a message naming `name` unless exactly `expected` values are present.
std::vector<double> read_f64(const fs::path& path, const std::string& name, std::size_t expected);

void write_u8(const fs::path& path, const std::vector<std::uint8_t>& values);
std::vector<std::uint8_t> read_u8(const fs::path& path, const std::string& name, std::size_t expected);

Json read_json(const fs::path& path);
void write_json(const fs::path& path, const Json& value);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

/// Splits one CSV line on commas; no quoting support.
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace nres::io
