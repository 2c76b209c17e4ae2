#include "nres/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nres/error.hpp"

namespace nres::io {

static_assert(std::endian::native == std::endian::little, "raw array I/O assumes a little-endian host");

namespace {

std::vector<char> read_bytes(const fs::path& path, const std::string& name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(name + ": missing file " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const fs::path& path, const void* data, std::size_t bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw ValidationError("write failed for " + path.string());
}

}  // namespace

void write_f64(const fs::path& path, const std::vector<double>& values) {
  write_bytes(path, values.data(), values.size() * sizeof(double));
}

std::vector<double> read_f64(const fs::path& path, const std::string& name) {
  auto bytes = read_bytes(path, name);
  if (bytes.size() % sizeof(double) != 0)
    throw ValidationError(name + ": file size " + std::to_string(bytes.size()) + " is not a multiple of 8");
  std::vector<double> values(bytes.size() / sizeof(double));
  std::memcpy(values.data(), bytes.data(), bytes.size());
  return values;
}

std::vector<double> read_f64(const fs::path& path, const std::string& name, std::size_t expected) {
  auto values = read_f64(path, name);
  if (values.size() != expected)
    throw ValidationError(name + ": expected " + std::to_string(expected) + " values, file has " +
                          std::to_string(values.size()));
  return values;
}

void write_u8(const fs::path& path, const std::vector<std::uint8_t>& values) {
  write_bytes(path, values.data(), values.size());
}

std::vector<std::uint8_t> read_u8(const fs::path& path, const std::string& name, std::size_t expected) {
  auto bytes = read_bytes(path, name);
  if (bytes.size() != expected)
    throw ValidationError(name + ": expected " + std::to_string(expected) + " values, file has " +
                          std::to_string(bytes.size()));
  return std::vector<std::uint8_t>(bytes.begin(), bytes.end());
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("missing file " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const Json& value) { write_text(path, value.dump(2) + "\n"); }

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("missing file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) { write_bytes(path, text.data(), text.size()); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    if (!field.empty() && field.back() == '\r') field.pop_back();
    out.push_back(field);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace nres::io
