#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "nres/error.hpp"

namespace nres::cli {

namespace fs = std::filesystem;
using nlohmann::json;

/// Bad command-line usage or unknown configuration keys (exit code 1).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A trained-surrogate directory was expected but is absent (exit code 2).
class ModelMissingError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Nested object to {"a.b.c": leaf}; arrays are leaves.
json flatten(const json& nested);
/// Inverse of flatten.
json unflatten(const json& flat);

/// Defaults of every configuration section ("gen", "train", "hm", "twin"),
/// flattened with the section name as first key component.
json default_config();

/// Defaults overlaid with the flat keys of `path` (empty: none). Keys outside
/// `sections` are ignored; unknown keys inside them raise UsageError.
json resolve_config(const fs::path& path, const std::vector<std::string>& sections);

/// Nested JSON of one section of a resolved flat configuration.
json section(const json& flat, const std::string& name);

struct GenDataArgs {
  fs::path out;
  fs::path base;  // model directory; empty: built-in twin reservoir
  unsigned jobs = 1;
};
json gen_data(const GenDataArgs& args, const json& config);

struct TrainArgs {
  fs::path data;
  fs::path out;
};
json train(const TrainArgs& args, const json& config);

struct SimulateArgs {
  fs::path model;      // surrogate directory (unused with oracle)
  fs::path reservoir;  // model directory; empty: built-in twin reservoir
  fs::path out;
  bool oracle = false;
};
json simulate(const SimulateArgs& args);

struct HistoryMatchArgs {
  fs::path model;
  fs::path out;
  fs::path reservoir;  // base model directory; empty: built-in twin reservoir
  fs::path history;    // rates CSV; ignored with twin
  bool twin = false;   // history from the twin truth (anomaly + scaled connection)
};
json history_match(const HistoryMatchArgs& args, const json& config);

json report(const fs::path& hm_dir, const fs::path& out);

}  // namespace nres::cli
