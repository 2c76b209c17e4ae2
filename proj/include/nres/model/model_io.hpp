#pragma once

#include <filesystem>

#include "nres/io.hpp"
#include "nres/model/reservoir.hpp"

namespace nres::model {

/// Reads a model directory: manifest.json plus one raw array per property.
/// Throws ValidationError naming the offending array or invariant.
ReservoirModel load_model(const std::filesystem::path& dir);

/// Validates and writes `model` so that load_model reproduces it bit-exactly.
void save_model(const ReservoirModel& model, const std::filesystem::path& dir);

io::Json schedule_to_json(const ControlSchedule& schedule);
ControlSchedule schedule_from_json(const io::Json& j);

std::string to_string(WellKind kind);
WellKind well_kind_from_string(const std::string& s);

}  // namespace nres::model
