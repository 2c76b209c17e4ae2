#pragma once

#include <filesystem>

#include "json.hpp"

namespace nres::report {

/// Reads an hm_result directory and writes cumulative_rates.svg,
/// correlation.svg, loss.svg and metrics.json into `out_dir`. Returns the
/// metrics document.
nlohmann::json write_report(const std::filesystem::path& hm_dir, const std::filesystem::path& out_dir);

}  // namespace nres::report
