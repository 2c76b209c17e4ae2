#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "nres/model/reservoir.hpp"
#include "nres/oracle/fluid.hpp"
#include "nres/oracle/simulator.hpp"
#include "nres/rates/rates.hpp"

namespace nres::datagen {

/// Zero-mean field on an nz*ny*nx grid ([k][j][i] order): white Gaussian
/// noise smoothed by an isotropic Gaussian kernel of std `corr_len` cells,
/// then de-meaned and rescaled to empirical std `sigma`.
std::vector<double> correlated_noise(std::array<std::size_t, 3> shape_zyx, double sigma, double corr_len,
                                     std::uint64_t seed);

struct NoiseConfig {
  double porosity_sigma = 0.01;     // absolute porosity
  double log_perm_sigma = 0.25;     // natural-log permeability, shared by the three axes
  double log_perm_axis_sigma = 0.25;// natural-log permeability, independent per axis
  double pressure_sigma_bar = 2.0;  // initial pressure
  double sat_water_sigma = 0.01;    // initial water saturation
  double corr_len = 3.0;            // cells

  nlohmann::json to_json() const;
  static NoiseConfig from_json(const nlohmann::json& j);
};

/// Adds correlated noise to porosity, log-permeability (one field shared by
/// the three axes plus one per axis), initial pressure and water saturation. The active mask,
/// wells and schedule are unchanged.
model::ReservoirModel randomize_static(const model::ReservoirModel& model, const NoiseConfig& noise,
                                       std::uint64_t seed);

struct Range {
  double lo = 0, hi = 0;
};

/// Ranges for the BHP generator
/// u(t) = e0 * (1 - sin(e1 t + e2)) / 2 * exp(-e3 t) + e4 + e5(t).
/// e0, e4, e5 in Pa; e1, e3 in 1/day; e2 in radians.
struct ScheduleGenParams {
  std::array<Range, 5> eps;
  Range noise;               // e5, redrawn each step
  double horizon_days = 720;
  double step_days = 60;

  /// Ranges keeping u(t) within [0.3, 0.9] * p0.
  static ScheduleGenParams defaults(double p0_pa, double horizon_days = 720, double step_days = 60);
  std::vector<double> times() const;
  void validate() const;

  nlohmann::json to_json() const;
  static ScheduleGenParams from_json(const nlohmann::json& j, const ScheduleGenParams& base);
};

/// BHP series (Pa) for one well at times() of the params.
std::vector<double> bhp_schedule(const ScheduleGenParams& params, std::uint64_t seed);

struct GenConfig {
  NoiseConfig noise;
  ScheduleGenParams schedule = ScheduleGenParams::defaults(2.0e7);
  Range injection_rate{300.0, 500.0};  // m3/day, constant per scenario and injector
  std::size_t scenarios = 20;
  std::uint64_t seed = 1234;
  unsigned jobs = 1;
  oracle::SimOptions sim;

  nlohmann::json to_json() const;  // everything except `jobs`
  static GenConfig from_json(const nlohmann::json& j);
};

/// Scenario i: randomized statics plus generated controls (no simulation).
model::ReservoirModel make_scenario_model(const model::ReservoirModel& base, const GenConfig& config,
                                          std::uint64_t scenario_seed);

struct ScenarioData {
  std::string name;
  std::uint64_t seed = 0;
  model::ReservoirModel model;
  std::vector<double> times;  // days
  std::vector<model::ReservoirState> states;
  rates::RateSeries rates;
};

struct Dataset {
  std::filesystem::path root;
  oracle::FluidProperties fluid;
  nlohmann::json manifest;
  std::vector<ScenarioData> scenarios;
};

struct BuildReport {
  std::size_t generated = 0;
  std::vector<std::string> skipped;
};

/// Generates `config.scenarios` scenarios, simulates each with the oracle and
/// writes the dataset directory. Failing scenarios are skipped and logged;
/// more than 20% skipped is an error.
BuildReport build_dataset(const model::ReservoirModel& base, const oracle::FluidProperties& fluid,
                          const GenConfig& config, const std::filesystem::path& out_dir);

Dataset load_dataset(const std::filesystem::path& dir);

/// Raw state file: pressure (Pa), sat_water, sat_oil, each one value per cell.
void write_state(const std::filesystem::path& path, const model::ReservoirState& state);
model::ReservoirState read_state(const std::filesystem::path& path, std::size_t cells);
std::string state_file_name(double t_days);

}  // namespace nres::datagen
