#pragma once

#include <cstdint>

#include "nres/model/reservoir.hpp"
#include "nres/oracle/fluid.hpp"

namespace nres::datagen {

/// Synthetic benchmark reservoir: 16x16x8 cells, one injector and three
/// producers (one deviated), correlated heterogeneous rock.
struct TwinSpec {
  std::size_t nx = 16, ny = 16, nz = 8;
  double dx = 25.0, dy = 25.0, dz = 4.0;  // m
  double initial_pressure_bar = 200.0;
  double initial_sat_water = 0.25;
  double mean_perm_md = 50.0;
  double kv_kh = 0.1;
  double horizon_days = 720.0;
  double report_step_days = 60.0;
  double injection_rate = 400.0;  // m3/day
  std::uint64_t seed = 7;
};

model::ReservoirModel build_twin_model(const TwinSpec& spec = {});
oracle::FluidProperties twin_fluid();

/// Truth for the history-matching twin: +50% permeability in a 4x4x4 box
/// between the injector and producer P1.
model::ReservoirModel apply_twin_anomaly(const model::ReservoirModel& base);

}  // namespace nres::datagen
