#pragma once

#include <cstddef>
#include <vector>

#include "nres/model/reservoir.hpp"
#include "nres/oracle/fluid.hpp"
#include "nres/rates/rates.hpp"

namespace nres::oracle {

/// Well controls for one step: producer BHP in Pa and injector rates in m^3/s,
/// both in the order of the simulator's producer/injector lists.
struct Controls {
  std::vector<double> bhp;
  std::vector<double> injection;
};

/// Phase volumes moved through the wells during a step or run (m^3, reservoir conditions).
struct WellVolumes {
  std::vector<double> produced_water;  // per producer
  std::vector<double> produced_oil;
  std::vector<double> injected_water;  // per injector

  double total_produced_water() const;
  double total_produced_oil() const;
  double total_injected_water() const;
  void add(const WellVolumes& other);
};

struct StepResult {
  model::ReservoirState state;
  WellVolumes volumes;
  /// Largest dt the explicit saturation update tolerates at the fluxes of this step (s).
  double stable_dt = 0;
  double pressure_residual = 0;  // relative residual of the final pressure solve
  int solver_iterations = 0;
  int crossflow_shutins = 0;     // producer connections closed to prevent injection
};

struct SimOptions {
  /// Fraction of the stability bound used for each sub-step.
  double cfl_safety = 0.5;
  /// Divides every sub-step; 2 roughly doubles the sub-step count.
  double refinement = 1.0;
  /// Upper bound on a sub-step (days); keeps the pressure transient resolved.
  double max_step_days = 5.0;
  double solver_tolerance = 1e-12;
  /// Factors on the connection indices, one per connection in well order;
  /// empty leaves them unchanged.
  std::vector<double> connection_multipliers;
};

struct RunResult {
  std::vector<double> times;  // days, one per report
  std::vector<model::ReservoirState> states;
  rates::RateSeries rates;
  WellVolumes cumulative;
  std::size_t substeps = 0;
  std::size_t crossflow_shutins = 0;
  double max_pressure_residual = 0;
};

/// Desk-scale two-phase IMPES simulator on a uniform Cartesian grid:
/// implicit pressure with two-point harmonic transmissibilities and a single
/// total compressibility, then an explicit upwind water update. No gravity or
/// capillarity; no-flow outer boundaries.
class Simulator {
 public:
  Simulator(const model::ReservoirModel& model, const FluidProperties& fluid, SimOptions options = {});

  const model::ReservoirModel& model() const { return model_; }
  const FluidProperties& fluid() const { return fluid_; }
  const rates::ConnectionTable& connections() const { return table_; }
  const std::vector<std::string>& producers() const { return producers_; }
  const std::vector<std::string>& injectors() const { return injectors_; }

  /// Controls of schedule interval k, converted to SI.
  Controls controls(std::size_t k) const;

  /// One IMPES step of length dt (s). Throws NumericalError if the pressure
  /// solve fails or saturations leave [0,1] (dt too large).
  StepResult step(const model::ReservoirState& state, const Controls& controls, double dt) const;

  /// Simulates from the model's initial state at schedule.times[0] and
  /// returns states and rates at each report time (days).
  RunResult run(const std::vector<double>& report_times) const;

  /// Pore volume of each cell at pressure p (m^3); zero for inactive cells.
  double pore_volume(std::size_t cell, double pressure) const;
  /// In-place phase volumes (water, oil) in m^3.
  std::array<double, 2> in_place(const model::ReservoirState& state) const;
  /// Largest derivative of the water fractional flow over [0,1].
  double max_fractional_flow_slope() const { return max_dfw_; }

 private:
  struct Face {
    std::size_t a, b;
    double trans;  // m^3
  };
  struct WellConn {
    std::size_t cell;
    std::size_t well;  // position among producers or injectors
    double index;      // m^3
  };

  model::ReservoirModel model_;
  FluidProperties fluid_;
  SimOptions options_;
  rates::ConnectionTable table_;
  std::vector<std::string> producers_, injectors_;
  std::vector<WellConn> prod_conns_, inj_conns_;
  std::vector<std::size_t> active_;   // active cell ids
  std::vector<double> pore_volume0_;  // at reference pressure
  std::vector<Face> faces_;
  double max_dfw_ = 0;
};

/// Convenience wrapper: Simulator(model, fluid, options).run(report_times).
RunResult run(const model::ReservoirModel& model, const FluidProperties& fluid, const std::vector<double>& report_times,
              SimOptions options = {});

}  // namespace nres::oracle
