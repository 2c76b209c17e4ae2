#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "nres/autodiff/tensor.hpp"
#include "nres/model/reservoir.hpp"
#include "nres/oracle/fluid.hpp"

namespace nres::rates {

/// sqrt(k1 * k2) * h.
double kh_effective(double k1, double k2, double h);

/// Peaceman equivalent radius for an anisotropic cell; throws on k1 or k2 == 0.
double peaceman_radius(double d1, double d2, double k1, double k2);

/// Cell sizes and permeabilities perpendicular to one axis, with the length
/// perforated along it. SI units.
struct AxisGeometry {
  double d1 = 0, d2 = 0;
  double k1 = 0, k2 = 0;
  double h = 0;
};

struct ConnectionGeometry {
  std::array<AxisGeometry, 3> axes;  // x, y, z
  double well_radius = 0;
};

ConnectionGeometry connection_geometry(const model::Connection& conn, const model::GridGeometry& grid,
                                       const model::RockProperties& rock, double well_radius);

/// Sum over axes with h > 0 of 2*pi*Kh / ln(r_o / r_w), in m^3.
double connection_index(const ConnectionGeometry& geom);

/// C * mobility * (p_cell - p_con); positive is inflow to the well.
double phase_inflow(double c, double mobility, double p_cell, double p_con);

/// All connections of a model in well order, with connection indices filled.
struct ConnectionTable {
  std::vector<model::Connection> connections;
  std::vector<std::string> wells;
  std::vector<model::WellKind> kinds;
  std::vector<std::size_t> well_of;  // connection -> position in `wells`

  std::vector<std::size_t> producer_wells() const;
  std::vector<std::size_t> injector_wells() const;
};

ConnectionTable build_connections(const model::ReservoirModel& model);
ConnectionTable build_connections(const model::ReservoirModel& model, const model::RockProperties& rock);

/// Producer connections laid out for the differentiable rate chain.
struct ProducerLayout {
  std::vector<std::string> producers;
  std::vector<std::size_t> cells;       // per producer connection
  std::vector<std::size_t> producer_of; // per producer connection, index into `producers`
  std::vector<double> index;            // per producer connection, C in m^3

  static ProducerLayout from(const ConnectionTable& table);
  std::size_t size() const { return cells.size(); }
};

enum class Phase { water = 0, oil = 1 };
const char* to_string(Phase phase);

/// Per-producer per-phase production in m^3/day, as Tensor [producers, 2]
/// (columns water, oil). `pressure` (Pa) and `sat_water` hold one value per
/// grid cell in flat order; `bhp` is in Pa per producer; `multipliers` has one
/// positive factor per producer connection or is undefined. Negative inflow
/// is clamped to zero.
ad::Tensor producer_rates(const ad::Tensor& pressure, const ad::Tensor& sat_water, const ProducerLayout& layout,
                          const std::vector<double>& bhp, const oracle::FluidProperties& fluid,
                          const ad::Tensor& multipliers = {});

/// Same computation on plain arrays; returns [producer][phase] in m^3/day.
std::vector<std::array<double, 2>> producer_rates(const model::ReservoirState& state, const ProducerLayout& layout,
                                                  const std::vector<double>& bhp,
                                                  const oracle::FluidProperties& fluid,
                                                  const std::vector<double>& multipliers = {});

/// Index of the control interval that drives the rate reported at `t_days`:
/// the interval ending at t (the first interval for t <= t_0).
std::size_t control_index_for_report(const model::ControlSchedule& schedule, double t_days);

/// Producer BHPs in Pa for control interval `k`, in `layout.producers` order.
std::vector<double> producer_bhp(const model::ControlSchedule& schedule, const std::vector<std::string>& producers,
                                 std::size_t k);

/// Per-well, per-phase rate series in m^3/day. Producer rates are positive;
/// injector water rates are negative.
struct RateSeries {
  std::vector<double> times;  // days
  std::vector<std::string> wells;
  std::vector<std::array<std::vector<double>, 2>> values;  // [well][phase][time]

  std::size_t well_index(const std::string& name) const;
  const std::vector<double>& series(const std::string& well, Phase phase) const;
  /// Appends one report time; `rates[w]` is (water, oil) for wells[w].
  void append(double t_days, const std::vector<std::array<double, 2>>& rates);
  /// Copy restricted to times in [t_lo, t_hi].
  RateSeries window(double t_lo, double t_hi) const;
};

/// Rates at every report time for a simulated state series (states[i] at times[i]).
RateSeries compute_rate_series(const std::vector<model::ReservoirState>& states, const std::vector<double>& times,
                               const model::ReservoirModel& model, const ConnectionTable& table,
                               const oracle::FluidProperties& fluid);

/// Header: time_days,well,phase,rate_m3_per_day
void write_rates_csv(const std::filesystem::path& path, const RateSeries& rates);
RateSeries read_rates_csv(const std::filesystem::path& path);

}  // namespace nres::rates
