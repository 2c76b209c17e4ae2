#include "nres/rates/rates.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "nres/autodiff/ops.hpp"
#include "nres/error.hpp"
#include "nres/io.hpp"
#include "nres/model/units.hpp"

namespace nres::rates {

using model::WellKind;

double kh_effective(double k1, double k2, double h) { return std::sqrt(k1 * k2) * h; }

double peaceman_radius(double d1, double d2, double k1, double k2) {
  if (!(k1 > 0) || !(k2 > 0)) throw ValidationError("degenerate anisotropy: permeabilities must be > 0");
  if (!(d1 > 0) || !(d2 > 0)) throw ValidationError("peaceman radius: cell sizes must be > 0");
  const double r21 = std::sqrt(k2 / k1), r12 = std::sqrt(k1 / k2);
  return 0.28 * std::sqrt(d1 * d1 * r21 + d2 * d2 * r12) / (std::sqrt(r21) + std::sqrt(r12));
}

ConnectionGeometry connection_geometry(const model::Connection& conn, const model::GridGeometry& grid,
                                       const model::RockProperties& rock, double well_radius) {
  const std::size_t c = conn.cell;
  const double kx = units::md_to_m2(rock.perm_x[c]);
  const double ky = units::md_to_m2(rock.perm_y[c]);
  const double kz = units::md_to_m2(rock.perm_z[c]);
  ConnectionGeometry g;
  g.axes[0] = {grid.dy, grid.dz, ky, kz, conn.h_x};
  g.axes[1] = {grid.dx, grid.dz, kx, kz, conn.h_y};
  g.axes[2] = {grid.dx, grid.dy, kx, ky, conn.h_z};
  g.well_radius = well_radius;
  return g;
}

double connection_index(const ConnectionGeometry& geom) {
  double total = 0.0;
  for (const auto& a : geom.axes) {
    if (!(a.h > 0)) continue;
    const double ro = peaceman_radius(a.d1, a.d2, a.k1, a.k2);
    if (!(ro > geom.well_radius))
      throw ValidationError("well radius exceeds equivalent radius (r_w=" + std::to_string(geom.well_radius) +
                            " m, r_o=" + std::to_string(ro) + " m)");
    total += 2.0 * std::numbers::pi * kh_effective(a.k1, a.k2, a.h) / std::log(ro / geom.well_radius);
  }
  return total;
}

double phase_inflow(double c, double mobility, double p_cell, double p_con) { return c * mobility * (p_cell - p_con); }

std::vector<std::size_t> ConnectionTable::producer_wells() const {
  std::vector<std::size_t> out;
  for (std::size_t w = 0; w < wells.size(); ++w)
    if (kinds[w] == WellKind::producer) out.push_back(w);
  return out;
}

std::vector<std::size_t> ConnectionTable::injector_wells() const {
  std::vector<std::size_t> out;
  for (std::size_t w = 0; w < wells.size(); ++w)
    if (kinds[w] == WellKind::injector) out.push_back(w);
  return out;
}

ConnectionTable build_connections(const model::ReservoirModel& model) { return build_connections(model, model.rock); }

ConnectionTable build_connections(const model::ReservoirModel& model, const model::RockProperties& rock) {
  ConnectionTable t;
  for (const auto& well : model.wells) {
    const std::size_t w = t.wells.size();
    t.wells.push_back(well.name);
    t.kinds.push_back(well.kind);
    for (auto conn : model::compute_connections(well, model.grid)) {
      try {
        conn.index = connection_index(connection_geometry(conn, model.grid, rock, well.radius));
      } catch (const ValidationError& e) {
        throw ValidationError("well " + well.name + ", cell (" + std::to_string(conn.i) + "," + std::to_string(conn.j) +
                              "," + std::to_string(conn.k) + "): " + e.what());
      }
      t.connections.push_back(conn);
      t.well_of.push_back(w);
    }
  }
  return t;
}

ProducerLayout ProducerLayout::from(const ConnectionTable& table) {
  ProducerLayout l;
  std::vector<std::size_t> slot(table.wells.size(), SIZE_MAX);
  for (std::size_t w : table.producer_wells()) {
    slot[w] = l.producers.size();
    l.producers.push_back(table.wells[w]);
  }
  for (std::size_t c = 0; c < table.connections.size(); ++c) {
    const std::size_t w = table.well_of[c];
    if (table.kinds[w] != WellKind::producer) continue;
    l.cells.push_back(table.connections[c].cell);
    l.producer_of.push_back(slot[w]);
    l.index.push_back(table.connections[c].index);
  }
  return l;
}

const char* to_string(Phase phase) { return phase == Phase::water ? "water" : "oil"; }

ad::Tensor producer_rates(const ad::Tensor& pressure, const ad::Tensor& sat_water, const ProducerLayout& layout,
                          const std::vector<double>& bhp, const oracle::FluidProperties& fluid,
                          const ad::Tensor& multipliers) {
  const std::size_t n = layout.size(), np = layout.producers.size();
  if (bhp.size() != np) throw ShapeError("producer_rates: expected one BHP per producer");
  for (std::size_t c : layout.cells)
    if (c >= pressure.numel() || c >= sat_water.numel())
      throw ValidationError("producer_rates: connection cell " + std::to_string(c) + " missing from state");
  if (n == 0) return ad::Tensor::zeros({np, 2});

  std::vector<double> bhp_conn(n), factor(n);
  for (std::size_t i = 0; i < n; ++i) {
    bhp_conn[i] = bhp[layout.producer_of[i]];
    factor[i] = layout.index[i] * units::kDay;
  }
  const double span = 1.0 - fluid.residual_water - fluid.residual_oil;

  ad::Tensor drawdown = ad::relu(ad::gather(pressure, layout.cells) - ad::Tensor::from({n}, bhp_conn));
  ad::Tensor se = ad::clamp(ad::scale(ad::add_scalar(ad::gather(sat_water, layout.cells), -fluid.residual_water), 1.0 / span),
                            0.0, 1.0);
  ad::Tensor lam_w = ad::scale(ad::pow_scalar(se, fluid.corey_water), fluid.endpoint_water / fluid.viscosity_water);
  ad::Tensor lam_o = ad::scale(ad::pow_scalar(ad::add_scalar(ad::scale(se, -1.0), 1.0), fluid.corey_oil),
                               fluid.endpoint_oil / fluid.viscosity_oil);
  ad::Tensor base = drawdown * ad::Tensor::from({n}, factor);
  if (multipliers.defined()) {
    if (multipliers.numel() != n) throw ShapeError("producer_rates: expected one multiplier per producer connection");
    base = base * ad::reshape(multipliers, {n});
  }
  ad::Tensor qw = ad::reshape(ad::segment_sum(base * lam_w, layout.producer_of, np), {np, 1});
  ad::Tensor qo = ad::reshape(ad::segment_sum(base * lam_o, layout.producer_of, np), {np, 1});
  return ad::concat({qw, qo}, 1);
}

std::vector<std::array<double, 2>> producer_rates(const model::ReservoirState& state, const ProducerLayout& layout,
                                                  const std::vector<double>& bhp,
                                                  const oracle::FluidProperties& fluid,
                                                  const std::vector<double>& multipliers) {
  if (bhp.size() != layout.producers.size()) throw ShapeError("producer_rates: expected one BHP per producer");
  if (!multipliers.empty() && multipliers.size() != layout.size())
    throw ShapeError("producer_rates: expected one multiplier per producer connection");
  std::vector<std::array<double, 2>> out(layout.producers.size(), {0.0, 0.0});
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const std::size_t c = layout.cells[i];
    if (c >= state.pressure.size() || c >= state.sat_water.size())
      throw ValidationError("producer_rates: connection cell " + std::to_string(c) + " missing from state");
    const std::size_t p = layout.producer_of[i];
    const double drawdown = std::max(state.pressure[c] - bhp[p], 0.0);
    const double mult = multipliers.empty() ? 1.0 : multipliers[i];
    const auto lam = oracle::mobility(state.sat_water[c], fluid);
    out[p][0] += units::si_to_m3_per_day(phase_inflow(layout.index[i], lam.water, drawdown, 0.0) * mult);
    out[p][1] += units::si_to_m3_per_day(phase_inflow(layout.index[i], lam.oil, drawdown, 0.0) * mult);
  }
  return out;
}

std::size_t control_index_for_report(const model::ControlSchedule& schedule, double t_days) {
  const auto& t = schedule.times;
  if (t.empty()) throw ValidationError("schedule: no timestamps");
  auto it = std::lower_bound(t.begin(), t.end(), t_days);
  if (it == t.begin()) return 0;
  return static_cast<std::size_t>(it - t.begin()) - 1;
}

std::vector<double> producer_bhp(const model::ControlSchedule& schedule, const std::vector<std::string>& producers,
                                 std::size_t k) {
  std::vector<double> out;
  out.reserve(producers.size());
  for (const auto& name : producers) {
    auto it = schedule.bhp.find(name);
    if (it == schedule.bhp.end()) throw ValidationError("schedule: no BHP for producer " + name);
    out.push_back(units::bar_to_pa(it->second.at(k)));
  }
  return out;
}

std::size_t RateSeries::well_index(const std::string& name) const {
  auto it = std::find(wells.begin(), wells.end(), name);
  if (it == wells.end()) throw ValidationError("rates: unknown well " + name);
  return static_cast<std::size_t>(it - wells.begin());
}

const std::vector<double>& RateSeries::series(const std::string& well, Phase phase) const {
  return values[well_index(well)][static_cast<int>(phase)];
}

void RateSeries::append(double t_days, const std::vector<std::array<double, 2>>& rates) {
  if (rates.size() != wells.size()) throw ShapeError("rates: one (water, oil) pair per well expected");
  if (values.size() != wells.size()) values.resize(wells.size());
  times.push_back(t_days);
  for (std::size_t w = 0; w < wells.size(); ++w) {
    values[w][0].push_back(rates[w][0]);
    values[w][1].push_back(rates[w][1]);
  }
}

RateSeries RateSeries::window(double t_lo, double t_hi) const {
  RateSeries out;
  out.wells = wells;
  out.values.resize(wells.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < t_lo || times[i] > t_hi) continue;
    out.times.push_back(times[i]);
    for (std::size_t w = 0; w < wells.size(); ++w)
      for (int p = 0; p < 2; ++p) out.values[w][p].push_back(values[w][p][i]);
  }
  return out;
}

RateSeries compute_rate_series(const std::vector<model::ReservoirState>& states, const std::vector<double>& times,
                               const model::ReservoirModel& model, const ConnectionTable& table,
                               const oracle::FluidProperties& fluid) {
  if (states.size() != times.size()) throw ShapeError("rates: one state per report time expected");
  const auto layout = ProducerLayout::from(table);
  RateSeries out;
  out.wells = table.wells;
  out.values.resize(out.wells.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    const std::size_t k = control_index_for_report(model.schedule, times[i]);
    const auto prod = producer_rates(states[i], layout, producer_bhp(model.schedule, layout.producers, k), fluid);
    std::vector<std::array<double, 2>> row(out.wells.size(), {0.0, 0.0});
    std::size_t p = 0;
    for (std::size_t w = 0; w < out.wells.size(); ++w) {
      if (table.kinds[w] == WellKind::producer)
        row[w] = prod[p++];
      else
        row[w] = {-model.schedule.injection_rate.at(out.wells[w]).at(k), 0.0};
    }
    out.append(times[i], row);
  }
  return out;
}

void write_rates_csv(const std::filesystem::path& path, const RateSeries& rates) {
  std::ostringstream os;
  os << "time_days,well,phase,rate_m3_per_day\n";
  char buf[64];
  for (std::size_t i = 0; i < rates.times.size(); ++i) {
    for (std::size_t w = 0; w < rates.wells.size(); ++w) {
      for (int p = 0; p < 2; ++p) {
        std::snprintf(buf, sizeof buf, "%.17g", rates.times[i]);
        os << buf << ',' << rates.wells[w] << ',' << to_string(static_cast<Phase>(p)) << ',';
        std::snprintf(buf, sizeof buf, "%.17g", rates.values[w][p][i]);
        os << buf << '\n';
      }
    }
  }
  io::write_text(path, os.str());
}

RateSeries read_rates_csv(const std::filesystem::path& path) {
  std::istringstream in(io::read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty rates file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "time_days,well,phase,rate_m3_per_day")
    throw ValidationError(path.string() + ": unexpected header \"" + line + "\"");
  RateSeries out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = io::split_csv_line(line);
    if (f.size() != 4) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    double t = 0, q = 0;
    try {
      t = std::stod(f[0]);
      q = std::stod(f[3]);
    } catch (const std::exception&) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
    int phase = f[2] == "water" ? 0 : f[2] == "oil" ? 1 : -1;
    if (phase < 0) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": unknown phase " + f[2]);
    if (out.times.empty() || out.times.back() != t) {
      if (!out.times.empty() && t < out.times.back())
        throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": times must be non-decreasing");
      out.times.push_back(t);
    }
    auto it = std::find(out.wells.begin(), out.wells.end(), f[1]);
    std::size_t w = static_cast<std::size_t>(it - out.wells.begin());
    if (it == out.wells.end()) {
      if (out.times.size() > 1) throw ValidationError(path.string() + ": well " + f[1] + " missing at earlier times");
      out.wells.push_back(f[1]);
      out.values.emplace_back();
    }
    auto& s = out.values[w][phase];
    if (s.size() + 1 != out.times.size())
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": duplicate or missing row for " + f[1]);
    s.push_back(q);
  }
  for (std::size_t w = 0; w < out.wells.size(); ++w)
    for (int p = 0; p < 2; ++p)
      if (out.values[w][p].size() != out.times.size())
        throw ValidationError(path.string() + ": incomplete series for " + out.wells[w]);
  return out;
}

}  // namespace nres::rates
