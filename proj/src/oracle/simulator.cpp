#include "nres/oracle/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <spdlog/spdlog.h>

#include "nres/error.hpp"
#include "nres/model/units.hpp"

namespace nres::oracle {

using model::ReservoirState;

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

double harmonic_trans(double area, double length, double k1, double k2) {
  if (!(k1 > 0) || !(k2 > 0)) return 0.0;
  return area * 2.0 * k1 * k2 / ((k1 + k2) * length);
}

struct CgResult {
  int iterations = 0;
  double residual = 0;
};

/// Jacobi-preconditioned CG for the symmetric pressure matrix given as
/// diagonal + off-diagonal face couplings (-coef between a and b).
template <class Faces>
CgResult solve_pcg(const std::vector<double>& diag, const Faces& faces, const std::vector<double>& coef,
                   const std::vector<double>& rhs, std::vector<double>& x, double tol, int max_iter) {
  const std::size_t n = diag.size();
  auto apply = [&](const std::vector<double>& v, std::vector<double>& out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = diag[i] * v[i];
    for (std::size_t f = 0; f < faces.size(); ++f) {
      const double c = coef[f];
      if (c == 0.0) continue;
      out[faces[f].a] -= c * v[faces[f].b];
      out[faces[f].b] -= c * v[faces[f].a];
    }
  };
  std::vector<double> r(n), z(n), p(n), ap(n);
  apply(x, ap);
  double bnorm = 0;
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = rhs[i] - ap[i];
    bnorm += rhs[i] * rhs[i];
  }
  bnorm = std::sqrt(bnorm);
  if (bnorm == 0) bnorm = 1;
  auto rnorm = [&] {
    double s = 0;
    for (double v : r) s += v * v;
    return std::sqrt(s);
  };
  CgResult res;
  res.residual = rnorm() / bnorm;
  if (res.residual < tol) return res;
  double rz = 0;
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = r[i] / diag[i];
    p[i] = z[i];
    rz += r[i] * z[i];
  }
  for (int it = 1; it <= max_iter; ++it) {
    apply(p, ap);
    double pap = 0;
    for (std::size_t i = 0; i < n; ++i) pap += p[i] * ap[i];
    const double alpha = rz / pap;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    res.iterations = it;
    res.residual = rnorm() / bnorm;
    if (res.residual < tol) break;
    double rz_new = 0;
    for (std::size_t i = 0; i < n; ++i) {
      z[i] = r[i] / diag[i];
      rz_new += r[i] * z[i];
    }
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  // Report the true residual rather than the recursively updated one.
  apply(x, ap);
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += (rhs[i] - ap[i]) * (rhs[i] - ap[i]);
  res.residual = std::sqrt(s) / bnorm;
  return res;
}

}  // namespace

double WellVolumes::total_produced_water() const {
  return std::accumulate(produced_water.begin(), produced_water.end(), 0.0);
}
double WellVolumes::total_produced_oil() const { return std::accumulate(produced_oil.begin(), produced_oil.end(), 0.0); }
double WellVolumes::total_injected_water() const {
  return std::accumulate(injected_water.begin(), injected_water.end(), 0.0);
}
void WellVolumes::add(const WellVolumes& o) {
  produced_water.resize(o.produced_water.size());
  produced_oil.resize(o.produced_oil.size());
  injected_water.resize(o.injected_water.size());
  for (std::size_t i = 0; i < o.produced_water.size(); ++i) {
    produced_water[i] += o.produced_water[i];
    produced_oil[i] += o.produced_oil[i];
  }
  for (std::size_t i = 0; i < o.injected_water.size(); ++i) injected_water[i] += o.injected_water[i];
}

Simulator::Simulator(const model::ReservoirModel& model, const FluidProperties& fluid, SimOptions options)
    : model_(model), fluid_(fluid), options_(options) {
  model_.validate();
  fluid_.validate();
  if (!(options_.cfl_safety > 0 && options_.cfl_safety <= 1)) throw ValidationError("simulator: cfl_safety must lie in (0,1]");
  if (!(options_.refinement >= 1)) throw ValidationError("simulator: refinement must be >= 1");
  const auto& g = model_.grid;
  const std::size_t n = g.cells();

  std::vector<std::size_t> row(n, kNone);
  for (std::size_t c = 0; c < n; ++c)
    if (g.is_active(c)) {
      row[c] = active_.size();
      active_.push_back(c);
    }
  const double cell_volume = g.dx * g.dy * g.dz;
  pore_volume0_.resize(active_.size());
  for (std::size_t r = 0; r < active_.size(); ++r) pore_volume0_[r] = model_.rock.porosity[active_[r]] * cell_volume;

  const auto& rock = model_.rock;
  auto add_face = [&](std::size_t c1, std::size_t c2, double area, double len, const std::vector<double>& perm) {
    if (row[c1] == kNone || row[c2] == kNone) return;
    const double t = harmonic_trans(area, len, units::md_to_m2(perm[c1]), units::md_to_m2(perm[c2]));
    if (t > 0) faces_.push_back({row[c1], row[c2], t});
  };
  for (std::size_t k = 0; k < g.nz; ++k)
    for (std::size_t j = 0; j < g.ny; ++j)
      for (std::size_t i = 0; i < g.nx; ++i) {
        const std::size_t c = g.index(i, j, k);
        if (i + 1 < g.nx) add_face(c, g.index(i + 1, j, k), g.dy * g.dz, g.dx, rock.perm_x);
        if (j + 1 < g.ny) add_face(c, g.index(i, j + 1, k), g.dx * g.dz, g.dy, rock.perm_y);
        if (k + 1 < g.nz) add_face(c, g.index(i, j, k + 1), g.dx * g.dy, g.dz, rock.perm_z);
      }

  table_ = rates::build_connections(model_);
  if (!options_.connection_multipliers.empty()) {
    if (options_.connection_multipliers.size() != table_.connections.size())
      throw ValidationError("connection multipliers: expected " + std::to_string(table_.connections.size()) + ", got " +
                            std::to_string(options_.connection_multipliers.size()));
    for (std::size_t c = 0; c < table_.connections.size(); ++c) {
      const double m = options_.connection_multipliers[c];
      if (!(m > 0) || !std::isfinite(m)) throw ValidationError("connection multipliers must be finite and > 0");
      table_.connections[c].index *= m;
    }
  }
  std::vector<std::size_t> slot(table_.wells.size());
  for (std::size_t w = 0; w < table_.wells.size(); ++w) {
    auto& list = table_.kinds[w] == model::WellKind::producer ? producers_ : injectors_;
    slot[w] = list.size();
    list.push_back(table_.wells[w]);
    if (std::find(table_.well_of.begin(), table_.well_of.end(), w) == table_.well_of.end())
      throw ValidationError("well " + table_.wells[w] + " has no active connections");
  }
  for (std::size_t c = 0; c < table_.connections.size(); ++c) {
    const std::size_t w = table_.well_of[c];
    WellConn wc{row[table_.connections[c].cell], slot[w], table_.connections[c].index};
    (table_.kinds[w] == model::WellKind::producer ? prod_conns_ : inj_conns_).push_back(wc);
  }

  // Fractional-flow slope bound by dense sampling plus a safety margin.
  auto fw = [&](double s) {
    const auto m = mobility(s, fluid_);
    return m.water / (m.water + m.oil);
  };
  const int samples = 2000;
  for (int i = 0; i < samples; ++i) {
    const double s0 = static_cast<double>(i) / samples, s1 = static_cast<double>(i + 1) / samples;
    max_dfw_ = std::max(max_dfw_, (fw(s1) - fw(s0)) * samples);
  }
  max_dfw_ *= 1.05;
}

double Simulator::pore_volume(std::size_t cell, double pressure) const {
  auto it = std::lower_bound(active_.begin(), active_.end(), cell);
  if (it == active_.end() || *it != cell) return 0.0;
  const double v0 = pore_volume0_[static_cast<std::size_t>(it - active_.begin())];
  return v0 * (1.0 + fluid_.compressibility * (pressure - fluid_.reference_pressure));
}

std::array<double, 2> Simulator::in_place(const ReservoirState& s) const {
  std::array<double, 2> v{0, 0};
  for (std::size_t r = 0; r < active_.size(); ++r) {
    const std::size_t c = active_[r];
    const double pv = pore_volume0_[r] * (1.0 + fluid_.compressibility * (s.pressure[c] - fluid_.reference_pressure));
    v[0] += pv * s.sat_water[c];
    v[1] += pv * s.sat_oil[c];
  }
  return v;
}

Controls Simulator::controls(std::size_t k) const {
  Controls c;
  for (const auto& name : producers_) c.bhp.push_back(units::bar_to_pa(model_.schedule.bhp.at(name).at(k)));
  for (const auto& name : injectors_)
    c.injection.push_back(units::m3_per_day_to_si(model_.schedule.injection_rate.at(name).at(k)));
  return c;
}

StepResult Simulator::step(const ReservoirState& state, const Controls& ctl, double dt) const {
  if (!(dt > 0) || !std::isfinite(dt)) throw ValidationError("step: dt must be positive and finite");
  if (ctl.bhp.size() != producers_.size() || ctl.injection.size() != injectors_.size())
    throw ValidationError("step: controls do not match the well lists");
  const std::size_t n = active_.size();
  const double ct = fluid_.compressibility, pref = fluid_.reference_pressure;

  std::vector<double> p_old(n), lw(n), lo(n), lt(n), acc(n), v_old(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t c = active_[r];
    p_old[r] = state.pressure[c];
    const auto m = mobility(state.sat_water[c], fluid_);
    lw[r] = m.water;
    lo[r] = m.oil;
    lt[r] = m.water + m.oil;
    acc[r] = pore_volume0_[r] * ct / dt;
    v_old[r] = pore_volume0_[r] * (1.0 + ct * (p_old[r] - pref));
  }

  // Injector totals split over connections in proportion to C * lambda_t.
  std::vector<double> inj_weight_sum(injectors_.size(), 0.0);
  for (const auto& wc : inj_conns_) inj_weight_sum[wc.well] += wc.index * lt[wc.cell];
  std::vector<double> inj_conn_rate(inj_conns_.size());
  for (std::size_t i = 0; i < inj_conns_.size(); ++i) {
    const auto& wc = inj_conns_[i];
    inj_conn_rate[i] = ctl.injection[wc.well] * wc.index * lt[wc.cell] / inj_weight_sum[wc.well];
  }

  std::vector<char> upwind_a(faces_.size());
  for (std::size_t f = 0; f < faces_.size(); ++f) upwind_a[f] = p_old[faces_[f].a] >= p_old[faces_[f].b];
  std::vector<char> open(prod_conns_.size(), 1);

  std::vector<double> coef(faces_.size()), diag(n), rhs(n), p(n);
  StepResult result;
  const int max_iter = static_cast<int>(10 * std::max<std::size_t>(n, 1));
  for (int outer = 0;; ++outer) {
    for (std::size_t r = 0; r < n; ++r) {
      diag[r] = acc[r];
      rhs[r] = acc[r] * p_old[r];
    }
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      const auto& fc = faces_[f];
      coef[f] = fc.trans * lt[upwind_a[f] ? fc.a : fc.b];
      diag[fc.a] += coef[f];
      diag[fc.b] += coef[f];
    }
    for (std::size_t i = 0; i < prod_conns_.size(); ++i) {
      if (!open[i]) continue;
      const auto& wc = prod_conns_[i];
      const double cl = wc.index * lt[wc.cell];
      diag[wc.cell] += cl;
      rhs[wc.cell] += cl * ctl.bhp[wc.well];
    }
    for (std::size_t i = 0; i < inj_conns_.size(); ++i) rhs[inj_conns_[i].cell] += inj_conn_rate[i];

    p = p_old;
    const auto cg = solve_pcg(diag, faces_, coef, rhs, p, options_.solver_tolerance, max_iter);
    result.pressure_residual = cg.residual;
    result.solver_iterations += cg.iterations;
    if (!(cg.residual < options_.solver_tolerance))
      throw NumericalError("pressure solve did not converge: relative residual " + std::to_string(cg.residual));

    bool changed = false;
    for (std::size_t i = 0; i < prod_conns_.size(); ++i) {
      if (open[i] && p[prod_conns_[i].cell] < ctl.bhp[prod_conns_[i].well]) {
        open[i] = 0;
        ++result.crossflow_shutins;
        changed = true;
        spdlog::debug("producer {} connection {} shut in to prevent cross-flow", producers_[prod_conns_[i].well], i);
      }
    }
    if (outer < 8) {
      for (std::size_t f = 0; f < faces_.size(); ++f) {
        const double dp = p[faces_[f].a] - p[faces_[f].b];
        if ((dp > 0 && !upwind_a[f]) || (dp < 0 && upwind_a[f])) {
          upwind_a[f] = !upwind_a[f];
          changed = true;
        }
      }
    }
    if (!changed) break;
    if (outer > 50) break;
  }

  // Explicit water update with the converged fluxes.
  std::vector<double> water_in(n, 0.0), through_in(n, 0.0), through_out(n, 0.0);
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    const auto& fc = faces_[f];
    const double flux = coef[f] * (p[fc.a] - p[fc.b]);  // a -> b
    const std::size_t up = upwind_a[f] ? fc.a : fc.b;
    const double fw_flux = flux * lw[up] / lt[up];
    water_in[fc.a] -= fw_flux;
    water_in[fc.b] += fw_flux;
    const double af = std::abs(flux);
    if (flux >= 0) {
      through_out[fc.a] += af;
      through_in[fc.b] += af;
    } else {
      through_out[fc.b] += af;
      through_in[fc.a] += af;
    }
  }
  result.volumes.produced_water.assign(producers_.size(), 0.0);
  result.volumes.produced_oil.assign(producers_.size(), 0.0);
  result.volumes.injected_water.assign(injectors_.size(), 0.0);
  for (std::size_t i = 0; i < prod_conns_.size(); ++i) {
    if (!open[i]) continue;
    const auto& wc = prod_conns_[i];
    const double drawdown = p[wc.cell] - ctl.bhp[wc.well];
    const double qw = wc.index * lw[wc.cell] * drawdown, qo = wc.index * lo[wc.cell] * drawdown;
    water_in[wc.cell] -= qw;
    through_out[wc.cell] += qw + qo;
    result.volumes.produced_water[wc.well] += qw * dt;
    result.volumes.produced_oil[wc.well] += qo * dt;
  }
  for (std::size_t i = 0; i < inj_conns_.size(); ++i) {
    const auto& wc = inj_conns_[i];
    water_in[wc.cell] += inj_conn_rate[i];
    through_in[wc.cell] += inj_conn_rate[i];
    result.volumes.injected_water[wc.well] += inj_conn_rate[i] * dt;
  }

  result.state = state;
  auto& out = result.state;
  double stable = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t c = active_[r];
    const double v_new = pore_volume0_[r] * (1.0 + ct * (p[r] - pref));
    double sw = (v_old[r] * state.sat_water[c] + dt * water_in[r]) / v_new;
    if (sw < -1e-9 || sw > 1.0 + 1e-9)
      throw NumericalError("water saturation " + std::to_string(sw) + " left [0,1] in cell " + std::to_string(c) +
                           "; use a smaller time step");
    sw = std::clamp(sw, 0.0, 1.0);
    out.pressure[c] = p[r];
    out.sat_water[c] = sw;
    out.sat_oil[c] = 1.0 - sw;
    const double throughput = std::max(through_in[r], through_out[r]);
    if (throughput > 0) stable = std::min(stable, v_new / (max_dfw_ * throughput));
  }
  result.stable_dt = stable;
  return result;
}

RunResult Simulator::run(const std::vector<double>& report_times) const {
  RunResult res;
  res.cumulative.produced_water.assign(producers_.size(), 0.0);
  res.cumulative.produced_oil.assign(producers_.size(), 0.0);
  res.cumulative.injected_water.assign(injectors_.size(), 0.0);
  res.rates.wells = table_.wells;
  res.rates.values.resize(table_.wells.size());
  if (report_times.empty()) return res;

  const auto& sched = model_.schedule.times;
  const double t_begin = sched.front(), t_end = sched.back();
  for (std::size_t i = 0; i < report_times.size(); ++i) {
    if (report_times[i] < t_begin - 1e-9 || report_times[i] > t_end + 1e-9)
      throw ValidationError("report time " + std::to_string(report_times[i]) + " lies outside the schedule span");
    if (i > 0 && report_times[i] < report_times[i - 1]) throw ValidationError("report times must be non-decreasing");
  }

  ReservoirState state = model_.initial.to_si();
  double t = t_begin;  // days
  double dt_guess = options_.max_step_days / options_.refinement;
  std::size_t next_report = 0;
  auto record = [&] {
    while (next_report < report_times.size() && std::abs(report_times[next_report] - t) <= 1e-9) {
      res.times.push_back(report_times[next_report]);
      res.states.push_back(state);
      ++next_report;
    }
  };
  record();
  while (next_report < report_times.size()) {
    const std::size_t k = model_.schedule.interval(t + 1e-9);
    double t_stop = report_times[next_report];
    if (k + 1 < sched.size()) t_stop = std::min(t_stop, sched[k + 1]);
    const Controls ctl = controls(k);
    while (t_stop - t > 1e-9) {
      double dt_days = std::min({dt_guess, t_stop - t, options_.max_step_days / options_.refinement});
      StepResult sr;
      for (int attempt = 0;; ++attempt) {
        try {
          sr = step(state, ctl, units::days_to_s(dt_days));
        } catch (const NumericalError&) {
          if (attempt >= 30) throw;
          dt_days *= 0.5;
          continue;
        }
        const double bound_days = sr.stable_dt / units::kDay;
        if (dt_days <= bound_days * (1 + 1e-12) || attempt >= 30) break;
        dt_days = options_.cfl_safety * bound_days / options_.refinement;
      }
      state = std::move(sr.state);
      res.cumulative.add(sr.volumes);
      res.crossflow_shutins += static_cast<std::size_t>(sr.crossflow_shutins);
      res.max_pressure_residual = std::max(res.max_pressure_residual, sr.pressure_residual);
      ++res.substeps;
      t += dt_days;
      if (std::abs(t - t_stop) <= 1e-9) t = t_stop;
      dt_guess = options_.cfl_safety * (sr.stable_dt / units::kDay) / options_.refinement;
    }
    record();
  }
  if (res.crossflow_shutins > 0)
    spdlog::info("oracle: producer cross-flow prevented on {} connection-steps", res.crossflow_shutins);
  res.rates = rates::compute_rate_series(res.states, res.times, model_, table_, fluid_);
  return res;
}

RunResult run(const model::ReservoirModel& model, const FluidProperties& fluid, const std::vector<double>& report_times,
              SimOptions options) {
  return Simulator(model, fluid, options).run(report_times);
}

}  // namespace nres::oracle
