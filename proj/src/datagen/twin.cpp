#include "nres/datagen/twin.hpp"

#include <algorithm>
#include <cmath>

#include "nres/datagen/datagen.hpp"
#include "nres/model/units.hpp"
#include "nres/rng.hpp"

namespace nres::datagen {

model::ReservoirModel build_twin_model(const TwinSpec& spec) {
  using model::Point3;
  using model::WellKind;
  model::ReservoirModel m;
  m.grid = model::GridGeometry::uniform(spec.nx, spec.ny, spec.nz, spec.dx, spec.dy, spec.dz);
  const std::array<std::size_t, 3> shape{spec.nz, spec.ny, spec.nx};
  const auto lnk = correlated_noise(shape, 0.5, 3.0, Philox::derive(spec.seed, 1));
  const auto dphi = correlated_noise(shape, 0.02, 3.0, Philox::derive(spec.seed, 2));
  const std::size_t n = m.grid.cells();
  for (std::size_t c = 0; c < n; ++c) {
    const double k = spec.mean_perm_md * std::exp(lnk[c]);
    m.rock.perm_x.push_back(k);
    m.rock.perm_y.push_back(k);
    m.rock.perm_z.push_back(spec.kv_kh * k);
    m.rock.porosity.push_back(std::clamp(0.2 + dphi[c], 0.05, 0.35));
  }
  m.initial.pressure_bar.assign(n, spec.initial_pressure_bar);
  m.initial.sat_water.assign(n, spec.initial_sat_water);

  const double top = 0.5, bottom = spec.nz * spec.dz - 0.5;
  auto center = [&](double i, double j) { return std::pair{(i + 0.5) * spec.dx, (j + 0.5) * spec.dy}; };
  auto vertical = [&](std::string name, WellKind kind, double i, double j) {
    const auto [x, y] = center(i, j);
    return model::Well{std::move(name), kind, 0.1, {Point3{x, y, top}, Point3{x, y, bottom}}};
  };
  const double ci = std::floor(spec.nx / 2.0), cj = std::floor(spec.ny / 2.0);
  const double lo = 2.0, hi_i = spec.nx - 3.0, hi_j = spec.ny - 3.0;
  m.wells.push_back(vertical("I1", WellKind::injector, ci, cj));
  m.wells.push_back(vertical("P1", WellKind::producer, lo, lo));
  m.wells.push_back(vertical("P2", WellKind::producer, hi_i, lo));
  {
    const auto [x0, y0] = center(lo, hi_j);
    const auto [x1, y1] = center(std::min(lo + 4.0, spec.nx - 1.0), hi_j);
    m.wells.push_back(model::Well{"P3", WellKind::producer, 0.1, {Point3{x0, y0, top}, Point3{x1, y1, bottom}}});
  }

  auto params = ScheduleGenParams::defaults(units::bar_to_pa(spec.initial_pressure_bar), spec.horizon_days,
                                            spec.report_step_days);
  m.schedule.times = params.times();
  std::uint64_t w = 0;
  for (const auto& well : m.wells) {
    if (well.kind == WellKind::producer) {
      auto u = bhp_schedule(params, Philox::derive(spec.seed, 100 + w++));
      for (auto& v : u) v = units::pa_to_bar(v);
      m.schedule.bhp[well.name] = u;
    } else {
      m.schedule.injection_rate[well.name] = std::vector<double>(m.schedule.times.size(), spec.injection_rate);
    }
  }
  m.validate();
  return m;
}

oracle::FluidProperties twin_fluid() { return oracle::FluidProperties{}; }

model::ReservoirModel apply_twin_anomaly(const model::ReservoirModel& base) {
  model::ReservoirModel m = base;
  const auto& g = m.grid;
  // Box midway between the injector column (centre) and P1 (cell 2,2).
  const std::size_t i0 = g.nx / 4, j0 = g.ny / 4, k0 = g.nz / 4;
  for (std::size_t k = k0; k < std::min(g.nz, k0 + 4); ++k)
    for (std::size_t j = j0; j < std::min(g.ny, j0 + 4); ++j)
      for (std::size_t i = i0; i < std::min(g.nx, i0 + 4); ++i) {
        const std::size_t c = g.index(i, j, k);
        m.rock.perm_x[c] *= 1.5;
        m.rock.perm_y[c] *= 1.5;
        m.rock.perm_z[c] *= 1.5;
      }
  return m;
}

}  // namespace nres::datagen
