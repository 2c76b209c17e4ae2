#include "nres/model/reservoir.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include "nres/error.hpp"
#include "nres/model/units.hpp"

namespace nres::model {

namespace {

void require_size(const std::vector<double>& v, std::size_t n, const char* name) {
  if (v.size() != n)
    throw ValidationError(std::string(name) + ": expected " + std::to_string(n) + " values, got " +
                          std::to_string(v.size()));
}

std::string cell_label(std::size_t cell) { return "cell " + std::to_string(cell); }

}  // namespace

std::size_t GridGeometry::active_count() const {
  return static_cast<std::size_t>(std::count_if(active.begin(), active.end(), [](std::uint8_t a) { return a != 0; }));
}

GridGeometry GridGeometry::uniform(std::size_t nx, std::size_t ny, std::size_t nz, double dx, double dy, double dz) {
  GridGeometry g;
  g.nx = nx;
  g.ny = ny;
  g.nz = nz;
  g.dx = dx;
  g.dy = dy;
  g.dz = dz;
  g.active.assign(nx * ny * nz, 1);
  return g;
}

void GridGeometry::validate() const {
  if (nx < 1 || ny < 1 || nz < 1) throw ValidationError("grid: cell counts must be >= 1");
  if (!(dx > 0) || !(dy > 0) || !(dz > 0) || !std::isfinite(dx) || !std::isfinite(dy) || !std::isfinite(dz))
    throw ValidationError("grid: cell sizes must be positive and finite");
  if (active.size() != cells())
    throw ValidationError("active: expected " + std::to_string(cells()) + " values, got " +
                          std::to_string(active.size()));
  if (active_count() == 0) throw ValidationError("no active cells");
}

void RockProperties::validate(const GridGeometry& grid) const {
  const std::size_t n = grid.cells();
  require_size(porosity, n, "porosity");
  require_size(perm_x, n, "perm_x");
  require_size(perm_y, n, "perm_y");
  require_size(perm_z, n, "perm_z");
  for (std::size_t c = 0; c < n; ++c) {
    if (!grid.is_active(c)) continue;
    const double phi = porosity[c];
    if (!std::isfinite(phi) || phi < 0.0 || phi > 1.0)
      throw ValidationError("porosity: value outside [0,1] at " + cell_label(c));
    for (auto [field, name] : {std::pair{&perm_x, "perm_x"}, {&perm_y, "perm_y"}, {&perm_z, "perm_z"}}) {
      const double k = (*field)[c];
      if (!std::isfinite(k) || k < 0.0) throw ValidationError(std::string(name) + ": negative or non-finite at " + cell_label(c));
    }
  }
}

ReservoirState ReservoirState::uniform(std::size_t cells, double pressure_pa, double sat_water) {
  ReservoirState s;
  s.pressure.assign(cells, pressure_pa);
  s.sat_water.assign(cells, sat_water);
  s.sat_oil.assign(cells, 1.0 - sat_water);
  return s;
}

void ReservoirState::validate(const GridGeometry& grid) const {
  const std::size_t n = grid.cells();
  require_size(pressure, n, "pressure");
  require_size(sat_water, n, "sat_water");
  require_size(sat_oil, n, "sat_oil");
  for (std::size_t c = 0; c < n; ++c) {
    if (!grid.is_active(c)) continue;
    if (!std::isfinite(pressure[c]) || pressure[c] <= 0.0)
      throw ValidationError("pressure: non-positive or non-finite at " + cell_label(c));
    const double sw = sat_water[c], so = sat_oil[c];
    if (!std::isfinite(sw) || !std::isfinite(so) || sw < -1e-9 || sw > 1.0 + 1e-9 || so < -1e-9 || so > 1.0 + 1e-9)
      throw ValidationError("saturation outside [0,1] at " + cell_label(c));
    if (std::abs(sw + so - 1.0) > 1e-9) throw ValidationError("saturations do not sum to 1 at " + cell_label(c));
  }
}

ReservoirState InitialState::to_si() const {
  ReservoirState s;
  s.pressure.resize(pressure_bar.size());
  std::transform(pressure_bar.begin(), pressure_bar.end(), s.pressure.begin(), units::bar_to_pa);
  s.sat_water = sat_water;
  s.sat_oil.resize(sat_water.size());
  std::transform(sat_water.begin(), sat_water.end(), s.sat_oil.begin(), [](double sw) { return 1.0 - sw; });
  return s;
}

void Well::validate(const GridGeometry& grid) const {
  if (name.empty()) throw ValidationError("well: empty name");
  if (trajectory.size() < 2) throw ValidationError("well " + name + ": trajectory needs at least 2 points");
  if (!(radius > 0) || !std::isfinite(radius)) throw ValidationError("well " + name + ": radius must be positive");
  const auto ext = grid.extent();
  const double tol = 1e-9 * std::max({ext[0], ext[1], ext[2]});
  for (const auto& p : trajectory) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw ValidationError("well " + name + ": non-finite trajectory point");
    if (p.x < -tol || p.y < -tol || p.z < -tol || p.x > ext[0] + tol || p.y > ext[1] + tol || p.z > ext[2] + tol)
      throw ValidationError("well " + name + ": trajectory leaves the grid bounding box");
  }
}

std::size_t ControlSchedule::interval(double t_days) const {
  if (times.empty()) throw ValidationError("schedule: no timestamps");
  auto it = std::upper_bound(times.begin(), times.end(), t_days);
  if (it == times.begin()) return 0;
  return static_cast<std::size_t>(it - times.begin()) - 1;
}

void ControlSchedule::validate(const std::vector<Well>& wells) const {
  if (times.empty()) throw ValidationError("schedule: no timestamps");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!std::isfinite(times[i])) throw ValidationError("schedule: non-finite timestamp");
    if (i > 0 && !(times[i] > times[i - 1])) throw ValidationError("schedule: timestamps must be strictly increasing");
  }
  for (const auto& w : wells) {
    const auto& table = w.kind == WellKind::producer ? bhp : injection_rate;
    auto it = table.find(w.name);
    if (it == table.end()) throw ValidationError("schedule: no controls for well " + w.name);
    if (it->second.size() != times.size())
      throw ValidationError("schedule: well " + w.name + " has " + std::to_string(it->second.size()) +
                            " controls for " + std::to_string(times.size()) + " timestamps");
    for (double v : it->second) {
      if (!std::isfinite(v)) throw ValidationError("schedule: non-finite control for well " + w.name);
      if (w.kind == WellKind::producer && v <= 0.0) throw ValidationError("schedule: BHP must be > 0 for well " + w.name);
      if (w.kind == WellKind::injector && v < 0.0)
        throw ValidationError("schedule: injection rate must be >= 0 for well " + w.name);
    }
  }
  auto check_known = [&](const std::map<std::string, std::vector<double>>& table, WellKind kind) {
    for (const auto& [name, series] : table) {
      auto it = std::find_if(wells.begin(), wells.end(), [&](const Well& w) { return w.name == name; });
      if (it == wells.end() || it->kind != kind) throw ValidationError("schedule: controls for unknown well " + name);
    }
  };
  check_known(bhp, WellKind::producer);
  check_known(injection_rate, WellKind::injector);
}

const Well& ReservoirModel::well(const std::string& name) const {
  for (const auto& w : wells)
    if (w.name == name) return w;
  throw ValidationError("unknown well " + name);
}

std::vector<const Well*> ReservoirModel::producers() const {
  std::vector<const Well*> out;
  for (const auto& w : wells)
    if (w.kind == WellKind::producer) out.push_back(&w);
  return out;
}

std::vector<const Well*> ReservoirModel::injectors() const {
  std::vector<const Well*> out;
  for (const auto& w : wells)
    if (w.kind == WellKind::injector) out.push_back(&w);
  return out;
}

void ReservoirModel::validate() const {
  grid.validate();
  rock.validate(grid);
  require_size(initial.pressure_bar, grid.cells(), "pressure");
  require_size(initial.sat_water, grid.cells(), "sat_water");
  initial.to_si().validate(grid);
  for (std::size_t i = 0; i < wells.size(); ++i) {
    wells[i].validate(grid);
    for (std::size_t j = 0; j < i; ++j)
      if (wells[j].name == wells[i].name) throw ValidationError("duplicate well name " + wells[i].name);
  }
  schedule.validate(wells);
}

namespace {

/// Cell index along one axis for a coordinate; a point on an interior face
/// belongs to the lower-index cell.
std::size_t axis_cell(double coord, double size, std::size_t n) {
  const double u = coord / size;
  double f = std::floor(u);
  if (f == u && f > 0) f -= 1.0;
  if (f < 0) f = 0;
  return std::min(static_cast<std::size_t>(f), n - 1);
}

/// Liang-Barsky clip of p + t*d, t in [0,1], against [0, ext] per axis.
bool clip_to_box(const double p[3], const double d[3], const std::array<double, 3>& ext, double& t0, double& t1) {
  t0 = 0.0;
  t1 = 1.0;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (p[a] < 0.0 || p[a] > ext[a]) return false;
      continue;
    }
    double ta = (0.0 - p[a]) / d[a];
    double tb = (ext[a] - p[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t1 > t0;
}

}  // namespace

std::vector<Connection> compute_connections(const Well& well, const GridGeometry& grid) {
  const auto ext = grid.extent();
  const double size[3] = {grid.dx, grid.dy, grid.dz};
  const std::size_t count[3] = {grid.nx, grid.ny, grid.nz};

  std::vector<Connection> out;
  std::unordered_map<std::size_t, std::size_t> slot;

  for (std::size_t s = 0; s + 1 < well.trajectory.size(); ++s) {
    const auto& a = well.trajectory[s];
    const auto& b = well.trajectory[s + 1];
    const double p[3] = {a.x, a.y, a.z};
    const double d[3] = {b.x - a.x, b.y - a.y, b.z - a.z};
    double t0 = 0, t1 = 0;
    if (!clip_to_box(p, d, ext, t0, t1)) continue;

    std::vector<double> cuts{t0, t1};
    for (int ax = 0; ax < 3; ++ax) {
      if (d[ax] == 0.0) continue;
      for (std::size_t f = 1; f < count[ax]; ++f) {
        const double t = (static_cast<double>(f) * size[ax] - p[ax]) / d[ax];
        if (t > t0 && t < t1) cuts.push_back(t);
      }
    }
    std::sort(cuts.begin(), cuts.end());

    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
      const double ta = cuts[c], tb = cuts[c + 1];
      if (!(tb > ta)) continue;
      const double tm = 0.5 * (ta + tb);
      std::size_t idx[3];
      for (int ax = 0; ax < 3; ++ax) idx[ax] = axis_cell(p[ax] + tm * d[ax], size[ax], count[ax]);
      const std::size_t cell = grid.index(idx[0], idx[1], idx[2]);
      if (!grid.is_active(cell)) continue;
      const double dt = tb - ta;
      auto [it, inserted] = slot.try_emplace(cell, out.size());
      if (inserted) {
        Connection conn;
        conn.well = well.name;
        conn.i = idx[0];
        conn.j = idx[1];
        conn.k = idx[2];
        conn.cell = cell;
        out.push_back(conn);
      }
      auto& conn = out[it->second];
      conn.h_x += std::abs(d[0]) * dt;
      conn.h_y += std::abs(d[1]) * dt;
      conn.h_z += std::abs(d[2]) * dt;
    }
  }
  std::erase_if(out, [](const Connection& c) { return !(c.h_x + c.h_y + c.h_z > 0.0); });
  return out;
}

bool operator==(const GridGeometry& a, const GridGeometry& b) {
  return a.nx == b.nx && a.ny == b.ny && a.nz == b.nz && a.dx == b.dx && a.dy == b.dy && a.dz == b.dz &&
         a.active == b.active;
}
bool operator==(const RockProperties& a, const RockProperties& b) {
  return a.porosity == b.porosity && a.perm_x == b.perm_x && a.perm_y == b.perm_y && a.perm_z == b.perm_z;
}
bool operator==(const InitialState& a, const InitialState& b) {
  return a.pressure_bar == b.pressure_bar && a.sat_water == b.sat_water;
}
bool operator==(const Point3& a, const Point3& b) { return a.x == b.x && a.y == b.y && a.z == b.z; }
bool operator==(const Well& a, const Well& b) {
  return a.name == b.name && a.kind == b.kind && a.radius == b.radius && a.trajectory == b.trajectory;
}
bool operator==(const ControlSchedule& a, const ControlSchedule& b) {
  return a.times == b.times && a.bhp == b.bhp && a.injection_rate == b.injection_rate;
}
bool operator==(const ReservoirModel& a, const ReservoirModel& b) {
  return a.grid == b.grid && a.rock == b.rock && a.initial == b.initial && a.wells == b.wells &&
         a.schedule == b.schedule;
}

}  // namespace nres::model
