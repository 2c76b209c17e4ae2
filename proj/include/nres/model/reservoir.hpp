#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace nres::model {

/// Uniform Cartesian grid. Cell arrays are stored [k][j][i] with i (x) fastest;
/// k grows with depth.
struct GridGeometry {
  std::size_t nx = 1, ny = 1, nz = 1;
  double dx = 1.0, dy = 1.0, dz = 1.0;  // m
  std::vector<std::uint8_t> active;     // 1 = active

  std::size_t cells() const noexcept { return nx * ny * nz; }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const noexcept { return (k * ny + j) * nx + i; }
  bool is_active(std::size_t cell) const { return active[cell] != 0; }
  std::size_t active_count() const;
  std::array<double, 3> extent() const noexcept { return {nx * dx, ny * dy, nz * dz}; }

  static GridGeometry uniform(std::size_t nx, std::size_t ny, std::size_t nz, double dx, double dy, double dz);
  void validate() const;
};

/// Rock fields in file units: porosity fraction, permeability in mD.
struct RockProperties {
  std::vector<double> porosity;
  std::vector<double> perm_x, perm_y, perm_z;

  void validate(const GridGeometry& grid) const;
};

/// Dynamic state in SI: pressure in Pa, saturations as fractions.
struct ReservoirState {
  std::vector<double> pressure;
  std::vector<double> sat_water;
  std::vector<double> sat_oil;

  static ReservoirState uniform(std::size_t cells, double pressure_pa, double sat_water);
  void validate(const GridGeometry& grid) const;
};

/// Initial conditions as stored on disk: pressure in bar, water saturation.
struct InitialState {
  std::vector<double> pressure_bar;
  std::vector<double> sat_water;

  ReservoirState to_si() const;
};

enum class WellKind { producer, injector };

struct Point3 {
  double x = 0, y = 0, z = 0;
};

struct Well {
  std::string name;
  WellKind kind = WellKind::producer;
  double radius = 0.1;  // m
  std::vector<Point3> trajectory;

  void validate(const GridGeometry& grid) const;
};

struct Connection {
  std::string well;
  std::size_t i = 0, j = 0, k = 0;
  std::size_t cell = 0;
  double h_x = 0, h_y = 0, h_z = 0;  // projected perforated lengths, m
  double index = 0;                  // connection index C, m^3 (SI)
};

/// Controls at timestamps t_0..t_T, piecewise constant on [t_k, t_k+1).
struct ControlSchedule {
  std::vector<double> times;                                  // days
  std::map<std::string, std::vector<double>> bhp;             // producers, bar
  std::map<std::string, std::vector<double>> injection_rate;  // injectors, m3/day

  /// Index of the interval containing t (clamped to the last control).
  std::size_t interval(double t_days) const;
  void validate(const std::vector<Well>& wells) const;
};

struct ReservoirModel {
  GridGeometry grid;
  RockProperties rock;
  InitialState initial;
  std::vector<Well> wells;
  ControlSchedule schedule;

  const Well& well(const std::string& name) const;
  std::vector<const Well*> producers() const;
  std::vector<const Well*> injectors() const;
  void validate() const;
};

/// Clips each trajectory segment against cell faces and accumulates, per
/// intersected active cell, the projections of the inside sub-length on the
/// three axes. Connection indices are left at zero.
std::vector<Connection> compute_connections(const Well& well, const GridGeometry& grid);

bool operator==(const GridGeometry&, const GridGeometry&);
bool operator==(const RockProperties&, const RockProperties&);
bool operator==(const InitialState&, const InitialState&);
bool operator==(const Point3&, const Point3&);
bool operator==(const Well&, const Well&);
bool operator==(const ControlSchedule&, const ControlSchedule&);
bool operator==(const ReservoirModel&, const ReservoirModel&);

}  // namespace nres::model
