#include "nres/model/model_io.hpp"

#include <cmath>

#include "nres/error.hpp"

namespace nres::model {

namespace fs = std::filesystem;
using io::Json;

namespace {

constexpr const char* kFormat = "nres-reservoir-model";
constexpr int kVersion = 1;

void require_finite(const std::vector<double>& v, const std::string& name) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i])) throw ValidationError(name + ": non-finite value at index " + std::to_string(i));
}

template <class T>
T get(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ValidationError(where + ": missing key \"" + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ValidationError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

std::string to_string(WellKind kind) { return kind == WellKind::producer ? "producer" : "injector"; }

WellKind well_kind_from_string(const std::string& s) {
  if (s == "producer") return WellKind::producer;
  if (s == "injector") return WellKind::injector;
  throw ValidationError("unknown well kind \"" + s + "\"");
}

Json schedule_to_json(const ControlSchedule& schedule) {
  Json j;
  j["times_days"] = schedule.times;
  j["bhp_bar"] = Json::object();
  for (const auto& [name, v] : schedule.bhp) j["bhp_bar"][name] = v;
  j["injection_m3_per_day"] = Json::object();
  for (const auto& [name, v] : schedule.injection_rate) j["injection_m3_per_day"][name] = v;
  return j;
}

ControlSchedule schedule_from_json(const Json& j) {
  ControlSchedule s;
  s.times = get<std::vector<double>>(j, "times_days", "schedule");
  if (j.contains("bhp_bar"))
    for (const auto& [name, v] : j.at("bhp_bar").items()) s.bhp[name] = v.get<std::vector<double>>();
  if (j.contains("injection_m3_per_day"))
    for (const auto& [name, v] : j.at("injection_m3_per_day").items())
      s.injection_rate[name] = v.get<std::vector<double>>();
  return s;
}

ReservoirModel load_model(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw ValidationError("model: missing " + manifest_path.string());
  const Json m = io::read_json(manifest_path);
  if (m.value("format", std::string()) != kFormat) throw ValidationError("model: manifest format is not " + std::string(kFormat));
  if (m.value("version", 0) != kVersion) throw ValidationError("model: unsupported manifest version");

  ReservoirModel model;
  const Json& g = m.at("grid");
  auto& grid = model.grid;
  grid.nx = get<std::size_t>(g, "nx", "grid");
  grid.ny = get<std::size_t>(g, "ny", "grid");
  grid.nz = get<std::size_t>(g, "nz", "grid");
  grid.dx = get<double>(g, "dx", "grid");
  grid.dy = get<double>(g, "dy", "grid");
  grid.dz = get<double>(g, "dz", "grid");
  if (grid.nx < 1 || grid.ny < 1 || grid.nz < 1) throw ValidationError("grid: cell counts must be >= 1");
  const std::size_t n = grid.cells();

  const Json arrays = m.value("arrays", Json::object());
  auto file_for = [&](const std::string& name, const std::string& ext) {
    return dir / arrays.value(name, name + ext);
  };
  grid.active = io::read_u8(file_for("active", ".u8"), "active", n);
  grid.validate();

  auto read = [&](const std::string& name) {
    auto v = io::read_f64(file_for(name, ".f64"), name, n);
    require_finite(v, name);
    return v;
  };
  model.rock.porosity = read("porosity");
  model.rock.perm_x = read("perm_x");
  model.rock.perm_y = read("perm_y");
  model.rock.perm_z = read("perm_z");
  model.initial.pressure_bar = read("pressure");
  model.initial.sat_water = read("sat_water");

  for (const auto& w : m.value("wells", Json::array())) {
    Well well;
    well.name = get<std::string>(w, "name", "well");
    well.kind = well_kind_from_string(get<std::string>(w, "kind", "well " + well.name));
    well.radius = get<double>(w, "radius_m", "well " + well.name);
    for (const auto& p : w.at("trajectory")) {
      if (!p.is_array() || p.size() != 3) throw ValidationError("well " + well.name + ": trajectory points need 3 coordinates");
      well.trajectory.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
    }
    model.wells.push_back(std::move(well));
  }
  model.schedule = schedule_from_json(m.at("schedule"));
  model.validate();
  return model;
}

void save_model(const ReservoirModel& model, const fs::path& dir) {
  model.validate();
  fs::create_directories(dir);
  const auto& grid = model.grid;

  Json m;
  m["format"] = kFormat;
  m["version"] = kVersion;
  m["grid"] = {{"nx", grid.nx}, {"ny", grid.ny}, {"nz", grid.nz}, {"dx", grid.dx}, {"dy", grid.dy}, {"dz", grid.dz},
               {"order", "k,j,i (x fastest)"}};
  m["units"] = {{"length", "m"},       {"permeability", "mD"},  {"pressure", "bar"},
                {"time", "day"},       {"injection_rate", "m3/day"}, {"porosity", "fraction"},
                {"saturation", "fraction"}, {"byte_order", "little-endian"}};
  m["arrays"] = {{"active", "active.u8"},   {"porosity", "porosity.f64"},   {"perm_x", "perm_x.f64"},
                 {"perm_y", "perm_y.f64"},  {"perm_z", "perm_z.f64"},       {"pressure", "pressure.f64"},
                 {"sat_water", "sat_water.f64"}};
  Json wells = Json::array();
  for (const auto& w : model.wells) {
    Json traj = Json::array();
    for (const auto& p : w.trajectory) traj.push_back({p.x, p.y, p.z});
    wells.push_back({{"name", w.name}, {"kind", to_string(w.kind)}, {"radius_m", w.radius}, {"trajectory", traj}});
  }
  m["wells"] = wells;
  m["schedule"] = schedule_to_json(model.schedule);

  io::write_u8(dir / "active.u8", grid.active);
  io::write_f64(dir / "porosity.f64", model.rock.porosity);
  io::write_f64(dir / "perm_x.f64", model.rock.perm_x);
  io::write_f64(dir / "perm_y.f64", model.rock.perm_y);
  io::write_f64(dir / "perm_z.f64", model.rock.perm_z);
  io::write_f64(dir / "pressure.f64", model.initial.pressure_bar);
  io::write_f64(dir / "sat_water.f64", model.initial.sat_water);
  io::write_json(dir / "manifest.json", m);
}

}  // namespace nres::model
