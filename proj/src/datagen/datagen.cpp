#include "nres/datagen/datagen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numbers>
#include <thread>

#include <spdlog/spdlog.h>

#include "nres/error.hpp"
#include "nres/io.hpp"
#include "nres/model/model_io.hpp"
#include "nres/model/units.hpp"
#include "nres/rng.hpp"

namespace nres::datagen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kDatasetFormat = "nres-dataset";

// Stream ids keep the fields of one scenario independent.
enum Stream : std::uint64_t { kPorosity = 1, kPerm = 2, kPressure = 3, kSatWater = 4, kSchedule = 5, kInjection = 6,
                             kPermX = 7, kPermY = 8, kPermZ = 9 };

void smooth_axis(std::vector<double>& f, std::array<std::size_t, 3> shape, int axis, const std::vector<double>& kernel) {
  const std::size_t nz = shape[0], ny = shape[1], nx = shape[2];
  const std::size_t len = shape[static_cast<std::size_t>(axis)];
  const std::size_t stride = axis == 2 ? 1 : axis == 1 ? nx : nx * ny;
  const long half = static_cast<long>(kernel.size() / 2);
  std::vector<double> line(len), out(len);
  for (std::size_t k = 0; k < (axis == 0 ? 1 : nz); ++k)
    for (std::size_t j = 0; j < (axis == 1 ? 1 : ny); ++j)
      for (std::size_t i = 0; i < (axis == 2 ? 1 : nx); ++i) {
        const std::size_t base = (k * ny + j) * nx + i;
        for (std::size_t t = 0; t < len; ++t) line[t] = f[base + t * stride];
        for (std::size_t t = 0; t < len; ++t) {
          double acc = 0, wsum = 0;
          for (long o = -half; o <= half; ++o) {
            const long s = static_cast<long>(t) + o;
            if (s < 0 || s >= static_cast<long>(len)) continue;
            const double w = kernel[static_cast<std::size_t>(o + half)];
            acc += w * line[static_cast<std::size_t>(s)];
            wsum += w * w;
          }
          // Normalizing by the in-domain energy keeps the boundary variance level.
          out[t] = acc / std::sqrt(wsum);
        }
        for (std::size_t t = 0; t < len; ++t) f[base + t * stride] = out[t];
      }
}

}  // namespace

std::vector<double> correlated_noise(std::array<std::size_t, 3> shape, double sigma, double corr_len,
                                     std::uint64_t seed) {
  if (!(sigma >= 0) || !(corr_len >= 0)) throw ValidationError("correlated_noise: sigma and corr_len must be >= 0");
  const std::size_t n = shape[0] * shape[1] * shape[2];
  std::vector<double> f(n, 0.0);
  if (sigma == 0 || n == 0) return f;
  Philox rng(seed);
  for (auto& v : f) v = rng.normal();
  if (corr_len > 0) {
    const long half = static_cast<long>(std::ceil(3.0 * corr_len));
    std::vector<double> kernel(static_cast<std::size_t>(2 * half + 1));
    for (long o = -half; o <= half; ++o)
      kernel[static_cast<std::size_t>(o + half)] = std::exp(-0.5 * (o * o) / (corr_len * corr_len));
    for (int axis = 0; axis < 3; ++axis)
      if (shape[static_cast<std::size_t>(axis)] > 1) smooth_axis(f, shape, axis, kernel);
  }
  double mean = 0;
  for (double v : f) mean += v;
  mean /= static_cast<double>(n);
  double var = 0;
  for (auto& v : f) {
    v -= mean;
    var += v * v;
  }
  const double sd = std::sqrt(var / static_cast<double>(n));
  if (!(sd > 0)) return std::vector<double>(n, 0.0);
  for (auto& v : f) v *= sigma / sd;
  return f;
}

json NoiseConfig::to_json() const {
  return {{"porosity_sigma", porosity_sigma},
          {"log_perm_sigma", log_perm_sigma},
          {"log_perm_axis_sigma", log_perm_axis_sigma},
          {"pressure_sigma_bar", pressure_sigma_bar},
          {"sat_water_sigma", sat_water_sigma},
          {"corr_len", corr_len}};
}

NoiseConfig NoiseConfig::from_json(const json& j) {
  NoiseConfig c;
  c.porosity_sigma = j.value("porosity_sigma", c.porosity_sigma);
  c.log_perm_sigma = j.value("log_perm_sigma", c.log_perm_sigma);
  c.log_perm_axis_sigma = j.value("log_perm_axis_sigma", c.log_perm_axis_sigma);
  c.pressure_sigma_bar = j.value("pressure_sigma_bar", c.pressure_sigma_bar);
  c.sat_water_sigma = j.value("sat_water_sigma", c.sat_water_sigma);
  c.corr_len = j.value("corr_len", c.corr_len);
  return c;
}

model::ReservoirModel randomize_static(const model::ReservoirModel& base, const NoiseConfig& noise, std::uint64_t seed) {
  model::ReservoirModel m = base;
  const std::array<std::size_t, 3> shape{m.grid.nz, m.grid.ny, m.grid.nx};
  auto field = [&](double sigma, Stream s) { return correlated_noise(shape, sigma, noise.corr_len, Philox::derive(seed, s)); };

  const auto phi = field(noise.porosity_sigma, kPorosity);
  const auto lnk = field(noise.log_perm_sigma, kPerm);
  const double sa = noise.log_perm_axis_sigma;
  const auto lnx = field(sa, kPermX), lny = field(sa, kPermY), lnz = field(sa, kPermZ);
  const auto dp = field(noise.pressure_sigma_bar, kPressure);
  const auto dsw = field(noise.sat_water_sigma, kSatWater);
  for (std::size_t c = 0; c < m.grid.cells(); ++c) {
    if (noise.porosity_sigma > 0) m.rock.porosity[c] = std::clamp(m.rock.porosity[c] + phi[c], 0.01, 0.99);
    if (noise.log_perm_sigma > 0 || sa > 0) {
      m.rock.perm_x[c] *= std::exp(lnk[c] + lnx[c]);
      m.rock.perm_y[c] *= std::exp(lnk[c] + lny[c]);
      m.rock.perm_z[c] *= std::exp(lnk[c] + lnz[c]);
    }
    if (noise.pressure_sigma_bar > 0) m.initial.pressure_bar[c] += dp[c];
    if (noise.sat_water_sigma > 0) m.initial.sat_water[c] = std::clamp(m.initial.sat_water[c] + dsw[c], 0.0, 1.0);
  }
  return m;
}

ScheduleGenParams ScheduleGenParams::defaults(double p0, double horizon_days, double step_days) {
  ScheduleGenParams p;
  p.eps[0] = {0.0, 0.3 * p0};
  p.eps[1] = {2 * std::numbers::pi / 720.0, 2 * std::numbers::pi / 180.0};
  p.eps[2] = {0.0, 2 * std::numbers::pi};
  p.eps[3] = {0.0, 1.0 / 360.0};
  p.eps[4] = {0.4 * p0, 0.55 * p0};
  p.noise = {-0.02 * p0, 0.02 * p0};
  p.horizon_days = horizon_days;
  p.step_days = step_days;
  return p;
}

std::vector<double> ScheduleGenParams::times() const {
  const auto steps = static_cast<std::size_t>(std::llround(horizon_days / step_days));
  std::vector<double> t(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) t[k] = static_cast<double>(k) * step_days;
  return t;
}

void ScheduleGenParams::validate() const {
  for (std::size_t i = 0; i < eps.size(); ++i)
    if (!(eps[i].lo <= eps[i].hi)) throw ValidationError("schedule generator: range e" + std::to_string(i) + " has lo > hi");
  if (!(noise.lo <= noise.hi)) throw ValidationError("schedule generator: noise range has lo > hi");
  if (!(step_days > 0) || !(horizon_days >= step_days))
    throw ValidationError("schedule generator: need step_days > 0 and horizon_days >= step_days");
  const double r = horizon_days / step_days;
  if (std::abs(r - std::round(r)) > 1e-9) throw ValidationError("schedule generator: horizon must be a multiple of the step");
  // Lower bound of u over all admissible draws: the periodic term is >= 0.
  const double lower = std::min(0.0, eps[0].lo) + eps[4].lo + noise.lo;
  if (!(lower > 0)) throw ValidationError("schedule generator: ranges allow non-positive BHP");
}

json ScheduleGenParams::to_json() const {
  json e = json::array();
  for (const auto& r : eps) e.push_back({r.lo, r.hi});
  return {{"eps", e}, {"noise", {noise.lo, noise.hi}}, {"horizon_days", horizon_days}, {"step_days", step_days}};
}

ScheduleGenParams ScheduleGenParams::from_json(const json& j, const ScheduleGenParams& base) {
  ScheduleGenParams p = base;
  if (j.contains("eps")) {
    const auto& e = j.at("eps");
    if (e.size() != 5) throw ValidationError("schedule generator: eps needs 5 ranges");
    for (std::size_t i = 0; i < 5; ++i) p.eps[i] = {e[i][0].get<double>(), e[i][1].get<double>()};
  }
  if (j.contains("noise")) p.noise = {j["noise"][0].get<double>(), j["noise"][1].get<double>()};
  p.horizon_days = j.value("horizon_days", p.horizon_days);
  p.step_days = j.value("step_days", p.step_days);
  return p;
}

std::vector<double> bhp_schedule(const ScheduleGenParams& params, std::uint64_t seed) {
  params.validate();
  Philox rng(seed);
  std::array<double, 5> e{};
  for (std::size_t i = 0; i < 5; ++i) e[i] = rng.uniform(params.eps[i].lo, params.eps[i].hi);
  std::vector<double> u;
  for (double t : params.times()) {
    const double e5 = rng.uniform(params.noise.lo, params.noise.hi);
    const double v = e[0] * (1.0 - std::sin(e[1] * t + e[2])) / 2.0 * std::exp(-e[3] * t) + e[4] + e5;
    if (!(v > 0)) throw ValidationError("schedule generator produced non-positive BHP; check the ranges");
    u.push_back(v);
  }
  return u;
}

json GenConfig::to_json() const {
  return {{"noise", noise.to_json()},
          {"schedule", schedule.to_json()},
          {"injection_rate_m3_per_day", {injection_rate.lo, injection_rate.hi}},
          {"scenarios", scenarios},
          {"seed", seed},
          {"sim", {{"cfl_safety", sim.cfl_safety}, {"refinement", sim.refinement}, {"max_step_days", sim.max_step_days}}}};
}

GenConfig GenConfig::from_json(const json& j) {
  GenConfig c;
  if (j.contains("noise")) c.noise = NoiseConfig::from_json(j.at("noise"));
  if (j.contains("schedule")) c.schedule = ScheduleGenParams::from_json(j.at("schedule"), c.schedule);
  if (j.contains("injection_rate_m3_per_day")) {
    const auto& r = j.at("injection_rate_m3_per_day");
    if (!r.is_array() || r.size() != 2) throw ValidationError("gen-data: injection_rate_m3_per_day needs [lo, hi]");
    c.injection_rate = {r[0].get<double>(), r[1].get<double>()};
  }
  c.scenarios = j.value("scenarios", c.scenarios);
  c.seed = j.value("seed", c.seed);
  if (j.contains("sim")) {
    const auto& s = j.at("sim");
    c.sim.cfl_safety = s.value("cfl_safety", c.sim.cfl_safety);
    c.sim.refinement = s.value("refinement", c.sim.refinement);
    c.sim.max_step_days = s.value("max_step_days", c.sim.max_step_days);
  }
  return c;
}

model::ReservoirModel make_scenario_model(const model::ReservoirModel& base, const GenConfig& config,
                                          std::uint64_t scenario_seed) {
  model::ReservoirModel m = randomize_static(base, config.noise, scenario_seed);
  const auto times = config.schedule.times();
  m.schedule = {};
  m.schedule.times = times;
  std::uint64_t w = 0;
  for (const auto& well : m.wells) {
    const std::uint64_t s = Philox::derive(Philox::derive(scenario_seed, kSchedule), w++);
    if (well.kind == model::WellKind::producer) {
      auto u = bhp_schedule(config.schedule, s);
      for (auto& v : u) v = units::pa_to_bar(v);
      m.schedule.bhp[well.name] = std::move(u);
    } else {
      Philox rng(s, kInjection);
      const double q = rng.uniform(config.injection_rate.lo, config.injection_rate.hi);
      m.schedule.injection_rate[well.name] = std::vector<double>(times.size(), q);
    }
  }
  m.validate();
  return m;
}

std::string state_file_name(double t_days) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g.f64", t_days);
  return buf;
}

void write_state(const fs::path& path, const model::ReservoirState& s) {
  std::vector<double> all;
  all.reserve(3 * s.pressure.size());
  all.insert(all.end(), s.pressure.begin(), s.pressure.end());
  all.insert(all.end(), s.sat_water.begin(), s.sat_water.end());
  all.insert(all.end(), s.sat_oil.begin(), s.sat_oil.end());
  io::write_f64(path, all);
}

model::ReservoirState read_state(const fs::path& path, std::size_t cells) {
  auto all = io::read_f64(path, path.filename().string(), 3 * cells);
  model::ReservoirState s;
  s.pressure.assign(all.begin(), all.begin() + static_cast<long>(cells));
  s.sat_water.assign(all.begin() + static_cast<long>(cells), all.begin() + static_cast<long>(2 * cells));
  s.sat_oil.assign(all.begin() + static_cast<long>(2 * cells), all.end());
  return s;
}

BuildReport build_dataset(const model::ReservoirModel& base, const oracle::FluidProperties& fluid,
                          const GenConfig& config, const fs::path& out_dir) {
  if (config.scenarios < 1) throw ValidationError("build_dataset: need at least one scenario");
  base.validate();
  fluid.validate();
  config.schedule.validate();
  if (!(config.injection_rate.lo >= 0 && config.injection_rate.lo <= config.injection_rate.hi))
    throw ValidationError("build_dataset: injection rate range must satisfy 0 <= lo <= hi");
  fs::create_directories(out_dir);
  const auto times = config.schedule.times();

  struct Outcome {
    bool ok = false;
    std::string error;
  };
  std::vector<Outcome> outcomes(config.scenarios);
  std::vector<std::uint64_t> seeds(config.scenarios);
  for (std::size_t i = 0; i < config.scenarios; ++i) seeds[i] = Philox::derive(config.seed, i);
  auto name_of = [](std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scenario_%04zu", i);
    return std::string(buf);
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < config.scenarios; i = next++) {
      const fs::path dir = out_dir / name_of(i);
      try {
        fs::remove_all(dir);
        const auto m = make_scenario_model(base, config, seeds[i]);
        const auto run = oracle::run(m, fluid, times, config.sim);
        model::save_model(m, dir / "model");
        for (std::size_t t = 0; t < run.times.size(); ++t)
          write_state(dir / "states" / state_file_name(run.times[t]), run.states[t]);
        rates::write_rates_csv(dir / "rates.csv", run.rates);
        outcomes[i].ok = true;
      } catch (const Error& e) {
        outcomes[i].error = e.what();
        fs::remove_all(dir);
        spdlog::warn("scenario {} skipped: {}", name_of(i), e.what());
      }
    }
  };
  const unsigned jobs = std::max(1u, std::min<unsigned>(config.jobs, static_cast<unsigned>(config.scenarios)));
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  BuildReport report;
  json list = json::array();
  for (std::size_t i = 0; i < config.scenarios; ++i) {
    json entry = {{"name", name_of(i)}, {"seed", seeds[i]}, {"status", outcomes[i].ok ? "ok" : "skipped"}};
    if (outcomes[i].ok) {
      ++report.generated;
    } else {
      entry["error"] = outcomes[i].error;
      report.skipped.push_back(name_of(i));
    }
    list.push_back(entry);
  }
  json manifest = {{"format", kDatasetFormat},
                   {"version", 1},
                   {"rng", std::string(Philox::kAlgorithm)},
                   {"master_seed", config.seed},
                   {"config", config.to_json()},
                   {"fluid", oracle::to_json(fluid)},
                   {"report_times_days", times},
                   {"state_layout",
                    {{"channels", {"pressure", "sat_water", "sat_oil"}},
                     {"pressure_unit", "Pa"},
                     {"order", "channel-major, then k,j,i with x fastest"}}},
                   {"scenarios", list}};
  io::write_json(out_dir / "dataset.json", manifest);
  if (report.skipped.size() * 5 > config.scenarios)
    throw NumericalError("build_dataset: " + std::to_string(report.skipped.size()) + " of " +
                         std::to_string(config.scenarios) + " scenarios failed (more than 20%)");
  return report;
}

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.root = dir;
  if (!fs::exists(dir / "dataset.json")) throw ValidationError("dataset: missing " + (dir / "dataset.json").string());
  ds.manifest = io::read_json(dir / "dataset.json");
  if (ds.manifest.value("format", std::string()) != kDatasetFormat) throw ValidationError("dataset: unknown format");
  ds.fluid = oracle::fluid_from_json(ds.manifest.at("fluid"));
  const auto times = ds.manifest.at("report_times_days").get<std::vector<double>>();
  for (const auto& entry : ds.manifest.at("scenarios")) {
    if (entry.value("status", std::string()) != "ok") continue;
    ScenarioData sc;
    sc.name = entry.at("name").get<std::string>();
    sc.seed = entry.at("seed").get<std::uint64_t>();
    const fs::path sdir = dir / sc.name;
    sc.model = model::load_model(sdir / "model");
    sc.times = times;
    for (double t : times) sc.states.push_back(read_state(sdir / "states" / state_file_name(t), sc.model.grid.cells()));
    sc.rates = rates::read_rates_csv(sdir / "rates.csv");
    ds.scenarios.push_back(std::move(sc));
  }
  if (ds.scenarios.empty()) throw ValidationError("dataset: no usable scenarios in " + dir.string());
  return ds;
}

}  // namespace nres::datagen
