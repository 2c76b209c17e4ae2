#include "nres/cli/commands.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>

#include "nres/datagen/datagen.hpp"
#include "nres/datagen/twin.hpp"
#include "nres/hm/history_matching.hpp"
#include "nres/hm/twin_experiment.hpp"
#include "nres/io.hpp"
#include "nres/model/model_io.hpp"
#include "nres/oracle/simulator.hpp"
#include "nres/report/report.hpp"
#include "nres/rom/surrogate.hpp"
#include "nres/training/training.hpp"

namespace nres::cli {

namespace {

void flatten_into(const json& j, const std::string& prefix, json& out) {
  if (!j.is_object() || j.empty()) {
    out[prefix] = j;
    return;
  }
  for (auto it = j.begin(); it != j.end(); ++it)
    flatten_into(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

model::ReservoirModel load_reservoir(const fs::path& dir) {
  return dir.empty() ? datagen::build_twin_model() : model::load_model(dir);
}

rom::Surrogate load_surrogate(const fs::path& dir) {
  if (dir.empty() || !fs::exists(dir / "weights.json"))
    throw ModelMissingError("no trained surrogate at '" + dir.string() + "' (weights.json not found)");
  return rom::Surrogate::load(dir);
}

oracle::FluidProperties load_fluid(const fs::path& model_dir) {
  const auto p = model_dir / "fluid.json";
  return !model_dir.empty() && fs::exists(p) ? oracle::fluid_from_json(io::read_json(p)) : datagen::twin_fluid();
}

json twin_defaults() { return {{"source", "surrogate"}, {"well", "P1"}, {"multiplier", 0.3}}; }

json train_defaults() {
  json j = training::TrainConfig{}.to_json();
  // Filled from the dataset by fit.
  for (const char* k : {"grid_zyx", "pad_zyx", "normalization"}) j["architecture"].erase(k);
  return j;
}

}  // namespace

json flatten(const json& nested) {
  json out = json::object();
  if (!nested.is_object()) throw UsageError("configuration must be a JSON object");
  for (auto it = nested.begin(); it != nested.end(); ++it) flatten_into(it.value(), it.key(), out);
  return out;
}

json unflatten(const json& flat) {
  json out = json::object();
  for (auto it = flat.begin(); it != flat.end(); ++it) {
    json* node = &out;
    std::string key = it.key();
    std::size_t pos;
    while ((pos = key.find('.')) != std::string::npos) {
      node = &(*node)[key.substr(0, pos)];
      key = key.substr(pos + 1);
    }
    (*node)[key] = it.value();
  }
  return out;
}

json default_config() {
  return flatten({{"gen", datagen::GenConfig{}.to_json()},
                  {"train", train_defaults()},
                  {"hm", hm::HMConfig{}.to_json()},
                  {"twin", twin_defaults()}});
}

json resolve_config(const fs::path& path, const std::vector<std::string>& sections) {
  json flat = default_config();
  if (path.empty()) return flat;
  if (!fs::exists(path)) throw UsageError("config file '" + path.string() + "' does not exist");
  json user;
  try {
    user = io::read_json(path);
  } catch (const ValidationError& e) {
    throw UsageError(std::string("config file is not valid JSON: ") + e.what());
  }
  // Nested objects are accepted too and normalized to dotted keys.
  const json user_flat = flatten(user);
  for (auto& [key, value] : user_flat.items()) {
    const std::string head = key.substr(0, key.find('.'));
    if (std::find(sections.begin(), sections.end(), head) == sections.end()) continue;
    if (!flat.contains(key)) throw UsageError("unknown config key '" + key + "'");
    if (flat[key].type_name() != value.type_name() && !(flat[key].is_number() && value.is_number()))
      throw UsageError("config key '" + key + "' expects a " + std::string(flat[key].type_name()));
    flat[key] = value;
  }
  return flat;
}

json section(const json& flat, const std::string& name) {
  const json nested = unflatten(flat);
  return nested.contains(name) ? nested.at(name) : json::object();
}

json gen_data(const GenDataArgs& args, const json& config) {
  if (args.out.empty()) throw UsageError("gen-data needs --out");
  auto cfg = datagen::GenConfig::from_json(section(config, "gen"));
  cfg.jobs = std::max(1u, args.jobs);
  const auto base = load_reservoir(args.base);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = datagen::build_dataset(base, datagen::twin_fluid(), cfg, args.out);
  model::save_model(base, args.out / "base_model");
  return {{"generated", r.generated}, {"skipped", r.skipped}, {"seconds", seconds_since(t0)}};
}

json train(const TrainArgs& args, const json& config) {
  if (args.data.empty() || args.out.empty()) throw UsageError("train needs --data and --out");
  const auto cfg = training::TrainConfig::from_json(section(config, "train"));
  const auto data = datagen::load_dataset(args.data);
  const auto t0 = std::chrono::steady_clock::now();
  auto result = training::fit(data, cfg);
  const double secs = seconds_since(t0);
  result.surrogate.save(args.out);
  training::write_history_csv(args.out / "history.csv", result.history);
  io::write_json(args.out / "fluid.json", oracle::to_json(data.fluid));
  json validation = json::array();
  for (std::size_t v : result.validation_scenarios) {
    const auto f = training::evaluate_fidelity(result.surrogate, data.scenarios[v], data.fluid);
    validation.push_back({{"scenario", data.scenarios[v].name},
                          {"final_pressure_rel_error", f.pressure_rel_error.back()},
                          {"final_pressure_change_rel_error", f.pressure_change_rel_error.back()},
                          {"final_sat_water_mae", f.sat_water_mae.back()},
                          {"rollout_seconds", f.rollout_seconds}});
  }
  json summary = {{"training_seconds", secs},
                  {"best_epoch", result.best_epoch},
                  {"recalibrated_val_loss", result.recalibrated_val_loss},
                  {"train_scenarios", result.train_scenarios},
                  {"validation_scenarios", result.validation_scenarios},
                  {"validation", validation},
                  {"config", cfg.to_json()}};
  io::write_json(args.out / "train_summary.json", summary);
  return summary;
}

json simulate(const SimulateArgs& args) {
  if (args.out.empty()) throw UsageError("simulate needs --out");
  const auto m = load_reservoir(args.reservoir);
  std::vector<double> times;
  std::vector<model::ReservoirState> states;
  rates::RateSeries series;
  const auto t0 = std::chrono::steady_clock::now();
  if (args.oracle) {
    auto r = oracle::run(m, load_fluid(args.model), m.schedule.times);
    times = std::move(r.times);
    states = std::move(r.states);
    series = std::move(r.rates);
  } else {
    const auto s = load_surrogate(args.model);
    auto f = rom::simulate(s, m, load_fluid(args.model), m.schedule.times.size() - 1);
    times = std::move(f.times);
    states = std::move(f.states);
    series = std::move(f.rates);
  }
  const double secs = seconds_since(t0);
  fs::create_directories(args.out / "states");
  for (std::size_t t = 0; t < times.size(); ++t)
    datagen::write_state(args.out / "states" / datagen::state_file_name(times[t]), states[t]);
  rates::write_rates_csv(args.out / "rates.csv", series);
  json summary = {{"engine", args.oracle ? "oracle" : "surrogate"},
                  {"seconds", secs},
                  {"report_times_days", times},
                  {"cells", m.grid.cells()},
                  {"state_layout", "pressure (Pa), sat_water, sat_oil; one value per cell each"}};
  io::write_json(args.out / "run.json", summary);
  return summary;
}

json history_match(const HistoryMatchArgs& args, const json& config) {
  if (args.out.empty()) throw UsageError("history-match needs --out");
  if (!args.twin && args.history.empty()) throw UsageError("history-match needs --history or --twin");
  const auto s = load_surrogate(args.model);
  const auto fluid = load_fluid(args.model);
  const auto base = load_reservoir(args.reservoir);
  auto cfg = hm::HMConfig::from_json(section(config, "hm"));
  const std::size_t T = base.schedule.times.size() - 1;

  rates::RateSeries history;
  json extra = json::object();
  if (args.twin) {
    const json tw = section(config, "twin");
    const std::string src = tw.at("source").get<std::string>();
    if (src != "surrogate" && src != "oracle") throw UsageError("twin.source must be 'surrogate' or 'oracle'");
    const auto truth = hm::make_twin_truth(s, base, fluid, src == "oracle" ? hm::HistorySource::oracle : hm::HistorySource::surrogate,
                                           tw.at("well").get<std::string>(), tw.at("multiplier").get<double>());
    history = truth.history;
    // Forecast window of half the adaptation window.
    if (cfg.adapt_intervals == 0) cfg.adapt_intervals = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(2.0 * static_cast<double>(T) / 3.0)));
    extra["twin"] = {{"source", src},
                     {"well", truth.well},
                     {"connection", truth.connection},
                     {"true_multiplier", truth.multiplier}};
  } else {
    history = rates::read_rates_csv(args.history);
  }

  const auto t0 = std::chrono::steady_clock::now();
  const auto result = hm::adapt(s, base, fluid, history, cfg);
  const double secs = seconds_since(t0);
  const auto table = rates::build_connections(base);
  const hm::RatePredictor pred(s, base, table, fluid);
  const auto corrected = pred.rate_series(result.corrections, cfg.factor, T);
  if (args.twin) {
    const std::size_t c = extra["twin"]["connection"].get<std::size_t>();
    extra["twin"]["recovered_multiplier"] = result.corrections.multipliers().at(c);
  }
  extra["seconds"] = secs;
  hm::write_result(args.out, result, cfg, corrected, history, pred.layout.producers,
                   base.schedule.times.at(result.intervals), extra);
  return io::read_json(args.out / "summary.json");
}

json report(const fs::path& hm_dir, const fs::path& out) {
  if (hm_dir.empty() || out.empty()) throw UsageError("report needs --input and --out");
  return report::write_report(hm_dir, out);
}

}  // namespace nres::cli
