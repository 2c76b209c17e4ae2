// nres: dataset generation, surrogate training, simulation, history matching
// and reporting.
//
// Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical
// failure. Failures print one line "nres: <TAG>: <message>" to stderr.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <iostream>
#include <string>

#include "nres/cli/commands.hpp"

namespace {

using nres::cli::json;

int fail(int code, const char* tag, std::string message) {
  for (char& c : message)
    if (c == '\n' || c == '\r') c = ' ';
  std::cerr << "nres: " << tag << ": " << message << std::endl;
  return code;
}

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

json restrict(const json& flat, const std::vector<std::string>& sections) {
  json out = json::object();
  for (auto it = flat.begin(); it != flat.end(); ++it)
    for (const auto& s : sections)
      if (it.key().rfind(s + ".", 0) == 0) out[it.key()] = it.value();
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable reservoir proxy simulation and history matching"};
  app.require_subcommand(0, 1);
  bool print_all = false;
  std::string log_level = "info";
  app.add_flag("--print-config", print_all, "Print every configuration default as flat dotted keys and exit");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  std::string config_path;
  bool print_config = false;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON file with flat dotted keys overriding the defaults");
    cmd->add_flag("--print-config", print_config, "Print the resolved configuration of this command and exit");
  };

  nres::cli::GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a training dataset with the simulator");
  add_common(gen_cmd);
  gen_cmd->add_option("--out", gen.out, "Dataset directory to create");
  gen_cmd->add_option("--base", gen.base, "Base reservoir model directory (default: built-in twin)");
  gen_cmd->add_option("--jobs", gen.jobs, "Scenarios simulated in parallel")->check(CLI::PositiveNumber);
  std::size_t scenarios = 0;
  gen_cmd->add_option("--scenarios", scenarios, "Override gen.scenarios");

  nres::cli::TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Fit the surrogate to a dataset");
  add_common(train_cmd);
  train_cmd->add_option("--data", tr.data, "Dataset directory");
  train_cmd->add_option("--out", tr.out, "Model directory to write");
  std::size_t epochs = 0;
  train_cmd->add_option("--epochs", epochs, "Override train.epochs");

  nres::cli::SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Forecast states and rates for a reservoir model");
  sim_cmd->add_option("--model", sim.model, "Trained surrogate directory");
  sim_cmd->add_option("--reservoir", sim.reservoir, "Reservoir model directory (default: built-in twin)");
  sim_cmd->add_option("--out", sim.out, "Output directory");
  sim_cmd->add_flag("--oracle", sim.oracle, "Run the finite-difference simulator instead of the surrogate");

  nres::cli::HistoryMatchArgs hmargs;
  auto* hm_cmd = app.add_subcommand("history-match", "Adapt rock and connectivity corrections to production history");
  add_common(hm_cmd);
  hm_cmd->add_option("--model", hmargs.model, "Trained surrogate directory");
  hm_cmd->add_option("--out", hmargs.out, "hm_result directory to write");
  hm_cmd->add_option("--reservoir", hmargs.reservoir, "Base reservoir model directory (default: built-in twin)");
  hm_cmd->add_option("--history", hmargs.history, "Historical rates CSV (time_days,well,phase,rate_m3_per_day)");
  hm_cmd->add_flag("--twin", hmargs.twin,
                   "Use the twin truth as history: permeability anomaly plus one scaled connection (twin.* keys); "
                   "with hm.adapt_intervals = 0 the first two thirds of the schedule are adapted");
  std::string twin_source;
  hm_cmd->add_option("--twin-source", twin_source, "Override twin.source")->check(CLI::IsMember({"surrogate", "oracle"}));

  std::string report_in, report_out;
  auto* report_cmd = app.add_subcommand("report", "Plots and metrics for an hm_result directory");
  report_cmd->add_option("--input", report_in, "hm_result directory");
  report_cmd->add_option("--out", report_out, "Report directory to write");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(1, "E_USAGE", e.what());
  }
  spdlog::set_default_logger(spdlog::stderr_color_mt("nres"));
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (print_all) {
      print(nres::cli::default_config());
      return 0;
    }
    auto resolved = [&](const std::vector<std::string>& sections) {
      return nres::cli::resolve_config(config_path, sections);
    };
    json out;
    if (*gen_cmd) {
      auto cfg = resolved({"gen"});
      if (scenarios > 0) cfg["gen.scenarios"] = scenarios;
      if (print_config) return print(restrict(cfg, {"gen"})), 0;
      out = nres::cli::gen_data(gen, cfg);
    } else if (*train_cmd) {
      auto cfg = resolved({"train"});
      if (epochs > 0) cfg["train.epochs"] = epochs;
      if (print_config) return print(restrict(cfg, {"train"})), 0;
      out = nres::cli::train(tr, cfg);
    } else if (*sim_cmd) {
      out = nres::cli::simulate(sim);
    } else if (*hm_cmd) {
      auto cfg = resolved({"hm", "twin"});
      if (!twin_source.empty()) cfg["twin.source"] = twin_source;
      if (print_config) return print(restrict(cfg, {"hm", "twin"})), 0;
      out = nres::cli::history_match(hmargs, cfg);
    } else if (*report_cmd) {
      out = nres::cli::report(report_in, report_out);
    } else {
      std::cout << app.help();
      return 1;
    }
    print(out);
    return 0;
  } catch (const nres::cli::UsageError& e) {
    return fail(1, "E_USAGE", e.what());
  } catch (const nres::cli::ModelMissingError& e) {
    return fail(2, "E_MODEL_MISSING", e.what());
  } catch (const nres::ValidationError& e) {
    return fail(2, "E_DATA", e.what());
  } catch (const nres::NumericalError& e) {
    return fail(3, "E_NUMERICAL", e.what());
  } catch (const nres::ContractError& e) {
    return fail(3, "E_CONTRACT", e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(2, "E_IO", e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(2, "E_DATA", e.what());
  } catch (const std::exception& e) {
    return fail(3, "E_INTERNAL", e.what());
  }
}
