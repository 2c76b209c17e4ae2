#include "nres/report/report.hpp"

#include <fmt/format.h>

#include <algorithm>

#include "nres/error.hpp"
#include "nres/hm/history_matching.hpp"
#include "nres/io.hpp"
#include "nres/rates/rates.hpp"
#include "nres/report/svg.hpp"

namespace nres::report {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kHistoryColor = "#222222";
constexpr const char* kWaterColor = "#1f77b4";
constexpr const char* kOilColor = "#2ca02c";

json fit_json(const hm::WellFit& f) {
  return {{"r_water", f.r_water},
          {"r_oil", f.r_oil},
          {"cumulative_error_water", f.err_water},
          {"cumulative_error_oil", f.err_oil}};
}

}  // namespace

json write_report(const fs::path& hm_dir, const fs::path& out_dir) {
  for (const char* f : {"summary.json", "loss_curve.csv", "corrected-rates.csv", "history-rates.csv"})
    if (!fs::exists(hm_dir / f)) throw ValidationError("report: " + (hm_dir / f).string() + " is missing");
  const json summary = io::read_json(hm_dir / "summary.json");
  const auto loss = hm::read_loss_curve(hm_dir / "loss_curve.csv");
  const auto corrected = rates::read_rates_csv(hm_dir / "corrected-rates.csv");
  const auto history = rates::read_rates_csv(hm_dir / "history-rates.csv");
  if (loss.empty()) throw ValidationError("report: empty loss curve");
  if (corrected.times.empty()) throw ValidationError("report: no corrected rates");
  const double t_end = summary.at("adapt_end_days").get<double>();
  std::vector<std::string> producers;
  for (const auto& f : summary.at("adaptation")) producers.push_back(f.at("well").get<std::string>());

  const double t0 = corrected.times.front(), t_last = corrected.times.back();
  const auto adapt = hm::compare_cumulative(corrected, history, producers, t0, t_end);
  const bool has_forecast = t_last > t_end + 1e-9 && history.times.back() >= t_last - 1e-9;
  const auto forecast =
      has_forecast ? hm::compare_cumulative(corrected, history, producers, t_end, t_last) : std::vector<hm::WellFit>{};

  fs::create_directories(out_dir);

  // Cumulative rates over the whole horizon, adaptation/prediction split marked.
  std::vector<Panel> cum_panels;
  for (const auto& w : producers)
    for (auto ph : {rates::Phase::water, rates::Phase::oil}) {
      Panel p;
      p.title = fmt::format("{} cumulative {}", w, rates::to_string(ph));
      p.x_label = "time (days)";
      p.y_label = "volume (m3)";
      p.vertical_lines = {t_end};
      const auto hw = history.window(t0, t_last);
      p.series.push_back({"history", hw.times, hm::cumulative(hw.times, hw.series(w, ph)), kHistoryColor});
      p.series.push_back({"corrected", corrected.times, hm::cumulative(corrected.times, corrected.series(w, ph)),
                          ph == rates::Phase::water ? kWaterColor : kOilColor, true});
      cum_panels.push_back(std::move(p));
    }
  io::write_text(out_dir / "cumulative_rates.svg", render_svg(cum_panels, 2));

  // Per-well scatter of predicted against historical cumulative volumes.
  std::vector<Panel> corr_panels;
  for (std::size_t i = 0; i < producers.size(); ++i) {
    const auto& w = producers[i];
    Panel p;
    p.title = fmt::format("{}  R water {:.3f}  R oil {:.3f}", w, adapt[i].r_water, adapt[i].r_oil);
    p.x_label = "historical cumulative (m3)";
    p.y_label = "predicted cumulative (m3)";
    p.diagonal = true;
    const auto hw = history.window(t0, t_end), cw = corrected.window(t0, t_end);
    for (auto ph : {rates::Phase::water, rates::Phase::oil})
      p.series.push_back({rates::to_string(ph), hm::cumulative(hw.times, hw.series(w, ph)),
                          hm::cumulative(cw.times, cw.series(w, ph)),
                          ph == rates::Phase::water ? kWaterColor : kOilColor, false, true});
    corr_panels.push_back(std::move(p));
  }
  io::write_text(out_dir / "correlation.svg", render_svg(corr_panels, std::min<std::size_t>(3, producers.size())));

  Panel lp;
  lp.title = "history-matching loss";
  lp.x_label = "iteration";
  lp.y_label = "loss";
  lp.log_y = true;
  Series ls{"", {}, loss, kWaterColor};
  for (std::size_t i = 0; i < loss.size(); ++i) ls.x.push_back(static_cast<double>(i));
  lp.series.push_back(std::move(ls));
  io::write_text(out_dir / "loss.svg", render_svg({lp}));

  json wells = json::array();
  double rw = 0, ro = 0;
  for (std::size_t i = 0; i < producers.size(); ++i) {
    json entry = {{"well", producers[i]}, {"adaptation", fit_json(adapt[i])}};
    if (has_forecast) entry["forecast"] = fit_json(forecast[i]);
    wells.push_back(entry);
    rw += adapt[i].r_water;
    ro += adapt[i].r_oil;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, producers.size()));
  double min_r = producers.empty() ? 0.0 : 1.0;
  for (const auto& f : adapt) min_r = std::min({min_r, f.r_water, f.r_oil});
  json metrics = {{"schema_version", 1},
                  {"adapt_end_days", t_end},
                  {"initial_loss", loss.front()},
                  {"final_loss", loss.back()},
                  {"loss_ratio", loss.front() > 0 ? loss.back() / loss.front() : 0.0},
                  {"iterations", loss.size()},
                  {"wells", wells},
                  {"mean_r_water", rw / n},
                  {"mean_r_oil", ro / n},
                  {"min_r", min_r},
                  {"cumulative_error_adaptation", hm::mean_cumulative_error(adapt)}};
  if (has_forecast) metrics["cumulative_error_forecast"] = hm::mean_cumulative_error(forecast);
  io::write_json(out_dir / "metrics.json", metrics);
  return metrics;
}

}  // namespace nres::report
