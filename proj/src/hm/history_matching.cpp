#include "nres/hm/history_matching.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "nres/autodiff/ops.hpp"
#include "nres/error.hpp"
#include "nres/io.hpp"
#include "nres/rng.hpp"
#include "nres/training/training.hpp"

namespace nres::hm {

using nlohmann::json;

std::vector<double> CorrectionSet::multipliers() const {
  std::vector<double> out;
  for (double v : log_conn.data()) out.push_back(std::exp(v));
  return out;
}

void HMConfig::validate() const {
  if (!(learning_rate > 0)) throw ValidationError("history-match: learning rate must be > 0");
  if (weight_decay < 0) throw ValidationError("history-match: weight decay must be >= 0");
  if (factor < 1) throw ValidationError("history-match: factor must be >= 1");
  if (init_std < 0) throw ValidationError("history-match: init std must be >= 0");
  if (max_iterations < 1) throw ValidationError("history-match: max iterations must be >= 1");
  if (!(q_ref > 0)) throw ValidationError("history-match: q_ref must be > 0");
  if (!optimize_rock && !optimize_connectivity) throw ValidationError("history-match: nothing to optimize");
}

json HMConfig::to_json() const {
  return {{"learning_rate", learning_rate},     {"weight_decay", weight_decay},
          {"factor", factor},                   {"init_std", init_std},
          {"max_iterations", max_iterations},   {"plateau_window", plateau_window},
          {"plateau_threshold", plateau_threshold}, {"time_weighting", time_weighting},
          {"q_ref", q_ref},                     {"adapt_intervals", adapt_intervals},
          {"chunk_intervals", chunk_intervals}, {"optimize_rock", optimize_rock},
          {"optimize_connectivity", optimize_connectivity}, {"seed", seed}};
}

HMConfig HMConfig::from_json(const json& j) {
  HMConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.factor = j.value("factor", c.factor);
  c.init_std = j.value("init_std", c.init_std);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.plateau_window = j.value("plateau_window", c.plateau_window);
  c.plateau_threshold = j.value("plateau_threshold", c.plateau_threshold);
  c.time_weighting = j.value("time_weighting", c.time_weighting);
  c.q_ref = j.value("q_ref", c.q_ref);
  c.adapt_intervals = j.value("adapt_intervals", c.adapt_intervals);
  c.chunk_intervals = j.value("chunk_intervals", c.chunk_intervals);
  c.optimize_rock = j.value("optimize_rock", c.optimize_rock);
  c.optimize_connectivity = j.value("optimize_connectivity", c.optimize_connectivity);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::array<std::size_t, 3> coarse_shape(const rom::SurrogateConfig& cfg, std::size_t factor) {
  const auto p = cfg.padded_zyx();
  std::array<std::size_t, 3> out{};
  for (std::size_t a = 0; a < 3; ++a) {
    if (factor == 0 || p[a] % factor != 0)
      throw ValidationError("history-match: padded extent " + std::to_string(p[a]) + " is not divisible by factor " +
                            std::to_string(factor));
    out[a] = p[a] / factor;
  }
  return out;
}

CorrectionSet init_corrections(const rom::SurrogateConfig& cfg, std::size_t producer_connections, std::size_t factor,
                               double std, std::uint64_t seed) {
  if (std < 0) throw ValidationError("history-match: init std must be >= 0");
  const auto cs = coarse_shape(cfg, factor);
  Philox rock_rng(seed, 61), conn_rng(seed, 62);
  std::vector<double> rock(rom::kStaticChannels * cs[0] * cs[1] * cs[2]);
  for (auto& v : rock) v = std * rock_rng.normal();
  std::vector<double> conn(producer_connections);
  for (auto& v : conn) v = std * conn_rng.normal();
  CorrectionSet c;
  c.rock_corr = Tensor::from({1, rom::kStaticChannels, cs[0], cs[1], cs[2]}, std::move(rock), true);
  c.log_conn = Tensor::from({producer_connections}, std::move(conn), true);
  return c;
}

Tensor apply_rock_correction(const Tensor& static_cube, const Tensor& mask, const Tensor& rock_corr,
                             std::size_t factor) {
  const Tensor up = ad::trilinear_upsample(rock_corr, {factor, factor, factor});
  if (up.shape() != static_cube.shape())
    throw ShapeError("history-match: upsampled correction " + ad::to_string(up.shape()) + " does not match statics " +
                     ad::to_string(static_cube.shape()));
  return static_cube + up * mask;
}

std::vector<double> time_weights(std::size_t T, bool enabled) {
  std::vector<double> w(T, 1.0);
  if (enabled)
    for (std::size_t t = 1; t <= T; ++t) w[t - 1] = 2.0 * static_cast<double>(t) / static_cast<double>(T + 1);
  return w;
}

namespace {

double squared_norm(const Tensor& t) {
  double s = 0;
  if (t.defined())
    for (double v : t.data()) s += v * v;
  return s;
}

double regularizer(const CorrectionSet& c, double wd) { return wd * (squared_norm(c.rock_corr) + squared_norm(c.log_conn)); }

}  // namespace

Tensor hm_loss(const std::vector<Tensor>& predicted, const std::vector<std::vector<std::array<double, 2>>>& historical,
               const std::vector<double>& weights, const CorrectionSet& corrections, double weight_decay,
               double q_ref) {
  if (predicted.size() != historical.size() || predicted.size() != weights.size())
    throw ValidationError("hm_loss: " + std::to_string(predicted.size()) + " predictions, " +
                          std::to_string(historical.size()) + " history rows, " + std::to_string(weights.size()) +
                          " weights");
  Tensor total;
  for (std::size_t t = 0; t < predicted.size(); ++t) {
    const auto& h = historical[t];
    if (predicted[t].shape() != ad::Shape{h.size(), 2})
      throw ShapeError("hm_loss: prediction shape " + ad::to_string(predicted[t].shape()) + " vs " +
                       std::to_string(h.size()) + " producers");
    std::vector<double> target;
    for (const auto& row : h)
      for (double q : row) {
        if (q < 0 || !std::isfinite(q)) throw ValidationError("hm_loss: historical rates must be finite and >= 0");
        target.push_back(std::log1p(q / q_ref));
      }
    const Tensor lp = ad::log1p(ad::scale(predicted[t], 1.0 / q_ref));
    const Tensor term = ad::scale(ad::mse(lp, Tensor::from({h.size(), 2}, std::move(target))), weights[t]);
    total = total.defined() ? total + term : term;
  }
  if (weight_decay > 0) {
    for (const Tensor* c : {&corrections.rock_corr, &corrections.log_conn}) {
      if (!c->defined() || c->numel() == 0) continue;
      const Tensor r = ad::scale(ad::sum(ad::square(*c)), weight_decay);
      total = total.defined() ? total + r : r;
    }
  }
  return total.defined() ? total : Tensor::scalar(0.0);
}

RatePredictor::RatePredictor(const rom::Surrogate& s, const model::ReservoirModel& m, const rates::ConnectionTable& t,
                             const oracle::FluidProperties& f)
    : surrogate(s), model(m), table(t), fluid(f), layout(rates::ProducerLayout::from(t)) {
  ad::NoGradGuard guard;
  inputs = rom::prepare_inputs(s.config(), m, t);
  z0 = s.encode_state(inputs.initial_state);
  for (const auto& u : inputs.controls) u_hat.push_back(s.encode_control(u));
}

Tensor RatePredictor::static_latent(const CorrectionSet& c, std::size_t factor) const {
  if (!c.rock_corr.defined()) return surrogate.encode_static(inputs.static_cube);
  return surrogate.encode_static(apply_rock_correction(inputs.static_cube, inputs.mask, c.rock_corr, factor));
}

Tensor RatePredictor::rates_at(const Tensor& cube, std::size_t report, const Tensor& multipliers) const {
  const auto& sched = model.schedule;
  const std::size_t k = rates::control_index_for_report(sched, inputs.times.at(report));
  return rom::producer_rates_from_cube(surrogate.config(), cube, layout,
                                       rates::producer_bhp(sched, layout.producers, k), fluid, multipliers);
}

RatePredictor::Chunk RatePredictor::predict_chunk(const CorrectionSet& c, const Tensor& theta_hat, const Tensor& z,
                                                  std::size_t first, std::size_t count) const {
  if (first + count > u_hat.size())
    throw ValidationError("history-match: window exceeds the schedule (" + std::to_string(first + count) + " > " +
                          std::to_string(u_hat.size()) + " intervals)");
  const std::vector<Tensor> u(u_hat.begin() + static_cast<long>(first), u_hat.begin() + static_cast<long>(first + count));
  const std::vector<std::size_t> steps(inputs.steps_per_interval.begin() + static_cast<long>(first),
                                       inputs.steps_per_interval.begin() + static_cast<long>(first + count));
  const auto zs = surrogate.integrate(z, u, theta_hat, steps);
  const Tensor mult = c.log_conn.defined() && c.log_conn.numel() > 0 ? ad::exp(c.log_conn) : Tensor{};
  Chunk out;
  for (std::size_t j = 1; j < zs.size(); ++j)
    out.rates.push_back(rates_at(surrogate.decode_state(zs[j], inputs.mask), first + j, mult));
  out.z_end = zs.back();
  return out;
}

std::vector<Tensor> RatePredictor::predict(const CorrectionSet& c, std::size_t factor, std::size_t intervals) const {
  return predict_chunk(c, static_latent(c, factor), z0, 0, intervals).rates;
}

rates::RateSeries RatePredictor::rate_series(const CorrectionSet& c, std::size_t factor, std::size_t intervals) const {
  ad::NoGradGuard guard;
  std::vector<Tensor> prod;
  const Tensor mult = c.log_conn.defined() && c.log_conn.numel() > 0 ? ad::exp(c.log_conn) : Tensor{};
  prod.push_back(rates_at(inputs.initial_state, 0, mult));
  for (auto& r : predict(c, factor, intervals)) prod.push_back(r);
  rates::RateSeries out;
  out.wells = table.wells;
  out.values.resize(out.wells.size());
  for (std::size_t t = 0; t < prod.size(); ++t) {
    const std::size_t k = rates::control_index_for_report(model.schedule, inputs.times[t]);
    std::vector<std::array<double, 2>> row(out.wells.size(), {0.0, 0.0});
    std::size_t p = 0;
    for (std::size_t w = 0; w < out.wells.size(); ++w) {
      if (table.kinds[w] == model::WellKind::producer) {
        row[w] = {prod[t].at(2 * p), prod[t].at(2 * p + 1)};
        ++p;
      } else {
        row[w] = {-model.schedule.injection_rate.at(out.wells[w]).at(k), 0.0};
      }
    }
    out.append(inputs.times[t], row);
  }
  return out;
}

std::vector<std::vector<std::array<double, 2>>> history_matrix(const rates::RateSeries& history,
                                                               const model::ControlSchedule& schedule,
                                                               const rates::ProducerLayout& layout, std::size_t T) {
  if (T + 1 > schedule.times.size())
    throw ValidationError("history-match: window of " + std::to_string(T) + " intervals exceeds the schedule");
  std::vector<std::vector<std::array<double, 2>>> out;
  for (std::size_t t = 1; t <= T; ++t) {
    const double time = schedule.times[t];
    const auto it = std::find_if(history.times.begin(), history.times.end(),
                                 [&](double h) { return std::abs(h - time) <= 1e-6 * std::max(1.0, std::abs(time)); });
    if (it == history.times.end())
      throw ValidationError("history-match: history has no record at t = " + std::to_string(time) + " days");
    const std::size_t i = static_cast<std::size_t>(it - history.times.begin());
    std::vector<std::array<double, 2>> row;
    for (const auto& name : layout.producers) {
      const std::size_t w = history.well_index(name);
      const std::array<double, 2> q{history.values[w][0][i], history.values[w][1][i]};
      for (double v : q)
        if (v < 0 || !std::isfinite(v))
          throw ValidationError("history-match: negative or non-finite historical rate for " + name + " at t = " +
                                std::to_string(time) + " days");
      row.push_back(q);
    }
    out.push_back(row);
  }
  return out;
}

bool plateaued(const std::vector<double>& curve, std::size_t window, double threshold) {
  if (window == 0 || curve.size() <= window) return false;
  const double before = *std::min_element(curve.begin(), curve.end() - static_cast<long>(window));
  const double now = *std::min_element(curve.begin(), curve.end());
  if (!(before > 0)) return true;
  return (before - now) / before < threshold;
}

namespace {

std::size_t covered_intervals(const rates::RateSeries& history, const model::ControlSchedule& schedule) {
  std::size_t T = 0;
  for (std::size_t t = 1; t < schedule.times.size(); ++t) {
    const double time = schedule.times[t];
    const bool found = std::any_of(history.times.begin(), history.times.end(), [&](double h) {
      return std::abs(h - time) <= 1e-6 * std::max(1.0, std::abs(time));
    });
    if (!found) break;
    T = t;
  }
  return T;
}

}  // namespace

HMResult adapt(const rom::Surrogate& surrogate, const model::ReservoirModel& model, const oracle::FluidProperties& fluid,
               const rates::RateSeries& history, const HMConfig& config) {
  config.validate();
  const auto weights_before = surrogate.flat_weights();

  // Inference-only deep copy: backward never reaches the surrogate weights.
  rom::Surrogate frozen(surrogate.config(), 0);
  frozen.load_flat_weights(weights_before);
  frozen.set_trainable(false);

  const auto table = rates::build_connections(model);
  const RatePredictor pred(frozen, model, table, fluid);
  const std::size_t T = config.adapt_intervals > 0 ? config.adapt_intervals : covered_intervals(history, model.schedule);
  if (T == 0) throw ValidationError("history-match: history covers no report interval");
  const auto hist = history_matrix(history, model.schedule, pred.layout, T);
  const auto w = time_weights(T, config.time_weighting);
  const std::size_t chunk = config.chunk_intervals == 0 ? T : std::min(config.chunk_intervals, T);

  HMResult result;
  result.intervals = T;
  CorrectionSet& c = result.corrections;
  c = init_corrections(frozen.config(), pred.producer_connections(), config.factor, config.init_std, config.seed);
  if (!config.optimize_rock) {
    for (auto& v : c.rock_corr.mutable_data()) v = 0.0;
    c.rock_corr.set_requires_grad(false);
  }
  if (!config.optimize_connectivity) {
    for (auto& v : c.log_conn.mutable_data()) v = 0.0;
    c.log_conn.set_requires_grad(false);
  }
  std::vector<Tensor> params{c.rock_corr, c.log_conn};
  training::AdamState adam;
  adam.lr = config.learning_rate;
  adam.weight_decay = config.weight_decay;

  for (std::size_t it = 0; it < config.max_iterations; ++it) {
    for (auto& p : params) p.zero_grad();
    double data = 0;
    Tensor z = pred.z0;
    for (std::size_t first = 0; first < T; first += chunk) {
      const std::size_t n = std::min(chunk, T - first);
      const Tensor theta = pred.static_latent(c, config.factor);
      auto piece = pred.predict_chunk(c, theta, z, first, n);
      const std::vector<std::vector<std::array<double, 2>>> h(hist.begin() + static_cast<long>(first),
                                                              hist.begin() + static_cast<long>(first + n));
      const std::vector<double> wt(w.begin() + static_cast<long>(first), w.begin() + static_cast<long>(first + n));
      const Tensor loss = hm_loss(piece.rates, h, wt, c, 0.0, config.q_ref);
      data += loss.item();
      if (loss.requires_grad()) loss.backward();
      z = piece.z_end.detach();
    }
    const double total = data + regularizer(c, config.weight_decay);
    if (!std::isfinite(total)) throw NumericalError("history-match: non-finite loss at iteration " + std::to_string(it));
    result.loss_curve.push_back(total);
    result.iterations = it + 1;
    if (it % 10 == 0) spdlog::debug("history-match: iteration {} loss {:.6g}", it, total);
    if (plateaued(result.loss_curve, config.plateau_window, config.plateau_threshold)) {
      result.plateaued = true;
      break;
    }
    adam_update(params, adam);
  }
  if (surrogate.flat_weights() != weights_before)
    throw ContractError("history-match: surrogate weights changed during adaptation");
  spdlog::info("history-match: {} iterations, loss {:.6g} -> {:.6g}{}", result.iterations, result.loss_curve.front(),
               result.loss_curve.back(), result.plateaued ? " (plateau)" : "");
  return result;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw ValidationError("correlation: series lengths differ or are empty");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  const double tiny = 1e-24 * std::max({1.0, ma * ma, mb * mb}) * n;
  const bool ca = saa <= tiny, cb = sbb <= tiny;
  if (ca && cb) return std::abs(ma - mb) <= 1e-12 * std::max({1.0, std::abs(ma), std::abs(mb)}) ? 1.0 : 0.0;
  if (ca || cb) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::vector<double> cumulative(const std::vector<double>& times, const std::vector<double>& rates) {
  if (times.size() != rates.size()) throw ValidationError("cumulative: times and rates differ in length");
  std::vector<double> out(times.size(), 0.0);
  for (std::size_t k = 1; k < times.size(); ++k) out[k] = out[k - 1] + rates[k] * (times[k] - times[k - 1]);
  return out;
}

namespace {

std::pair<std::vector<double>, std::vector<double>> window_series(const rates::RateSeries& s, const std::string& well,
                                                                  rates::Phase ph, double lo, double hi) {
  std::vector<double> t, q;
  const auto& v = s.series(well, ph);
  for (std::size_t i = 0; i < s.times.size(); ++i)
    if (s.times[i] >= lo - 1e-9 && s.times[i] <= hi + 1e-9) {
      t.push_back(s.times[i]);
      q.push_back(v[i]);
    }
  return {t, q};
}

}  // namespace

std::vector<WellFit> compare_cumulative(const rates::RateSeries& predicted, const rates::RateSeries& history,
                                        const std::vector<std::string>& producers, double t_lo, double t_hi) {
  std::vector<WellFit> out;
  for (const auto& well : producers) {
    WellFit f;
    f.well = well;
    for (auto ph : {rates::Phase::water, rates::Phase::oil}) {
      const auto [tp, qp] = window_series(predicted, well, ph, t_lo, t_hi);
      const auto [th, qh] = window_series(history, well, ph, t_lo, t_hi);
      if (tp != th) throw ValidationError("compare: report times of prediction and history differ for " + well);
      if (tp.size() < 2) throw ValidationError("compare: window holds fewer than two report times");
      const auto cp = cumulative(tp, qp), ch = cumulative(th, qh);
      const double r = correlation(cp, ch);
      const double err = std::abs(cp.back() - ch.back()) / std::max(std::abs(ch.back()), 1e-12);
      if (ph == rates::Phase::water) {
        f.r_water = r;
        f.err_water = err;
      } else {
        f.r_oil = r;
        f.err_oil = err;
      }
    }
    out.push_back(f);
  }
  return out;
}

double mean_cumulative_error(const std::vector<WellFit>& fits) {
  if (fits.empty()) return 0.0;
  double s = 0;
  for (const auto& f : fits) s += f.err_water + f.err_oil;
  return s / (2.0 * static_cast<double>(fits.size()));
}

namespace {

json fits_json(const std::vector<WellFit>& fits) {
  json j = json::array();
  for (const auto& f : fits)
    j.push_back({{"well", f.well},
                 {"r_water", f.r_water},
                 {"r_oil", f.r_oil},
                 {"cumulative_error_water", f.err_water},
                 {"cumulative_error_oil", f.err_oil}});
  return j;
}

}  // namespace

void write_result(const std::filesystem::path& dir, const HMResult& result, const HMConfig& config,
                  const rates::RateSeries& corrected, const rates::RateSeries& history,
                  const std::vector<std::string>& producers, double adapt_end_days, const json& extra) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "corrections");
  const auto& c = result.corrections;
  io::write_f64(dir / "corrections" / "rock_corr.f64", std::vector<double>(c.rock_corr.data().begin(), c.rock_corr.data().end()));
  io::write_f64(dir / "corrections" / "log_conn.f64", std::vector<double>(c.log_conn.data().begin(), c.log_conn.data().end()));
  io::write_json(dir / "corrections" / "manifest.json",
                 {{"format", "nres-corrections"},
                  {"version", 1},
                  {"rock_corr", {{"file", "rock_corr.f64"}, {"shape", c.rock_corr.shape()},
                                 {"channels", {"porosity", "ln_perm_x", "ln_perm_y", "ln_perm_z"}},
                                 {"units", "normalized"}}},
                  {"log_conn", {{"file", "log_conn.f64"}, {"shape", c.log_conn.shape()},
                                {"order", "producer connections in well order"}}},
                  {"factor", config.factor}});

  std::ostringstream os;
  os << "iteration,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, result.loss_curve[i]);
    os << buf;
  }
  io::write_text(dir / "loss_curve.csv", os.str());
  rates::write_rates_csv(dir / "corrected-rates.csv", corrected);
  rates::write_rates_csv(dir / "history-rates.csv", history);

  const double t0 = corrected.times.front();
  json summary = {{"initial_loss", result.loss_curve.front()},
                  {"final_loss", result.loss_curve.back()},
                  {"iterations", result.iterations},
                  {"plateaued", result.plateaued},
                  {"adapt_intervals", result.intervals},
                  {"adapt_end_days", adapt_end_days},
                  {"config", config.to_json()},
                  {"adaptation", fits_json(compare_cumulative(corrected, history, producers, t0, adapt_end_days))}};
  if (corrected.times.back() > adapt_end_days + 1e-9 && history.times.back() >= corrected.times.back() - 1e-9)
    summary["forecast"] = fits_json(compare_cumulative(corrected, history, producers, adapt_end_days, corrected.times.back()));
  for (auto it = extra.begin(); extra.is_object() && it != extra.end(); ++it) summary[it.key()] = it.value();
  io::write_json(dir / "summary.json", summary);
}

CorrectionSet read_corrections(const std::filesystem::path& dir) {
  const auto m = io::read_json(dir / "manifest.json");
  if (m.value("format", std::string()) != "nres-corrections") throw ValidationError("corrections: unknown format");
  CorrectionSet c;
  const auto rs = m.at("rock_corr").at("shape").get<ad::Shape>();
  const auto ls = m.at("log_conn").at("shape").get<ad::Shape>();
  c.rock_corr = Tensor::from(rs, io::read_f64(dir / "rock_corr.f64", "rock_corr", ad::numel(rs)));
  c.log_conn = Tensor::from(ls, io::read_f64(dir / "log_conn.f64", "log_conn", ad::numel(ls)));
  return c;
}

std::vector<double> read_loss_curve(const std::filesystem::path& path) {
  std::istringstream is(io::read_text(path));
  std::string line;
  std::getline(is, line);
  if (line != "iteration,loss") throw ValidationError("loss curve: unexpected header in " + path.string());
  std::vector<double> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = io::split_csv_line(line);
    if (f.size() != 2) throw ValidationError("loss curve: malformed line '" + line + "'");
    out.push_back(std::stod(f[1]));
  }
  return out;
}

}  // namespace nres::hm
