#include "nres/training/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "nres/autodiff/ops.hpp"
#include "nres/error.hpp"
#include "nres/io.hpp"
#include "nres/model/units.hpp"
#include "nres/rng.hpp"

namespace nres::training {

void adam_update(std::vector<Tensor>& params, AdamState& s) {
  if (s.m.empty()) {
    for (const auto& p : params) {
      s.m.emplace_back(p.numel(), 0.0);
      s.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (s.m.size() != params.size()) throw ContractError("adam_update: parameter count changed between steps");
  ++s.step;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.requires_grad()) continue;
    auto x = p.mutable_data();
    if (s.m[i].size() != x.size()) throw ShapeError("adam_update: moment shape differs from parameter");
    const bool has = p.has_grad();
    const auto g = has ? p.grad() : std::span<const double>{};
    auto& m = s.m[i];
    auto& v = s.v[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double gj = has ? g[j] : 0.0;
      m[j] = s.beta1 * m[j] + (1.0 - s.beta1) * gj;
      v[j] = s.beta2 * v[j] + (1.0 - s.beta2) * gj * gj;
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      x[j] -= s.lr * mh / (std::sqrt(vh) + s.eps);
      x[j] -= s.lr * s.weight_decay * x[j];
    }
  }
}

Tensor rollout_loss(const std::vector<Tensor>& predicted, const std::vector<Tensor>& truth, const Tensor& mask,
                    const std::array<double, rom::kStateChannels>& weights) {
  if (predicted.empty() || predicted.size() != truth.size())
    throw ValidationError("rollout_loss: " + std::to_string(predicted.size()) + " predicted vs " +
                          std::to_string(truth.size()) + " true states");
  double active = 0;
  for (double m : mask.data()) active += m;
  if (active <= 0) throw ValidationError("rollout_loss: mask has no active cells");
  const std::size_t C = rom::kStateChannels;
  const auto& shape = predicted[0].shape();
  std::vector<double> w(predicted[0].numel());
  const std::size_t vol = w.size() / C;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < vol; ++i)
      w[c * vol + i] = weights[c] * mask.data()[i] / (active * static_cast<double>(C * predicted.size()));
  const Tensor wt = Tensor::from(shape, std::move(w));
  Tensor total;
  for (std::size_t t = 0; t < predicted.size(); ++t) {
    if (predicted[t].shape() != truth[t].shape()) throw ShapeError("rollout_loss: state shapes differ at step " + std::to_string(t));
    const Tensor d = predicted[t] - truth[t];
    const Tensor term = ad::sum(ad::square(d) * wt);
    total = total.defined() ? total + term : term;
  }
  return total;
}

Tensor log_rate_loss(const std::vector<Tensor>& predicted, const std::vector<std::vector<std::array<double, 2>>>& truth,
                     double q_ref) {
  if (predicted.empty() || predicted.size() != truth.size())
    throw ValidationError("log_rate_loss: " + std::to_string(predicted.size()) + " predictions vs " +
                          std::to_string(truth.size()) + " true rate rows");
  Tensor total;
  for (std::size_t t = 0; t < predicted.size(); ++t) {
    std::vector<double> target;
    for (const auto& row : truth[t])
      for (double q : row) target.push_back(std::log1p(std::max(q, 0.0) / q_ref));
    const Tensor lp = ad::log1p(ad::scale(predicted[t], 1.0 / q_ref));
    const Tensor term = ad::mse(lp, Tensor::from(predicted[t].shape(), std::move(target)));
    total = total.defined() ? total + term : term;
  }
  return ad::scale(total, 1.0 / static_cast<double>(predicted.size()));
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
  if (!(learning_rate > 0)) throw ValidationError("train: learning rate must be > 0");
  if (weight_decay < 0) throw ValidationError("train: weight decay must be >= 0");
  if (!(validation_fraction > 0 && validation_fraction < 1))
    throw ValidationError("train: validation fraction must be in (0, 1)");
  for (double w : channel_weights)
    if (w < 0) throw ValidationError("train: channel weights must be >= 0");
  if (rate_loss_weight < 0) throw ValidationError("train: rate loss weight must be >= 0");
  if (!(rate_q_ref > 0)) throw ValidationError("train: rate q_ref must be > 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"rollout_intervals", rollout_intervals},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"channel_weights", channel_weights},
          {"rate_loss_weight", rate_loss_weight},
          {"rate_q_ref", rate_q_ref},
          {"seed", seed},
          {"validation_fraction", validation_fraction},
          {"architecture", architecture.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.rollout_intervals = j.value("rollout_intervals", c.rollout_intervals);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  if (j.contains("channel_weights")) c.channel_weights = j.at("channel_weights").get<std::array<double, 2>>();
  c.rate_loss_weight = j.value("rate_loss_weight", c.rate_loss_weight);
  c.rate_q_ref = j.value("rate_q_ref", c.rate_q_ref);
  c.seed = j.value("seed", c.seed);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  if (j.contains("architecture")) c.architecture = rom::SurrogateConfig::from_json(j.at("architecture"));
  return c;
}

namespace {

struct Moments {
  double sum = 0, sq = 0, n = 0;
  void add(double x) {
    sum += x;
    sq += x * x;
    n += 1;
  }
  double mean() const { return sum / n; }
  double std() const { return std::sqrt(std::max(sq / n - mean() * mean(), 0.0)); }
};

double safe_std(double s) { return s > 1e-12 ? s : 1.0; }

}  // namespace

rom::Normalization compute_normalization(const datagen::Dataset& data, const std::vector<std::size_t>& scenarios) {
  if (scenarios.empty()) throw ValidationError("normalization: no scenarios");
  std::array<Moments, rom::kStateChannels> st;
  std::array<Moments, rom::kStaticChannels> rk;
  double bhp_max = 0, rate_max = 0;
  for (std::size_t s : scenarios) {
    const auto& sc = data.scenarios.at(s);
    const auto& g = sc.model.grid;
    const auto& r = sc.model.rock;
    for (std::size_t c = 0; c < g.cells(); ++c) {
      if (!g.is_active(c)) continue;
      rk[0].add(r.porosity[c]);
      rk[1].add(std::log(std::max(r.perm_x[c], 1e-6)));
      rk[2].add(std::log(std::max(r.perm_y[c], 1e-6)));
      rk[3].add(std::log(std::max(r.perm_z[c], 1e-6)));
      for (const auto& state : sc.states) {
        st[0].add(state.pressure[c]);
        st[1].add(state.sat_water[c]);
      }
    }
    for (const auto& [w, v] : sc.model.schedule.bhp)
      for (double b : v) bhp_max = std::max(bhp_max, units::bar_to_pa(b));
    for (const auto& [w, v] : sc.model.schedule.injection_rate)
      for (double q : v) rate_max = std::max(rate_max, std::abs(q));
  }
  rom::Normalization n;
  for (std::size_t c = 0; c < rom::kStateChannels; ++c) {
    n.state_mean[c] = st[c].mean();
    n.state_std[c] = safe_std(st[c].std());
  }
  for (std::size_t c = 0; c < rom::kStaticChannels; ++c) {
    n.static_mean[c] = rk[c].mean();
    n.static_std[c] = safe_std(rk[c].std());
  }
  n.bhp_scale = bhp_max > 0 ? bhp_max : 1.0;
  n.rate_scale = rate_max > 0 ? rate_max : 1.0;
  return n;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_scenarios(std::size_t n, double fraction,
                                                                              std::uint64_t seed) {
  if (n == 0) throw ValidationError("train: dataset has no scenarios");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (n == 1) return {idx, idx};
  Philox rng(seed, 41);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.next_u64() % (i + 1)]);
  const std::size_t held =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))), 1, n - 1);
  std::vector<std::size_t> train(idx.begin(), idx.end() - static_cast<long>(held));
  std::vector<std::size_t> val(idx.end() - static_cast<long>(held), idx.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

std::vector<Tensor> target_cubes(const rom::SurrogateConfig& cfg, const datagen::ScenarioData& s) {
  std::vector<Tensor> out;
  for (const auto& st : s.states) out.push_back(rom::state_cube(cfg, s.model.grid, st));
  return out;
}

namespace {

struct Sample {
  rom::SurrogateInputs inputs;
  std::vector<Tensor> targets;
  rates::ProducerLayout layout;
  std::vector<std::vector<double>> bhp;                     // per report time, Pa
  std::vector<std::vector<std::array<double, 2>>> rates;    // per report time, producers
};

}  // namespace

TrainResult fit(const datagen::Dataset& data, const TrainConfig& config) {
  config.validate();
  if (data.scenarios.empty()) throw ValidationError("train: dataset has no scenarios");
  const auto& grid0 = data.scenarios[0].model.grid;
  for (const auto& s : data.scenarios)
    if (s.model.grid.nx != grid0.nx || s.model.grid.ny != grid0.ny || s.model.grid.nz != grid0.nz)
      throw ValidationError("train: scenario " + s.name + " has a different grid");

  TrainResult result;
  std::tie(result.train_scenarios, result.validation_scenarios) =
      split_scenarios(data.scenarios.size(), config.validation_fraction, config.seed);

  rom::SurrogateConfig arch = config.architecture;
  arch.set_grid(grid0);
  arch.norm = compute_normalization(data, result.train_scenarios);

  std::vector<Sample> samples(data.scenarios.size());
  std::size_t intervals = 0;
  for (std::size_t i = 0; i < data.scenarios.size(); ++i) {
    const auto& sc = data.scenarios[i];
    samples[i].inputs = rom::prepare_inputs(arch, sc.model, rates::build_connections(sc.model));
    samples[i].targets = target_cubes(arch, sc);
    const auto table = rates::build_connections(sc.model);
    samples[i].layout = rates::ProducerLayout::from(table);
    for (std::size_t t = 0; t < sc.times.size(); ++t) {
      const std::size_t k = rates::control_index_for_report(sc.model.schedule, sc.times[t]);
      samples[i].bhp.push_back(rates::producer_bhp(sc.model.schedule, samples[i].layout.producers, k));
      std::vector<std::array<double, 2>> row;
      if (config.rate_loss_weight > 0) {
        const std::size_t ti = static_cast<std::size_t>(
            std::find(sc.rates.times.begin(), sc.rates.times.end(), sc.times[t]) - sc.rates.times.begin());
        if (ti == sc.rates.times.size())
          throw ValidationError("train: scenario " + sc.name + " has no rates at t = " + std::to_string(sc.times[t]));
        for (const auto& p : samples[i].layout.producers) {
          const std::size_t w = sc.rates.well_index(p);
          row.push_back({sc.rates.values[w][0][ti], sc.rates.values[w][1][ti]});
        }
      }
      samples[i].rates.push_back(row);
    }
    const std::size_t avail = std::min(samples[i].inputs.controls.size(), samples[i].targets.size() - 1);
    const std::size_t want = config.rollout_intervals == 0 ? avail : std::min(config.rollout_intervals, avail);
    intervals = i == 0 ? want : std::min(intervals, want);
  }
  if (intervals == 0) throw ValidationError("train: scenarios have no report intervals");
  auto targets_of = [&](const Sample& s) {
    return std::vector<Tensor>(s.targets.begin(), s.targets.begin() + static_cast<long>(intervals + 1));
  };

  const oracle::FluidProperties& fluid = data.fluid;
  auto sample_loss = [&](const Sample& s, const std::vector<Tensor>& pred) {
    Tensor loss = rollout_loss(pred, targets_of(s), s.inputs.mask, config.channel_weights);
    if (config.rate_loss_weight > 0) {
      std::vector<Tensor> q;
      for (std::size_t t = 1; t < pred.size(); ++t)
        q.push_back(rom::producer_rates_from_cube(arch, pred[t], s.layout, s.bhp[t], fluid));
      const std::vector<std::vector<std::array<double, 2>>> truth(s.rates.begin() + 1,
                                                                  s.rates.begin() + static_cast<long>(pred.size()));
      loss = loss + ad::scale(log_rate_loss(q, truth, config.rate_q_ref), config.rate_loss_weight);
    }
    return loss;
  };

  rom::Surrogate model(arch, config.seed);
  auto params = model.parameters();
  AdamState adam;
  adam.lr = config.learning_rate;
  adam.weight_decay = config.weight_decay;

  double best = std::numeric_limits<double>::infinity();
  std::vector<double> best_weights;
  std::vector<std::size_t> order = result.train_scenarios;
  Philox shuffle_rng(config.seed, 43);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.next_u64() % i]);
    double train_sum = 0;
    for (std::size_t s : order) {
      const auto& sample = samples[s];
      for (auto& p : params) p.zero_grad();
      const auto pred = model.rollout(sample.inputs, intervals, ad::Mode::train);
      const Tensor loss = sample_loss(sample, pred);
      const double value = loss.item();
      if (!std::isfinite(value))
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) + ", scenario " +
                             data.scenarios[s].name);
      loss.backward();
      adam_update(params, adam);
      train_sum += value;
    }
    double val_sum = 0;
    {
      ad::NoGradGuard guard;
      const rom::Surrogate& frozen = model;
      for (std::size_t s : result.validation_scenarios) {
        const auto& sample = samples[s];
        const auto pred = frozen.rollout(sample.inputs, intervals);
        const double v = sample_loss(sample, pred).item();
        if (!std::isfinite(v))
          throw NumericalError("train: non-finite validation loss at epoch " + std::to_string(epoch) + ", scenario " +
                               data.scenarios[s].name);
        val_sum += v;
      }
    }
    EpochRecord rec{epoch, train_sum / static_cast<double>(order.size()),
                    val_sum / static_cast<double>(result.validation_scenarios.size())};
    result.history.push_back(rec);
    spdlog::info("train: epoch {} train {:.6g} val {:.6g}", epoch, rec.train_loss, rec.val_loss);
    if (rec.val_loss < best) {
      best = rec.val_loss;
      best_weights = model.flat_weights();
      result.best_epoch = epoch;
    }
  }
  model.load_flat_weights(best_weights);
  std::vector<const rom::SurrogateInputs*> calib;
  for (std::size_t s : result.train_scenarios) calib.push_back(&samples[s].inputs);
  model.recalibrate_batch_norm(calib, intervals);
  {
    ad::NoGradGuard guard;
    const rom::Surrogate& frozen = model;
    double v = 0;
    for (std::size_t s : result.validation_scenarios)
      v += sample_loss(samples[s], frozen.rollout(samples[s].inputs, intervals)).item();
    result.recalibrated_val_loss = v / static_cast<double>(result.validation_scenarios.size());
    spdlog::info("train: best epoch {}, validation loss {:.6g} after batch-norm recalibration", result.best_epoch,
                 result.recalibrated_val_loss);
  }
  result.surrogate = std::move(model);
  return result;
}

Fidelity evaluate_fidelity(const rom::Surrogate& surrogate, const datagen::ScenarioData& sc,
                           const oracle::FluidProperties& fluid) {
  if (sc.times.size() < 2) throw ValidationError("evaluate: scenario " + sc.name + " has no report interval");
  const auto t0 = std::chrono::steady_clock::now();
  const auto f = rom::simulate(surrogate, sc.model, fluid, sc.times.size() - 1);
  Fidelity out;
  out.rollout_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto& grid = sc.model.grid;
  for (std::size_t t = 1; t < sc.times.size(); ++t) {
    double num = 0, den = 0, dden = 0, mae = 0, n = 0;
    for (std::size_t c = 0; c < grid.cells(); ++c) {
      if (!grid.is_active(c)) continue;
      const double p = sc.states[t].pressure[c];
      const double e = f.states[t].pressure[c] - p;
      const double d = p - sc.states[0].pressure[c];
      num += e * e;
      den += p * p;
      dden += d * d;
      mae += std::abs(f.states[t].sat_water[c] - sc.states[t].sat_water[c]);
      n += 1;
    }
    out.times.push_back(sc.times[t]);
    out.pressure_rel_error.push_back(std::sqrt(num / den));
    out.pressure_change_rel_error.push_back(dden > 0 ? std::sqrt(num / dden) : 0.0);
    out.sat_water_mae.push_back(mae / n);
  }
  return out;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss\n";
  char buf[96];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_loss);
    os << buf;
  }
  io::write_text(path, os.str());
}

std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path) {
  std::istringstream is(io::read_text(path));
  std::string line;
  std::getline(is, line);
  if (line != "epoch,train_loss,val_loss") throw ValidationError("history: unexpected header in " + path.string());
  std::vector<EpochRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = io::split_csv_line(line);
    if (f.size() != 3) throw ValidationError("history: malformed line '" + line + "'");
    out.push_back({std::stoul(f[0]), std::stod(f[1]), std::stod(f[2])});
  }
  return out;
}

}  // namespace nres::training
