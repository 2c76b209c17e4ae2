// Acceptance suite: one PASS/FAIL line per criterion on stdout, details on the
// following indented lines. Exit code 0 only if every selected criterion passes.

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <optional>
#include <set>
#include <string>

#include "../test_util.hpp"
#include "nres/autodiff/grad_check.hpp"
#include "nres/autodiff/ops.hpp"
#include "nres/datagen/datagen.hpp"
#include "nres/datagen/twin.hpp"
#include "nres/hm/history_matching.hpp"
#include "nres/hm/twin_experiment.hpp"
#include "nres/io.hpp"
#include "nres/model/model_io.hpp"
#include "nres/model/units.hpp"
#include "nres/oracle/simulator.hpp"
#include "nres/rates/rates.hpp"
#include "nres/rom/surrogate.hpp"
#include "nres/training/training.hpp"

using namespace nres;
using namespace nres::ad;
namespace fs = std::filesystem;
using nres::testing::random_away_from_zero;
using nres::testing::random_tensor;
using nres::testing::small_config;
using nres::testing::toy_model;

namespace {

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::vector<std::string> details;
  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    details.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
  void note(const std::string& what) { details.push_back("     " + what); }
};

std::string fmtd(const char* f, auto... v) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, v...);
  return buf;
}

void randomize(Tensor t, std::uint64_t seed, double scale) {
  Philox rng(seed, 3);
  for (auto& v : t.mutable_data()) v = scale * rng.normal();
}

// ---------------------------------------------------------------- 1: gradients

Outcome gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  const double tol = 1e-4;
  std::map<std::string, double> worst;
  auto check = [&](const std::string& name, ScalarFunction f, std::vector<Tensor> inputs, double eps = 1e-5) {
    worst[name] = std::max(worst[name], grad_check(f, inputs, eps));
  };
  const auto m = toy_model();
  const auto table = rates::build_connections(m);
  const oracle::FluidProperties fluid;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor w = random_tensor({2, 3, 2}, seed + 1000);
    auto project = [w](const Tensor& t) { return sum(mul(t, w)); };
    check("add", [&](auto& v) { return project(add(v[0], v[1])); },
          {random_tensor({2, 3, 2}, seed), random_tensor({2, 1, 2}, seed + 1)});
    check("sub", [&](auto& v) { return project(sub(v[0], v[1])); },
          {random_tensor({2, 3, 2}, seed), random_tensor({2, 3}, seed + 1)});
    check("mul", [&](auto& v) { return project(mul(v[0], v[1])); },
          {random_tensor({2, 3, 2}, seed), random_tensor({1, 3, 1}, seed + 1)});
    check("scale", [&](auto& v) { return project(scale(v[0], -2.5)); }, {random_tensor({2, 3, 2}, seed)});
    check("add_scalar", [&](auto& v) { return project(add_scalar(v[0], 3.0)); }, {random_tensor({2, 3, 2}, seed)});
    check("exp", [&](auto& v) { return project(ad::exp(v[0])); }, {random_tensor({2, 3, 2}, seed, 0.5)});
    check("log1p", [&](auto& v) { return project(ad::log1p(ad::exp(v[0]))); }, {random_tensor({2, 3, 2}, seed)});
    check("square", [&](auto& v) { return project(square(v[0])); }, {random_tensor({2, 3, 2}, seed)});
    check("pow", [&](auto& v) { return project(pow_scalar(ad::exp(v[0]), 2.5)); }, {random_tensor({2, 3, 2}, seed, 0.3)});
    check("clamp", [&](auto& v) { return project(clamp(v[0], -0.03, 0.04)); }, {random_away_from_zero({2, 3, 2}, seed)});
    check("relu", [&](auto& v) { return project(relu(v[0])); }, {random_away_from_zero({2, 3, 2}, seed)});
    check("leaky_relu", [&](auto& v) { return project(leaky_relu(v[0], 0.01)); }, {random_away_from_zero({2, 3, 2}, seed)});
    check("sum/mean", [&](auto& v) { return mean(square(v[0])) + sum(v[0]); }, {random_tensor({2, 3, 2}, seed)});
    check("mse", [&](auto& v) { return mse(v[0], v[1]); }, {random_tensor({2, 3, 2}, seed), random_tensor({2, 3, 2}, seed + 5)});
    check("reshape", [&](auto& v) { return project(reshape(v[0], {2, 3, 2})); }, {random_tensor({3, 4}, seed)});
    check("concat", [&](auto& v) { return project(concat({v[0], v[1]}, 1)); },
          {random_tensor({2, 1, 2}, seed), random_tensor({2, 2, 2}, seed + 1)});
    check("slice", [&](auto& v) { return project(slice(v[0], 1, 1, 4)); }, {random_tensor({2, 5, 2}, seed)});
    check("pad", [&](auto& v) { return project(pad(v[0], 2, 1, 0)); }, {random_tensor({2, 3, 1}, seed)});
    check("gather", [&](auto& v) { return sum(square(gather(v[0], {0, 5, 5, 11}))); }, {random_tensor({2, 3, 2}, seed)});
    check("segment_sum", [&](auto& v) { return sum(square(segment_sum(v[0], {0, 2, 2, 1, 0}, 3))); },
          {random_tensor({5}, seed)});
    check("conv3d", [&](auto& v) { return sum(square(conv3d(v[0], v[1], v[2], {1, 2, 1}, {1, 1, 0}))); },
          {random_tensor({1, 2, 3, 4, 3}, seed), random_tensor({2, 2, 3, 3, 1}, seed + 1, 0.4), random_tensor({2}, seed + 2)});
    check("voxel_shuffle", [&](auto& v) { return sum(mul(voxel_shuffle(v[0], 2), v[1])); },
          {random_tensor({1, 8, 1, 2, 1}, seed), random_tensor({1, 1, 2, 4, 2}, seed + 1)});
    {
      Tensor mix = random_tensor({2, 3, 2, 2}, seed + 7);
      auto st = BatchNormState::identity(3);
      check("batch_norm/train", [&](auto& v) { return sum(mul(batch_norm(v[0], v[1], v[2], st, Mode::train), mix)); },
            {random_tensor({2, 3, 2, 2}, seed, 2.0), random_tensor({3}, seed + 1), random_tensor({3}, seed + 2)});
      check("batch_norm/eval", [&](auto& v) { return sum(mul(batch_norm(v[0], v[1], v[2], st, Mode::eval), mix)); },
            {random_tensor({2, 3, 2, 2}, seed, 2.0), random_tensor({3}, seed + 1), random_tensor({3}, seed + 2)});
    }
    check("trilinear_upsample", [&](auto& v) { return sum(mul(trilinear_upsample(v[0], {2, 3, 1}), v[1])); },
          {random_tensor({1, 1, 2, 2, 3}, seed), random_tensor({1, 1, 4, 6, 3}, seed + 1)});

    // Composite paths through a small surrogate with a live right-hand side.
    rom::Surrogate s(small_config(m.grid), seed + 1);
    randomize(s.rhs.layers.back().weight, seed + 50, 0.2);
    const auto in = rom::prepare_inputs(s.config(), m, table);
    {
      const Tensor target = random_tensor({1, s.config().latent_channels, 1, 2, 2}, seed + 60);
      std::vector<Tensor> leaves{random_tensor({1, 2, 4, 8, 8}, seed + 61, 0.5), s.enc_state.layers[0].weight};
      for (const auto& l : s.enc_state.layers)
        if (l.norm) leaves.push_back(l.gamma);
      check("conv stack", [&](auto& v) { return mse(s.encode_state(v[0], Mode::train), target); }, leaves, 1e-6);
    }
    {
      const Tensor z = random_tensor({1, s.config().latent_channels, 1, 2, 2}, seed + 62);
      const Tensor target = random_tensor({1, 2, 4, 8, 8}, seed + 63, 0.5);
      check("decoder + voxel shuffle", [&](auto& v) { return mse(s.decode_state(v[0], in.mask, Mode::eval), target); },
            {z, s.decoder.layers.back().weight}, 1e-6);
    }
    {
      const Tensor target = random_tensor({1, 2, 4, 8, 8}, seed + 64, 0.5);
      check("Euler rollout",
            [&](auto&) {
              const auto out = s.rollout(in, 2, Mode::eval);
              return mse(out[1], target) + mse(out[2], target);
            },
            {s.rhs.layers[0].weight, s.rhs.layers.back().weight, s.enc_static.layers[0].bias}, 1e-6);
    }
    {
      auto layout = rates::ProducerLayout::from(table);
      const std::size_t n = m.grid.cells();
      Philox rng(seed + 100);
      std::vector<double> p(n), sw(n), mult(layout.size());
      for (auto& v : p) v = rng.uniform(170, 230);
      for (auto& v : sw) v = rng.uniform(0.3, 0.7);
      for (auto& v : mult) v = rng.uniform(0.2, 1.5);
      const auto bhp = rates::producer_bhp(m.schedule, layout.producers, 0);
      check("rate chain",
            [&](auto& x) {
              return sum(ad::log1p(rates::producer_rates(scale(x[0], units::kBar), x[1], layout, bhp, fluid, x[2])));
            },
            {Tensor::from({n}, p, true), Tensor::from({n}, sw, true), Tensor::from({layout.size()}, mult, true)});
    }
    {
      const hm::RatePredictor pred(s, m, table, fluid);
      auto c = hm::init_corrections(s.config(), pred.producer_connections(), 4, 0.1, seed);
      const std::vector<std::vector<std::array<double, 2>>> h{{{30, 4}}, {{25, 6}}};
      check("hm_loss",
            [&](auto&) { return hm::hm_loss(pred.predict(c, 4, 2), h, hm::time_weights(2, true), c, 5e-4, 1.0); },
            {c.rock_corr, c.log_conn}, 1e-6);
    }
  }
  const double secs = since(t0);
  for (const auto& [name, err] : worst) o.check(err < tol, fmtd("%-24s max rel err %.2e over 20 seeds", name.c_str(), err));
  o.check(secs < 120, fmtd("runtime %.1f s (< 120 s)", secs));
  return o;
}

// ----------------------------------------------------------------- 2: Peaceman

Outcome peaceman() {
  Outcome o;
  double iso = 0;
  for (double d : {1.0, 10.0, 25.0, 100.0})
    for (double k : {1e-15, 1e-13, 5e-12})
      iso = std::max(iso, std::abs(rates::peaceman_radius(d, d, k, k) - 0.28 * d * std::numbers::sqrt2 / 2.0));
  o.check(iso <= 1e-12, fmtd("isotropic max |r0 - 0.28 d sqrt(2)/2| = %.2e", iso));
  // Independent recomputation of the anisotropic formula, k in mD (ratios are unit-free).
  const double d = 100, k1 = 200, k2 = 50;
  const double a = std::sqrt(k2 / k1), b = std::sqrt(k1 / k2);
  const double ref = 0.28 * std::sqrt(a * d * d + b * d * d) / (std::pow(k2 / k1, 0.25) + std::pow(k1 / k2, 0.25));
  const double r = rates::peaceman_radius(d, d, k1 * units::kMilliDarcy, k2 * units::kMilliDarcy);
  o.check(std::abs(r - ref) <= 1e-6, fmtd("anisotropic r0 %.9f vs %.9f (|diff| %.2e)", r, ref, std::abs(r - ref)));
  return o;
}

// ------------------------------------------------------------ 3: oracle physics

Outcome oracle_physics() {
  Outcome o;
  const auto m = datagen::build_twin_model();
  const auto fluid = datagen::twin_fluid();
  o.note(fmtd("grid %zux%zux%zu, %zu wells", m.grid.nx, m.grid.ny, m.grid.nz, m.wells.size()));
  auto t0 = Clock::now();
  oracle::Simulator sim(m, fluid);
  const auto r = sim.run(m.schedule.times);
  const double secs = since(t0);
  const auto v0 = sim.in_place(r.states.front()), v1 = sim.in_place(r.states.back());
  const double ew = std::abs((v0[0] - v1[0]) - (r.cumulative.total_produced_water() - r.cumulative.total_injected_water())) / v0[0];
  const double eo = std::abs((v0[1] - v1[1]) - r.cumulative.total_produced_oil()) / v0[1];
  o.check(ew < 1e-6, fmtd("water balance relative error %.2e", ew));
  o.check(eo < 1e-6, fmtd("oil balance relative error %.2e", eo));
  o.check(r.max_pressure_residual < 1e-10, fmtd("max pressure-solve residual %.3e", r.max_pressure_residual));
  o.check(secs < 60, fmtd("history run %.2f s (< 60 s)", secs));

  auto eq = m;
  eq.wells.clear();
  eq.schedule.bhp.clear();
  eq.schedule.injection_rate.clear();
  std::fill(eq.initial.pressure_bar.begin(), eq.initial.pressure_bar.end(), 200.0);
  std::fill(eq.initial.sat_water.begin(), eq.initial.sat_water.end(), 0.25);
  const auto re = oracle::run(eq, fluid, eq.schedule.times);
  double dp = 0, ds = 0;
  for (const auto& s : re.states)
    for (std::size_t c = 0; c < s.pressure.size(); ++c) {
      dp = std::max(dp, std::abs(s.pressure[c] - re.states[0].pressure[c]) / re.states[0].pressure[c]);
      ds = std::max(ds, std::abs(s.sat_water[c] - re.states[0].sat_water[c]));
    }
  o.check(dp <= 1e-12 && ds <= 1e-12, fmtd("no-well equilibrium drift: pressure %.2e relative, saturation %.2e", dp, ds));
  return o;
}

// ------------------------------------------------- shared data for criteria 4-7

struct Twin {
  fs::path dir;
  datagen::Dataset data;
  training::TrainResult fit;
  double train_seconds = 0;
};

Twin& twin(const fs::path& work) {
  static std::optional<Twin> t;
  if (t) return *t;
  t.emplace();
  t->dir = work;
  fs::remove_all(work);
  datagen::GenConfig g;  // 20 scenarios of the 16x16x8 twin with 3 producers and 1 injector
  const auto t0 = Clock::now();
  datagen::build_dataset(datagen::build_twin_model(), datagen::twin_fluid(), g, work / "dataset");
  std::printf("  (dataset: %.1f s)\n", since(t0));
  std::fflush(stdout);
  t->data = datagen::load_dataset(work / "dataset");
  const auto t1 = Clock::now();
  t->fit = training::fit(t->data, training::TrainConfig{});
  t->train_seconds = since(t1);
  t->fit.surrogate.save(work / "model");
  return *t;
}

// ---------------------------------------------------- 4: surrogate fidelity

Outcome fidelity(const fs::path& work) {
  Outcome o;
  auto& t = twin(work);
  o.note(fmtd("%zu scenarios, %zu training, %zu held out, best epoch %zu", t.data.scenarios.size(),
              t.fit.train_scenarios.size(), t.fit.validation_scenarios.size(), t.fit.best_epoch));
  for (std::size_t v : t.fit.validation_scenarios) {
    const auto& sc = t.data.scenarios[v];
    const auto f = training::evaluate_fidelity(t.fit.surrogate, sc, t.data.fluid);
    const auto t0 = Clock::now();
    oracle::run(sc.model, t.data.fluid, sc.times, datagen::GenConfig{}.sim);
    const double oracle_secs = since(t0);
    const double speedup = oracle_secs / f.rollout_seconds;
    o.check(f.pressure_rel_error.back() < 0.15,
            fmtd("%s final pressure relative error %.4f (< 0.15); relative to pressure change %.4f", sc.name.c_str(),
                 f.pressure_rel_error.back(), f.pressure_change_rel_error.back()));
    o.check(f.sat_water_mae.back() < 0.05, fmtd("%s final saturation MAE %.4f (< 0.05)", sc.name.c_str(), f.sat_water_mae.back()));
    o.check(speedup >= 20, fmtd("rollout %.4f s vs oracle %.4f s: %.1fx (>= 20x)", f.rollout_seconds, oracle_secs, speedup));
  }
  o.check(t.train_seconds < 1800, fmtd("training %.1f s (< 1800 s)", t.train_seconds));
  return o;
}

// ------------------------------------------------- 5 and 6: history matching

struct HmRun {
  hm::HMResult result;
  std::vector<hm::WellFit> adapt, forecast;
  double seconds = 0, multiplier = 0;
  double ratio() const { return result.loss_curve.back() / result.loss_curve.front(); }
};

struct TwinB {
  hm::TwinTruth truth;
  hm::HMConfig config;
  std::size_t T = 0;
};

TwinB twin_b(const Twin& t) {
  const auto base = datagen::build_twin_model();
  TwinB b{hm::make_twin_truth(t.fit.surrogate, base, t.data.fluid, hm::HistorySource::surrogate), {}, base.schedule.times.size() - 1};
  // Adaptation over two thirds of the schedule; the forecast window is half as long.
  b.config.adapt_intervals = 2 * b.T / 3;
  return b;
}

HmRun history_match(const Twin& t, const TwinB& b, bool rock, bool conn) {
  const auto base = datagen::build_twin_model();
  auto cfg = b.config;
  cfg.optimize_rock = rock;
  cfg.optimize_connectivity = conn;
  HmRun r;
  const auto t0 = Clock::now();
  r.result = hm::adapt(t.fit.surrogate, base, t.data.fluid, b.truth.history, cfg);
  r.seconds = since(t0);
  const auto table = rates::build_connections(base);
  const hm::RatePredictor pred(t.fit.surrogate, base, table, t.data.fluid);
  const auto corrected = pred.rate_series(r.result.corrections, cfg.factor, b.T);
  const double ta = base.schedule.times.at(cfg.adapt_intervals), te = base.schedule.times.back();
  r.adapt = hm::compare_cumulative(corrected, b.truth.history, pred.layout.producers, base.schedule.times.front(), ta);
  r.forecast = hm::compare_cumulative(corrected, b.truth.history, pred.layout.producers, ta, te);
  r.multiplier = r.result.corrections.multipliers().at(b.truth.connection);
  return r;
}

Outcome history_matching(const fs::path& work, std::optional<HmRun>& joint_out) {
  Outcome o;
  auto& t = twin(work);
  const auto b = twin_b(t);
  o.note(fmtd("lr %.2g, wd %.1e, factor %zu, adapt %zu of %zu intervals, history from the surrogate",
              b.config.learning_rate, b.config.weight_decay, b.config.factor, b.config.adapt_intervals, b.T));
  auto r = history_match(t, b, true, true);
  o.check(r.ratio() <= 0.2, fmtd("loss %.5g -> %.5g, ratio %.3f (<= 0.2) after %zu iterations", r.result.loss_curve.front(),
                                 r.result.loss_curve.back(), r.ratio(), r.result.iterations));
  for (const auto& f : r.adapt)
    o.check(f.r_water >= 0.9 && f.r_oil >= 0.9, fmtd("%s cumulative R water %.4f oil %.4f (>= 0.9)", f.well.c_str(), f.r_water, f.r_oil));
  const double ea = hm::mean_cumulative_error(r.adapt), ef = hm::mean_cumulative_error(r.forecast);
  o.check(ef <= 2 * ea, fmtd("forecast cumulative error %.4f vs adaptation %.4f (<= 2x)", ef, ea));
  o.note(fmtd("scaled connection multiplier %.3f (truth %.2f)", r.multiplier, b.truth.multiplier));
  o.check(r.seconds < 1200, fmtd("runtime %.1f s (< 1200 s)", r.seconds));
  joint_out = std::move(r);
  return o;
}

Outcome ablation(const fs::path& work, std::optional<HmRun>& joint) {
  Outcome o;
  auto& t = twin(work);
  const auto b = twin_b(t);
  if (!joint) joint = history_match(t, b, true, true);
  const auto rock = history_match(t, b, true, false), conn = history_match(t, b, false, true);
  const double lj = joint->result.loss_curve.back(), lr = rock.result.loss_curve.back(), lc = conn.result.loss_curve.back();
  o.note(fmtd("final loss: joint %.5g, rock-only %.5g, connectivity-only %.5g", lj, lr, lc));
  o.check(lj <= std::min(lr, lc) * 1.05, fmtd("joint %.5g <= 1.05 x min %.5g", lj, std::min(lr, lc)));
  return o;
}

// ------------------------------------------------- 7: structural invariants

Outcome invariants(const fs::path& work) {
  Outcome o;
  auto& t = twin(work);
  const auto base = datagen::build_twin_model();
  const auto b = twin_b(t);
  const auto& s = t.fit.surrogate;
  const auto before = s.flat_weights();

  auto cfg = b.config;
  cfg.max_iterations = 30;
  cfg.init_std = 0.5;
  const auto r1 = hm::adapt(s, base, t.data.fluid, b.truth.history, cfg);
  const auto r2 = hm::adapt(s, base, t.data.fluid, b.truth.history, cfg);
  bool positive = true;
  for (double m : r1.corrections.multipliers()) positive = positive && m > 0 && std::isfinite(m);
  o.check(positive, "connectivity multipliers > 0 after adaptation");
  o.check(s.flat_weights() == before, "surrogate weights bit-identical after adaptation");
  o.check(r1.loss_curve == r2.loss_curve && std::ranges::equal(r1.corrections.rock_corr.data(), r2.corrections.rock_corr.data()) &&
              std::ranges::equal(r1.corrections.log_conn.data(), r2.corrections.log_conn.data()),
          "adaptation deterministic (loss curve and corrections bit-identical)");

  model::save_model(base, work / "roundtrip" / "a");
  const auto back = model::load_model(work / "roundtrip" / "a");
  model::save_model(back, work / "roundtrip" / "b");
  o.check(back == base && io::read_text(work / "roundtrip" / "a" / "manifest.json") ==
                              io::read_text(work / "roundtrip" / "b" / "manifest.json"),
          "model save/load round-trip bit-exact");

  // Re-simulating a stored scenario reproduces the stored arrays exactly.
  const auto& sc = t.data.scenarios.front();
  const auto rerun = oracle::run(sc.model, t.data.fluid, sc.times, datagen::GenConfig{}.sim);
  bool same = rerun.times == sc.times;
  for (std::size_t k = 0; same && k < sc.states.size(); ++k)
    same = rerun.states[k].pressure == sc.states[k].pressure && rerun.states[k].sat_water == sc.states[k].sat_water &&
           rerun.states[k].sat_oil == sc.states[k].sat_oil;
  o.check(same, "dataset states round-trip bit-exact against a fresh simulation");
  const auto reloaded = model::load_model(t.data.root / sc.name / "model");
  o.check(reloaded == sc.model && sc.model == datagen::make_scenario_model(base, datagen::GenConfig{}, sc.seed),
          "dataset scenario model regenerated bit-exact from its seed");

  const auto in = rom::prepare_inputs(s.config(), base, rates::build_connections(base));
  const auto a = s.rollout(in, 3), c = s.rollout(in, 3);
  bool roll = true;
  for (std::size_t k = 0; k < a.size(); ++k) roll = roll && std::ranges::equal(a[k].data(), c[k].data());
  o.check(roll, "surrogate rollout deterministic");
  s.save(work / "model_again");
  o.check(rom::Surrogate::load(work / "model_again").flat_weights() == before, "surrogate save/load round-trip bit-exact");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::set<int> only;
  std::string work = (fs::temp_directory_path() / "nres_acceptance").string();
  app.add_option("--only", only, "Criteria to run (default: all)")->check(CLI::Range(1, 7));
  app.add_option("--work", work, "Scratch directory for the dataset and trained surrogate");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);

  std::optional<HmRun> joint;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradients},
      {"Peaceman analytics", peaceman},
      {"oracle physics", oracle_physics},
      {"twin A surrogate fidelity", [&] { return fidelity(work); }},
      {"twin B history matching", [&] { return history_matching(work, joint); }},
      {"ablation ordering", [&] { return ablation(work, joint); }},
      {"structural invariants", [&] { return invariants(work); }},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    all = all && o.pass;
    std::printf("%s %d %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), since(t0));
    for (const auto& d : o.details) std::printf("    %s\n", d.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
