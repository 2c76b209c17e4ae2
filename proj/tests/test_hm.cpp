#include <gtest/gtest.h>

#include <cmath>

#include "nres/autodiff/grad_check.hpp"
#include "nres/autodiff/ops.hpp"
#include "nres/error.hpp"
#include "nres/hm/history_matching.hpp"
#include "nres/io.hpp"
#include "test_util.hpp"

using namespace nres;
using namespace nres::hm;
using ad::Tensor;
using nres::testing::small_config;
using nres::testing::toy_model;

namespace {

void randomize(Tensor t, std::uint64_t seed, double scale) {
  Philox rng(seed, 3);
  for (auto& v : t.mutable_data()) v = scale * rng.normal();
}

/// Surrogate with a live latent right-hand side, so rates depend on the rock.
rom::Surrogate live_surrogate(const model::ReservoirModel& m, std::uint64_t seed) {
  rom::Surrogate s(small_config(m.grid), seed);
  randomize(s.rhs.layers.back().weight, seed + 1, 0.2);
  return s;
}

using Rows = std::vector<std::vector<std::array<double, 2>>>;

Rows rows_of(const std::vector<Tensor>& rates) {
  Rows out;
  for (const auto& r : rates) {
    std::vector<std::array<double, 2>> row;
    for (std::size_t p = 0; p < r.shape()[0]; ++p) row.push_back({r.at(2 * p), r.at(2 * p + 1)});
    out.push_back(row);
  }
  return out;
}

double norm2(const Tensor& t) {
  double s = 0;
  for (double v : t.data()) s += v * v;
  return s;
}

}  // namespace

TEST(InitCorrections, ZeroStdGivesIdentity) {
  const auto c = init_corrections(small_config(toy_model().grid), 3, 4, 0.0, 1);
  for (double v : c.rock_corr.data()) EXPECT_EQ(v, 0.0);
  for (double m : c.multipliers()) EXPECT_EQ(m, 1.0);
}

TEST(InitCorrections, CoarseShapeForTwinGrid) {
  rom::SurrogateConfig cfg;
  cfg.set_grid(model::GridGeometry::uniform(16, 16, 8, 1, 1, 1));
  const auto c = init_corrections(cfg, 5, 4, 0.01, 1);
  EXPECT_EQ(c.rock_corr.shape(), (ad::Shape{1, 4, 2, 4, 4}));
  EXPECT_EQ(c.log_conn.shape(), (ad::Shape{5}));
}

TEST(InitCorrections, SeededAndScaled) {
  const auto cfg = small_config(toy_model().grid);
  const auto a = init_corrections(cfg, 4, 4, 0.01, 7), b = init_corrections(cfg, 4, 4, 0.01, 7);
  EXPECT_EQ(std::vector<double>(a.rock_corr.data().begin(), a.rock_corr.data().end()),
            std::vector<double>(b.rock_corr.data().begin(), b.rock_corr.data().end()));
  EXPECT_EQ(a.multipliers(), b.multipliers());
  const auto c = init_corrections(cfg, 4, 4, 0.01, 8);
  EXPECT_NE(a.rock_corr.at(0), c.rock_corr.at(0));
  for (double v : a.rock_corr.data()) EXPECT_LT(std::abs(v), 0.06);
  EXPECT_THROW(init_corrections(cfg, 4, 4, -1.0, 7), ValidationError);
  EXPECT_THROW(init_corrections(cfg, 4, 3, 0.01, 7), ValidationError);
}

TEST(ApplyRockCorrection, ZeroCorrectionKeepsStatics) {
  const auto statics = nres::testing::random_tensor({1, 4, 4, 8, 8}, 3);
  const auto mask = Tensor::full({1, 1, 4, 8, 8}, 1.0);
  const auto out = apply_rock_correction(statics, mask, Tensor::zeros({1, 4, 1, 2, 2}), 4);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_EQ(out.at(i), statics.at(i));
}

TEST(ApplyRockCorrection, ConstantShiftsOneChannelOnActiveCells) {
  const auto statics = Tensor::zeros({1, 4, 4, 8, 8});
  std::vector<double> mask(4 * 8 * 8, 1.0);
  mask[5] = 0.0;
  const auto m = Tensor::from({1, 1, 4, 8, 8}, mask);
  std::vector<double> corr(4 * 1 * 2 * 2, 0.0);
  for (std::size_t i = 4; i < 8; ++i) corr[i] = 0.7;  // channel 1
  const auto out = apply_rock_correction(statics, m, Tensor::from({1, 4, 1, 2, 2}, corr), 4);
  const std::size_t vol = 4 * 8 * 8;
  for (std::size_t i = 0; i < vol; ++i) {
    EXPECT_EQ(out.at(i), 0.0);
    EXPECT_NEAR(out.at(vol + i), mask[i] * 0.7, 1e-15);
    EXPECT_EQ(out.at(2 * vol + i), 0.0);
  }
}

TEST(ApplyRockCorrection, GradientMatchesFiniteDifferences) {
  const auto statics = nres::testing::random_tensor({1, 4, 4, 8, 8}, 4);
  const auto mask = Tensor::full({1, 1, 4, 8, 8}, 1.0);
  const auto w = nres::testing::random_tensor({1, 4, 4, 8, 8}, 5);
  std::vector<Tensor> leaves{nres::testing::random_tensor({1, 4, 1, 2, 2}, 6, 0.5, true)};
  auto f = [&](const std::vector<Tensor>& x) {
    return ad::sum(ad::square(apply_rock_correction(statics, mask, x[0], 4)) * w);
  };
  EXPECT_LT(ad::grad_check(f, leaves), 1e-6);
}

TEST(TimeWeights, LinearWithMeanOne) {
  const auto w = time_weights(4, true);
  ASSERT_EQ(w.size(), 4u);
  EXPECT_DOUBLE_EQ(w[0], 0.4);
  EXPECT_DOUBLE_EQ(w[3], 1.6);
  EXPECT_DOUBLE_EQ((w[0] + w[1] + w[2] + w[3]) / 4.0, 1.0);
  for (double v : time_weights(3, false)) EXPECT_EQ(v, 1.0);
}

TEST(HmLoss, ZeroWhenMatchedWithIdentityCorrections) {
  const auto q = Tensor::from({2, 2}, {10, 5, 20, 0});
  const Rows h{{{10, 5}, {20, 0}}};
  CorrectionSet c;
  c.rock_corr = Tensor::zeros({1, 4, 1, 1, 1});
  c.log_conn = Tensor::zeros({3});
  EXPECT_EQ(hm_loss({q}, h, {1.0}, c, 5e-4, 1.0).item(), 0.0);
}

TEST(HmLoss, RegularizerIsolation) {
  const auto q = Tensor::from({1, 2}, {10, 5});
  CorrectionSet c;
  c.rock_corr = Tensor::from({1, 4, 1, 1, 1}, {1, 2, 0, 0});
  c.log_conn = Tensor::from({1}, {-3});
  EXPECT_DOUBLE_EQ(hm_loss({q}, {{{10, 5}}}, {1.0}, c, 5e-4, 1.0).item(), 5e-4 * 14.0);
}

TEST(HmLoss, MatchesHandComputation) {
  const double e = std::exp(1.0) - 1.0;
  const auto q0 = Tensor::from({1, 2}, {e, 0});
  const auto q1 = Tensor::from({1, 2}, {0, 0});
  CorrectionSet c;
  // t=1: (1^2 + 0)/2 * w1; t=2: 0.
  EXPECT_NEAR(hm_loss({q0, q1}, {{{0, 0}}, {{0, 0}}}, time_weights(2, true), c, 0.0, 1.0).item(), 0.5 * (2.0 / 3.0),
              1e-12);
}

TEST(HmLoss, LaterErrorsWeighMore) {
  const auto good = Tensor::from({1, 2}, {10, 10});
  const auto bad = Tensor::from({1, 2}, {20, 20});
  const Rows h{{{10, 10}}, {{10, 10}}, {{10, 10}}};
  const auto w = time_weights(3, true);
  CorrectionSet c;
  const double early = hm_loss({bad, good, good}, h, w, c, 0, 1).item();
  const double late = hm_loss({good, good, bad}, h, w, c, 0, 1).item();
  EXPECT_GT(late, early);
}

TEST(HmLoss, RejectsNegativeHistory) {
  CorrectionSet c;
  EXPECT_THROW(hm_loss({Tensor::from({1, 2}, {1, 1})}, {{{-1, 1}}}, {1.0}, c, 0, 1), ValidationError);
  EXPECT_THROW(hm_loss({Tensor::from({1, 2}, {1, 1})}, {{{1, 1}}, {{1, 1}}}, {1.0}, c, 0, 1), ValidationError);
}

TEST(HmLoss, GradientThroughSurrogateMatchesFiniteDifferences) {
  const auto m = toy_model();
  const auto s = live_surrogate(m, 21);
  const auto table = rates::build_connections(m);
  const oracle::FluidProperties fluid;
  const RatePredictor pred(s, m, table, fluid);
  auto c = init_corrections(s.config(), pred.producer_connections(), 4, 0.1, 3);
  const Rows h{{{30, 4}}, {{25, 6}}};
  std::vector<Tensor> leaves{c.rock_corr, c.log_conn};
  auto f = [&](const std::vector<Tensor>&) {
    return hm_loss(pred.predict(c, 4, 2), h, time_weights(2, true), c, 5e-4, 1.0);
  };
  EXPECT_LT(ad::grad_check(f, leaves, 1e-6), 1e-4);
}

TEST(RatePredictor, ConnectionMultiplierScalesRates) {
  const auto m = toy_model();
  const auto s = live_surrogate(m, 22);
  const auto table = rates::build_connections(m);
  const oracle::FluidProperties fluid;
  const RatePredictor pred(s, m, table, fluid);
  ad::NoGradGuard guard;
  auto c = init_corrections(s.config(), pred.producer_connections(), 4, 0.0, 0);
  const auto base = pred.predict(c, 4, 2);
  for (auto& v : c.log_conn.mutable_data()) v = std::log(0.5);
  const auto half = pred.predict(c, 4, 2);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t i = 0; i < base[t].numel(); ++i) EXPECT_NEAR(half[t].at(i), 0.5 * base[t].at(i), 1e-9 * std::abs(base[t].at(i)) + 1e-12);
}

TEST(Adapt, SelfGeneratedHistoryStartsAtRegularizerLevel) {
  const auto m = toy_model();
  const auto s = live_surrogate(m, 23);
  const auto table = rates::build_connections(m);
  const oracle::FluidProperties fluid;
  const RatePredictor pred(s, m, table, fluid);
  const auto history = pred.rate_series(init_corrections(s.config(), pred.producer_connections(), 4, 0, 0), 4, 2);
  HMConfig cfg;
  cfg.init_std = 0.0;
  cfg.max_iterations = 30;
  const auto r = adapt(s, m, fluid, history, cfg);
  EXPECT_EQ(r.loss_curve.front(), 0.0);
  EXPECT_TRUE(r.plateaued);
  EXPECT_LT(r.iterations, 30u);
  for (double v : r.corrections.rock_corr.data()) EXPECT_EQ(v, 0.0);
  for (double v : r.corrections.multipliers()) EXPECT_EQ(v, 1.0);
}

TEST(Adapt, PureDecayWhenRockDoesNotAffectRates) {
  // A fresh surrogate has a zero latent right-hand side: rates ignore the rock
  // corrections, so only the decoupled decay acts on them.
  const auto m = toy_model();
  const rom::Surrogate s(small_config(m.grid), 24);
  const auto table = rates::build_connections(m);
  const oracle::FluidProperties fluid;
  const RatePredictor pred(s, m, table, fluid);
  const auto history = pred.rate_series(init_corrections(s.config(), pred.producer_connections(), 4, 0, 0), 4, 2);
  HMConfig cfg;
  cfg.optimize_connectivity = false;
  cfg.init_std = 0.5;
  cfg.weight_decay = 0.05;
  cfg.max_iterations = 5;
  cfg.plateau_window = 0;
  const auto r = adapt(s, m, fluid, history, cfg);
  ASSERT_EQ(r.iterations, 5u);
  for (std::size_t i = 1; i < r.loss_curve.size(); ++i) EXPECT_LT(r.loss_curve[i], r.loss_curve[i - 1]);
  const auto init = init_corrections(s.config(), pred.producer_connections(), 4, 0.5, cfg.seed);
  const double shrink = std::pow(1.0 - cfg.learning_rate * cfg.weight_decay, 5.0);
  EXPECT_NEAR(norm2(r.corrections.rock_corr), shrink * shrink * norm2(init.rock_corr), 1e-12);
}

TEST(Adapt, FrozenTensorStaysIdentityAndSurrogateUntouched) {
  const auto m = toy_model();
  const auto s = live_surrogate(m, 25);
  const auto before = s.flat_weights();
  const auto table = rates::build_connections(m);
  const oracle::FluidProperties fluid;
  const RatePredictor pred(s, m, table, fluid);
  auto truth = init_corrections(s.config(), pred.producer_connections(), 4, 0.0, 0);
  for (auto& v : truth.log_conn.mutable_data()) v = std::log(0.4);
  const auto history = pred.rate_series(truth, 4, 2);
  HMConfig cfg;
  cfg.max_iterations = 15;
  cfg.optimize_connectivity = false;
  const auto rock_only = adapt(s, m, fluid, history, cfg);
  for (double v : rock_only.corrections.multipliers()) EXPECT_EQ(v, 1.0);
  cfg.optimize_connectivity = true;
  cfg.optimize_rock = false;
  const auto conn_only = adapt(s, m, fluid, history, cfg);
  for (double v : conn_only.corrections.rock_corr.data()) EXPECT_EQ(v, 0.0);
  for (double v : conn_only.corrections.multipliers()) EXPECT_GT(v, 0.0);
  EXPECT_LT(conn_only.loss_curve.back(), conn_only.loss_curve.front());
  EXPECT_EQ(s.flat_weights(), before);
}

TEST(Adapt, DeterministicAndChunkInvariantLoss) {
  const auto m = toy_model();
  const auto s = live_surrogate(m, 26);
  const auto table = rates::build_connections(m);
  const oracle::FluidProperties fluid;
  const RatePredictor pred(s, m, table, fluid);
  auto truth = init_corrections(s.config(), pred.producer_connections(), 4, 0.3, 5);
  const auto history = pred.rate_series(truth, 4, 2);
  HMConfig cfg;
  cfg.max_iterations = 6;
  cfg.plateau_window = 0;
  const auto a = adapt(s, m, fluid, history, cfg);
  const auto b = adapt(s, m, fluid, history, cfg);
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  cfg.chunk_intervals = 1;
  const auto chunked = adapt(s, m, fluid, history, cfg);
  EXPECT_NEAR(chunked.loss_curve.front(), a.loss_curve.front(), 1e-12 * a.loss_curve.front());
}

TEST(Adapt, RejectsHistoryNotCoveringTheWindow) {
  const auto m = toy_model();
  const auto s = live_surrogate(m, 27);
  rates::RateSeries empty;
  empty.wells = {"I", "P"};
  empty.values.resize(2);
  EXPECT_THROW(adapt(s, m, oracle::FluidProperties{}, empty, HMConfig{}), ValidationError);
}

TEST(Plateau, DetectsStallOnBestLoss) {
  EXPECT_FALSE(plateaued({1.0, 0.9}, 2, 0.01));
  EXPECT_TRUE(plateaued({1.0, 0.995, 0.999}, 2, 0.01));
  EXPECT_FALSE(plateaued({1.0, 1.2, 0.5}, 2, 0.01));
  EXPECT_FALSE(plateaued({1.0, 0.5, 0.4}, 0, 0.01));
}

TEST(Correlation, PearsonAndDegenerateSeries) {
  EXPECT_DOUBLE_EQ(correlation({1, 2, 3}, {2, 4, 6}), 1.0);
  EXPECT_DOUBLE_EQ(correlation({1, 2, 3}, {3, 2, 1}), -1.0);
  EXPECT_NEAR(correlation({1, 2, 3, 4}, {1, 3, 2, 4}), 0.8, 1e-12);
  EXPECT_EQ(correlation({2, 2}, {2, 2}), 1.0);
  EXPECT_EQ(correlation({2, 2}, {1, 3}), 0.0);
  EXPECT_THROW(correlation({1}, {1, 2}), ValidationError);
}

TEST(Cumulative, RectangleRuleOverReportTimes) {
  EXPECT_EQ(cumulative({0, 30, 90}, {5, 2, 1}), (std::vector<double>{0, 60, 120}));
}

TEST(CompareCumulative, ExactMatchAndRelativeError) {
  rates::RateSeries h;
  h.wells = {"P"};
  h.values.resize(1);
  for (double t : {0.0, 10.0, 20.0, 30.0}) h.append(t, {{{t + 1.0, 2.0}}});
  auto p = h;
  for (auto& v : p.values[0][0]) v *= 1.1;
  const auto same = compare_cumulative(h, h, {"P"}, 0, 30);
  EXPECT_DOUBLE_EQ(same[0].r_water, 1.0);
  EXPECT_EQ(same[0].err_oil, 0.0);
  const auto fit = compare_cumulative(p, h, {"P"}, 0, 30);
  EXPECT_NEAR(fit[0].err_water, 0.1, 1e-12);
  EXPECT_EQ(fit[0].err_oil, 0.0);
  EXPECT_NEAR(mean_cumulative_error(fit), 0.05, 1e-12);
}

TEST(HmResult, WriteAndReadBack) {
  const auto m = toy_model();
  const auto s = live_surrogate(m, 28);
  const auto table = rates::build_connections(m);
  const oracle::FluidProperties fluid;
  const RatePredictor pred(s, m, table, fluid);
  const auto history = pred.rate_series(init_corrections(s.config(), pred.producer_connections(), 4, 0.2, 1), 4, 2);
  HMConfig cfg;
  cfg.max_iterations = 3;
  const auto r = adapt(s, m, fluid, history, cfg);
  const auto corrected = pred.rate_series(r.corrections, 4, 2);
  const auto dir = nres::testing::temp_dir("hm_result");
  write_result(dir, r, cfg, corrected, history, pred.layout.producers, 60.0);
  const auto c = read_corrections(dir / "corrections");
  EXPECT_EQ(c.multipliers(), r.corrections.multipliers());
  EXPECT_EQ(c.rock_corr.shape(), r.corrections.rock_corr.shape());
  EXPECT_EQ(read_loss_curve(dir / "loss_curve.csv"), r.loss_curve);
  const auto summary = io::read_json(dir / "summary.json");
  EXPECT_TRUE(summary.contains("adaptation"));
  EXPECT_TRUE(summary.contains("forecast"));
  EXPECT_EQ(HMConfig::from_json(cfg.to_json()).to_json(), cfg.to_json());
}
