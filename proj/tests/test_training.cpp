#include <gtest/gtest.h>

#include <cmath>

#include "nres/autodiff/ops.hpp"
#include "nres/datagen/datagen.hpp"
#include "nres/error.hpp"
#include "nres/io.hpp"
#include "nres/training/training.hpp"
#include "test_util.hpp"

using namespace nres;
using namespace nres::training;
using ad::Tensor;

namespace {

const datagen::Dataset& toy_dataset() {
  static const datagen::Dataset data = [] {
    const auto dir = nres::testing::temp_dir("training_ds");
    datagen::GenConfig g;
    g.scenarios = 3;
    g.schedule = datagen::ScheduleGenParams::defaults(2.0e7, 240, 60);
    g.injection_rate = {50, 80};
    oracle::FluidProperties fluid;
    datagen::build_dataset(nres::testing::toy_model(), fluid, g, dir);
    return datagen::load_dataset(dir);
  }();
  return data;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.epochs = 2;
  c.validation_fraction = 0.3;
  auto& a = c.architecture;
  a.latent_channels = 2;
  a.static_latent_channels = 2;
  a.control_latent_channels = 2;
  a.encoder_hidden = {2, 2, 2};
  a.decoder_channels = {2, 2, 2};
  a.rhs_hidden = 3;
  return c;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParameterUnchanged) {
  auto p = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  p.zero_grad();
  std::vector<Tensor> params{p};
  AdamState s;
  s.lr = 0.1;
  adam_update(params, s);
  EXPECT_EQ(p.data()[0], 1.0);
  EXPECT_EQ(p.data()[1], -2.0);
  EXPECT_EQ(p.data()[2], 0.5);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  auto p = Tensor::from({2}, {1.0, 1.0}, true);
  ad::sum(ad::mul(p, Tensor::from({2}, {3.0, -0.02}))).backward();
  std::vector<Tensor> params{p};
  AdamState s;
  s.lr = 0.1;
  adam_update(params, s);
  EXPECT_NEAR(p.data()[0], 0.9, 1e-8);
  EXPECT_NEAR(p.data()[1], 1.1, 1e-6);
}

TEST(Adam, DecoupledWeightDecayShrinksWithoutGradient) {
  auto p = Tensor::from({1}, {2.0}, true);
  p.zero_grad();
  std::vector<Tensor> params{p};
  AdamState s;
  s.lr = 0.3;
  s.weight_decay = 5e-4;
  adam_update(params, s);
  EXPECT_DOUBLE_EQ(p.data()[0], 2.0 * (1.0 - 0.3 * 5e-4));
}

TEST(Adam, FrozenParameterIsSkipped) {
  auto p = Tensor::from({1}, {2.0}, false);
  std::vector<Tensor> params{p};
  AdamState s;
  s.weight_decay = 0.1;
  adam_update(params, s);
  EXPECT_EQ(p.data()[0], 2.0);
}

TEST(RolloutLoss, AveragesChannelsOverActiveCells) {
  const ad::Shape shape{1, 2, 1, 1, 2};
  const auto pred = Tensor::from(shape, {0, 0, 0, 0});
  const auto truth = Tensor::from(shape, {1, 100, 0, 0});  // cell 1 inactive
  const auto mask = Tensor::from({1, 1, 1, 1, 2}, {1, 0});
  EXPECT_DOUBLE_EQ(rollout_loss({pred}, {truth}, mask, {1, 1}).item(), 0.5);
  EXPECT_DOUBLE_EQ(rollout_loss({pred}, {truth}, mask, {2, 1}).item(), 1.0);
  EXPECT_DOUBLE_EQ(rollout_loss({pred, pred}, {truth, pred}, mask, {1, 1}).item(), 0.25);
}

TEST(RolloutLoss, RejectsMismatchedSequences) {
  const auto x = Tensor::zeros({1, 2, 1, 1, 1});
  const auto mask = Tensor::from({1, 1, 1, 1, 1}, {1});
  EXPECT_THROW(rollout_loss({x}, {x, x}, mask, {1, 1}), ValidationError);
  EXPECT_THROW(rollout_loss({x}, {x}, Tensor::from({1, 1, 1, 1, 1}, {0}), {1, 1}), ValidationError);
}

TEST(LogRateLoss, MatchesHandComputation) {
  const auto q = Tensor::from({1, 2}, {std::exp(1.0) - 1.0, 0.0});
  const double loss = log_rate_loss({q}, {{{0.0, 0.0}}}, 1.0).item();
  EXPECT_NEAR(loss, 0.5, 1e-12);
}

TEST(SplitScenarios, HoldsOutAtLeastOneAndIsSeeded) {
  const auto [train, val] = split_scenarios(20, 0.05, 7);
  EXPECT_EQ(train.size(), 19u);
  EXPECT_EQ(val.size(), 1u);
  const auto again = split_scenarios(20, 0.05, 7);
  EXPECT_EQ(again.first, train);
  EXPECT_EQ(again.second, val);
  const auto single = split_scenarios(1, 0.05, 7);
  EXPECT_EQ(single.first, std::vector<std::size_t>{0});
  EXPECT_EQ(single.second, std::vector<std::size_t>{0});
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c = tiny_config();
  c.rate_loss_weight = 0.7;
  const auto back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  c.learning_rate = -1;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Fit, BookkeepingAndDeterminism) {
  const auto& data = toy_dataset();
  ASSERT_EQ(data.scenarios.size(), 3u);
  const auto a = fit(data, tiny_config());
  ASSERT_EQ(a.history.size(), 2u);
  EXPECT_EQ(a.history[0].epoch, 1u);
  EXPECT_GE(a.best_epoch, 1u);
  EXPECT_LE(a.best_epoch, 2u);
  EXPECT_EQ(a.train_scenarios.size() + a.validation_scenarios.size(), 3u);
  EXPECT_TRUE(std::isfinite(a.recalibrated_val_loss));
  EXPECT_EQ(a.surrogate.config().grid_zyx, (std::array<std::size_t, 3>{4, 8, 8}));
  const auto b = fit(data, tiny_config());
  EXPECT_EQ(a.surrogate.flat_weights(), b.surrogate.flat_weights());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
    EXPECT_EQ(a.history[i].val_loss, b.history[i].val_loss);
  }
}

TEST(Fit, TrainingReducesLoss) {
  auto c = tiny_config();
  c.epochs = 15;
  c.learning_rate = 3e-3;
  const auto r = fit(toy_dataset(), c);
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
}

TEST(HistoryCsv, RoundTrip) {
  const auto dir = nres::testing::temp_dir("history_csv");
  const std::vector<EpochRecord> h{{1, 0.5, 0.25}, {2, 1.0 / 3.0, 0.125}};
  write_history_csv(dir / "h.csv", h);
  const auto back = read_history_csv(dir / "h.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].epoch, 2u);
  EXPECT_EQ(back[1].train_loss, 1.0 / 3.0);
  EXPECT_EQ(back[0].val_loss, 0.25);
  io::write_text(dir / "bad.csv", "a,b\n");
  EXPECT_THROW(read_history_csv(dir / "bad.csv"), ValidationError);
}
