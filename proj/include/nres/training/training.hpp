#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "nres/autodiff/tensor.hpp"
#include "nres/datagen/datagen.hpp"
#include "nres/rom/surrogate.hpp"

namespace nres::training {

using ad::Tensor;

/// Adam with bias correction and decoupled weight decay.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::size_t step = 0;
  std::vector<std::vector<double>> m, v;  // one per parameter
};

/// One optimizer step on every parameter that requires grad. A missing
/// gradient counts as zero. Moments are created on the first call.
void adam_update(std::vector<Tensor>& params, AdamState& state);

/// (1/T) sum_t (1/C) sum_c w_c * mean over active cells of (pred - true)^2 for
/// normalized cubes [1,C,D,H,W]; `mask` is [1,1,D,H,W].
Tensor rollout_loss(const std::vector<Tensor>& predicted, const std::vector<Tensor>& truth, const Tensor& mask,
                    const std::array<double, rom::kStateChannels>& weights);

/// mean over times, producers and phases of
/// (log1p(q_pred/q_ref) - log1p(q_true/q_ref))^2; `predicted[t]` is [producers, 2].
Tensor log_rate_loss(const std::vector<Tensor>& predicted, const std::vector<std::vector<std::array<double, 2>>>& truth,
                     double q_ref);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t rollout_intervals = 0;  // 0: full schedule
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  std::array<double, rom::kStateChannels> channel_weights{1.0, 1.0};
  /// Weight of log_rate_loss on the producer rates of report times 1..T
  /// against the scenario's simulated rates; 0 trains on states only.
  double rate_loss_weight = 1.0;
  double rate_q_ref = 1.0;  // m3/day
  std::uint64_t seed = 2024;
  double validation_fraction = 0.05;  // at least one scenario is held out
  rom::SurrogateConfig architecture;  // grid and normalization are filled by fit

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
};

struct TrainResult {
  rom::Surrogate surrogate;  // weights of the best validation epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double recalibrated_val_loss = 0;  // best weights, population batch-norm statistics
  std::vector<std::size_t> train_scenarios, validation_scenarios;
};

/// Normalization statistics over the given scenarios' active cells.
rom::Normalization compute_normalization(const datagen::Dataset& data, const std::vector<std::size_t>& scenarios);

/// Held-out scenarios: the last max(1, round(fraction * n)) of a seeded
/// shuffle; with a single scenario it is used for both roles.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_scenarios(std::size_t n, double fraction,
                                                                              std::uint64_t seed);

/// Normalized per-report-time state cubes of a scenario.
std::vector<Tensor> target_cubes(const rom::SurrogateConfig& cfg, const datagen::ScenarioData& s);

TrainResult fit(const datagen::Dataset& data, const TrainConfig& config);

/// Surrogate-versus-simulator agreement on one scenario at each report time
/// t_1..t_T over active cells.
struct Fidelity {
  std::vector<double> times;
  std::vector<double> pressure_rel_error;         // |p_pred - p| / |p|
  std::vector<double> pressure_change_rel_error;  // |p_pred - p| / |p - p_0|
  std::vector<double> sat_water_mae;
  double rollout_seconds = 0;  // rom::simulate wall time
};
Fidelity evaluate_fidelity(const rom::Surrogate& surrogate, const datagen::ScenarioData& scenario,
                           const oracle::FluidProperties& fluid);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);
std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path);

}  // namespace nres::training
