#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "nres/autodiff/tensor.hpp"
#include "nres/model/reservoir.hpp"
#include "nres/oracle/fluid.hpp"
#include "nres/rates/rates.hpp"
#include "nres/rom/surrogate.hpp"

namespace nres::hm {

using ad::Tensor;

/// Additive coarse rock corrections in normalized static space and
/// per-producer-connection log multipliers.
struct CorrectionSet {
  Tensor rock_corr;  // [1, 4, D/f, H/f, W/f] on the padded surrogate grid
  Tensor log_conn;   // [producer connections]

  std::vector<double> multipliers() const;  // exp(log_conn)
};

struct HMConfig {
  double learning_rate = 0.3;
  double weight_decay = 5e-4;
  std::size_t factor = 4;
  double init_std = 0.01;
  std::size_t max_iterations = 300;
  std::size_t plateau_window = 20;
  double plateau_threshold = 0.01;
  bool time_weighting = true;
  double q_ref = 1.0;                 // m3/day
  std::size_t adapt_intervals = 0;    // 0: every interval covered by the history
  std::size_t chunk_intervals = 0;    // 0: whole window in one chunk
  bool optimize_rock = true;
  bool optimize_connectivity = true;
  std::uint64_t seed = 99;

  void validate() const;
  nlohmann::json to_json() const;
  static HMConfig from_json(const nlohmann::json& j);
};

/// Coarse grid of the rock corrections for a surrogate: padded extents / factor.
std::array<std::size_t, 3> coarse_shape(const rom::SurrogateConfig& cfg, std::size_t factor);

/// I.i.d. N(0, std^2) corrections; deterministic per seed.
CorrectionSet init_corrections(const rom::SurrogateConfig& cfg, std::size_t producer_connections, std::size_t factor,
                               double std, std::uint64_t seed);

/// static + mask * trilinear_upsample(rock_corr, factor).
Tensor apply_rock_correction(const Tensor& static_cube, const Tensor& mask, const Tensor& rock_corr, std::size_t factor);

/// Linear weights 2t/(T+1), t = 1..T (mean 1); all ones when disabled.
std::vector<double> time_weights(std::size_t T, bool enabled);

/// sum_t w_t * mean over producers and phases of
/// (log1p(q_pred/q_ref) - log1p(q_hist/q_ref))^2 + wd * (|rock_corr|^2 + |log_conn|^2).
/// `predicted[t]` is [producers, 2]; `historical[t]` holds the same layout.
Tensor hm_loss(const std::vector<Tensor>& predicted, const std::vector<std::vector<std::array<double, 2>>>& historical,
               const std::vector<double>& weights, const CorrectionSet& corrections, double weight_decay, double q_ref);

/// Producer rates at report times 1..T (one [producers, 2] tensor each) for a
/// model rolled out with corrections. Connection indices come from `table`.
struct RatePredictor {
  RatePredictor(const rom::Surrogate& surrogate, const model::ReservoirModel& model,
                const rates::ConnectionTable& table, const oracle::FluidProperties& fluid);

  std::size_t producer_connections() const { return layout.size(); }

  /// Latent static encoding of the corrected rock.
  Tensor static_latent(const CorrectionSet& c, std::size_t factor) const;

  struct Chunk {
    std::vector<Tensor> rates;  // reports first+1 .. first+count
    Tensor z_end;
  };
  /// Rolls `count` intervals from latent state `z` at report `first`.
  Chunk predict_chunk(const CorrectionSet& c, const Tensor& theta_hat, const Tensor& z, std::size_t first,
                      std::size_t count) const;

  /// Rates after each of the first `intervals` intervals in one graph,
  /// differentiable with respect to the corrections.
  std::vector<Tensor> predict(const CorrectionSet& c, std::size_t factor, std::size_t intervals) const;

  /// Full well set (injectors negative) at times t_0..t_intervals; t_0 uses
  /// the exact initial state.
  rates::RateSeries rate_series(const CorrectionSet& c, std::size_t factor, std::size_t intervals) const;

  /// Producer rates [producers, 2] for a decoded cube at report index `report`.
  Tensor rates_at(const Tensor& cube, std::size_t report, const Tensor& multipliers) const;

  const rom::Surrogate& surrogate;  // must outlive the predictor
  model::ReservoirModel model;
  rates::ConnectionTable table;
  oracle::FluidProperties fluid;
  rates::ProducerLayout layout;
  rom::SurrogateInputs inputs;
  Tensor z0;
  std::vector<Tensor> u_hat;
};

/// Producer history in RatePredictor layout for report times 1..T.
std::vector<std::vector<std::array<double, 2>>> history_matrix(const rates::RateSeries& history,
                                                               const model::ControlSchedule& schedule,
                                                               const rates::ProducerLayout& layout, std::size_t T);

struct HMResult {
  CorrectionSet corrections;
  std::vector<double> loss_curve;  // total loss per iteration, before that iteration's update
  std::size_t iterations = 0;
  bool plateaued = false;
  std::size_t intervals = 0;
};

/// Gradient-based adaptation of the corrections through a frozen surrogate.
HMResult adapt(const rom::Surrogate& surrogate, const model::ReservoirModel& model, const oracle::FluidProperties& fluid,
               const rates::RateSeries& history, const HMConfig& config);

/// Plateau test on a loss curve: improvement of the best loss over the last
/// `window` iterations is below `threshold` relative.
bool plateaued(const std::vector<double>& curve, std::size_t window, double threshold);

/// Pearson correlation; 1 when both series are constant and equal, 0 when
/// only one is constant.
double correlation(const std::vector<double>& a, const std::vector<double>& b);

/// Cumulative volume sum_k q_k * (t_k - t_{k-1}) over report times, the
/// first entry being zero.
std::vector<double> cumulative(const std::vector<double>& times, const std::vector<double>& rates);

struct WellFit {
  std::string well;
  double r_water = 0, r_oil = 0;
  double err_water = 0, err_oil = 0;  // |cum_pred - cum_hist| / |cum_hist| at window end
};

/// Per-producer correlation of cumulative rates and relative cumulative error
/// over report times within [t_lo, t_hi].
std::vector<WellFit> compare_cumulative(const rates::RateSeries& predicted, const rates::RateSeries& history,
                                        const std::vector<std::string>& producers, double t_lo, double t_hi);
double mean_cumulative_error(const std::vector<WellFit>& fits);

/// hm_result directory: corrections/{manifest.json, rock_corr.f64, log_conn.f64},
/// loss_curve.csv, corrected-rates.csv, history-rates.csv, summary.json.
void write_result(const std::filesystem::path& dir, const HMResult& result, const HMConfig& config,
                  const rates::RateSeries& corrected, const rates::RateSeries& history,
                  const std::vector<std::string>& producers, double adapt_end_days, const nlohmann::json& extra = {});
CorrectionSet read_corrections(const std::filesystem::path& dir);
std::vector<double> read_loss_curve(const std::filesystem::path& path);

}  // namespace nres::hm
