#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "nres/autodiff/ops.hpp"
#include "nres/autodiff/tensor.hpp"
#include "nres/model/reservoir.hpp"
#include "nres/oracle/fluid.hpp"
#include "nres/rates/rates.hpp"

namespace nres::rom {

using ad::Mode;
using ad::Tensor;

constexpr std::size_t kStateChannels = 2;    // pressure, water saturation
constexpr std::size_t kStaticChannels = 4;   // porosity, ln k_x, ln k_y, ln k_z
constexpr std::size_t kControlChannels = 2;  // producer BHP, injector rate

/// Per-channel z-score statistics plus control scales.
struct Normalization {
  std::array<double, kStateChannels> state_mean{0, 0}, state_std{1, 1};
  std::array<double, kStaticChannels> static_mean{0, 0, 0, 0}, static_std{1, 1, 1, 1};
  double bhp_scale = 1;   // Pa
  double rate_scale = 1;  // m3/day

  void validate() const;
};

struct SurrogateConfig {
  std::size_t latent_channels = 8;
  std::size_t static_latent_channels = 8;
  std::size_t control_latent_channels = 8;
  std::array<std::size_t, 3> encoder_hidden{16, 32, 32};  // the fourth layer emits the latent channels
  std::array<std::size_t, 4> encoder_strides{1, 2, 1, 2};
  std::array<std::size_t, 3> decoder_channels{32, 32, 64};    // before the C_s * r^3 output layer
  std::size_t rhs_hidden = 64;
  std::size_t kernel = 3;
  double leaky_slope = 0.01;
  /// Batch norm in the static encoder. Off by default: with one scenario per
  /// batch it would normalize away scenario-wide rock changes during training.
  bool static_batch_norm = false;
  double step_days = 30.0;        // Euler step
  double time_scale_days = 60.0;  // z' is measured per this many days
  /// Grid the surrogate was built for, plus zero padding up to multiples of r.
  std::array<std::size_t, 3> grid_zyx{0, 0, 0};
  std::array<std::size_t, 3> pad_zyx{0, 0, 0};
  Normalization norm;

  /// Sets grid_zyx and the smallest padding making each extent divisible by r.
  void set_grid(const model::GridGeometry& grid);
  std::size_t upsampling() const;  // product of encoder strides, r
  std::array<std::size_t, 3> padded_zyx() const;
  std::array<std::size_t, 3> latent_zyx() const;
  void validate() const;
  nlohmann::json to_json() const;
  static SurrogateConfig from_json(const nlohmann::json& j);
};

/// Conv3d with optional batch norm and leaky ReLU.
struct ConvLayer {
  std::string name;
  Tensor weight, bias;
  std::size_t stride = 1;
  std::size_t padding = 1;
  bool norm = false;
  bool activation = false;
  Tensor gamma, beta;
  ad::BatchNormState bn;
};

class ConvStack {
 public:
  std::vector<ConvLayer> layers;
  double bn_momentum = ad::kBatchNormMomentum;

  Tensor forward(const Tensor& x, Mode mode, double slope);
  /// Eval-mode forward that never touches batch-norm state.
  Tensor infer(const Tensor& x, double slope) const;
};

/// Tensors for one reservoir, in the surrogate's normalized, padded layout.
struct SurrogateInputs {
  Tensor mask;            // [1,1,D,H,W]: 1 on active cells
  Tensor static_cube;     // [1,4,D,H,W]
  Tensor initial_state;   // [1,2,D,H,W]
  std::vector<Tensor> controls;  // per control interval, [1,2,D,H,W]
  std::vector<double> times;     // report times (days) = schedule times
  std::vector<std::size_t> steps_per_interval;
};

/// Normalized static cube for given rock properties (active cells only).
Tensor static_cube(const SurrogateConfig& cfg, const model::GridGeometry& grid, const model::RockProperties& rock);
/// Normalized (pressure, sw) cube.
Tensor state_cube(const SurrogateConfig& cfg, const model::GridGeometry& grid, const model::ReservoirState& state);
Tensor mask_cube(const SurrogateConfig& cfg, const model::GridGeometry& grid);
/// Channel 0: BHP / bhp_scale at producer connection cells; channel 1:
/// injection rate / rate_scale at injector connection cells.
Tensor rasterize_control(const SurrogateConfig& cfg, const model::ReservoirModel& model,
                         const rates::ConnectionTable& table, std::size_t interval);

SurrogateInputs prepare_inputs(const SurrogateConfig& cfg, const model::ReservoirModel& model,
                               const rates::ConnectionTable& table);

/// Denormalized state of the unpadded grid from a decoded cube [1,2,D,H,W].
model::ReservoirState to_state(const SurrogateConfig& cfg, const model::GridGeometry& grid, const Tensor& cube);
/// Differentiable physical fields, one value per unpadded grid cell in flat order.
struct PhysicalFields {
  Tensor pressure;   // Pa
  Tensor sat_water;  // fraction (unclamped)
};
PhysicalFields to_physical(const SurrogateConfig& cfg, const Tensor& cube);

class Surrogate {
 public:
  Surrogate() = default;
  Surrogate(SurrogateConfig config, std::uint64_t seed);

  const SurrogateConfig& config() const { return config_; }

  // Each stage has a mutable overload taking a Mode (training) and a const
  // overload that runs in eval mode without touching batch-norm state.
  Tensor encode_state(const Tensor& s, Mode mode);
  Tensor encode_state(const Tensor& s) const;
  Tensor encode_static(const Tensor& theta, Mode mode);
  Tensor encode_static(const Tensor& theta) const;
  Tensor encode_control(const Tensor& u, Mode mode);
  Tensor encode_control(const Tensor& u) const;
  Tensor latent_rhs(const Tensor& z, const Tensor& u_hat, const Tensor& theta_hat, Mode mode);
  Tensor latent_rhs(const Tensor& z, const Tensor& u_hat, const Tensor& theta_hat) const;
  /// Decoded normalized state [1,2,D,H,W], inactive cells zeroed.
  Tensor decode_state(const Tensor& z, const Tensor& mask, Mode mode);
  Tensor decode_state(const Tensor& z, const Tensor& mask) const;

  /// Forward-Euler rollout over `u_hat.size()` control intervals with
  /// `steps[k]` Euler steps in interval k. Returns z at the end of each
  /// interval, preceded by z0.
  std::vector<Tensor> integrate(const Tensor& z0, const std::vector<Tensor>& u_hat, const Tensor& theta_hat,
                                const std::vector<std::size_t>& steps, Mode mode);
  std::vector<Tensor> integrate(const Tensor& z0, const std::vector<Tensor>& u_hat, const Tensor& theta_hat,
                                const std::vector<std::size_t>& steps) const;

  /// Encode, integrate over the first `intervals` report intervals and decode
  /// at each report time. Element 0 reconstructs the initial state.
  std::vector<Tensor> rollout(const SurrogateInputs& in, std::size_t intervals, Mode mode);
  std::vector<Tensor> rollout(const SurrogateInputs& in, std::size_t intervals) const;

  /// Replaces the batch-norm running statistics by their average over train-mode
  /// rollouts of `samples` (weights are not changed).
  void recalibrate_batch_norm(const std::vector<const SurrogateInputs*>& samples, std::size_t intervals);

  /// Sets requires_grad on every weight (false for inference-only copies).
  void set_trainable(bool trainable);

  std::vector<Tensor> parameters();
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<const ad::BatchNormState*> bn_states() const;
  std::size_t parameter_count() const;

  /// Copies of all weights and batch-norm statistics, for snapshot/compare.
  std::vector<double> flat_weights() const;
  void load_flat_weights(const std::vector<double>& flat);

  void save(const std::filesystem::path& dir) const;
  static Surrogate load(const std::filesystem::path& dir);

  ConvStack enc_state, enc_static, enc_control, rhs, decoder;

 private:
  SurrogateConfig config_;
  std::vector<ConvStack*> stacks();
  std::vector<const ConvStack*> stacks() const;

  template <class Self>
  static std::vector<Tensor> integrate_impl(Self& self, const Tensor& z0, const std::vector<Tensor>& u_hat,
                                            const Tensor& theta_hat, const std::vector<std::size_t>& steps, Mode mode);
  template <class Self>
  static std::vector<Tensor> rollout_impl(Self& self, const SurrogateInputs& in, std::size_t intervals, Mode mode);
};

/// Trained-surrogate forecast for a reservoir model: states and rates at the
/// schedule times (element 0 is the initial state itself).
struct Forecast {
  std::vector<double> times;
  std::vector<model::ReservoirState> states;
  rates::RateSeries rates;
};

Forecast simulate(const Surrogate& surrogate, const model::ReservoirModel& model, const oracle::FluidProperties& fluid,
                  std::size_t intervals);

/// Producer rates [producers, 2] in m3/day from a decoded cube, differentiable
/// with respect to the cube and the connection multipliers.
Tensor producer_rates_from_cube(const SurrogateConfig& cfg, const Tensor& cube, const rates::ProducerLayout& layout,
                                const std::vector<double>& bhp_pa, const oracle::FluidProperties& fluid,
                                const Tensor& multipliers = {});

}  // namespace nres::rom
