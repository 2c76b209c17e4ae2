#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "nres/autodiff/tensor.hpp"

namespace nres::ad {

// Elementwise binary ops broadcast size-1 axes of equal-rank operands; a
// lower-rank operand is padded with trailing singleton axes first, so a
// [1,C] tensor combines with [B,C,D,H,W].
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }
inline Tensor operator*(const Tensor& x, double s) { return scale(x, s); }

Tensor exp(const Tensor& x);
/// log(1 + x); throws ValidationError when some x <= -1.
Tensor log1p(const Tensor& x);
Tensor square(const Tensor& x);
/// x^p for x >= 0 and p >= 1 (Corey-type powers).
Tensor pow_scalar(const Tensor& x, double p);
/// Gradient is 1 strictly inside (lo, hi) and 0 elsewhere.
Tensor clamp(const Tensor& x, double lo, double hi);
/// max(x, 0) with zero gradient where x <= 0.
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.01);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// mean((a - b)^2); shapes must match exactly.
Tensor mse(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Elements [begin, end) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
/// Zero padding along one axis.
Tensor pad(const Tensor& x, std::size_t axis, std::size_t before, std::size_t after);

/// 1-D tensor of x's elements at the given flat (row-major) offsets.
Tensor gather(const Tensor& x, const std::vector<std::size_t>& flat_index);
/// out[segment[i]] += x[i] for a 1-D x; output has `segments` entries.
Tensor segment_sum(const Tensor& x, const std::vector<std::size_t>& segment, std::size_t segments);

using Triple = std::array<std::size_t, 3>;

/// 3-D cross-correlation with zero padding.
/// input [B,Cin,D,H,W], kernel [Cout,Cin,kd,kh,kw], bias [Cout] (may be undefined).
Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Triple stride, Triple padding);

/// [B, C*r^3, D, H, W] -> [B, C, rD, rH, rW]; channel c*r^3 + (dz*r + dy)*r + dx lands
/// at offset (dz, dy, dx) inside each r-block of output channel c.
Tensor voxel_shuffle(const Tensor& input, std::size_t r);

enum class Mode { train, eval };

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool initialized = false;

  /// Running mean 0 and variance 1, the usual starting point.
  static BatchNormState identity(std::size_t channels);
};

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalization over the batch and all trailing axes of [B,C,...].
/// Train mode normalizes with batch statistics and updates `state`; eval mode
/// uses the running statistics and leaves `state` untouched.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode,
                  double eps = kBatchNormEps, double momentum = kBatchNormMomentum);

/// Linear interpolation along one axis to `out_size` samples, corners aligned.
Tensor interpolate_axis(const Tensor& input, std::size_t axis, std::size_t out_size);

/// Corner-aligned trilinear upsampling of [B,C,D,H,W] by integer factors.
Tensor trilinear_upsample(const Tensor& input, Triple factor);

}  // namespace nres::ad
