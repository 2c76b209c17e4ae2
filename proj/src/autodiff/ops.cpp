#include "nres/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "nres/error.hpp"

namespace nres::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

const char* kAxisNames[] = {"batch", "channel", "depth", "height", "width"};

bool wants_grad(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

std::vector<double>& parent_grad(Node& self, std::size_t i) { return self.parents[i]->grad_slot(); }

const std::vector<double>& parent_data(const Node& self, std::size_t i) { return self.parents[i]->data; }

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa = a, pb = b;
  pa.resize(rank, 1);
  pb.resize(rank, 1);
  const auto sa = contiguous_strides(pa);
  const auto sb = contiguous_strides(pb);
  bc.out.resize(rank);
  bc.stride_a.resize(rank);
  bc.stride_b.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b) +
                       " (axis " + std::to_string(i) + ")");
    }
    bc.out[i] = std::max(pa[i], pb[i]);
    bc.stride_a[i] = pa[i] == 1 ? 0 : sa[i];
    bc.stride_b[i] = pb[i] == 1 ? 0 : sb[i];
  }
  return bc;
}

template <class F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const std::size_t n = numel(bc.out);
  if (bc.same) {
    for (std::size_t o = 0; o < n; ++o) f(o, o, o);
    return;
  }
  const std::size_t rank = bc.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      ia += bc.stride_a[ax];
      ib += bc.stride_b[ax];
      if (idx[ax] < bc.out[ax]) break;
      ia -= bc.stride_a[ax] * bc.out[ax];
      ib -= bc.stride_b[ax] * bc.out[ax];
      idx[ax] = 0;
    }
  }
}

enum class BinaryKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  Broadcast bc = broadcast(a.shape(), b.shape(), name);
  const auto da = a.data();
  const auto db = b.data();
  std::vector<double> out(numel(bc.out));
  for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    switch (kind) {
      case BinaryKind::add: out[o] = da[ia] + db[ib]; break;
      case BinaryKind::sub: out[o] = da[ia] - db[ib]; break;
      case BinaryKind::mul: out[o] = da[ia] * db[ib]; break;
    }
  });
  Shape shape = bc.out;
  return Tensor::make_result(std::move(shape), std::move(out), {a, b}, [bc, kind](Node& self) {
    const auto& g = self.grad;
    if (wants_grad(self, 0)) {
      auto& ga = parent_grad(self, 0);
      const auto& vb = parent_data(self, 1);
      for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        ga[ia] += kind == BinaryKind::mul ? g[o] * vb[ib] : g[o];
      });
    }
    if (wants_grad(self, 1)) {
      auto& gb = parent_grad(self, 1);
      const auto& va = parent_data(self, 0);
      for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        switch (kind) {
          case BinaryKind::add: gb[ib] += g[o]; break;
          case BinaryKind::sub: gb[ib] -= g[o]; break;
          case BinaryKind::mul: gb[ib] += g[o] * va[ia]; break;
        }
      });
    }
  });
}

/// Elementwise op given value and local derivative as functions of the input value.
template <class Value, class Derivative>
Tensor unary(const Tensor& x, Value value, Derivative derivative) {
  const auto dx = x.data();
  std::vector<double> out(dx.size());
  std::transform(dx.begin(), dx.end(), out.begin(), value);
  return Tensor::make_result(x.shape(), std::move(out), {x}, [derivative](Node& self) {
    if (!wants_grad(self, 0)) return;
    auto& gx = parent_grad(self, 0);
    const auto& vx = parent_data(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * derivative(vx[i], self.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log1p(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > -1.0)) throw ValidationError("log1p: argument " + std::to_string(v) + " is not greater than -1");
  }
  return unary(x, [](double v) { return std::log1p(v); }, [](double v, double) { return 1.0 / (1.0 + v); });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor pow_scalar(const Tensor& x, double p) {
  if (p < 1.0) throw ValidationError("pow_scalar: exponent must be >= 1");
  return unary(
      x, [p](double v) { return std::pow(v, p); },
      [p](double v, double) { return p == 1.0 ? 1.0 : p * std::pow(v, p - 1.0); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, [slope](double v) { return v >= 0.0 ? v : slope * v; },
      [slope](double v, double) { return v >= 0.0 ? 1.0 : slope; });
}

Tensor sum(const Tensor& x) {
  const auto dx = x.data();
  const double total = std::accumulate(dx.begin(), dx.end(), 0.0);
  return Tensor::make_result({}, {total}, {x}, [](Node& self) {
    if (!wants_grad(self, 0)) return;
    for (auto& g : parent_grad(self, 0)) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const std::size_t n = x.numel();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("mse: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  return mean(square(sub(a, b)));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + to_string(x.shape()) + " cannot become " + to_string(shape));
  }
  std::vector<double> values(x.data().begin(), x.data().end());
  return Tensor::make_result(std::move(shape), std::move(values), {x}, [](Node& self) {
    if (wants_grad(self, 0)) self.parents[0]->accumulate(self.grad);
  });
}

namespace {

/// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool compatible = s.size() == first.size();
    for (std::size_t i = 0; compatible && i < s.size(); ++i) compatible = i == axis || s[i] == first[i];
    if (!compatible) throw ShapeError("concat: " + to_string(s) + " does not match " + to_string(first));
    out_shape[axis] += s[axis];
  }
  const AxisSplit os = split_at(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const AxisSplit ps = split_at(p.shape(), axis);
    const auto src = p.data();
    const std::size_t block = ps.extent * ps.inner;
    for (std::size_t o = 0; o < ps.outer; ++o) {
      std::copy_n(src.begin() + o * block, block, out.begin() + o * os.extent * os.inner + offset * os.inner);
    }
    offset += ps.extent;
  }
  return Tensor::make_result(out_shape, std::move(out), parts, [os, offsets](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      if (!wants_grad(self, k)) continue;
      auto& g = parent_grad(self, k);
      const std::size_t extent = g.size() / (os.outer * os.inner);
      const std::size_t block = extent * os.inner;
      for (std::size_t o = 0; o < os.outer; ++o) {
        const double* src = self.grad.data() + o * os.extent * os.inner + offsets[k] * os.inner;
        for (std::size_t i = 0; i < block; ++i) g[o * block + i] += src[i];
      }
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& in_shape = x.shape();
  if (axis >= in_shape.size() || begin > end || end > in_shape[axis]) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " of " + to_string(in_shape));
  }
  const AxisSplit is = split_at(in_shape, axis);
  Shape out_shape = in_shape;
  out_shape[axis] = end - begin;
  const std::size_t block = (end - begin) * is.inner;
  std::vector<double> out(numel(out_shape));
  const auto src = x.data();
  for (std::size_t o = 0; o < is.outer; ++o) {
    std::copy_n(src.begin() + (o * is.extent + begin) * is.inner, block, out.begin() + o * block);
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {x}, [is, begin, block](Node& self) {
    if (!wants_grad(self, 0)) return;
    auto& g = parent_grad(self, 0);
    for (std::size_t o = 0; o < is.outer; ++o) {
      for (std::size_t i = 0; i < block; ++i) g[(o * is.extent + begin) * is.inner + i] += self.grad[o * block + i];
    }
  });
}

Tensor pad(const Tensor& x, std::size_t axis, std::size_t before, std::size_t after) {
  const Shape& in_shape = x.shape();
  if (axis >= in_shape.size()) throw ShapeError("pad: axis out of range");
  if (before == 0 && after == 0) return x;
  const AxisSplit is = split_at(in_shape, axis);
  Shape out_shape = in_shape;
  out_shape[axis] += before + after;
  const std::size_t out_extent = out_shape[axis];
  const std::size_t block = is.extent * is.inner;
  std::vector<double> out(numel(out_shape), 0.0);
  const auto src = x.data();
  for (std::size_t o = 0; o < is.outer; ++o) {
    std::copy_n(src.begin() + o * block, block, out.begin() + (o * out_extent + before) * is.inner);
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {x},
                             [is, out_extent, before, block](Node& self) {
                               if (!wants_grad(self, 0)) return;
                               auto& g = parent_grad(self, 0);
                               for (std::size_t o = 0; o < is.outer; ++o) {
                                 const double* src = self.grad.data() + (o * out_extent + before) * is.inner;
                                 for (std::size_t i = 0; i < block; ++i) g[o * block + i] += src[i];
                               }
                             });
}

Tensor gather(const Tensor& x, const std::vector<std::size_t>& flat_index) {
  const auto src = x.data();
  std::vector<double> out(flat_index.size());
  for (std::size_t i = 0; i < flat_index.size(); ++i) {
    if (flat_index[i] >= src.size()) {
      throw ShapeError("gather: index " + std::to_string(flat_index[i]) + " outside tensor of " +
                       std::to_string(src.size()) + " elements");
    }
    out[i] = src[flat_index[i]];
  }
  return Tensor::make_result({flat_index.size()}, std::move(out), {x}, [flat_index](Node& self) {
    if (!wants_grad(self, 0)) return;
    auto& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < flat_index.size(); ++i) g[flat_index[i]] += self.grad[i];
  });
}

Tensor segment_sum(const Tensor& x, const std::vector<std::size_t>& segment, std::size_t segments) {
  if (x.rank() != 1 || segment.size() != x.numel()) {
    throw ShapeError("segment_sum: expects a 1-D tensor with one segment id per element");
  }
  const auto src = x.data();
  std::vector<double> out(segments, 0.0);
  for (std::size_t i = 0; i < segment.size(); ++i) {
    if (segment[i] >= segments) throw ShapeError("segment_sum: segment id out of range");
    out[segment[i]] += src[i];
  }
  return Tensor::make_result({segments}, std::move(out), {x}, [segment](Node& self) {
    if (!wants_grad(self, 0)) return;
    auto& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < segment.size(); ++i) g[i] += self.grad[segment[i]];
  });
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace {

struct ConvGeometry {
  std::size_t cin, d, h, w;
  std::size_t cout, kd, kh, kw;
  std::size_t od, oh, ow;
  Triple stride, padding;

  std::size_t patch() const { return cin * kd * kh * kw; }
  std::size_t positions() const { return od * oh * ow; }
};

void im2col(const double* src, const ConvGeometry& g, double* col) {
  const std::size_t positions = g.positions();
  for (std::size_t c = 0; c < g.cin; ++c) {
    const double* plane = src + c * g.d * g.h * g.w;
    for (std::size_t kz = 0; kz < g.kd; ++kz)
      for (std::size_t ky = 0; ky < g.kh; ++ky)
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          double* row = col + (((c * g.kd + kz) * g.kh + ky) * g.kw + kx) * positions;
          for (std::size_t oz = 0; oz < g.od; ++oz) {
            const long iz = static_cast<long>(oz * g.stride[0] + kz) - static_cast<long>(g.padding[0]);
            for (std::size_t oy = 0; oy < g.oh; ++oy) {
              const long iy = static_cast<long>(oy * g.stride[1] + ky) - static_cast<long>(g.padding[1]);
              double* dst = row + (oz * g.oh + oy) * g.ow;
              if (iz < 0 || iz >= static_cast<long>(g.d) || iy < 0 || iy >= static_cast<long>(g.h)) {
                std::fill_n(dst, g.ow, 0.0);
                continue;
              }
              const double* line = plane + (iz * g.h + iy) * g.w;
              for (std::size_t ox = 0; ox < g.ow; ++ox) {
                const long ix = static_cast<long>(ox * g.stride[2] + kx) - static_cast<long>(g.padding[2]);
                dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : line[ix];
              }
            }
          }
        }
  }
}

void col2im(const double* col, const ConvGeometry& g, double* dst) {
  const std::size_t positions = g.positions();
  for (std::size_t c = 0; c < g.cin; ++c) {
    double* plane = dst + c * g.d * g.h * g.w;
    for (std::size_t kz = 0; kz < g.kd; ++kz)
      for (std::size_t ky = 0; ky < g.kh; ++ky)
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const double* row = col + (((c * g.kd + kz) * g.kh + ky) * g.kw + kx) * positions;
          for (std::size_t oz = 0; oz < g.od; ++oz) {
            const long iz = static_cast<long>(oz * g.stride[0] + kz) - static_cast<long>(g.padding[0]);
            if (iz < 0 || iz >= static_cast<long>(g.d)) continue;
            for (std::size_t oy = 0; oy < g.oh; ++oy) {
              const long iy = static_cast<long>(oy * g.stride[1] + ky) - static_cast<long>(g.padding[1]);
              if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
              const double* srcline = row + (oz * g.oh + oy) * g.ow;
              double* line = plane + (iz * g.h + iy) * g.w;
              for (std::size_t ox = 0; ox < g.ow; ++ox) {
                const long ix = static_cast<long>(ox * g.stride[2] + kx) - static_cast<long>(g.padding[2]);
                if (ix >= 0 && ix < static_cast<long>(g.w)) line[ix] += srcline[ox];
              }
            }
          }
        }
  }
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Triple stride, Triple padding) {
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 5) throw ShapeError("conv3d: input must be [B,C,D,H,W], got " + to_string(xs));
  if (ks.size() != 5) throw ShapeError("conv3d: kernel must be [Cout,Cin,kd,kh,kw], got " + to_string(ks));
  if (ks[1] != xs[1]) {
    throw ShapeError("conv3d: channel axis mismatch, input has " + std::to_string(xs[1]) + " channels but kernel expects " +
                     std::to_string(ks[1]));
  }
  if (bias.defined() && bias.shape() != Shape{ks[0]}) {
    throw ShapeError("conv3d: bias shape " + to_string(bias.shape()) + " does not match " + std::to_string(ks[0]) +
                     " output channels");
  }
  ConvGeometry g{xs[1], xs[2], xs[3], xs[4], ks[0], ks[2], ks[3], ks[4], 0, 0, 0, stride, padding};
  const std::array<std::size_t, 3> extent{g.d, g.h, g.w};
  const std::array<std::size_t, 3> kext{g.kd, g.kh, g.kw};
  std::array<std::size_t, 3> out_ext{};
  for (std::size_t a = 0; a < 3; ++a) {
    const std::string axis = kAxisNames[a + 2];
    if (stride[a] == 0) throw ShapeError("conv3d: zero stride on " + axis + " axis");
    const std::size_t padded = extent[a] + 2 * padding[a];
    if (padded < kext[a]) {
      throw ShapeError("conv3d: padded " + axis + " extent " + std::to_string(padded) + " smaller than kernel " +
                       std::to_string(kext[a]));
    }
    out_ext[a] = (padded - kext[a]) / stride[a] + 1;
  }
  g.od = out_ext[0];
  g.oh = out_ext[1];
  g.ow = out_ext[2];

  const std::size_t batch = xs[0];
  const std::size_t K = g.patch();
  const std::size_t P = g.positions();
  const std::size_t in_block = g.cin * g.d * g.h * g.w;
  std::vector<double> cols(batch * K * P);
  std::vector<double> out(batch * g.cout * P);
  ConstMatrixMap W(kernel.data().data(), static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(K));
  for (std::size_t b = 0; b < batch; ++b) {
    double* col = cols.data() + b * K * P;
    im2col(input.data().data() + b * in_block, g, col);
    ConstMatrixMap C(col, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    MatrixMap Y(out.data() + b * g.cout * P, static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(P));
    Y.noalias() = W * C;
    if (bias.defined()) {
      const auto bd = bias.data();
      for (std::size_t co = 0; co < g.cout; ++co) Y.row(static_cast<Eigen::Index>(co)).array() += bd[co];
    }
  }

  std::vector<Tensor> parents{input, kernel};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  return Tensor::make_result(
      {batch, g.cout, g.od, g.oh, g.ow}, std::move(out), std::move(parents),
      [g, batch, K, P, in_block, has_bias, cols = std::move(cols)](Node& self) {
        const Eigen::Index cout = static_cast<Eigen::Index>(g.cout);
        const Eigen::Index k = static_cast<Eigen::Index>(K);
        const Eigen::Index p = static_cast<Eigen::Index>(P);
        ConstMatrixMap W(parent_data(self, 1).data(), cout, k);
        std::vector<double> dcol;
        for (std::size_t b = 0; b < batch; ++b) {
          ConstMatrixMap dY(self.grad.data() + b * g.cout * P, cout, p);
          ConstMatrixMap C(cols.data() + b * K * P, k, p);
          if (wants_grad(self, 1)) {
            MatrixMap dW(parent_grad(self, 1).data(), cout, k);
            dW.noalias() += dY * C.transpose();
          }
          if (has_bias && wants_grad(self, 2)) {
            auto& db = parent_grad(self, 2);
            // Plain loop: a vectorized reduction's order depends on the row's address.
            const double* dy = self.grad.data() + b * g.cout * P;
            for (std::size_t co = 0; co < g.cout; ++co) {
              double acc = 0;
              for (std::size_t j = 0; j < P; ++j) acc += dy[co * P + j];
              db[co] += acc;
            }
          }
          if (wants_grad(self, 0)) {
            dcol.resize(K * P);
            MatrixMap dC(dcol.data(), k, p);
            dC.noalias() = W.transpose() * dY;
            col2im(dcol.data(), g, parent_grad(self, 0).data() + b * in_block);
          }
        }
      });
}

Tensor voxel_shuffle(const Tensor& input, std::size_t r) {
  const Shape& xs = input.shape();
  if (xs.size() != 5) throw ShapeError("voxel_shuffle: input must be [B,C,D,H,W], got " + to_string(xs));
  if (r == 0) throw ShapeError("voxel_shuffle: factor must be positive");
  const std::size_t r3 = r * r * r;
  if (xs[1] % r3 != 0) {
    throw ShapeError("voxel_shuffle: " + std::to_string(xs[1]) + " channels not divisible by r^3 = " +
                     std::to_string(r3));
  }
  const std::size_t B = xs[0], C = xs[1] / r3, D = xs[2], H = xs[3], W = xs[4];
  const std::size_t OD = D * r, OH = H * r, OW = W * r;
  // map[o] = source offset of output element o.
  std::vector<std::size_t> map(input.numel());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t z = 0; z < OD; ++z)
        for (std::size_t y = 0; y < OH; ++y)
          for (std::size_t x = 0; x < OW; ++x) {
            const std::size_t ic = c * r3 + ((z % r) * r + (y % r)) * r + (x % r);
            const std::size_t src = (((b * xs[1] + ic) * D + z / r) * H + y / r) * W + x / r;
            const std::size_t dst = (((b * C + c) * OD + z) * OH + y) * OW + x;
            map[dst] = src;
          }
  const auto src = input.data();
  std::vector<double> out(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = src[map[i]];
  return Tensor::make_result({B, C, OD, OH, OW}, std::move(out), {input}, [map = std::move(map)](Node& self) {
    if (!wants_grad(self, 0)) return;
    auto& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < map.size(); ++i) g[map[i]] += self.grad[i];
  });
}

BatchNormState BatchNormState::identity(std::size_t channels) {
  return BatchNormState{std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0), true};
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode,
                  double eps, double momentum) {
  const Shape& xs = input.shape();
  if (xs.size() < 2) throw ShapeError("batch_norm: input needs [B,C,...], got " + to_string(xs));
  const std::size_t B = xs[0], C = xs[1];
  const std::size_t S = input.numel() / (B * C);
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
    throw ShapeError("batch_norm: gamma/beta must have " + std::to_string(C) + " entries");
  }
  const std::size_t count = B * S;
  const auto x = input.data();
  const auto gm = gamma.data();
  const auto bt = beta.data();
  std::vector<double> mean(C, 0.0), inv_std(C, 0.0);

  if (mode == Mode::train) {
    if (count < 2) throw ShapeError("batch_norm: train mode needs at least two values per channel");
    std::vector<double> var(C, 0.0);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const double* v = x.data() + (b * C + c) * S;
        for (std::size_t s = 0; s < S; ++s) mean[c] += v[s];
      }
    for (auto& m : mean) m /= static_cast<double>(count);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const double* v = x.data() + (b * C + c) * S;
        for (std::size_t s = 0; s < S; ++s) var[c] += (v[s] - mean[c]) * (v[s] - mean[c]);
      }
    if (!state.initialized) state = BatchNormState::identity(C);
    if (state.running_mean.size() != C) throw ShapeError("batch_norm: running state has wrong channel count");
    for (std::size_t c = 0; c < C; ++c) {
      const double biased = var[c] / static_cast<double>(count);
      inv_std[c] = 1.0 / std::sqrt(biased + eps);
      const double unbiased = var[c] / static_cast<double>(count - 1);
      state.running_mean[c] = (1.0 - momentum) * state.running_mean[c] + momentum * mean[c];
      state.running_var[c] = (1.0 - momentum) * state.running_var[c] + momentum * unbiased;
    }
  } else {
    if (!state.initialized) throw ContractError("batch_norm: eval mode with uninitialized running statistics");
    if (state.running_mean.size() != C) throw ShapeError("batch_norm: running state has wrong channel count");
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
    }
  }

  std::vector<double> xhat(input.numel());
  std::vector<double> out(input.numel());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (b * C + c) * S;
      for (std::size_t s = 0; s < S; ++s) {
        xhat[base + s] = (x[base + s] - mean[c]) * inv_std[c];
        out[base + s] = gm[c] * xhat[base + s] + bt[c];
      }
    }

  const bool batch_stats = mode == Mode::train;
  return Tensor::make_result(
      xs, std::move(out), {input, gamma, beta},
      [B, C, S, count, batch_stats, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& self) {
        const auto& dy = self.grad;
        const auto& gm = parent_data(self, 1);
        std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (b * C + c) * S;
            for (std::size_t s = 0; s < S; ++s) {
              sum_dy[c] += dy[base + s];
              sum_dy_xhat[c] += dy[base + s] * xhat[base + s];
            }
          }
        if (wants_grad(self, 1)) {
          auto& gg = parent_grad(self, 1);
          for (std::size_t c = 0; c < C; ++c) gg[c] += sum_dy_xhat[c];
        }
        if (wants_grad(self, 2)) {
          auto& gb = parent_grad(self, 2);
          for (std::size_t c = 0; c < C; ++c) gb[c] += sum_dy[c];
        }
        if (wants_grad(self, 0)) {
          auto& gx = parent_grad(self, 0);
          const double n = static_cast<double>(count);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t base = (b * C + c) * S;
              const double k = gm[c] * inv_std[c];
              for (std::size_t s = 0; s < S; ++s) {
                gx[base + s] += batch_stats
                                    ? k * (dy[base + s] - sum_dy[c] / n - xhat[base + s] * sum_dy_xhat[c] / n)
                                    : k * dy[base + s];
              }
            }
        }
      });
}

Tensor interpolate_axis(const Tensor& input, std::size_t axis, std::size_t out_size) {
  const Shape& xs = input.shape();
  if (axis >= xs.size()) throw ShapeError("interpolate_axis: axis out of range");
  if (out_size == 0) throw ShapeError("interpolate_axis: empty output");
  const AxisSplit is = split_at(xs, axis);
  const std::size_t n = is.extent;
  if (n == out_size) return input;
  std::vector<std::size_t> lo(out_size), hi(out_size);
  std::vector<double> wt(out_size);
  for (std::size_t o = 0; o < out_size; ++o) {
    const double src = (n == 1 || out_size == 1)
                           ? 0.0
                           : static_cast<double>(o) * static_cast<double>(n - 1) / static_cast<double>(out_size - 1);
    lo[o] = std::min(static_cast<std::size_t>(std::floor(src)), n - 1);
    hi[o] = std::min(lo[o] + 1, n - 1);
    wt[o] = src - static_cast<double>(lo[o]);
  }
  Shape out_shape = xs;
  out_shape[axis] = out_size;
  std::vector<double> out(numel(out_shape));
  const auto x = input.data();
  for (std::size_t a = 0; a < is.outer; ++a)
    for (std::size_t o = 0; o < out_size; ++o) {
      const double* l = x.data() + (a * n + lo[o]) * is.inner;
      const double* h = x.data() + (a * n + hi[o]) * is.inner;
      double* dst = out.data() + (a * out_size + o) * is.inner;
      for (std::size_t i = 0; i < is.inner; ++i) dst[i] = (1.0 - wt[o]) * l[i] + wt[o] * h[i];
    }
  return Tensor::make_result(std::move(out_shape), std::move(out), {input},
                             [is, n, out_size, lo = std::move(lo), hi = std::move(hi), wt = std::move(wt)](Node& self) {
                               if (!wants_grad(self, 0)) return;
                               auto& g = parent_grad(self, 0);
                               for (std::size_t a = 0; a < is.outer; ++a)
                                 for (std::size_t o = 0; o < out_size; ++o) {
                                   const double* src = self.grad.data() + (a * out_size + o) * is.inner;
                                   double* l = g.data() + (a * n + lo[o]) * is.inner;
                                   double* h = g.data() + (a * n + hi[o]) * is.inner;
                                   for (std::size_t i = 0; i < is.inner; ++i) {
                                     l[i] += (1.0 - wt[o]) * src[i];
                                     h[i] += wt[o] * src[i];
                                   }
                                 }
                             });
}

Tensor trilinear_upsample(const Tensor& input, Triple factor) {
  if (input.rank() != 5) throw ShapeError("trilinear_upsample: input must be [B,C,D,H,W], got " + to_string(input.shape()));
  Tensor out = input;
  for (std::size_t a = 0; a < 3; ++a) {
    if (factor[a] == 0) throw ShapeError("trilinear_upsample: zero factor on " + std::string(kAxisNames[a + 2]) + " axis");
    out = interpolate_axis(out, a + 2, input.dim(a + 2) * factor[a]);
  }
  return out;
}

}  // namespace nres::ad
