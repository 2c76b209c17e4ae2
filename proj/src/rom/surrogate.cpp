#include "nres/rom/surrogate.hpp"

#include <algorithm>
#include <cmath>

#include "nres/error.hpp"
#include "nres/io.hpp"
#include "nres/model/units.hpp"
#include "nres/rng.hpp"

namespace nres::rom {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "nres-surrogate";

template <std::size_t N>
json arr(const std::array<double, N>& a) {
  return json(std::vector<double>(a.begin(), a.end()));
}

template <std::size_t N>
std::array<double, N> arr_from(const json& j, const char* key) {
  auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != N) throw ValidationError(std::string("surrogate config: ") + key + " has wrong length");
  std::array<double, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

double log_perm(double k_md) { return std::log(std::max(k_md, 1e-6)); }

}  // namespace

void Normalization::validate() const {
  for (double s : state_std)
    if (!(s > 0) || !std::isfinite(s)) throw ValidationError("normalization: state std must be > 0");
  for (double s : static_std)
    if (!(s > 0) || !std::isfinite(s)) throw ValidationError("normalization: static std must be > 0");
  if (!(bhp_scale > 0) || !(rate_scale > 0)) throw ValidationError("normalization: control scales must be > 0");
}

void SurrogateConfig::set_grid(const model::GridGeometry& grid) {
  grid_zyx = {grid.nz, grid.ny, grid.nx};
  const std::size_t r = upsampling();
  for (std::size_t a = 0; a < 3; ++a) pad_zyx[a] = (r - grid_zyx[a] % r) % r;
}

std::size_t SurrogateConfig::upsampling() const {
  std::size_t r = 1;
  for (auto s : encoder_strides) r *= s;
  return r;
}

std::array<std::size_t, 3> SurrogateConfig::padded_zyx() const {
  return {grid_zyx[0] + pad_zyx[0], grid_zyx[1] + pad_zyx[1], grid_zyx[2] + pad_zyx[2]};
}

std::array<std::size_t, 3> SurrogateConfig::latent_zyx() const {
  const auto p = padded_zyx();
  const std::size_t r = upsampling();
  return {p[0] / r, p[1] / r, p[2] / r};
}

void SurrogateConfig::validate() const {
  const std::size_t r = upsampling();
  if (r < 1) throw ValidationError("surrogate config: strides must be >= 1");
  for (std::size_t a = 0; a < 3; ++a) {
    if (grid_zyx[a] < 1) throw ValidationError("surrogate config: grid extents not set");
    if ((grid_zyx[a] + pad_zyx[a]) % r != 0)
      throw ValidationError("surrogate config: padded extents must be divisible by the upsampling factor " +
                            std::to_string(r) + "; pad the grid");
  }
  if (kernel % 2 == 0) throw ValidationError("surrogate config: kernel must be odd");
  if (!(step_days > 0) || !(time_scale_days > 0)) throw ValidationError("surrogate config: step and time scale must be > 0");
  norm.validate();
}

json SurrogateConfig::to_json() const {
  return {{"latent_channels", latent_channels},
          {"static_latent_channels", static_latent_channels},
          {"control_latent_channels", control_latent_channels},
          {"encoder_hidden", encoder_hidden},
          {"encoder_strides", encoder_strides},
          {"decoder_channels", decoder_channels},
          {"rhs_hidden", rhs_hidden},
          {"kernel", kernel},
          {"static_batch_norm", static_batch_norm},
          {"leaky_slope", leaky_slope},
          {"step_days", step_days},
          {"time_scale_days", time_scale_days},
          {"grid_zyx", grid_zyx},
          {"pad_zyx", pad_zyx},
          {"normalization",
           {{"state_mean", arr(norm.state_mean)},
            {"state_std", arr(norm.state_std)},
            {"static_mean", arr(norm.static_mean)},
            {"static_std", arr(norm.static_std)},
            {"bhp_scale_pa", norm.bhp_scale},
            {"rate_scale_m3_per_day", norm.rate_scale},
            {"state_channels", {"pressure_pa", "sat_water"}},
            {"static_channels", {"porosity", "ln_perm_x_md", "ln_perm_y_md", "ln_perm_z_md"}}}}};
}

SurrogateConfig SurrogateConfig::from_json(const json& j) {
  SurrogateConfig c;
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.static_latent_channels = j.value("static_latent_channels", c.static_latent_channels);
  c.control_latent_channels = j.value("control_latent_channels", c.control_latent_channels);
  if (j.contains("encoder_hidden")) c.encoder_hidden = j.at("encoder_hidden").get<std::array<std::size_t, 3>>();
  if (j.contains("encoder_strides")) c.encoder_strides = j.at("encoder_strides").get<std::array<std::size_t, 4>>();
  if (j.contains("decoder_channels")) c.decoder_channels = j.at("decoder_channels").get<std::array<std::size_t, 3>>();
  c.rhs_hidden = j.value("rhs_hidden", c.rhs_hidden);
  c.kernel = j.value("kernel", c.kernel);
  c.static_batch_norm = j.value("static_batch_norm", c.static_batch_norm);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.step_days = j.value("step_days", c.step_days);
  c.time_scale_days = j.value("time_scale_days", c.time_scale_days);
  if (j.contains("grid_zyx")) c.grid_zyx = j.at("grid_zyx").get<std::array<std::size_t, 3>>();
  if (j.contains("pad_zyx")) c.pad_zyx = j.at("pad_zyx").get<std::array<std::size_t, 3>>();
  if (j.contains("normalization")) {
    const auto& n = j.at("normalization");
    c.norm.state_mean = arr_from<kStateChannels>(n, "state_mean");
    c.norm.state_std = arr_from<kStateChannels>(n, "state_std");
    c.norm.static_mean = arr_from<kStaticChannels>(n, "static_mean");
    c.norm.static_std = arr_from<kStaticChannels>(n, "static_std");
    c.norm.bhp_scale = n.at("bhp_scale_pa").get<double>();
    c.norm.rate_scale = n.at("rate_scale_m3_per_day").get<double>();
  }
  return c;
}

Tensor ConvStack::forward(const Tensor& x, Mode mode, double slope) {
  Tensor y = x;
  for (auto& l : layers) {
    y = ad::conv3d(y, l.weight, l.bias, {l.stride, l.stride, l.stride}, {l.padding, l.padding, l.padding});
    if (l.norm) y = ad::batch_norm(y, l.gamma, l.beta, l.bn, mode, ad::kBatchNormEps, bn_momentum);
    if (l.activation) y = ad::leaky_relu(y, slope);
  }
  return y;
}

Tensor ConvStack::infer(const Tensor& x, double slope) const {
  Tensor y = x;
  for (const auto& l : layers) {
    y = ad::conv3d(y, l.weight, l.bias, {l.stride, l.stride, l.stride}, {l.padding, l.padding, l.padding});
    if (l.norm) {
      ad::BatchNormState frozen = l.bn;
      y = ad::batch_norm(y, l.gamma, l.beta, frozen, Mode::eval);
    }
    if (l.activation) y = ad::leaky_relu(y, slope);
  }
  return y;
}

namespace {

/// Fills a padded [1,C,D,H,W] cube from per-cell values of active cells.
template <class F>
Tensor fill_cube(const SurrogateConfig& cfg, const model::GridGeometry& grid, std::size_t channels, F&& value) {
  if (grid.nz != cfg.grid_zyx[0] || grid.ny != cfg.grid_zyx[1] || grid.nx != cfg.grid_zyx[2])
    throw ValidationError("surrogate was built for a " + std::to_string(cfg.grid_zyx[2]) + "x" +
                          std::to_string(cfg.grid_zyx[1]) + "x" + std::to_string(cfg.grid_zyx[0]) +
                          " grid, model grid is " + std::to_string(grid.nx) + "x" + std::to_string(grid.ny) + "x" +
                          std::to_string(grid.nz));
  const auto p = cfg.padded_zyx();
  const std::size_t vol = p[0] * p[1] * p[2];
  std::vector<double> data(channels * vol, 0.0);
  for (std::size_t k = 0; k < grid.nz; ++k)
    for (std::size_t j = 0; j < grid.ny; ++j)
      for (std::size_t i = 0; i < grid.nx; ++i) {
        const std::size_t cell = grid.index(i, j, k);
        if (!grid.is_active(cell)) continue;
        const std::size_t off = (k * p[1] + j) * p[2] + i;
        for (std::size_t c = 0; c < channels; ++c) data[c * vol + off] = value(c, cell);
      }
  return Tensor::from({1, channels, p[0], p[1], p[2]}, std::move(data));
}

}  // namespace

Tensor static_cube(const SurrogateConfig& cfg, const model::GridGeometry& grid, const model::RockProperties& rock) {
  const auto& n = cfg.norm;
  return fill_cube(cfg, grid, kStaticChannels, [&](std::size_t c, std::size_t cell) {
    double v = 0;
    switch (c) {
      case 0: v = rock.porosity[cell]; break;
      case 1: v = log_perm(rock.perm_x[cell]); break;
      case 2: v = log_perm(rock.perm_y[cell]); break;
      default: v = log_perm(rock.perm_z[cell]); break;
    }
    return (v - n.static_mean[c]) / n.static_std[c];
  });
}

Tensor state_cube(const SurrogateConfig& cfg, const model::GridGeometry& grid, const model::ReservoirState& s) {
  const auto& n = cfg.norm;
  return fill_cube(cfg, grid, kStateChannels, [&](std::size_t c, std::size_t cell) {
    const double v = c == 0 ? s.pressure[cell] : s.sat_water[cell];
    return (v - n.state_mean[c]) / n.state_std[c];
  });
}

Tensor mask_cube(const SurrogateConfig& cfg, const model::GridGeometry& grid) {
  return fill_cube(cfg, grid, 1, [](std::size_t, std::size_t) { return 1.0; });
}

Tensor rasterize_control(const SurrogateConfig& cfg, const model::ReservoirModel& model,
                         const rates::ConnectionTable& table, std::size_t interval) {
  const auto& grid = model.grid;
  const auto p = cfg.padded_zyx();
  const std::size_t vol = p[0] * p[1] * p[2];
  std::vector<double> data(kControlChannels * vol, 0.0);
  for (std::size_t c = 0; c < table.connections.size(); ++c) {
    const auto& conn = table.connections[c];
    const std::size_t w = table.well_of[c];
    const std::size_t off = (conn.k * p[1] + conn.j) * p[2] + conn.i;
    if (table.kinds[w] == model::WellKind::producer) {
      data[off] += units::bar_to_pa(model.schedule.bhp.at(table.wells[w]).at(interval)) / cfg.norm.bhp_scale;
    } else {
      data[vol + off] += model.schedule.injection_rate.at(table.wells[w]).at(interval) / cfg.norm.rate_scale;
    }
  }
  (void)grid;
  return Tensor::from({1, kControlChannels, p[0], p[1], p[2]}, std::move(data));
}

SurrogateInputs prepare_inputs(const SurrogateConfig& cfg, const model::ReservoirModel& model,
                               const rates::ConnectionTable& table) {
  SurrogateInputs in;
  in.mask = mask_cube(cfg, model.grid);
  in.static_cube = static_cube(cfg, model.grid, model.rock);
  in.initial_state = state_cube(cfg, model.grid, model.initial.to_si());
  in.times = model.schedule.times;
  for (std::size_t k = 0; k + 1 < in.times.size(); ++k) {
    in.controls.push_back(rasterize_control(cfg, model, table, k));
    const double len = in.times[k + 1] - in.times[k];
    in.steps_per_interval.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(len / cfg.step_days))));
  }
  return in;
}

PhysicalFields to_physical(const SurrogateConfig& cfg, const Tensor& cube) {
  const auto& g = cfg.grid_zyx;
  const std::size_t n = g[0] * g[1] * g[2];
  Tensor c = cube;
  if (cfg.pad_zyx != std::array<std::size_t, 3>{0, 0, 0}) {
    c = ad::slice(c, 2, 0, g[0]);
    c = ad::slice(c, 3, 0, g[1]);
    c = ad::slice(c, 4, 0, g[2]);
  }
  const auto& nm = cfg.norm;
  PhysicalFields f;
  f.pressure = ad::add_scalar(ad::scale(ad::reshape(ad::slice(c, 1, 0, 1), {n}), nm.state_std[0]), nm.state_mean[0]);
  f.sat_water = ad::add_scalar(ad::scale(ad::reshape(ad::slice(c, 1, 1, 2), {n}), nm.state_std[1]), nm.state_mean[1]);
  return f;
}

model::ReservoirState to_state(const SurrogateConfig& cfg, const model::GridGeometry& grid, const Tensor& cube) {
  ad::NoGradGuard guard;
  const auto f = to_physical(cfg, cube);
  model::ReservoirState s;
  const std::size_t n = grid.cells();
  s.pressure.assign(n, 0.0);
  s.sat_water.assign(n, 0.0);
  s.sat_oil.assign(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    if (!grid.is_active(c)) continue;
    s.pressure[c] = f.pressure.at(c);
    s.sat_water[c] = std::clamp(f.sat_water.at(c), 0.0, 1.0);
    s.sat_oil[c] = 1.0 - s.sat_water[c];
  }
  return s;
}

Tensor producer_rates_from_cube(const SurrogateConfig& cfg, const Tensor& cube, const rates::ProducerLayout& layout,
                                const std::vector<double>& bhp_pa, const oracle::FluidProperties& fluid,
                                const Tensor& multipliers) {
  const auto f = to_physical(cfg, cube);
  return rates::producer_rates(f.pressure, f.sat_water, layout, bhp_pa, fluid, multipliers);
}

namespace {

ConvLayer make_layer(const std::string& name, std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t stride,
                     bool norm, bool activation, double init_std, Philox& rng) {
  ConvLayer l;
  l.name = name;
  l.stride = stride;
  l.padding = kernel / 2;
  l.norm = norm;
  l.activation = activation;
  std::vector<double> w(cout * cin * kernel * kernel * kernel);
  for (auto& v : w) v = init_std * rng.normal();
  l.weight = Tensor::from({cout, cin, kernel, kernel, kernel}, std::move(w), true);
  if (norm) {
    l.gamma = Tensor::full({cout}, 1.0, true);
    l.beta = Tensor::zeros({cout}, true);
    l.bn = ad::BatchNormState::identity(cout);
  } else {
    l.bias = Tensor::zeros({cout}, true);
  }
  return l;
}

double he_std(std::size_t cin, std::size_t k) { return std::sqrt(2.0 / static_cast<double>(cin * k * k * k)); }
double lecun_std(std::size_t cin, std::size_t k) { return std::sqrt(1.0 / static_cast<double>(cin * k * k * k)); }

ConvStack make_encoder(const std::string& name, const SurrogateConfig& c, std::size_t cin, std::size_t cout, bool norm,
                       Philox& rng) {
  ConvStack s;
  std::size_t prev = cin;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t out = c.encoder_hidden[i];
    s.layers.push_back(make_layer(name + "." + std::to_string(i), prev, out, c.kernel, c.encoder_strides[i], norm, true,
                                  he_std(prev, c.kernel), rng));
    prev = out;
  }
  s.layers.push_back(make_layer(name + ".3", prev, cout, c.kernel, c.encoder_strides[3], false, false,
                                lecun_std(prev, c.kernel), rng));
  return s;
}

}  // namespace

Surrogate::Surrogate(SurrogateConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  Philox rng(seed);
  enc_state = make_encoder("enc_state", c, kStateChannels, c.latent_channels, true, rng);
  enc_static = make_encoder("enc_static", c, kStaticChannels, c.static_latent_channels, c.static_batch_norm, rng);
  enc_control = make_encoder("enc_control", c, kControlChannels, c.control_latent_channels, true, rng);

  const std::size_t rin = c.latent_channels + c.control_latent_channels + c.static_latent_channels;
  rhs.layers.push_back(make_layer("rhs.0", rin, c.rhs_hidden, c.kernel, 1, false, true, he_std(rin, c.kernel), rng));
  rhs.layers.push_back(make_layer("rhs.1", c.rhs_hidden, c.latent_channels, c.kernel, 1, false, false, 0.0, rng));

  const std::size_t r = c.upsampling();
  std::size_t prev = c.latent_channels;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t out = c.decoder_channels[i];
    decoder.layers.push_back(make_layer("decoder." + std::to_string(i), prev, out, c.kernel, 1, true, true,
                                        he_std(prev, c.kernel), rng));
    prev = out;
  }
  decoder.layers.push_back(make_layer("decoder.3", prev, kStateChannels * r * r * r, c.kernel, 1, false, false,
                                      lecun_std(prev, c.kernel), rng));
}

namespace {

void check_cube(const Tensor& x, std::size_t channels, const std::array<std::size_t, 3>& zyx, std::size_t r,
                const char* what) {
  const auto& s = x.shape();
  if (s.size() != 5 || s[1] != channels)
    throw ShapeError(std::string(what) + ": expected [B," + std::to_string(channels) + ",D,H,W], got " + ad::to_string(s));
  for (std::size_t a = 0; a < 3; ++a) {
    if (s[a + 2] % r != 0)
      throw ShapeError(std::string(what) + ": spatial extent " + std::to_string(s[a + 2]) +
                       " is not divisible by the upsampling factor " + std::to_string(r) + "; pad the grid");
    if (zyx[a] != 0 && s[a + 2] != zyx[a])
      throw ShapeError(std::string(what) + ": spatial extents " + ad::to_string(s) + " do not match the surrogate grid");
  }
}

}  // namespace

Tensor Surrogate::encode_state(const Tensor& s, Mode mode) {
  check_cube(s, kStateChannels, config_.padded_zyx(), config_.upsampling(), "encode_state");
  return enc_state.forward(s, mode, config_.leaky_slope);
}
Tensor Surrogate::encode_state(const Tensor& s) const {
  check_cube(s, kStateChannels, config_.padded_zyx(), config_.upsampling(), "encode_state");
  return enc_state.infer(s, config_.leaky_slope);
}
Tensor Surrogate::encode_static(const Tensor& t, Mode mode) {
  check_cube(t, kStaticChannels, config_.padded_zyx(), config_.upsampling(), "encode_static");
  return enc_static.forward(t, mode, config_.leaky_slope);
}
Tensor Surrogate::encode_static(const Tensor& t) const {
  check_cube(t, kStaticChannels, config_.padded_zyx(), config_.upsampling(), "encode_static");
  return enc_static.infer(t, config_.leaky_slope);
}
Tensor Surrogate::encode_control(const Tensor& u, Mode mode) {
  check_cube(u, kControlChannels, config_.padded_zyx(), config_.upsampling(), "encode_control");
  return enc_control.forward(u, mode, config_.leaky_slope);
}
Tensor Surrogate::encode_control(const Tensor& u) const {
  check_cube(u, kControlChannels, config_.padded_zyx(), config_.upsampling(), "encode_control");
  return enc_control.infer(u, config_.leaky_slope);
}

namespace {

Tensor rhs_input(const Tensor& z, const Tensor& u, const Tensor& th) {
  auto spatial = [](const Tensor& t) { return ad::Shape(t.shape().begin() + 2, t.shape().end()); };
  if (z.rank() != 5 || u.rank() != 5 || th.rank() != 5 || spatial(z) != spatial(u) || spatial(z) != spatial(th))
    throw ShapeError("latent_rhs: z, u_hat and theta_hat must share the latent grid (" + ad::to_string(z.shape()) +
                     ", " + ad::to_string(u.shape()) + ", " + ad::to_string(th.shape()) + ")");
  return ad::concat({z, u, th}, 1);
}

}  // namespace

Tensor Surrogate::latent_rhs(const Tensor& z, const Tensor& u, const Tensor& th, Mode mode) {
  return rhs.forward(rhs_input(z, u, th), mode, config_.leaky_slope);
}
Tensor Surrogate::latent_rhs(const Tensor& z, const Tensor& u, const Tensor& th) const {
  return rhs.infer(rhs_input(z, u, th), config_.leaky_slope);
}

Tensor Surrogate::decode_state(const Tensor& z, const Tensor& mask, Mode mode) {
  Tensor y = ad::voxel_shuffle(decoder.forward(z, mode, config_.leaky_slope), config_.upsampling());
  return mask.defined() ? y * mask : y;
}
Tensor Surrogate::decode_state(const Tensor& z, const Tensor& mask) const {
  Tensor y = ad::voxel_shuffle(decoder.infer(z, config_.leaky_slope), config_.upsampling());
  return mask.defined() ? y * mask : y;
}

template <class Self>
std::vector<Tensor> Surrogate::integrate_impl(Self& self, const Tensor& z0, const std::vector<Tensor>& u_hat,
                                              const Tensor& theta_hat, const std::vector<std::size_t>& steps,
                                              Mode mode) {
  if (steps.size() > u_hat.size()) throw ValidationError("integrate: fewer controls than intervals");
  const double h = self.config_.step_days / self.config_.time_scale_days;
  std::vector<Tensor> out{z0};
  Tensor z = z0;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    for (std::size_t s = 0; s < steps[k]; ++s) {
      Tensor g;
      if constexpr (std::is_const_v<Self>)
        g = self.latent_rhs(z, u_hat[k], theta_hat);
      else
        g = self.latent_rhs(z, u_hat[k], theta_hat, mode);
      z = z + ad::scale(g, h);
      for (double v : z.data())
        if (!std::isfinite(v))
          throw NumericalError("integrate: non-finite latent state at interval " + std::to_string(k) + ", step " +
                               std::to_string(s));
    }
    out.push_back(z);
  }
  return out;
}

std::vector<Tensor> Surrogate::integrate(const Tensor& z0, const std::vector<Tensor>& u_hat, const Tensor& theta_hat,
                                         const std::vector<std::size_t>& steps, Mode mode) {
  return integrate_impl(*this, z0, u_hat, theta_hat, steps, mode);
}
std::vector<Tensor> Surrogate::integrate(const Tensor& z0, const std::vector<Tensor>& u_hat, const Tensor& theta_hat,
                                         const std::vector<std::size_t>& steps) const {
  return integrate_impl(*this, z0, u_hat, theta_hat, steps, Mode::eval);
}

template <class Self>
std::vector<Tensor> Surrogate::rollout_impl(Self& self, const SurrogateInputs& in, std::size_t intervals, Mode mode) {
  if (intervals > in.controls.size())
    throw ValidationError("rollout: " + std::to_string(intervals) + " intervals requested, schedule has " +
                          std::to_string(in.controls.size()));
  // Controls and decodes run as one batch over time, so batch-norm
  // statistics in train mode cover the whole trajectory.
  constexpr bool kConst = std::is_const_v<Self>;
  std::vector<Tensor> u_hat;
  Tensor z0, th, u_all;
  const Tensor u_batch =
      intervals > 0 ? ad::concat(std::vector<Tensor>(in.controls.begin(), in.controls.begin() + static_cast<long>(intervals)), 0)
                    : Tensor{};
  if constexpr (kConst) {
    z0 = self.encode_state(in.initial_state);
    th = self.encode_static(in.static_cube);
    if (intervals > 0) u_all = self.encode_control(u_batch);
  } else {
    z0 = self.encode_state(in.initial_state, mode);
    th = self.encode_static(in.static_cube, mode);
    if (intervals > 0) u_all = self.encode_control(u_batch, mode);
  }
  for (std::size_t k = 0; k < intervals; ++k) u_hat.push_back(ad::slice(u_all, 0, k, k + 1));
  std::vector<std::size_t> steps(in.steps_per_interval.begin(), in.steps_per_interval.begin() + static_cast<long>(intervals));
  std::vector<Tensor> zs;
  if constexpr (kConst)
    zs = self.integrate(z0, u_hat, th, steps);
  else
    zs = self.integrate(z0, u_hat, th, steps, mode);
  Tensor decoded;
  if constexpr (kConst)
    decoded = self.decode_state(ad::concat(zs, 0), in.mask);
  else
    decoded = self.decode_state(ad::concat(zs, 0), in.mask, mode);
  std::vector<Tensor> out;
  for (std::size_t t = 0; t < zs.size(); ++t) out.push_back(ad::slice(decoded, 0, t, t + 1));
  return out;
}

std::vector<Tensor> Surrogate::rollout(const SurrogateInputs& in, std::size_t intervals, Mode mode) {
  return rollout_impl(*this, in, intervals, mode);
}
std::vector<Tensor> Surrogate::rollout(const SurrogateInputs& in, std::size_t intervals) const {
  return rollout_impl(*this, in, intervals, Mode::eval);
}

void Surrogate::recalibrate_batch_norm(const std::vector<const SurrogateInputs*>& samples, std::size_t intervals) {
  if (samples.empty()) throw ValidationError("recalibrate_batch_norm: no samples");
  ad::NoGradGuard guard;
  for (auto* s : stacks())
    for (auto& l : s->layers)
      if (l.norm) l.bn.initialized = false;
  // Momentum 1/(i+1) turns the running update into a cumulative mean.
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (auto* s : stacks()) s->bn_momentum = 1.0 / static_cast<double>(i + 1);
    rollout(*samples[i], intervals, Mode::train);
  }
  for (auto* s : stacks()) s->bn_momentum = ad::kBatchNormMomentum;
}

std::vector<ConvStack*> Surrogate::stacks() { return {&enc_state, &enc_static, &enc_control, &rhs, &decoder}; }
std::vector<const ConvStack*> Surrogate::stacks() const {
  return {&enc_state, &enc_static, &enc_control, &rhs, &decoder};
}

std::vector<std::pair<std::string, Tensor>> Surrogate::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto* s : stacks())
    for (const auto& l : s->layers) {
      out.emplace_back(l.name + ".weight", l.weight);
      if (l.bias.defined()) out.emplace_back(l.name + ".bias", l.bias);
      if (l.norm) {
        out.emplace_back(l.name + ".gamma", l.gamma);
        out.emplace_back(l.name + ".beta", l.beta);
      }
    }
  return out;
}

std::vector<Tensor> Surrogate::parameters() {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

void Surrogate::set_trainable(bool trainable) {
  for (auto& t : parameters()) t.set_requires_grad(trainable);
}

std::vector<const ad::BatchNormState*> Surrogate::bn_states() const {
  std::vector<const ad::BatchNormState*> out;
  for (const auto* s : stacks())
    for (const auto& l : s->layers)
      if (l.norm) out.push_back(&l.bn);
  return out;
}

std::size_t Surrogate::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

std::vector<double> Surrogate::flat_weights() const {
  std::vector<double> out;
  for (const auto& [name, t] : named_parameters()) out.insert(out.end(), t.data().begin(), t.data().end());
  for (const auto* bn : bn_states()) {
    out.insert(out.end(), bn->running_mean.begin(), bn->running_mean.end());
    out.insert(out.end(), bn->running_var.begin(), bn->running_var.end());
  }
  return out;
}

void Surrogate::load_flat_weights(const std::vector<double>& flat) {
  std::size_t off = 0;
  auto take = [&](std::span<double> dst) {
    if (off + dst.size() > flat.size()) throw ValidationError("surrogate: weight vector too short");
    std::copy(flat.begin() + static_cast<long>(off), flat.begin() + static_cast<long>(off + dst.size()), dst.begin());
    off += dst.size();
  };
  for (auto& [name, t] : named_parameters()) {
    Tensor tt = t;
    take(tt.mutable_data());
  }
  for (auto* s : stacks())
    for (auto& l : s->layers)
      if (l.norm) {
        take(l.bn.running_mean);
        take(l.bn.running_var);
        l.bn.initialized = true;
      }
  if (off != flat.size()) throw ValidationError("surrogate: weight vector too long");
}

void Surrogate::save(const fs::path& dir) const {
  fs::create_directories(dir);
  std::vector<double> blob;
  json tensors = json::array();
  for (const auto& [name, t] : named_parameters()) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", blob.size()}, {"count", t.numel()}});
    blob.insert(blob.end(), t.data().begin(), t.data().end());
  }
  json bns = json::array();
  for (const auto* s : stacks())
    for (const auto& l : s->layers) {
      if (!l.norm) continue;
      bns.push_back({{"name", l.name},
                     {"channels", l.bn.running_mean.size()},
                     {"mean_offset", blob.size()},
                     {"var_offset", blob.size() + l.bn.running_mean.size()},
                     {"initialized", l.bn.initialized}});
      blob.insert(blob.end(), l.bn.running_mean.begin(), l.bn.running_mean.end());
      blob.insert(blob.end(), l.bn.running_var.begin(), l.bn.running_var.end());
    }
  json manifest = {{"format", kFormat}, {"version", 1}, {"config", config_.to_json()},
                   {"blob", "weights.f64"}, {"tensors", tensors}, {"batch_norm", bns}};
  io::write_f64(dir / "weights.f64", blob);
  io::write_json(dir / "weights.json", manifest);
}

Surrogate Surrogate::load(const fs::path& dir) {
  if (!fs::exists(dir / "weights.json")) throw ValidationError("surrogate: missing " + (dir / "weights.json").string());
  const json m = io::read_json(dir / "weights.json");
  if (m.value("format", std::string()) != kFormat) throw ValidationError("surrogate: unknown model format");
  Surrogate s(SurrogateConfig::from_json(m.at("config")), 0);
  const auto blob = io::read_f64(dir / m.value("blob", std::string("weights.f64")), "weights.f64");
  auto copy_range = [&](std::size_t offset, std::span<double> dst, const std::string& name) {
    if (offset + dst.size() > blob.size()) throw ValidationError("surrogate: blob too short for " + name);
    std::copy(blob.begin() + static_cast<long>(offset), blob.begin() + static_cast<long>(offset + dst.size()), dst.begin());
  };
  auto params = s.named_parameters();
  for (const auto& entry : m.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    auto it = std::find_if(params.begin(), params.end(), [&](const auto& p) { return p.first == name; });
    if (it == params.end()) throw ValidationError("surrogate: unexpected tensor " + name);
    if (entry.at("shape").get<ad::Shape>() != it->second.shape())
      throw ValidationError("surrogate: shape mismatch for " + name);
    Tensor t = it->second;
    copy_range(entry.at("offset").get<std::size_t>(), t.mutable_data(), name);
  }
  for (const auto& entry : m.at("batch_norm")) {
    const auto name = entry.at("name").get<std::string>();
    bool found = false;
    for (auto* st : s.stacks())
      for (auto& l : st->layers)
        if (l.name == name && l.norm) {
          copy_range(entry.at("mean_offset").get<std::size_t>(), l.bn.running_mean, name);
          copy_range(entry.at("var_offset").get<std::size_t>(), l.bn.running_var, name);
          l.bn.initialized = entry.value("initialized", true);
          found = true;
        }
    if (!found) throw ValidationError("surrogate: unexpected batch-norm entry " + name);
  }
  return s;
}

Forecast simulate(const Surrogate& surrogate, const model::ReservoirModel& model, const oracle::FluidProperties& fluid,
                  std::size_t intervals) {
  ad::NoGradGuard guard;
  const auto& cfg = surrogate.config();
  const auto table = rates::build_connections(model);
  const auto in = prepare_inputs(cfg, model, table);
  const auto cubes = surrogate.rollout(in, intervals);
  Forecast f;
  for (std::size_t t = 0; t < cubes.size(); ++t) {
    f.times.push_back(in.times[t]);
    f.states.push_back(t == 0 ? model.initial.to_si() : to_state(cfg, model.grid, cubes[t]));
  }
  f.rates = rates::compute_rate_series(f.states, f.times, model, table, fluid);
  return f;
}

}  // namespace nres::rom
