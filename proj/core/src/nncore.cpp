#include "kdrank/nncore.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <fmt/format.h>

#include "kdrank/error.hpp"

namespace kdrank::nncore {

Tensor2::Tensor2(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError(fmt::format("tensor data has {} entries, expected {}x{}", data_.size(), rows_, cols_));
  }
  require_finite("tensor data");
}

bool Tensor2::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor2::require_finite(std::string_view what) const {
  if (!all_finite()) throw DivergenceError(fmt::format("non-finite value in {}", what));
}

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& layer = layers_[i];
    if (layer.bias.size() != layer.out_dim()) {
      throw DimensionError(fmt::format("layer {}: bias has {} entries, expected {}", i, layer.bias.size(),
                                       layer.out_dim()));
    }
    if (i > 0 && layers_[i - 1].out_dim() != layer.in_dim()) {
      throw DimensionError(fmt::format("layer {} input dim {} does not match previous output dim {}", i,
                                       layer.in_dim(), layers_[i - 1].out_dim()));
    }
  }
}

Mlp Mlp::he_uniform(std::span<const std::size_t> dims, Activation output_activation, Rng& rng) {
  if (dims.size() < 2) throw ConfigError("mlp needs at least an input and an output width");
  std::vector<DenseLayer> layers;
  layers.reserve(dims.size() - 1);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::size_t fan_in = dims[i];
    const std::size_t fan_out = dims[i + 1];
    if (fan_in == 0 || fan_out == 0) throw ConfigError("mlp widths must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    DenseLayer layer;
    layer.weights = Tensor2(fan_in, fan_out);
    for (double& w : layer.weights.data()) w = rng.uniform(-limit, limit);
    layer.bias.assign(fan_out, 0.0);
    layer.activation = (i + 2 == dims.size()) ? output_activation : Activation::ReLU;
    layers.push_back(std::move(layer));
  }
  return Mlp(std::move(layers));
}

std::size_t Mlp::input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }

std::size_t Mlp::output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weights.size() + layer.bias.size();
  return n;
}

namespace {

void dense_forward(const DenseLayer& layer, const Tensor2& x, Tensor2& pre) {
  const std::size_t in = layer.in_dim();
  const std::size_t out = layer.out_dim();
  pre = Tensor2(x.rows(), out);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto y = pre.row(r);
    std::copy(layer.bias.begin(), layer.bias.end(), y.begin());
    const auto xr = x.row(r);
    for (std::size_t k = 0; k < in; ++k) {
      const double a = xr[k];
      if (a == 0.0) continue;
      const auto w = layer.weights.row(k);
      for (std::size_t j = 0; j < out; ++j) y[j] += a * w[j];
    }
  }
}

// Applies the activation in place on `values`, recording the gradient mask.
void activate(Activation activation, std::optional<double> clip, Tensor2& values, std::vector<std::uint8_t>* pass) {
  if (activation == Activation::Identity) return;
  auto data = values.data();
  if (pass) pass->assign(data.size(), 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double v = data[i];
    if (v <= 0.0) {
      data[i] = 0.0;
    } else if (clip && v >= *clip) {
      data[i] = *clip;
    } else if (pass) {
      (*pass)[i] = 1;
    }
  }
}

void check_input(const Mlp& mlp, const Tensor2& x) {
  if (mlp.layers().empty()) throw DimensionError("mlp has no layers");
  if (x.cols() != mlp.input_dim()) {
    throw DimensionError(fmt::format("input has {} columns, mlp expects {}", x.cols(), mlp.input_dim()));
  }
}

}  // namespace

ForwardResult mlp_forward(const Mlp& mlp, const Tensor2& x, std::optional<double> clip) {
  check_input(mlp, x);
  ForwardResult result;
  result.cache.layers.resize(mlp.layers().size());
  Tensor2 current = x;
  for (std::size_t i = 0; i < mlp.layers().size(); ++i) {
    const auto& layer = mlp.layers()[i];
    auto& lc = result.cache.layers[i];
    lc.input = std::move(current);
    dense_forward(layer, lc.input, lc.pre);
    current = lc.pre;
    activate(layer.activation, clip, current, &lc.pass);
  }
  current.require_finite("mlp output");
  result.output = std::move(current);
  return result;
}

Tensor2 mlp_predict(const Mlp& mlp, const Tensor2& x, std::optional<double> clip) {
  check_input(mlp, x);
  Tensor2 current = x;
  Tensor2 next;
  for (const auto& layer : mlp.layers()) {
    dense_forward(layer, current, next);
    activate(layer.activation, clip, next, nullptr);
    std::swap(current, next);
  }
  current.require_finite("mlp output");
  return current;
}

MlpGrads MlpGrads::zeros_like(const Mlp& mlp) {
  MlpGrads g;
  g.layers.reserve(mlp.layers().size());
  for (const auto& layer : mlp.layers()) {
    g.layers.push_back({Tensor2(layer.in_dim(), layer.out_dim()), std::vector<double>(layer.out_dim(), 0.0)});
  }
  return g;
}

void MlpGrads::add(const MlpGrads& other) {
  if (other.layers.size() != layers.size()) throw DimensionError("gradient layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto dst = layers[i].weights.data();
    auto src = other.layers[i].weights.data();
    if (dst.size() != src.size() || layers[i].bias.size() != other.layers[i].bias.size()) {
      throw DimensionError("gradient shape mismatch");
    }
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    for (std::size_t k = 0; k < layers[i].bias.size(); ++k) layers[i].bias[k] += other.layers[i].bias[k];
  }
}

BackwardResult mlp_backward(const Mlp& mlp, const ForwardCache& cache, const Tensor2& out_grad) {
  const auto& layers = mlp.layers();
  if (cache.layers.size() != layers.size()) throw DimensionError("stale forward cache: layer count mismatch");
  const std::size_t rows = cache.layers.empty() ? 0 : cache.layers.front().input.rows();
  if (out_grad.rows() != rows || out_grad.cols() != mlp.output_dim()) {
    throw DimensionError(fmt::format("output gradient is {}x{}, expected {}x{}", out_grad.rows(), out_grad.cols(),
                                     rows, mlp.output_dim()));
  }

  BackwardResult result;
  result.params = MlpGrads::zeros_like(mlp);
  Tensor2 grad = out_grad;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& layer = layers[li];
    const auto& lc = cache.layers[li];
    if (lc.input.rows() != rows || lc.input.cols() != layer.in_dim() || lc.pre.cols() != layer.out_dim()) {
      throw DimensionError(fmt::format("stale forward cache at layer {}", li));
    }
    if (layer.activation == Activation::ReLU) {
      if (lc.pass.size() != grad.size()) throw DimensionError(fmt::format("stale forward cache at layer {}", li));
      auto g = grad.data();
      for (std::size_t k = 0; k < g.size(); ++k) {
        if (!lc.pass[k]) g[k] = 0.0;
      }
    }

    auto& pg = result.params.layers[li];
    const std::size_t in = layer.in_dim();
    const std::size_t out = layer.out_dim();
    Tensor2 input_grad(rows, in);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto g = grad.row(r);
      const auto xr = lc.input.row(r);
      auto ig = input_grad.row(r);
      for (std::size_t j = 0; j < out; ++j) pg.bias[j] += g[j];
      for (std::size_t k = 0; k < in; ++k) {
        const auto w = layer.weights.row(k);
        auto dw = pg.weights.row(k);
        const double a = xr[k];
        double acc = 0.0;
        for (std::size_t j = 0; j < out; ++j) {
          dw[j] += a * g[j];
          acc += g[j] * w[j];
        }
        ig[k] = acc;
      }
    }
    grad = std::move(input_grad);
  }
  result.input_grad = std::move(grad);
  return result;
}

void TrainConfig::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("base_lr: must be a positive finite number");
  if (activation_clip && !(*activation_clip > 0.0)) throw ConfigError("activation_clip: must be positive");
  if (clippy && (clippy->sigma_rel < 0.0 || clippy->sigma_abs < 0.0)) {
    throw ConfigError("clippy: sigma_rel and sigma_abs must be >= 0");
  }
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("adam.beta1: must be in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("adam.beta2: must be in [0, 1)");
  if (!(adam.epsilon >= 0.0)) throw ConfigError("adam.epsilon: must be >= 0");
}

double TrainConfig::warmup_factor(std::uint64_t step) const {
  if (warmup_steps == 0) return 1.0;
  return std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup_steps));
}

OptState OptState::zeros_like(const Mlp& mlp) {
  OptState s;
  s.first = MlpGrads::zeros_like(mlp).layers;
  s.second = s.first;
  return s;
}

double clippy_factor(double weight_inf_norm, double update_inf_norm, const ClippyConfig& cfg) {
  return std::min(1.0, (cfg.sigma_rel * weight_inf_norm + cfg.sigma_abs) / (update_inf_norm + 1e-12));
}

void optimizer_step(Mlp& mlp, const MlpGrads& grads, OptState& state, const TrainConfig& cfg, std::string_view name) {
  auto& layers = mlp.layers();
  if (grads.layers.size() != layers.size() || state.first.size() != layers.size() ||
      state.second.size() != layers.size()) {
    throw DimensionError(fmt::format("{}: gradient/optimizer state does not match parameters", name));
  }
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& g = grads.layers[li];
    if (g.weights.rows() != layers[li].in_dim() || g.weights.cols() != layers[li].out_dim() ||
        g.bias.size() != layers[li].out_dim()) {
      throw DimensionError(fmt::format("{} layer {}: gradient shape mismatch", name, li));
    }
    const bool finite = g.weights.all_finite() &&
                        std::all_of(g.bias.begin(), g.bias.end(), [](double v) { return std::isfinite(v); });
    if (!finite) throw DivergenceError(fmt::format("{} layer {}: non-finite gradient", name, li));
  }

  const double lr = cfg.effective_lr(state.step);
  const double t = static_cast<double>(state.step + 1);
  const double correction1 = 1.0 - std::pow(cfg.adam.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.adam.beta2, t);
  const double b1 = cfg.adam.beta1;
  const double b2 = cfg.adam.beta2;

  std::vector<double> update;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    auto& layer = layers[li];
    const auto& g = grads.layers[li];
    auto& m = state.first[li];
    auto& v = state.second[li];

    // Weights and bias form one parameter group per layer.
    const std::size_t nw = layer.weights.size();
    const std::size_t nb = layer.bias.size();
    update.assign(nw + nb, 0.0);
    double update_inf = 0.0;
    double weight_inf = 0.0;
    auto adam = [&](double grad, double& mom1, double& mom2, double param, std::size_t k) {
      mom1 = b1 * mom1 + (1.0 - b1) * grad;
      mom2 = b2 * mom2 + (1.0 - b2) * grad * grad;
      const double mhat = mom1 / correction1;
      const double vhat = mom2 / correction2;
      const double u = lr * mhat / (std::sqrt(vhat) + cfg.adam.epsilon);
      update[k] = u;
      update_inf = std::max(update_inf, std::abs(u));
      weight_inf = std::max(weight_inf, std::abs(param));
    };
    auto wdata = layer.weights.data();
    auto gw = g.weights.data();
    auto mw = m.weights.data();
    auto vw = v.weights.data();
    for (std::size_t k = 0; k < nw; ++k) adam(gw[k], mw[k], vw[k], wdata[k], k);
    for (std::size_t k = 0; k < nb; ++k) adam(g.bias[k], m.bias[k], v.bias[k], layer.bias[k], nw + k);

    const double scale = cfg.clippy ? clippy_factor(weight_inf, update_inf, *cfg.clippy) : 1.0;
    if (scale < 1.0) {
      for (double& u : update) u *= scale;
    }
    for (std::size_t k = 0; k < nw; ++k) wdata[k] -= update[k];
    for (std::size_t k = 0; k < nb; ++k) layer.bias[k] -= update[nw + k];

    const bool finite = std::all_of(wdata.begin(), wdata.end(), [](double x) { return std::isfinite(x); }) &&
                        std::all_of(layer.bias.begin(), layer.bias.end(), [](double x) { return std::isfinite(x); });
    if (!finite) throw DivergenceError(fmt::format("{} layer {}: non-finite parameters after update", name, li));
  }
  ++state.step;
}

}  // namespace kdrank::nncore
