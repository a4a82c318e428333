#pragma once

// Dense MLP substrate: row-major tensors, forward/backward passes and an
// Adam optimizer with learning-rate warmup, post-ReLU activation clipping and
// per-layer update clipping. All training math is 64-bit.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "kdrank/random.hpp"

namespace kdrank::nncore {

class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
  // Throws DimensionError if data.size() != rows * cols and
  // DivergenceError if any entry is non-finite.
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool all_finite() const;
  // Throws DivergenceError mentioning `what` when a NaN/Inf is present.
  void require_finite(std::string_view what) const;

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class Activation { ReLU, Identity };

// y = x * weights + bias, weights stored as (in_dim x out_dim).
struct DenseLayer {
  Tensor2 weights;
  std::vector<double> bias;
  Activation activation = Activation::Identity;

  std::size_t in_dim() const { return weights.rows(); }
  std::size_t out_dim() const { return weights.cols(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

class Mlp {
 public:
  Mlp() = default;
  // Validates that adjacent layer dimensions chain.
  explicit Mlp(std::vector<DenseLayer> layers);

  // He-uniform initialization, zero biases. `dims` lists input, hidden and
  // output widths; every layer but the last is ReLU.
  static Mlp he_uniform(std::span<const std::size_t> dims, Activation output_activation, Rng& rng);

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t parameter_count() const;

  friend bool operator==(const Mlp&, const Mlp&) = default;

 private:
  std::vector<DenseLayer> layers_;
};

struct LayerCache {
  Tensor2 input;
  Tensor2 pre;
  // 1 where the activation passes gradient, 0 where ReLU is dead or the clip
  // saturates. Empty for Identity layers.
  std::vector<std::uint8_t> pass;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
};

struct ForwardResult {
  Tensor2 output;
  ForwardCache cache;
};

// Hidden ReLU activations are clamped to [-clip, +clip] when clip is set.
ForwardResult mlp_forward(const Mlp& mlp, const Tensor2& x, std::optional<double> clip = std::nullopt);

// Forward pass without keeping the cache.
Tensor2 mlp_predict(const Mlp& mlp, const Tensor2& x, std::optional<double> clip = std::nullopt);

struct LayerGrad {
  Tensor2 weights;
  std::vector<double> bias;
};

struct MlpGrads {
  std::vector<LayerGrad> layers;

  static MlpGrads zeros_like(const Mlp& mlp);
  void add(const MlpGrads& other);
};

struct BackwardResult {
  MlpGrads params;
  Tensor2 input_grad;
};

BackwardResult mlp_backward(const Mlp& mlp, const ForwardCache& cache, const Tensor2& out_grad);

struct ClippyConfig {
  double sigma_rel = 0.1;
  double sigma_abs = 0.0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  double base_lr = 1e-3;
  std::size_t warmup_steps = 0;
  std::optional<double> activation_clip;
  std::optional<ClippyConfig> clippy;
  AdamConfig adam;

  // Throws ConfigError naming the field.
  void validate() const;
  // min(1, step / warmup_steps); 1 when warmup is disabled.
  double warmup_factor(std::uint64_t step) const;
  double effective_lr(std::uint64_t step) const { return base_lr * warmup_factor(step); }
};

struct OptState {
  std::vector<LayerGrad> first;
  std::vector<LayerGrad> second;
  std::uint64_t step = 0;

  static OptState zeros_like(const Mlp& mlp);
};

// min(1, (sigma_rel * |w|_inf + sigma_abs) / (|u|_inf + 1e-12))
double clippy_factor(double weight_inf_norm, double update_inf_norm, const ClippyConfig& cfg);

// One Adam step with warmup and optional per-layer update clipping.
// `name` labels divergence errors.
void optimizer_step(Mlp& mlp, const MlpGrads& grads, OptState& state, const TrainConfig& cfg,
                    std::string_view name = "mlp");

}  // namespace kdrank::nncore
