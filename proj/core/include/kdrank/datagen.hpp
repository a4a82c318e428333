#pragma once

// Seeded non-stationary example stream. Each task has a unit latent vector
// w_task; labels are drawn from sigmoid(k * w.x) (Binary) or a mean-preserving
// lognormal perturbation of softplus(k * w.x) (Regression). After every batch
// each latent vector takes one drift step
//   w <- normalize(rho * w + sqrt(1 - rho^2) * eps),  eps ~ N(0, I).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string_view>
#include <vector>

#include "kdrank/nncore.hpp"
#include "kdrank/random.hpp"
#include "kdrank/ranker.hpp"

namespace kdrank::datagen {

struct GenConfig {
  std::size_t dim = 32;
  double drift_rate = 0.999;
  std::vector<ranker::TaskSpec> tasks;
  double ltv_noise_sigma = 1.0;
  // Angle between the PET and PST latent vectors at initialization.
  double conflict_angle = std::numbers::pi / 2.0;
  double logit_scale = 2.0;

  void validate() const;

  // d=32; CTR (Binary, PET), SAT (Binary, PST), LTV (Regression, Other),
  // AUX_CLICK (Binary, Other).
  static GenConfig desk_default();
};

struct ExampleRecord {
  std::uint64_t example_id = 0;
  std::uint64_t t = 0;
  std::vector<double> x;
  std::vector<double> labels;  // one per task, in GenConfig::tasks order

  friend bool operator==(const ExampleRecord&, const ExampleRecord&) = default;
};

class WorldState {
 public:
  const GenConfig& config() const { return config_; }
  std::uint64_t t() const { return t_; }
  const std::vector<std::vector<double>>& latent() const { return latent_; }
  const std::vector<double>& latent(std::size_t task) const { return latent_.at(task); }

  // Copy with the same latent vectors and clock but an independent random
  // stream and example-id space. Used for held-out evaluation.
  WorldState fork(std::uint64_t seed) const;

  friend WorldState init_world(const GenConfig& cfg, std::uint64_t seed);
  friend std::vector<ExampleRecord> next_batch(WorldState& world, std::size_t n);

  friend bool operator==(const WorldState& a, const WorldState& b) {
    return a.t_ == b.t_ && a.next_id_ == b.next_id_ && a.latent_ == b.latent_;
  }

 private:
  GenConfig config_;
  std::uint64_t t_ = 0;
  std::uint64_t next_id_ = 1;
  std::vector<std::vector<double>> latent_;
  Rng rng_;
};

// Throws ConfigError when d < 2 or the PET/PST angle constraint cannot be met
// (more than one PET or PST task, angle outside [0, pi]).
WorldState init_world(const GenConfig& cfg, std::uint64_t seed);

// Draws n examples at the current latent state, then applies one drift step.
std::vector<ExampleRecord> next_batch(WorldState& world, std::size_t n);

// Noise-free expectation: sigmoid(k w.x) or softplus(k w.x).
double true_task_value(const WorldState& world, std::span<const double> x, std::size_t task);
double true_task_value(const WorldState& world, std::span<const double> x, std::string_view task);

struct Batch {
  std::vector<std::uint64_t> ids;
  nncore::Tensor2 x;
  ranker::HardLabels labels;  // [task][row]
};

Batch to_batch(std::span<const ExampleRecord> records, std::size_t n_tasks);

// Optional replay format ("SLR1", little-endian, crc32 trailer).
void write_stream(const std::filesystem::path& path, std::span<const ExampleRecord> records);
std::vector<ExampleRecord> read_stream(const std::filesystem::path& path);

}  // namespace kdrank::datagen
