#pragma once

// Small builders shared by unit and acceptance tests.

#include <cstddef>
#include <optional>
#include <vector>

#include "kdrank/datagen.hpp"
#include "kdrank/nncore.hpp"
#include "kdrank/random.hpp"
#include "kdrank/ranker.hpp"

namespace kdrank::testing {

inline std::vector<ranker::TaskSpec> four_tasks(bool distill_all) {
  using ranker::TaskCategory;
  using ranker::TaskKind;
  return {{"CTR", TaskKind::Binary, TaskCategory::PET, distill_all},
          {"SAT", TaskKind::Binary, TaskCategory::PST, distill_all},
          {"LTV", TaskKind::Regression, TaskCategory::Other, distill_all},
          {"AUX_CLICK", TaskKind::Binary, TaskCategory::Other, distill_all}};
}

// Trunk of up to two layers of width <= 16, 4 tasks, a random subset
// distilled (at least one when the mode distills).
inline ranker::ModelConfig random_model_config(Rng& rng, ranker::DistillMode mode) {
  ranker::ModelConfig cfg;
  cfg.input_dim = 2 + rng.below(7);
  const std::size_t depth = rng.below(3);
  for (std::size_t i = 0; i < depth; ++i) cfg.trunk_widths.push_back(2 + rng.below(15));
  if (rng.below(2) == 1) cfg.tower_widths.push_back(2 + rng.below(6));
  cfg.tasks = four_tasks(false);
  cfg.mode = mode;
  if (mode != ranker::DistillMode::NoDistill) {
    for (auto& t : cfg.tasks) t.distill = rng.below(2) == 1;
    cfg.tasks[rng.below(cfg.tasks.size())].distill = true;
  }
  return cfg;
}

inline nncore::Tensor2 random_features(std::size_t rows, std::size_t cols, Rng& rng) {
  nncore::Tensor2 x(rows, cols);
  for (double& v : x.data()) v = rng.normal();
  return x;
}

inline ranker::HardLabels random_hard_labels(const ranker::ModelConfig& cfg, std::size_t rows, Rng& rng) {
  ranker::HardLabels labels(cfg.tasks.size(), std::vector<double>(rows));
  for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
    for (double& y : labels[t]) {
      y = cfg.tasks[t].kind == ranker::TaskKind::Binary ? static_cast<double>(rng.below(2)) : 3.0 * rng.uniform();
    }
  }
  return labels;
}

// Teacher values for distilled tasks; each entry present with probability
// `coverage`.
inline ranker::SoftTargets random_soft_targets(const ranker::ModelConfig& cfg, std::size_t rows, Rng& rng,
                                               double coverage = 0.8) {
  auto soft = ranker::SoftTargets::none(cfg.tasks.size());
  if (cfg.mode == ranker::DistillMode::NoDistill) return soft;
  for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
    if (!cfg.tasks[t].distill) continue;
    soft.values[t].resize(rows);
    for (auto& v : soft.values[t]) {
      if (rng.uniform() >= coverage) continue;
      v = cfg.tasks[t].kind == ranker::TaskKind::Binary ? rng.uniform(0.02, 0.98) : 3.0 * rng.uniform();
    }
  }
  return soft;
}

// Moves every bias off zero so no ReLU sits exactly on its kink.
inline void jitter_biases(ranker::RankingModel& model, Rng& rng) {
  auto touch = [&](nncore::Mlp& mlp) {
    for (auto& layer : mlp.layers()) {
      for (double& b : layer.bias) b = 0.1 * rng.normal();
    }
  };
  touch(model.trunk());
  for (std::size_t t = 0; t < model.task_count(); ++t) {
    touch(model.tower(t));
    if (model.aux_head(t)) touch(*model.aux_head(t));
  }
}

inline datagen::GenConfig small_gen(std::size_t dim = 8, double drift = 1.0) {
  auto g = datagen::GenConfig::desk_default();
  g.dim = dim;
  g.drift_rate = drift;
  return g;
}

}  // namespace kdrank::testing
