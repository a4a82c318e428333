#pragma once

// Offline metrics (AUC, RMSE, calibration), a paired simulated online
// experiment, and percentile bootstrap intervals.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kdrank/datagen.hpp"
#include "kdrank/nncore.hpp"
#include "kdrank/ranker.hpp"

namespace kdrank::metrics {

// Mann-Whitney rank statistic with mid-ranks for ties. Throws ConfigError
// unless labels contain at least one 0 and one 1.
double auc(std::span<const double> scores, std::span<const double> labels);

double rmse(std::span<const double> preds, std::span<const double> labels);

// mean(preds) / mean(labels). Throws ConfigError when mean(labels) <= 0.
double calibration_ratio(std::span<const double> preds, std::span<const double> labels);

struct OnlineSimConfig {
  std::size_t slate_size = 8;
  std::size_t n_slates = 2000;
  std::string policy_task = "CTR";
  std::string engagement_task = "CTR";
  std::string satisfaction_task = "SAT";

  void validate() const;
};

// Candidate features plus their noise-free engagement/satisfaction values.
struct Slates {
  std::size_t slate_size = 0;
  nncore::Tensor2 features;  // (n_slates * slate_size) x dim
  std::vector<double> engagement;
  std::vector<double> satisfaction;

  std::size_t count() const { return slate_size == 0 ? 0 : engagement.size() / slate_size; }
};

Slates draw_slates(const datagen::WorldState& world, const OnlineSimConfig& cfg, std::uint64_t seed);

struct OnlineOutcome {
  double engagement = 0.0;
  double satisfaction = 0.0;
};

// Picks argmax(score) per slate (first index on ties) and averages the
// true engagement/satisfaction at the picks.
OnlineOutcome online_outcome(std::span<const double> scores, const Slates& slates);

// Scores slates with the model's served value for cfg.policy_task.
OnlineOutcome model_online_outcome(const ranker::RankingModel& model, const Slates& slates, const OnlineSimConfig& cfg,
                                   std::optional<double> clip = std::nullopt);

// Percent change of treatment over control; 0 when they are equal.
double lift_percent(double treatment, double control);

struct OnlineLift {
  OnlineOutcome treatment;
  OnlineOutcome control;
  double engagement_lift_pct = 0.0;
  double satisfaction_lift_pct = 0.0;
};

// Paired simulated experiment: both models rank the same slates.
OnlineLift simulated_online(const ranker::RankingModel& model, const ranker::RankingModel& control,
                            const datagen::WorldState& world, const OnlineSimConfig& cfg, std::uint64_t seed);

// Percentile bootstrap CI of the mean. Deterministic for a given seed.
// Throws ConfigError with fewer than 10 samples.
std::pair<double, double> bootstrap_ci(std::span<const double> samples, std::size_t resamples = 1000,
                                       double level = 0.95, std::uint64_t seed = 0);

double mean(std::span<const double> v);
// Standard error of the mean (sample sd / sqrt(n)); 0 for n < 2.
double stderr_of_mean(std::span<const double> v);
double median(std::vector<double> v);

}  // namespace kdrank::metrics
