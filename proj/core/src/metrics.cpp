#include "kdrank/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "kdrank/error.hpp"
#include "kdrank/random.hpp"

namespace kdrank::metrics {

double auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of (1-based, tie-averaged) ranks of positives, kept doubled so every
  // quantity stays an exact integer.
  double positives = 0.0;
  double twice_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double twice_mid_rank = static_cast<double>(i + 1 + j);  // 2 * (i+1 + j) / 2
    for (std::size_t k = i; k < j; ++k) {
      const double y = labels[order[k]];
      if (y == 1.0) {
        positives += 1.0;
        twice_rank_sum += twice_mid_rank;
      } else if (y != 0.0) {
        throw ConfigError("auc: labels must be 0 or 1");
      }
    }
    i = j;
  }
  const double negatives = static_cast<double>(n) - positives;
  if (positives == 0.0 || negatives == 0.0) throw ConfigError("auc: need at least one positive and one negative label");
  // U = R_pos - P(P+1)/2 counts wins + ties/2; doubled: 2 R_pos - P(P+1).
  const double twice_u = twice_rank_sum - positives * (positives + 1.0);
  return (twice_u * 0.5) / (positives * negatives);
}

double rmse(std::span<const double> preds, std::span<const double> labels) {
  if (preds.size() != labels.size()) throw DimensionError("rmse: length mismatch");
  if (preds.empty()) throw ConfigError("rmse: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double e = preds[i] - labels[i];
    sum += e * e;
  }
  return std::sqrt(sum / static_cast<double>(preds.size()));
}

double calibration_ratio(std::span<const double> preds, std::span<const double> labels) {
  if (preds.size() != labels.size()) throw DimensionError("calibration: length mismatch");
  if (preds.empty()) throw ConfigError("calibration: empty input");
  const double label_mean = mean(labels);
  if (!(label_mean > 0.0)) throw ConfigError("calibration: mean label must be positive");
  return mean(preds) / label_mean;
}

void OnlineSimConfig::validate() const {
  if (slate_size < 2) throw ConfigError("online.slate_size: must be >= 2");
  if (n_slates == 0) throw ConfigError("online.n_slates: must be positive");
}

Slates draw_slates(const datagen::WorldState& world, const OnlineSimConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto& tasks = world.config().tasks;
  const std::size_t eng = ranker::task_index(tasks, cfg.engagement_task);
  const std::size_t sat = ranker::task_index(tasks, cfg.satisfaction_task);
  ranker::task_index(tasks, cfg.policy_task);

  Rng rng(seed);
  const std::size_t dim = world.config().dim;
  const std::size_t total = cfg.n_slates * cfg.slate_size;
  Slates s;
  s.slate_size = cfg.slate_size;
  s.features = nncore::Tensor2(total, dim);
  s.engagement.resize(total);
  s.satisfaction.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    auto row = s.features.row(i);
    for (double& v : row) v = rng.normal();
    s.engagement[i] = datagen::true_task_value(world, row, eng);
    s.satisfaction[i] = datagen::true_task_value(world, row, sat);
  }
  return s;
}

OnlineOutcome online_outcome(std::span<const double> scores, const Slates& slates) {
  if (scores.size() != slates.engagement.size()) throw DimensionError("online_outcome: one score per candidate required");
  const std::size_t m = slates.slate_size;
  const std::size_t n = slates.count();
  if (n == 0) throw ConfigError("online_outcome: no slates");
  double eng = 0.0;
  double sat = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t pick = s * m;
    for (std::size_t k = s * m + 1; k < (s + 1) * m; ++k) {
      if (scores[k] > scores[pick]) pick = k;
    }
    eng += slates.engagement[pick];
    sat += slates.satisfaction[pick];
  }
  return {eng / static_cast<double>(n), sat / static_cast<double>(n)};
}

OnlineOutcome model_online_outcome(const ranker::RankingModel& model, const Slates& slates, const OnlineSimConfig& cfg,
                                   std::optional<double> clip) {
  const std::size_t policy = ranker::task_index(model.config().tasks, cfg.policy_task);
  const auto preds = ranker::model_predict(model, slates.features, clip);
  return online_outcome(preds.values(policy), slates);
}

double lift_percent(double treatment, double control) {
  if (treatment == control) return 0.0;
  return 100.0 * (treatment - control) / control;
}

OnlineLift simulated_online(const ranker::RankingModel& model, const ranker::RankingModel& control,
                            const datagen::WorldState& world, const OnlineSimConfig& cfg, std::uint64_t seed) {
  const auto slates = draw_slates(world, cfg, seed);
  OnlineLift out;
  out.treatment = model_online_outcome(model, slates, cfg);
  out.control = model_online_outcome(control, slates, cfg);
  out.engagement_lift_pct = lift_percent(out.treatment.engagement, out.control.engagement);
  out.satisfaction_lift_pct = lift_percent(out.treatment.satisfaction, out.control.satisfaction);
  return out;
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stderr_of_mean(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

double median(std::vector<double> v) {
  if (v.empty()) throw ConfigError("median of empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::pair<double, double> bootstrap_ci(std::span<const double> samples, std::size_t resamples, double level,
                                       std::uint64_t seed) {
  if (samples.size() < 10) throw ConfigError(fmt::format("bootstrap needs at least 10 samples, got {}", samples.size()));
  if (resamples == 0) throw ConfigError("bootstrap needs at least one resample");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("bootstrap level must be in (0, 1)");
  Rng rng(seed);
  const std::size_t n = samples.size();
  std::vector<double> means(resamples);
  for (auto& m : means) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += samples[rng.below(n)];
    m = sum / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  const double tail = (1.0 - level) / 2.0;
  auto at = [&](double q) {
    const double pos = q * static_cast<double>(resamples - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, resamples - 1);
    const double frac = pos - static_cast<double>(lo);
    return means[lo] + frac * (means[hi] - means[lo]);
  };
  return {at(tail), at(1.0 - tail)};
}

}  // namespace kdrank::metrics
