#pragma once

// Multi-task pointwise ranking model: a shared trunk feeding one tower per
// task. Distillation is wired one of two ways:
//   Direct     - the tower logit is trained on both hard and soft labels.
//   Auxiliary  - a separate single-layer head produces the logit the soft
//                loss is applied to; the tower logit only sees hard labels
//                and teacher knowledge reaches it through the trunk.
// The tower logit is always the served prediction.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdrank/nncore.hpp"
#include "kdrank/random.hpp"

namespace kdrank::ranker {

using nncore::Tensor2;

enum class TaskKind { Binary, Regression };
enum class TaskCategory { PET, PST, Other };
enum class DistillMode { NoDistill, Direct, Auxiliary };

std::string_view to_string(TaskKind kind);
std::string_view to_string(TaskCategory category);
std::string_view to_string(DistillMode mode);
TaskKind parse_task_kind(std::string_view text);
TaskCategory parse_task_category(std::string_view text);
DistillMode parse_distill_mode(std::string_view text);

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::Binary;
  TaskCategory category = TaskCategory::Other;
  bool distill = false;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

// Returns the index of `name` in `tasks`; throws ConfigError if unknown.
std::size_t task_index(std::span<const TaskSpec> tasks, std::string_view name);

struct ModelConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> trunk_widths;  // hidden widths of the shared trunk
  std::vector<std::size_t> tower_widths;  // hidden widths of each task tower
  std::vector<TaskSpec> tasks;
  DistillMode mode = DistillMode::NoDistill;
  std::size_t scale = 1;  // trunk width multiplier relative to the base config

  void validate() const;
  std::vector<std::size_t> distilled_tasks() const;
  std::size_t trunk_output_dim() const { return trunk_widths.empty() ? input_dim : trunk_widths.back(); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Multiplies every trunk hidden width by `multiplier`; towers are unchanged.
ModelConfig scale_model(const ModelConfig& base, std::size_t multiplier);

// Exact parameter count implied by the layer shapes of `cfg`.
std::size_t parameter_count(const ModelConfig& cfg);

class RankingModel {
 public:
  RankingModel() = default;
  // Initialization order is trunk, towers, aux heads so models that differ
  // only in distillation mode share trunk and tower weights for equal seeds.
  RankingModel(ModelConfig cfg, Rng& rng);

  const ModelConfig& config() const { return config_; }
  std::size_t task_count() const { return config_.tasks.size(); }

  const nncore::Mlp& trunk() const { return trunk_; }
  nncore::Mlp& trunk() { return trunk_; }
  const nncore::Mlp& tower(std::size_t task) const { return towers_.at(task); }
  nncore::Mlp& tower(std::size_t task) { return towers_.at(task); }
  // Present only for distilled tasks in Auxiliary mode.
  const std::optional<nncore::Mlp>& aux_head(std::size_t task) const { return aux_heads_.at(task); }
  std::optional<nncore::Mlp>& aux_head(std::size_t task) { return aux_heads_.at(task); }

  std::size_t parameter_count() const;

  friend bool operator==(const RankingModel&, const RankingModel&) = default;

 private:
  ModelConfig config_;
  nncore::Mlp trunk_;
  std::vector<nncore::Mlp> towers_;
  std::vector<std::optional<nncore::Mlp>> aux_heads_;
};

double sigmoid(double z);
double softplus(double z);
double logit(double p);

struct PredictionSet {
  std::size_t rows = 0;
  std::vector<TaskKind> kinds;
  std::vector<std::vector<double>> hard_logits;                // [task][row]
  std::vector<std::optional<std::vector<double>>> aux_logits;  // [task][row]

  // Served value: sigmoid(logit) for Binary, the logit for Regression.
  double value(std::size_t task, std::size_t row) const;
  std::vector<double> values(std::size_t task) const;
  bool has_aux(std::size_t task) const { return aux_logits.at(task).has_value(); }
};

struct ModelCache {
  nncore::ForwardCache trunk;
  std::vector<nncore::ForwardCache> towers;
  std::vector<std::optional<nncore::ForwardCache>> aux;
};

struct ModelForward {
  PredictionSet preds;
  ModelCache cache;
};

ModelForward model_forward(const RankingModel& model, const Tensor2& x, std::optional<double> clip = std::nullopt);
PredictionSet model_predict(const RankingModel& model, const Tensor2& x, std::optional<double> clip = std::nullopt);

// Sigmoid cross-entropy (Binary) or squared error (Regression).
double hard_loss(double logit, double label, TaskKind kind);
double hard_loss_grad(double logit, double label, TaskKind kind);

// Binary: cross-entropy between the teacher probability, sharpened on the
// logit scale by `temperature`, and sigmoid(student_logit).
// Regression: squared error against the teacher value.
// Throws ConfigError for Binary teacher probabilities outside (0, 1).
double distill_loss(double student_logit, double teacher_value, TaskKind kind, double temperature = 1.0);
double distill_loss_grad(double student_logit, double teacher_value, TaskKind kind, double temperature = 1.0);

// Per task, per row hard labels.
using HardLabels = std::vector<std::vector<double>>;

// Per task, per row teacher values; an empty task vector means no soft labels
// for that task, a nullopt entry means the teacher label is absent.
struct SoftTargets {
  std::vector<std::vector<std::optional<double>>> values;

  static SoftTargets none(std::size_t tasks) { return SoftTargets{std::vector<std::vector<std::optional<double>>>(tasks)}; }
};

struct LossBreakdown {
  std::vector<double> hard;  // per task, mean over rows
  std::vector<double> soft;  // per task, sum over labelled rows / rows
  std::vector<double> alpha;
  double total = 0.0;
};

struct LogitGrads {
  std::vector<std::vector<double>> hard;                // [task][row]
  std::vector<std::optional<std::vector<double>>> aux;  // [task][row]
};

enum class LossPart { All, HardOnly, SoftOnly };

struct LossResult {
  LossBreakdown breakdown;
  LogitGrads seeds;  // gradient of the selected part of total w.r.t. each logit
};

struct LossOptions {
  std::vector<double> alpha;  // per task soft-loss weight; empty = 1 for distilled tasks
  double temperature = 1.0;
  LossPart part = LossPart::All;
};

// total = sum_t hard_t + sum_t alpha_t * soft_t. Soft losses land on the tower
// logit (Direct) or the aux logit (Auxiliary). Throws ConfigError if soft
// labels are supplied for a task that is not distilled.
LossResult total_loss(const PredictionSet& preds, const ModelConfig& cfg, const HardLabels& hard,
                      const SoftTargets& soft, const LossOptions& options = {});

struct ModelGrads {
  nncore::MlpGrads trunk;
  std::vector<nncore::MlpGrads> towers;
  std::vector<std::optional<nncore::MlpGrads>> aux;
};

ModelGrads model_backward(const RankingModel& model, const ModelCache& cache, const LogitGrads& seeds);

struct ModelOptState {
  nncore::OptState trunk;
  std::vector<nncore::OptState> towers;
  std::vector<std::optional<nncore::OptState>> aux;

  static ModelOptState zeros_like(const RankingModel& model);
};

void apply_gradients(RankingModel& model, const ModelGrads& grads, ModelOptState& state, const nncore::TrainConfig& cfg);

// forward + loss + backward + optimizer step. Returns the loss breakdown
// computed before the update.
LossBreakdown train_step(RankingModel& model, ModelOptState& state, const nncore::TrainConfig& cfg,
                         const Tensor2& x, const HardLabels& hard, const SoftTargets& soft,
                         const LossOptions& options = {});

}  // namespace kdrank::ranker
