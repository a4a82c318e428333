#include "kdrank/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "kdrank/error.hpp"

namespace kdrank::ranker {

using nncore::Activation;
using nncore::Mlp;

std::string_view to_string(TaskKind kind) { return kind == TaskKind::Binary ? "binary" : "regression"; }

std::string_view to_string(TaskCategory category) {
  switch (category) {
    case TaskCategory::PET: return "PET";
    case TaskCategory::PST: return "PST";
    case TaskCategory::Other: return "Other";
  }
  return "Other";
}

std::string_view to_string(DistillMode mode) {
  switch (mode) {
    case DistillMode::NoDistill: return "none";
    case DistillMode::Direct: return "direct";
    case DistillMode::Auxiliary: return "auxiliary";
  }
  return "none";
}

TaskKind parse_task_kind(std::string_view text) {
  if (text == "binary") return TaskKind::Binary;
  if (text == "regression") return TaskKind::Regression;
  throw ConfigError(fmt::format("task kind: unknown value '{}' (expected binary|regression)", text));
}

TaskCategory parse_task_category(std::string_view text) {
  if (text == "PET") return TaskCategory::PET;
  if (text == "PST") return TaskCategory::PST;
  if (text == "Other") return TaskCategory::Other;
  throw ConfigError(fmt::format("task category: unknown value '{}' (expected PET|PST|Other)", text));
}

DistillMode parse_distill_mode(std::string_view text) {
  if (text == "none") return DistillMode::NoDistill;
  if (text == "direct") return DistillMode::Direct;
  if (text == "auxiliary") return DistillMode::Auxiliary;
  throw ConfigError(fmt::format("distill mode: unknown value '{}' (expected none|direct|auxiliary)", text));
}

std::size_t task_index(std::span<const TaskSpec> tasks, std::string_view name) {
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].name == name) return i;
  }
  throw ConfigError(fmt::format("unknown task '{}'", name));
}

void ModelConfig::validate() const {
  if (input_dim == 0) throw ConfigError("model.input_dim: must be positive");
  if (tasks.empty()) throw ConfigError("model.tasks: at least one task is required");
  if (scale == 0) throw ConfigError("model.scale: must be >= 1");
  for (std::size_t w : trunk_widths) {
    if (w == 0) throw ConfigError("model.trunk: widths must be positive");
  }
  for (std::size_t w : tower_widths) {
    if (w == 0) throw ConfigError("model.tower: widths must be positive");
  }
  std::set<std::string> names;
  for (const auto& t : tasks) {
    if (t.name.empty()) throw ConfigError("model.tasks: task name must be nonempty");
    if (!names.insert(t.name).second) throw ConfigError(fmt::format("model.tasks: duplicate task name '{}'", t.name));
    if (t.distill && mode == DistillMode::NoDistill) {
      throw ConfigError(fmt::format("model.tasks: task '{}' is marked distilled but mode is none", t.name));
    }
  }
}

std::vector<std::size_t> ModelConfig::distilled_tasks() const {
  std::vector<std::size_t> out;
  if (mode == DistillMode::NoDistill) return out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].distill) out.push_back(i);
  }
  return out;
}

ModelConfig scale_model(const ModelConfig& base, std::size_t multiplier) {
  if (multiplier == 0) throw ConfigError("scale multiplier must be >= 1");
  ModelConfig out = base;
  for (auto& w : out.trunk_widths) w *= multiplier;
  out.scale = base.scale * multiplier;
  return out;
}

namespace {

std::vector<std::size_t> trunk_dims(const ModelConfig& cfg) {
  std::vector<std::size_t> dims{cfg.input_dim};
  dims.insert(dims.end(), cfg.trunk_widths.begin(), cfg.trunk_widths.end());
  return dims;
}

std::vector<std::size_t> tower_dims(const ModelConfig& cfg) {
  std::vector<std::size_t> dims{cfg.trunk_output_dim()};
  dims.insert(dims.end(), cfg.tower_widths.begin(), cfg.tower_widths.end());
  dims.push_back(1);
  return dims;
}

std::size_t dense_params(std::span<const std::size_t> dims) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) n += dims[i] * dims[i + 1] + dims[i + 1];
  return n;
}

}  // namespace

std::size_t parameter_count(const ModelConfig& cfg) {
  const auto trunk = trunk_dims(cfg);
  const auto tower = tower_dims(cfg);
  std::size_t n = dense_params(trunk) + cfg.tasks.size() * dense_params(tower);
  if (cfg.mode == DistillMode::Auxiliary) n += cfg.distilled_tasks().size() * (cfg.trunk_output_dim() + 1);
  return n;
}

RankingModel::RankingModel(ModelConfig cfg, Rng& rng) : config_(std::move(cfg)) {
  config_.validate();
  const auto tdims = trunk_dims(config_);
  if (tdims.size() >= 2) trunk_ = Mlp::he_uniform(tdims, Activation::ReLU, rng);
  const auto hdims = tower_dims(config_);
  towers_.reserve(config_.tasks.size());
  for (std::size_t i = 0; i < config_.tasks.size(); ++i) towers_.push_back(Mlp::he_uniform(hdims, Activation::Identity, rng));
  aux_heads_.resize(config_.tasks.size());
  if (config_.mode == DistillMode::Auxiliary) {
    const std::size_t aux_dims[] = {config_.trunk_output_dim(), 1};
    for (std::size_t i : config_.distilled_tasks()) aux_heads_[i] = Mlp::he_uniform(aux_dims, Activation::Identity, rng);
  }
}

std::size_t RankingModel::parameter_count() const {
  std::size_t n = trunk_.parameter_count();
  for (const auto& t : towers_) n += t.parameter_count();
  for (const auto& a : aux_heads_) {
    if (a) n += a->parameter_count();
  }
  return n;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double logit(double p) { return std::log(p) - std::log1p(-p); }

double PredictionSet::value(std::size_t task, std::size_t row) const {
  const double z = hard_logits.at(task).at(row);
  return kinds.at(task) == TaskKind::Binary ? sigmoid(z) : z;
}

std::vector<double> PredictionSet::values(std::size_t task) const {
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = value(task, r);
  return out;
}

namespace {

std::vector<double> column(const Tensor2& t) {
  std::vector<double> out(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) out[r] = t(r, 0);
  return out;
}

PredictionSet empty_predictions(const ModelConfig& cfg, std::size_t rows) {
  PredictionSet p;
  p.rows = rows;
  for (const auto& t : cfg.tasks) p.kinds.push_back(t.kind);
  p.hard_logits.resize(cfg.tasks.size());
  p.aux_logits.resize(cfg.tasks.size());
  return p;
}

void check_features(const RankingModel& model, const Tensor2& x) {
  if (x.cols() != model.config().input_dim) {
    throw DimensionError(fmt::format("feature batch has {} columns, model expects {}", x.cols(), model.config().input_dim));
  }
}

}  // namespace

ModelForward model_forward(const RankingModel& model, const Tensor2& x, std::optional<double> clip) {
  check_features(model, x);
  ModelForward out;
  out.preds = empty_predictions(model.config(), x.rows());
  Tensor2 shared;
  if (model.trunk().layers().empty()) {
    shared = x;
  } else {
    auto trunk = nncore::mlp_forward(model.trunk(), x, clip);
    shared = std::move(trunk.output);
    out.cache.trunk = std::move(trunk.cache);
  }
  const std::size_t n_tasks = model.task_count();
  out.cache.towers.resize(n_tasks);
  out.cache.aux.resize(n_tasks);
  for (std::size_t t = 0; t < n_tasks; ++t) {
    auto tower = nncore::mlp_forward(model.tower(t), shared, clip);
    out.preds.hard_logits[t] = column(tower.output);
    out.cache.towers[t] = std::move(tower.cache);
    if (const auto& head = model.aux_head(t)) {
      auto aux = nncore::mlp_forward(*head, shared, clip);
      out.preds.aux_logits[t] = column(aux.output);
      out.cache.aux[t] = std::move(aux.cache);
    }
  }
  return out;
}

PredictionSet model_predict(const RankingModel& model, const Tensor2& x, std::optional<double> clip) {
  check_features(model, x);
  PredictionSet preds = empty_predictions(model.config(), x.rows());
  const Tensor2 shared = model.trunk().layers().empty() ? x : nncore::mlp_predict(model.trunk(), x, clip);
  for (std::size_t t = 0; t < model.task_count(); ++t) {
    preds.hard_logits[t] = column(nncore::mlp_predict(model.tower(t), shared, clip));
    if (const auto& head = model.aux_head(t)) preds.aux_logits[t] = column(nncore::mlp_predict(*head, shared, clip));
  }
  return preds;
}

double hard_loss(double logit_value, double label, TaskKind kind) {
  if (kind == TaskKind::Binary) return softplus(logit_value) - label * logit_value;
  const double e = logit_value - label;
  return e * e;
}

double hard_loss_grad(double logit_value, double label, TaskKind kind) {
  if (kind == TaskKind::Binary) return sigmoid(logit_value) - label;
  return 2.0 * (logit_value - label);
}

namespace {

double soft_target(double teacher_value, TaskKind kind, double temperature) {
  if (kind == TaskKind::Regression) {
    if (!std::isfinite(teacher_value)) throw ConfigError("teacher regression value must be finite");
    return teacher_value;
  }
  if (!(teacher_value > 0.0 && teacher_value < 1.0)) {
    throw ConfigError(fmt::format("teacher probability {} outside (0, 1)", teacher_value));
  }
  if (temperature == 1.0) return teacher_value;
  if (!(temperature > 0.0)) throw ConfigError("distillation temperature must be positive");
  return sigmoid(logit(teacher_value) / temperature);
}

}  // namespace

double distill_loss(double student_logit, double teacher_value, TaskKind kind, double temperature) {
  const double target = soft_target(teacher_value, kind, temperature);
  if (kind == TaskKind::Binary) return softplus(student_logit) - target * student_logit;
  const double e = student_logit - target;
  return e * e;
}

double distill_loss_grad(double student_logit, double teacher_value, TaskKind kind, double temperature) {
  const double target = soft_target(teacher_value, kind, temperature);
  if (kind == TaskKind::Binary) return sigmoid(student_logit) - target;
  return 2.0 * (student_logit - target);
}

LossResult total_loss(const PredictionSet& preds, const ModelConfig& cfg, const HardLabels& hard,
                      const SoftTargets& soft, const LossOptions& options) {
  const std::size_t n_tasks = cfg.tasks.size();
  const std::size_t rows = preds.rows;
  if (preds.hard_logits.size() != n_tasks || hard.size() != n_tasks) {
    throw DimensionError("predictions/labels do not match the model's task list");
  }
  if (!soft.values.empty() && soft.values.size() != n_tasks) throw DimensionError("soft targets task count mismatch");
  if (!options.alpha.empty() && options.alpha.size() != n_tasks) throw DimensionError("alpha must have one weight per task");
  if (rows == 0) throw DimensionError("empty batch");

  LossResult result;
  auto& br = result.breakdown;
  br.hard.assign(n_tasks, 0.0);
  br.soft.assign(n_tasks, 0.0);
  br.alpha.assign(n_tasks, 0.0);
  result.seeds.hard.assign(n_tasks, std::vector<double>(rows, 0.0));
  result.seeds.aux.resize(n_tasks);

  const bool want_hard = options.part != LossPart::SoftOnly;
  const bool want_soft = options.part != LossPart::HardOnly;
  const double inv_rows = 1.0 / static_cast<double>(rows);

  for (std::size_t t = 0; t < n_tasks; ++t) {
    const auto& task = cfg.tasks[t];
    const auto& logits = preds.hard_logits[t];
    if (logits.size() != rows || hard[t].size() != rows) throw DimensionError(fmt::format("task '{}': row count mismatch", task.name));
    auto& hard_seed = result.seeds.hard[t];
    double sum = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double y = hard[t][r];
      if (task.kind == TaskKind::Binary && y != 0.0 && y != 1.0) {
        throw ConfigError(fmt::format("task '{}': binary label {} not in {{0,1}}", task.name, y));
      }
      if (!std::isfinite(y)) throw DivergenceError(fmt::format("task '{}': non-finite hard label", task.name));
      sum += hard_loss(logits[r], y, task.kind);
      if (want_hard) hard_seed[r] = hard_loss_grad(logits[r], y, task.kind) * inv_rows;
    }
    br.hard[t] = sum * inv_rows;

    const bool has_soft = !soft.values.empty() && !soft.values[t].empty();
    const bool distilled = cfg.mode != DistillMode::NoDistill && task.distill;
    if (distilled) br.alpha[t] = options.alpha.empty() ? 1.0 : options.alpha[t];
    if (cfg.mode == DistillMode::Auxiliary && distilled) result.seeds.aux[t] = std::vector<double>(rows, 0.0);
    if (!has_soft) continue;
    if (!distilled) throw ConfigError(fmt::format("soft labels supplied for task '{}' which is not distilled", task.name));
    if (soft.values[t].size() != rows) throw DimensionError(fmt::format("task '{}': soft label row count mismatch", task.name));

    const bool aux = cfg.mode == DistillMode::Auxiliary;
    if (aux && !preds.aux_logits[t]) throw DimensionError(fmt::format("task '{}': missing aux logits", task.name));
    const auto& student = aux ? *preds.aux_logits[t] : logits;
    auto& soft_seed = aux ? *result.seeds.aux[t] : hard_seed;
    const double alpha = br.alpha[t];
    double soft_sum = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const auto& teacher = soft.values[t][r];
      if (!teacher) continue;
      soft_sum += distill_loss(student[r], *teacher, task.kind, options.temperature);
      if (want_soft) soft_seed[r] += alpha * distill_loss_grad(student[r], *teacher, task.kind, options.temperature) * inv_rows;
    }
    br.soft[t] = soft_sum * inv_rows;
  }

  double total = 0.0;
  for (std::size_t t = 0; t < n_tasks; ++t) total += br.hard[t];
  for (std::size_t t = 0; t < n_tasks; ++t) total += br.alpha[t] * br.soft[t];
  if (!std::isfinite(total)) throw DivergenceError("non-finite total loss");
  br.total = total;
  return result;
}

namespace {

Tensor2 as_column(const std::vector<double>& v) { return Tensor2(v.size(), 1, v); }

void accumulate(Tensor2& dst, const Tensor2& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

ModelGrads model_backward(const RankingModel& model, const ModelCache& cache, const LogitGrads& seeds) {
  const std::size_t n_tasks = model.task_count();
  if (cache.towers.size() != n_tasks || seeds.hard.size() != n_tasks) throw DimensionError("stale model cache");
  ModelGrads grads;
  grads.towers.reserve(n_tasks);
  grads.aux.resize(n_tasks);

  Tensor2 shared_grad;
  for (std::size_t t = 0; t < n_tasks; ++t) {
    auto tower = nncore::mlp_backward(model.tower(t), cache.towers[t], as_column(seeds.hard[t]));
    grads.towers.push_back(std::move(tower.params));
    if (shared_grad.size() == 0) {
      shared_grad = std::move(tower.input_grad);
    } else {
      accumulate(shared_grad, tower.input_grad);
    }
    if (const auto& head = model.aux_head(t)) {
      if (!cache.aux.at(t)) throw DimensionError("stale model cache: missing aux head cache");
      const std::vector<double> zeros(seeds.hard[t].size(), 0.0);
      const auto& seed = (t < seeds.aux.size() && seeds.aux[t]) ? *seeds.aux[t] : zeros;
      auto aux = nncore::mlp_backward(*head, *cache.aux[t], as_column(seed));
      grads.aux[t] = std::move(aux.params);
      accumulate(shared_grad, aux.input_grad);
    }
  }
  if (!model.trunk().layers().empty()) {
    grads.trunk = nncore::mlp_backward(model.trunk(), cache.trunk, shared_grad).params;
  }
  return grads;
}

ModelOptState ModelOptState::zeros_like(const RankingModel& model) {
  ModelOptState s;
  s.trunk = nncore::OptState::zeros_like(model.trunk());
  for (std::size_t t = 0; t < model.task_count(); ++t) {
    s.towers.push_back(nncore::OptState::zeros_like(model.tower(t)));
    if (const auto& head = model.aux_head(t)) {
      s.aux.push_back(nncore::OptState::zeros_like(*head));
    } else {
      s.aux.emplace_back();
    }
  }
  return s;
}

void apply_gradients(RankingModel& model, const ModelGrads& grads, ModelOptState& state, const nncore::TrainConfig& cfg) {
  const auto& tasks = model.config().tasks;
  if (!model.trunk().layers().empty()) nncore::optimizer_step(model.trunk(), grads.trunk, state.trunk, cfg, "trunk");
  for (std::size_t t = 0; t < model.task_count(); ++t) {
    nncore::optimizer_step(model.tower(t), grads.towers.at(t), state.towers.at(t), cfg, "tower " + tasks[t].name);
    if (auto& head = model.aux_head(t)) {
      if (!grads.aux.at(t) || !state.aux.at(t)) throw DimensionError("missing aux head gradients or optimizer state");
      nncore::optimizer_step(*head, *grads.aux[t], *state.aux[t], cfg, "aux head " + tasks[t].name);
    }
  }
}

LossBreakdown train_step(RankingModel& model, ModelOptState& state, const nncore::TrainConfig& cfg, const Tensor2& x,
                         const HardLabels& hard, const SoftTargets& soft, const LossOptions& options) {
  auto fwd = model_forward(model, x, cfg.activation_clip);
  auto loss = total_loss(fwd.preds, model.config(), hard, soft, options);
  const auto grads = model_backward(model, fwd.cache, loss.seeds);
  apply_gradients(model, grads, state, cfg);
  return std::move(loss.breakdown);
}

}  // namespace kdrank::ranker
