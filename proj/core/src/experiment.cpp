#include "kdrank/experiment.hpp"

#include <algorithm>
#include <exception>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "kdrank/error.hpp"
#include "kdrank/metrics.hpp"

namespace kdrank::experiment {

using ranker::DistillMode;
using ranker::TaskCategory;

std::string_view to_string(Family family) {
  switch (family) {
    case Family::DistillStrategy: return "distill-strategy";
    case Family::TeacherScale: return "teacher-scale";
    case Family::ObjectiveSelection: return "objective-selection";
    case Family::Custom: return "custom";
  }
  return "custom";
}

Family parse_family(std::string_view text) {
  if (text == "distill-strategy") return Family::DistillStrategy;
  if (text == "teacher-scale") return Family::TeacherScale;
  if (text == "objective-selection") return Family::ObjectiveSelection;
  if (text == "custom") return Family::Custom;
  throw ConfigError(fmt::format(
      "family: unknown experiment family '{}' (expected distill-strategy|teacher-scale|objective-selection|custom)", text));
}

void ExperimentSpec::validate() const {
  gen.validate();
  student_train.validate();
  teacher_train.validate();
  schedule.validate();
  if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) throw ConfigError("seeds: duplicate seed");
  if (teacher_scale == 0) throw ConfigError("teacher.scale: must be >= 1");
  if (family == Family::TeacherScale) {
    if (teacher_scales.empty()) throw ConfigError("teacher.scales: at least one scale is required");
    for (std::size_t m : teacher_scales) {
      if (m < 2) throw ConfigError("teacher.scales: sweep scales must be >= 2 (1x is the control run)");
    }
    if (std::set<std::size_t>(teacher_scales.begin(), teacher_scales.end()).size() != teacher_scales.size()) {
      throw ConfigError("teacher.scales: duplicate scale");
    }
  }
  if (distill_mode == DistillMode::NoDistill) throw ConfigError("distill_mode: must be direct or auxiliary");
  for (const auto& name : distill_tasks) ranker::task_index(gen.tasks, name);
  for (const auto& name : {schedule.online.policy_task, schedule.online.engagement_task, schedule.online.satisfaction_task}) {
    ranker::task_index(gen.tasks, name);
  }
  if (!(alpha >= 0.0)) throw ConfigError("alpha: must be >= 0");
  if (!(temperature > 0.0)) throw ConfigError("temperature: must be positive");
  if (threads == 0) throw ConfigError("threads: must be positive");
  if (family == Family::Custom) {
    if (custom_students.empty()) throw ConfigError("students: custom family needs at least one student");
    std::set<std::string> names;
    for (const auto& s : custom_students) {
      if (s.name.empty() || s.name.find_first_of("#|") != std::string::npos) {
        throw ConfigError("students: names must be nonempty and must not contain '#' or '|'");
      }
      if (!names.insert(s.name).second) throw ConfigError(fmt::format("students: duplicate name '{}'", s.name));
      for (const auto& t : s.distill_tasks) ranker::task_index(gen.tasks, t);
      if (s.mode == DistillMode::NoDistill && !s.distill_tasks.empty()) {
        throw ConfigError(fmt::format("students: '{}' lists distilled tasks but mode is none", s.name));
      }
    }
  }
  for (const auto& [name, factor] : bias_injection) {
    const auto idx = ranker::task_index(gen.tasks, name);
    if (gen.tasks[idx].kind != ranker::TaskKind::Regression) {
      throw ConfigError(fmt::format("teacher.bias_injection: task '{}' is not a regression task", name));
    }
    if (!(factor > 0.0)) throw ConfigError("teacher.bias_injection: factors must be positive");
  }
}

nncore::TrainConfig default_train() {
  nncore::TrainConfig cfg;
  cfg.base_lr = 2e-3;
  cfg.warmup_steps = 20;
  cfg.activation_clip = 6.0;
  cfg.clippy = nncore::ClippyConfig{0.1, 0.0};
  return cfg;
}

SeedIds seed_ids(std::uint64_t seed) {
  return {derive_seed(seed, 1), derive_seed(seed, 2), derive_seed(seed, 3), derive_seed(seed, 4)};
}

namespace {

ranker::ModelConfig base_model(const ExperimentSpec& spec) {
  ranker::ModelConfig cfg;
  cfg.input_dim = spec.gen.dim;
  cfg.trunk_widths = spec.student_trunk;
  cfg.tower_widths = spec.tower;
  cfg.tasks = spec.gen.tasks;
  for (auto& t : cfg.tasks) t.distill = false;
  cfg.mode = DistillMode::NoDistill;
  return cfg;
}

std::string teacher_name(std::size_t scale) { return fmt::format("teacher@{}x", scale); }

pipeline::TeacherJob make_teacher(const ExperimentSpec& spec, std::uint64_t seed, std::size_t scale) {
  pipeline::TeacherJob job;
  job.name = teacher_name(scale);
  job.model = ranker::scale_model(base_model(spec), scale);
  job.train = spec.teacher_train;
  job.seed = seed_ids(seed).teacher;
  job.infer_and_write_every = spec.infer_and_write_every;
  job.label_delay = spec.label_delay;
  job.freeze_at = spec.freeze_at;
  job.bias_injection = spec.bias_injection;
  job.pretrain_steps = spec.teacher_pretrain_steps;
  return job;
}

pipeline::StudentJob make_student(const ExperimentSpec& spec, std::uint64_t seed, std::string name, DistillMode mode,
                                  const std::vector<std::string>& distilled, double alpha) {
  pipeline::StudentJob job;
  job.name = std::move(name);
  job.model = base_model(spec);
  job.model.mode = mode;
  if (mode != DistillMode::NoDistill) {
    for (const auto& t : distilled) job.model.tasks[ranker::task_index(job.model.tasks, t)].distill = true;
  }
  job.train = spec.student_train;
  job.seed = seed_ids(seed).student;
  job.alpha.assign(job.model.tasks.size(), 0.0);
  for (std::size_t i = 0; i < job.model.tasks.size(); ++i) {
    if (job.model.tasks[i].distill) job.alpha[i] = alpha;
  }
  job.temperature = spec.temperature;
  return job;
}

std::vector<std::string> all_task_names(const ExperimentSpec& spec) {
  std::vector<std::string> out;
  for (const auto& t : spec.gen.tasks) out.push_back(t.name);
  return out;
}

std::vector<std::string> tasks_in(const ExperimentSpec& spec, std::initializer_list<TaskCategory> cats) {
  std::vector<std::string> out;
  for (const auto& t : spec.gen.tasks) {
    if (std::find(cats.begin(), cats.end(), t.category) != cats.end()) out.push_back(t.name);
  }
  return out;
}

std::string control_arm(const ExperimentSpec& spec) {
  if (spec.family != Family::Custom) return "Control";
  for (const auto& s : spec.custom_students) {
    if (s.mode == DistillMode::NoDistill) return s.name;
  }
  return {};
}

}  // namespace

std::vector<std::string> arm_names(const ExperimentSpec& spec) {
  switch (spec.family) {
    case Family::DistillStrategy: return {"Control", "Direct", "Auxiliary"};
    case Family::TeacherScale: {
      std::vector<std::string> out{"Control"};
      for (std::size_t m : spec.teacher_scales) out.push_back(fmt::format("{}x", m));
      return out;
    }
    case Family::ObjectiveSelection: return {"Control", "PET", "PET+PST", "PET+PST+Others"};
    case Family::Custom: {
      std::vector<std::string> out;
      for (const auto& s : spec.custom_students) out.push_back(s.name);
      return out;
    }
  }
  return {};
}

std::vector<RunPlan> plan_runs(const ExperimentSpec& spec, std::uint64_t seed) {
  const auto distilled = spec.distill_tasks.empty() ? all_task_names(spec) : spec.distill_tasks;
  std::vector<RunPlan> plans;
  switch (spec.family) {
    case Family::DistillStrategy: {
      RunPlan plan{"main", make_teacher(spec, seed, spec.teacher_scale), {}};
      plan.students.push_back(make_student(spec, seed, "Control", DistillMode::NoDistill, {}, 0.0));
      plan.students.push_back(make_student(spec, seed, "Direct", DistillMode::Direct, distilled, spec.alpha));
      plan.students.push_back(make_student(spec, seed, "Auxiliary", DistillMode::Auxiliary, distilled, spec.alpha));
      plans.push_back(std::move(plan));
      break;
    }
    case Family::TeacherScale: {
      RunPlan control{"scale-1x", make_teacher(spec, seed, 1), {}};
      control.teacher.infer_and_write_every = 0;
      control.students.push_back(make_student(spec, seed, "Control", DistillMode::NoDistill, {}, 0.0));
      plans.push_back(std::move(control));
      for (std::size_t m : spec.teacher_scales) {
        RunPlan plan{fmt::format("scale-{}x", m), make_teacher(spec, seed, m), {}};
        plan.students.push_back(make_student(spec, seed, fmt::format("{}x", m), spec.distill_mode, distilled, spec.alpha));
        plans.push_back(std::move(plan));
      }
      break;
    }
    case Family::ObjectiveSelection: {
      RunPlan plan{"main", make_teacher(spec, seed, spec.teacher_scale), {}};
      plan.students.push_back(make_student(spec, seed, "Control", DistillMode::NoDistill, {}, 0.0));
      plan.students.push_back(make_student(spec, seed, "PET", spec.distill_mode, tasks_in(spec, {TaskCategory::PET}), spec.alpha));
      plan.students.push_back(make_student(spec, seed, "PET+PST", spec.distill_mode,
                                           tasks_in(spec, {TaskCategory::PET, TaskCategory::PST}), spec.alpha));
      plan.students.push_back(make_student(spec, seed, "PET+PST+Others", spec.distill_mode, all_task_names(spec), spec.alpha));
      plans.push_back(std::move(plan));
      break;
    }
    case Family::Custom: {
      RunPlan plan{"main", make_teacher(spec, seed, spec.teacher_scale), {}};
      for (const auto& s : spec.custom_students) {
        plan.students.push_back(make_student(spec, seed, s.name, s.mode, s.distill_tasks, s.alpha));
      }
      plans.push_back(std::move(plan));
      break;
    }
  }
  return plans;
}

namespace {

std::string seed_job(const std::string& job, std::uint64_t seed) { return fmt::format("{}#{}", job, seed); }

struct SeedOutcome {
  MetricsLog log;
  std::exception_ptr error;
};

MetricsLog run_seed(const ExperimentSpec& spec, std::uint64_t seed) {
  const auto ids = seed_ids(seed);
  const auto world = datagen::init_world(spec.gen, ids.world);
  auto sched = spec.schedule;
  sched.eval_seed = ids.eval;
  const auto final_step = static_cast<std::int64_t>(sched.total_steps);

  MetricsLog log;
  for (const auto& plan : plan_runs(spec, seed)) {
    const auto dir = spec.work_dir / std::string(to_string(spec.family)) / fmt::format("seed-{}", seed) / plan.name;
    std::filesystem::remove_all(dir);
    pipeline::RunResult run;
    try {
      run = pipeline::run_online(world, plan.teacher, plan.students, sched, dir);
    } catch (const DivergenceError& e) {
      throw DivergenceError(fmt::format("seed {} run {}: {}", seed, plan.name, e.what()));
    }
    log.append({0, seed_job(plan.teacher.name, seed), "*", "parameters",
                static_cast<double>(ranker::parameter_count(plan.teacher.model)), {}, {}});
    for (const auto& s : plan.students) {
      log.append({0, seed_job(s.name, seed), "*", "parameters", static_cast<double>(ranker::parameter_count(s.model)), {}, {}});
    }
    for (auto row : run.log.rows()) {
      row.job = seed_job(row.job, seed);
      log.append(std::move(row));
    }
  }

  const auto control = control_arm(spec);
  if (!control.empty() && spec.schedule.online_metrics) {
    const auto base_eng = log.find_last(seed_job(control, seed), "*", "engagement");
    const auto base_sat = log.find_last(seed_job(control, seed), "*", "satisfaction");
    for (const auto& arm : arm_names(spec)) {
      const auto eng = log.find_last(seed_job(arm, seed), "*", "engagement");
      const auto sat = log.find_last(seed_job(arm, seed), "*", "satisfaction");
      if (!eng || !sat || !base_eng || !base_sat) continue;
      log.append({final_step, seed_job(arm, seed), "*", "engagement_lift_pct",
                  metrics::lift_percent(eng->value, base_eng->value), {}, {}});
      log.append({final_step, seed_job(arm, seed), "*", "satisfaction_lift_pct",
                  metrics::lift_percent(sat->value, base_sat->value), {}, {}});
    }
  }
  return log;
}

void aggregate_job(const std::string& job, const std::vector<std::uint64_t>& seeds, std::int64_t final_step,
                   const MetricsLog& per_seed, MetricsLog& out) {
  // (task, metric) pairs in first-seen order.
  std::vector<std::pair<std::string, std::string>> keys;
  std::set<std::pair<std::string, std::string>> seen;
  const auto first = seed_job(job, seeds.front());
  for (const auto& r : per_seed.rows()) {
    if (r.job != first || (r.step != final_step && r.metric != "parameters")) continue;
    if (seen.insert({r.task, r.metric}).second) keys.emplace_back(r.task, r.metric);
  }
  for (const auto& [task, metric] : keys) {
    std::vector<double> values;
    std::int64_t step = final_step;
    for (std::uint64_t s : seeds) {
      const auto row = per_seed.find_last(seed_job(job, s), task, metric);
      if (!row) continue;
      values.push_back(row->value);
      step = row->step;
    }
    if (values.size() != seeds.size()) continue;
    MetricRow agg{step, job, task, metric, metrics::mean(values), {}, {}};
    if (values.size() >= 10) {
      const auto [lo, hi] = metrics::bootstrap_ci(values);
      agg.lo = lo;
      agg.hi = hi;
    }
    out.append(std::move(agg));
  }
}

}  // namespace

MetricsLog run_experiment(const ExperimentSpec& spec, MetricsLog* partial) {
  spec.validate();
  const auto arms = arm_names(spec);
  const auto plans = plan_runs(spec, spec.seeds.front());

  MetricsLog log;
  const auto family = std::string(to_string(spec.family));
  log.append({0, "@run", "family", family, static_cast<double>(spec.seeds.size()), {}, {}});
  log.append({0, "@run", "policy", spec.schedule.online.policy_task, 0.0, {}, {}});
  for (std::size_t i = 0; i < arms.size(); ++i) log.append({0, "@run", "arm", arms[i], static_cast<double>(i), {}, {}});
  for (const auto& plan : plans) {
    for (const auto& s : plan.students) log.append({0, "@run", "teacher:" + s.name, plan.teacher.name, 0.0, {}, {}});
  }

  std::vector<SeedOutcome> outcomes(spec.seeds.size());
  const std::size_t workers = std::min(spec.threads, spec.seeds.size());
  auto work = [&](std::size_t worker) {
    for (std::size_t i = worker; i < spec.seeds.size(); i += workers) {
      try {
        outcomes[i].log = run_seed(spec, spec.seeds[i]);
      } catch (...) {
        outcomes[i].error = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }

  MetricsLog per_seed;
  for (const auto& o : outcomes) {
    if (!o.error) per_seed.append(o.log);
  }
  for (const auto& o : outcomes) {
    if (o.error) {
      if (partial) {
        *partial = log;
        partial->append(per_seed);
      }
      std::rethrow_exception(o.error);
    }
  }

  log.append(per_seed);
  const auto final_step = static_cast<std::int64_t>(spec.schedule.total_steps);
  std::vector<std::string> jobs;
  for (const auto& plan : plans) {
    if (std::find(jobs.begin(), jobs.end(), plan.teacher.name) == jobs.end()) jobs.push_back(plan.teacher.name);
  }
  jobs.insert(jobs.end(), arms.begin(), arms.end());
  for (const auto& job : jobs) aggregate_job(job, spec.seeds, final_step, per_seed, log);
  return log;
}

}  // namespace kdrank::experiment
