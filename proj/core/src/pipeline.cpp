#include "kdrank/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <deque>
#include <exception>
#include <functional>
#include <thread>

#include <fmt/format.h>

#include "kdrank/binary_io.hpp"
#include "kdrank/error.hpp"
#include "kdrank/labelstore.hpp"

namespace kdrank::pipeline {

using datagen::Batch;
using ranker::RankingModel;
using ranker::TaskKind;

void ScheduleConfig::validate() const {
  if (total_steps == 0) throw ConfigError("schedule.total_steps: must be positive");
  if (batch_size == 0) throw ConfigError("schedule.batch_size: must be positive");
  if (eval_every == 0) throw ConfigError("schedule.eval_every: must be positive");
  if (eval_batches == 0) throw ConfigError("schedule.eval_batches: must be positive");
  if (threads == 0) throw ConfigError("schedule.threads: must be positive");
  if (online_metrics) online.validate();
}

std::vector<std::uint8_t> encode_consumed_labels(const ranker::SoftTargets& soft, const std::vector<std::size_t>& tasks) {
  binary_io::Writer w;
  const std::size_t rows = tasks.empty() ? 0 : soft.values.at(tasks.front()).size();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t : tasks) {
      const auto& v = soft.values.at(t).at(r);
      w.u8(v ? 1 : 0);
      w.f32(v ? static_cast<float>(*v) : 0.0f);
    }
  }
  return w.take();
}

namespace {

void check_tasks_match(const std::vector<ranker::TaskSpec>& world, const ranker::ModelConfig& model, const std::string& job) {
  if (world.size() != model.tasks.size()) throw ConfigError(fmt::format("{}: task list differs from the stream's", job));
  for (std::size_t i = 0; i < world.size(); ++i) {
    if (world[i].name != model.tasks[i].name || world[i].kind != model.tasks[i].kind) {
      throw ConfigError(fmt::format("{}: task {} is '{}', stream has '{}'", job, i, model.tasks[i].name, world[i].name));
    }
  }
}

// Rethrows divergence with the job's identity attached.
template <typename F>
auto as_job(const std::string& job, F&& f) {
  try {
    return f();
  } catch (const DivergenceError& e) {
    throw DivergenceError(fmt::format("{}: {}", job, e.what()));
  }
}

struct EvalSet {
  Batch batch;
  std::optional<metrics::Slates> slates;
};

EvalSet make_eval_set(const datagen::WorldState& world, const ScheduleConfig& sched, std::size_t step) {
  EvalSet ev;
  auto fork = world.fork(derive_seed(sched.eval_seed, 2 * step));
  const auto records = datagen::next_batch(fork, sched.eval_batches * sched.batch_size);
  ev.batch = datagen::to_batch(records, world.config().tasks.size());
  if (sched.online_metrics) ev.slates = metrics::draw_slates(world, sched.online, derive_seed(sched.eval_seed, 2 * step + 1));
  return ev;
}

void evaluate(const RankingModel& model, std::optional<double> clip, const EvalSet& ev, const ScheduleConfig& sched,
              std::int64_t step, const std::string& job, MetricsLog& log) {
  const auto preds = ranker::model_predict(model, ev.batch.x, clip);
  const auto& tasks = model.config().tasks;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto values = preds.values(t);
    const auto& labels = ev.batch.labels[t];
    if (tasks[t].kind == TaskKind::Binary) {
      log.append({step, job, tasks[t].name, "auc", metrics::auc(values, labels), {}, {}});
    } else {
      log.append({step, job, tasks[t].name, "rmse", metrics::rmse(values, labels), {}, {}});
    }
    log.append({step, job, tasks[t].name, "calibration", metrics::calibration_ratio(values, labels), {}, {}});
  }
  if (ev.slates) {
    const auto outcome = metrics::model_online_outcome(model, *ev.slates, sched.online, clip);
    log.append({step, job, "*", "engagement", outcome.engagement, {}, {}});
    log.append({step, job, "*", "satisfaction", outcome.satisfaction, {}, {}});
  }
}

class TeacherRunner {
 public:
  TeacherRunner(const TeacherJob& job, const std::vector<ranker::TaskSpec>& tasks, labelstore::LabelWriter& writer)
      : job_(job), writer_(writer) {
    if (job.model.mode != ranker::DistillMode::NoDistill) throw ConfigError("teacher: model mode must be none");
    job.train.validate();
    Rng rng(job.seed);
    model_.emplace(job.model, rng);
    opt_ = ranker::ModelOptState::zeros_like(*model_);
    for (const auto& t : tasks) columns_.push_back({t.name, t.kind});
    bias_.assign(tasks.size(), 1.0);
    for (const auto& [name, factor] : job.bias_injection) {
      const std::size_t idx = ranker::task_index(tasks, name);
      if (tasks[idx].kind != TaskKind::Regression) {
        throw ConfigError(fmt::format("teacher.bias_injection: task '{}' is not a regression task", name));
      }
      if (!(factor > 0.0)) throw ConfigError("teacher.bias_injection: factors must be positive");
      bias_[idx] = factor;
    }
  }

  const RankingModel& model() const { return *model_; }
  std::optional<double> clip() const { return job_.train.activation_clip; }

  void train(const Batch& batch) {
    ranker::HardLabels labels = batch.labels;
    for (std::size_t t = 0; t < labels.size(); ++t) {
      if (bias_[t] == 1.0) continue;
      for (double& y : labels[t]) y *= bias_[t];
    }
    const auto soft = ranker::SoftTargets::none(labels.size());
    as_job(job_.name, [&] { return ranker::train_step(*model_, opt_, job_.train, batch.x, labels, soft); });
    ++updates_;
  }

  // Teacher work for main-loop step t; returns the committed manifest version.
  std::uint64_t step(std::size_t t, const Batch& batch) {
    history_.push_back(batch);
    while (history_.size() > job_.label_delay + 1) history_.pop_front();
    if (!job_.freeze_at || t < *job_.freeze_at) train(batch);
    const std::size_t every = job_.infer_and_write_every;
    if (every > 0 && t % every == 0 && t >= job_.label_delay) write_labels(history_.front());
    return writer_.manifest_version();
  }

 private:
  void write_labels(const Batch& batch) {
    const auto preds = as_job(job_.name, [&] { return ranker::model_predict(*model_, batch.x, clip()); });
    std::vector<labelstore::LabelRecord> records(batch.ids.size());
    for (std::size_t r = 0; r < records.size(); ++r) {
      records[r].example_id = batch.ids[r];
      records[r].values.resize(columns_.size());
      for (std::size_t t = 0; t < columns_.size(); ++t) {
        double v = preds.value(t, r);
        // Keep probabilities strictly inside (0, 1) after the f32 cast.
        if (columns_[t].kind == TaskKind::Binary) v = std::clamp(v, 1e-7, 1.0 - 1e-7);
        records[r].values[t] = static_cast<float>(v);
      }
    }
    writer_.append_segment(records, columns_, updates_);
  }

  const TeacherJob& job_;
  labelstore::LabelWriter& writer_;
  std::optional<RankingModel> model_;
  ranker::ModelOptState opt_;
  std::vector<labelstore::TaskColumn> columns_;
  std::vector<double> bias_;
  std::deque<Batch> history_;
  std::uint64_t updates_ = 0;
};

class StudentRunner {
 public:
  explicit StudentRunner(const StudentJob& job) : job_(job) {
    job.train.validate();
    if (!job.alpha.empty() && job.alpha.size() != job.model.tasks.size()) {
      throw ConfigError(fmt::format("{}: alpha needs one weight per task", job.name));
    }
    Rng rng(job.seed);
    model_.emplace(job.model, rng);
    opt_ = ranker::ModelOptState::zeros_like(*model_);
    distilled_ = job.model.distilled_tasks();
    options_.alpha = job.alpha;
    options_.temperature = job.temperature;
  }

  const RankingModel& model() const { return *model_; }
  RankingModel take_model() { return std::move(*model_); }
  std::optional<double> clip() const { return job_.train.activation_clip; }
  std::vector<StepTrace>& trace() { return trace_; }

  void step(const Batch& batch, const labelstore::LabelStore& store, std::uint64_t version, bool record_bytes) {
    const std::size_t rows = batch.ids.size();
    auto soft = ranker::SoftTargets::none(job_.model.tasks.size());
    StepTrace tr;
    tr.manifest_version = version;
    if (!distilled_.empty()) {
      const auto snapshot = store.open_snapshot_at(version);
      for (std::size_t t : distilled_) soft.values[t].assign(rows, std::nullopt);
      for (std::size_t r = 0; r < rows; ++r) {
        const auto ref = snapshot.lookup(batch.ids[r]);
        if (!ref) continue;
        ++tr.found;
        for (std::size_t t : distilled_) {
          const auto v = ref->value(job_.model.tasks[t].name);
          if (v) soft.values[t][r] = static_cast<double>(*v);
        }
      }
      const auto bytes = encode_consumed_labels(soft, distilled_);
      tr.label_crc = binary_io::crc32(bytes);
      if (record_bytes) tr.label_bytes = bytes;
    }
    tr.coverage = static_cast<double>(tr.found) / static_cast<double>(rows);
    as_job(job_.name, [&] { return ranker::train_step(*model_, opt_, job_.train, batch.x, batch.labels, soft, options_); });
    trace_.push_back(std::move(tr));
  }

 private:
  const StudentJob& job_;
  std::optional<RankingModel> model_;
  ranker::ModelOptState opt_;
  std::vector<std::size_t> distilled_;
  ranker::LossOptions options_;
  std::vector<StepTrace> trace_;
};

// Runs the callables, concurrently when threads > 1, and rethrows the first
// failure after all have finished.
void run_all(std::vector<std::function<void()>>& work, std::size_t threads) {
  if (threads <= 1 || work.size() <= 1) {
    for (auto& w : work) w();
    return;
  }
  std::vector<std::exception_ptr> errors(work.size());
  std::vector<std::thread> pool;
  pool.reserve(work.size());
  for (std::size_t i = 0; i < work.size(); ++i) {
    pool.emplace_back([&, i] {
      try {
        work[i]();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

RunResult run_online(datagen::WorldState world, const TeacherJob& teacher_job, const std::vector<StudentJob>& student_jobs,
                     const ScheduleConfig& sched, const std::filesystem::path& store_dir, const RunOptions& options) {
  sched.validate();
  const auto& tasks = world.config().tasks;
  check_tasks_match(tasks, teacher_job.model, teacher_job.name);
  for (const auto& s : student_jobs) check_tasks_match(tasks, s.model, s.name);

  labelstore::LabelStore store(store_dir);
  labelstore::LabelWriter writer(store_dir, {sched.durable_store});
  TeacherRunner teacher(teacher_job, tasks, writer);
  std::vector<StudentRunner> students;
  students.reserve(student_jobs.size());
  for (const auto& s : student_jobs) students.emplace_back(s);

  auto draw = [&] { return datagen::to_batch(datagen::next_batch(world, sched.batch_size), tasks.size()); };

  for (std::size_t i = 0; i < teacher_job.pretrain_steps; ++i) teacher.train(draw());

  RunResult result;
  Batch current = draw();
  std::uint64_t version = teacher.step(0, current);
  const std::size_t total = sched.total_steps;
  for (std::size_t t = 0; t < total; ++t) {
    const bool eval_point = (t + 1) % sched.eval_every == 0 || t + 1 == total;
    const auto step_label = static_cast<std::int64_t>(t + 1);
    std::optional<EvalSet> ev;
    if (eval_point) {
      ev = make_eval_set(world, sched, t + 1);
      evaluate(teacher.model(), teacher.clip(), *ev, sched, step_label, teacher_job.name, result.log);
    }
    std::optional<Batch> next;
    if (t + 1 < total) next = draw();

    std::uint64_t next_version = version;
    std::vector<std::function<void()>> work;
    work.reserve(students.size() + 1);
    if (next) work.emplace_back([&] { next_version = teacher.step(t + 1, *next); });
    for (auto& s : students) {
      work.emplace_back([&, v = version] { s.step(current, store, v, options.record_label_bytes); });
    }
    run_all(work, sched.threads);
    result.step_versions.push_back(version);

    if (ev) {
      for (std::size_t i = 0; i < students.size(); ++i) {
        const auto& job = student_jobs[i];
        evaluate(students[i].model(), students[i].clip(), *ev, sched, step_label, job.name, result.log);
        if (!students[i].trace().empty()) {
          result.log.append({step_label, job.name, "*", "coverage", students[i].trace().back().coverage, {}, {}});
        }
      }
    }
    if (next) current = std::move(*next);
    version = next_version;
  }

  result.teacher = teacher.model();
  for (std::size_t i = 0; i < students.size(); ++i) {
    result.students.push_back({student_jobs[i].name, students[i].take_model(), std::move(students[i].trace())});
  }
  return result;
}

FleetReport run_fleet_consistency(datagen::WorldState world, const TeacherJob& teacher, const StudentJob& student,
                                  std::size_t k, const ScheduleConfig& sched, const std::filesystem::path& store_dir,
                                  const std::vector<std::uint64_t>& student_seeds) {
  if (k < 2) throw ConfigError("fleet consistency needs at least 2 students");
  if (!student_seeds.empty() && student_seeds.size() != k) throw ConfigError("fleet: one seed per student required");
  std::vector<StudentJob> jobs;
  for (std::size_t i = 0; i < k; ++i) {
    StudentJob job = student;
    job.name = fmt::format("{}-{}", student.name.empty() ? "student" : student.name, i);
    if (!student_seeds.empty()) job.seed = student_seeds[i];
    jobs.push_back(std::move(job));
  }
  const auto run = run_online(std::move(world), teacher, jobs, sched, store_dir, {.record_label_bytes = true});

  FleetReport report;
  report.students = k;
  report.steps = run.step_versions.size();
  report.segments = labelstore::read_manifest(store_dir).segment_ids.size();
  const auto& ref = run.students.front();
  for (const auto& s : run.students) {
    double cov = 0.0;
    for (const auto& tr : s.trace) cov += tr.coverage;
    report.mean_coverage.push_back(s.trace.empty() ? 0.0 : cov / static_cast<double>(s.trace.size()));
    if (!(s.model == ref.model)) report.parameters_identical = false;
    if (s.trace.size() != ref.trace.size()) {
      report.labels_identical = false;
      report.violations.push_back(fmt::format("{}: {} steps recorded, {} has {}", s.name, s.trace.size(), ref.name, ref.trace.size()));
      continue;
    }
    for (std::size_t step = 0; step < s.trace.size(); ++step) {
      const auto& a = ref.trace[step];
      const auto& b = s.trace[step];
      if (a.manifest_version != b.manifest_version) {
        report.versions_identical = false;
        report.violations.push_back(fmt::format("step {}: {} read manifest v{}, {} read v{}", step, ref.name,
                                                a.manifest_version, s.name, b.manifest_version));
      }
      if (a.label_bytes != b.label_bytes) {
        report.labels_identical = false;
        report.violations.push_back(fmt::format("step {}: soft labels consumed by {} differ from {}", step, s.name, ref.name));
      }
      if (a.coverage != b.coverage) {
        report.coverage_identical = false;
        report.violations.push_back(fmt::format("step {}: coverage {} vs {}", step, b.coverage, a.coverage));
      }
    }
  }
  return report;
}

}  // namespace kdrank::pipeline
