#pragma once

// Online distillation loop. Per step t:
//   1. draw batch B_t from the shared stream,
//   2. the teacher takes a gradient step on B_t's hard labels (unless frozen),
//   3. every `infer_and_write_every` steps the teacher labels B_{t-D} and
//      appends a segment to the label store,
//   4. every student looks up soft labels for B_t in the snapshot pinned at
//      the manifest version committed after step 3, and takes one step,
//   5. at eval points all jobs are scored on a held-out stream forked from
//      the current world state.
// With threads > 1 the teacher's step t+1 runs concurrently with the
// students' step t; students only read pinned snapshots so results are
// identical to the sequential schedule.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kdrank/datagen.hpp"
#include "kdrank/metrics.hpp"
#include "kdrank/metrics_log.hpp"
#include "kdrank/nncore.hpp"
#include "kdrank/ranker.hpp"

namespace kdrank::pipeline {

struct TeacherJob {
  std::string name = "teacher";
  ranker::ModelConfig model;  // mode must be NoDistill
  nncore::TrainConfig train;
  std::uint64_t seed = 0;
  std::size_t infer_and_write_every = 1;  // 0 disables label writes
  std::size_t label_delay = 0;            // D, in batches
  std::optional<std::size_t> freeze_at;   // no teacher updates from this step on
  // Multiplies the teacher's training labels of a regression task.
  std::map<std::string, double> bias_injection;
  // Steps the teacher trains alone on the stream before students start.
  std::size_t pretrain_steps = 0;
};

struct StudentJob {
  std::string name;
  ranker::ModelConfig model;
  nncore::TrainConfig train;
  std::uint64_t seed = 0;
  std::vector<double> alpha;  // per task; empty = 1 for every distilled task
  double temperature = 1.0;
};

struct ScheduleConfig {
  std::size_t total_steps = 400;
  std::size_t batch_size = 256;
  std::size_t eval_every = 100;  // the final step is always evaluated
  std::size_t eval_batches = 8;
  std::uint64_t eval_seed = 0;
  bool online_metrics = true;
  metrics::OnlineSimConfig online;
  std::size_t threads = 1;
  bool durable_store = true;

  void validate() const;
};

struct StepTrace {
  std::uint64_t manifest_version = 0;
  std::size_t found = 0;
  double coverage = 0.0;
  std::uint32_t label_crc = 0;
  std::vector<std::uint8_t> label_bytes;  // only with RunOptions::record_label_bytes
};

struct StudentResult {
  std::string name;
  ranker::RankingModel model;
  std::vector<StepTrace> trace;
};

struct RunResult {
  MetricsLog log;
  ranker::RankingModel teacher;
  std::vector<StudentResult> students;
  std::vector<std::uint64_t> step_versions;  // manifest version students saw at each step
};

struct RunOptions {
  bool record_label_bytes = false;
};

// Runs the loop against a label store at `store_dir` (created if missing;
// the caller decides whether it starts empty). Throws DivergenceError naming
// the job on NaN/Inf, StoreError on store failures, ConfigError on bad jobs.
RunResult run_online(datagen::WorldState world, const TeacherJob& teacher, const std::vector<StudentJob>& students,
                     const ScheduleConfig& schedule, const std::filesystem::path& store_dir,
                     const RunOptions& options = {});

struct FleetReport {
  std::size_t students = 0;
  std::size_t steps = 0;
  std::size_t segments = 0;
  bool labels_identical = true;
  bool coverage_identical = true;
  bool versions_identical = true;
  bool parameters_identical = true;
  std::vector<std::string> violations;
  std::vector<double> mean_coverage;

  bool consistent() const { return labels_identical && coverage_identical && versions_identical; }
};

// k copies of `student` (seeds from `student_seeds`, or student.seed for all
// when empty) consume one teacher's labels; every consumed soft-label byte
// is compared across students at every step.
FleetReport run_fleet_consistency(datagen::WorldState world, const TeacherJob& teacher, const StudentJob& student,
                                  std::size_t k, const ScheduleConfig& schedule, const std::filesystem::path& store_dir,
                                  const std::vector<std::uint64_t>& student_seeds = {});

// Byte encoding of the soft labels a student consumed for one batch: per
// row, per distilled task, a presence byte and the little-endian f32 bits.
std::vector<std::uint8_t> encode_consumed_labels(const ranker::SoftTargets& soft, const std::vector<std::size_t>& tasks);

}  // namespace kdrank::pipeline
