#pragma once

// Experiment families run over a list of seeds:
//   distill-strategy     Control / Direct / Auxiliary students, one teacher
//   teacher-scale        Control student vs students of 2x, 4x, ... teachers
//   objective-selection  students distilling PET, PET+PST, PET+PST+Others
//   custom               explicit student list
// Results are a MetricsLog holding every eval row per seed (job
// "<arm>#<seed>"), per-seed lifts against Control, and per-arm aggregates
// (job "<arm>", mean with a seed-level bootstrap CI).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kdrank/datagen.hpp"
#include "kdrank/metrics_log.hpp"
#include "kdrank/nncore.hpp"
#include "kdrank/pipeline.hpp"
#include "kdrank/ranker.hpp"

namespace kdrank::experiment {

enum class Family { DistillStrategy, TeacherScale, ObjectiveSelection, Custom };

std::string_view to_string(Family family);
Family parse_family(std::string_view text);

struct CustomStudent {
  std::string name;
  ranker::DistillMode mode = ranker::DistillMode::NoDistill;
  std::vector<std::string> distill_tasks;
  double alpha = 1.0;
};

// Adam at 2e-3 with 20 warmup steps, activations clipped at 6 and update
// clipping at sigma_rel = 0.1.
nncore::TrainConfig default_train();

struct ExperimentSpec {
  Family family = Family::DistillStrategy;
  datagen::GenConfig gen = datagen::GenConfig::desk_default();

  std::vector<std::size_t> student_trunk{16, 8};
  std::vector<std::size_t> tower;
  nncore::TrainConfig student_train = default_train();
  nncore::TrainConfig teacher_train = default_train();

  // Teacher width multiplier for every family except teacher-scale, which
  // sweeps `teacher_scales` against a 1x control run.
  std::size_t teacher_scale = 2;
  std::vector<std::size_t> teacher_scales{2, 4};
  std::size_t infer_and_write_every = 1;
  std::size_t label_delay = 0;
  std::optional<std::size_t> freeze_at;
  std::map<std::string, double> bias_injection;
  std::size_t teacher_pretrain_steps = 300;

  // Mode used by the distilled arms of teacher-scale and objective-selection.
  ranker::DistillMode distill_mode = ranker::DistillMode::Direct;
  // Tasks distilled by distill-strategy and teacher-scale arms; empty = all.
  std::vector<std::string> distill_tasks;
  double alpha = 1.0;
  double temperature = 1.0;
  std::vector<CustomStudent> custom_students;

  pipeline::ScheduleConfig schedule;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

  // Label stores live under work_dir/<family>/seed-<s>/<run>.
  std::filesystem::path work_dir = "kdrank-work";
  // Seeds are partitioned across this many worker threads.
  std::size_t threads = 1;

  void validate() const;
};

struct SeedIds {
  std::uint64_t world;
  std::uint64_t eval;
  std::uint64_t teacher;
  std::uint64_t student;
};
SeedIds seed_ids(std::uint64_t seed);

// One teacher plus its students as run for a single seed.
struct RunPlan {
  std::string name;
  pipeline::TeacherJob teacher;
  std::vector<pipeline::StudentJob> students;
};

// The runs an experiment performs for `seed` (exposed for tests).
std::vector<RunPlan> plan_runs(const ExperimentSpec& spec, std::uint64_t seed);

// Arms in table order; the first is the control arm.
std::vector<std::string> arm_names(const ExperimentSpec& spec);

// Runs every seed and aggregates. Throws DivergenceError naming the seed and
// job if any run diverges; `partial` (if given) receives the rows of seeds
// that finished.
MetricsLog run_experiment(const ExperimentSpec& spec, MetricsLog* partial = nullptr);

// Markdown report rendered purely from a MetricsLog produced by
// run_experiment (also after a CSV round trip). A log without the "@run"
// metadata rows renders as a flat table of its rows.
std::string render_report(const MetricsLog& log);

}  // namespace kdrank::experiment
