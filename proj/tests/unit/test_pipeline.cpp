#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "kdrank/error.hpp"
#include "kdrank/labelstore.hpp"
#include "kdrank/metrics.hpp"
#include "kdrank/pipeline.hpp"
#include "oracles.hpp"

using namespace kdrank;
using namespace kdrank::pipeline;
using kdrank::testing::TempDir;

namespace {

ranker::ModelConfig model_config(std::size_t dim, std::vector<std::size_t> trunk, ranker::DistillMode mode, bool distill) {
  ranker::ModelConfig cfg;
  cfg.input_dim = dim;
  cfg.trunk_widths = std::move(trunk);
  cfg.tasks = kdrank::testing::four_tasks(distill);
  cfg.mode = mode;
  return cfg;
}

nncore::TrainConfig train_config(double lr = 0.01) {
  nncore::TrainConfig t;
  t.base_lr = lr;
  t.warmup_steps = 5;
  t.activation_clip = 6.0;
  t.clippy = nncore::ClippyConfig{};
  return t;
}

TeacherJob teacher_job(std::size_t dim, std::uint64_t seed = 100) {
  TeacherJob t;
  t.model = model_config(dim, {16, 8}, ranker::DistillMode::NoDistill, false);
  t.train = train_config();
  t.seed = seed;
  return t;
}

StudentJob student_job(const std::string& name, std::size_t dim, ranker::DistillMode mode, std::uint64_t seed = 200) {
  StudentJob s;
  s.name = name;
  s.model = model_config(dim, {8, 4}, mode, mode != ranker::DistillMode::NoDistill);
  s.train = train_config();
  s.seed = seed;
  return s;
}

ScheduleConfig schedule(std::size_t steps, std::size_t batch = 64) {
  ScheduleConfig s;
  s.total_steps = steps;
  s.batch_size = batch;
  s.eval_every = steps;
  s.eval_batches = 2;
  s.online_metrics = false;
  s.durable_store = false;
  return s;
}

}  // namespace

TEST(RunOnline, ZeroDelayGivesFullCoverage) {
  TempDir dir;
  const auto world = datagen::init_world(kdrank::testing::small_gen(8), 1);
  const auto res = run_online(world, teacher_job(8), {student_job("Direct", 8, ranker::DistillMode::Direct)}, schedule(20),
                              dir.path());
  ASSERT_EQ(res.students.size(), 1u);
  for (const auto& tr : res.students[0].trace) EXPECT_EQ(tr.coverage, 1.0);
  EXPECT_EQ(res.log.find_last("Direct", "*", "coverage")->value, 1.0);
}

TEST(RunOnline, LabelDelayLowersCoverage) {
  TempDir dir;
  const auto world = datagen::init_world(kdrank::testing::small_gen(8), 1);
  auto teacher = teacher_job(8);
  teacher.label_delay = 2;
  const auto res = run_online(world, teacher, {student_job("Direct", 8, ranker::DistillMode::Direct)}, schedule(10), dir.path());
  for (const auto& tr : res.students[0].trace) EXPECT_EQ(tr.coverage, 0.0);
}

TEST(RunOnline, CoverageMatchesTheStoreForTheActualBatch) {
  TempDir dir;
  const auto gen = kdrank::testing::small_gen(8);
  auto teacher = teacher_job(8);
  teacher.infer_and_write_every = 3;
  teacher.pretrain_steps = 4;
  const auto sched = schedule(15);
  const auto res = run_online(datagen::init_world(gen, 2), teacher, {student_job("S", 8, ranker::DistillMode::Direct)}, sched,
                              dir.path());
  auto replay = datagen::init_world(gen, 2);
  for (std::size_t i = 0; i < teacher.pretrain_steps; ++i) datagen::next_batch(replay, sched.batch_size);
  labelstore::LabelStore store(dir.path());
  for (const auto& tr : res.students[0].trace) {
    const auto batch = datagen::to_batch(datagen::next_batch(replay, sched.batch_size), gen.tasks.size());
    EXPECT_EQ(tr.coverage, store.open_snapshot_at(tr.manifest_version).coverage(batch.ids));
  }
}

TEST(RunOnline, NoDistillStudentEqualsAPlainTrainingLoop) {
  TempDir dir;
  const auto gen = kdrank::testing::small_gen(8, 0.999);
  auto teacher = teacher_job(8);
  teacher.pretrain_steps = 3;
  const auto student = student_job("Control", 8, ranker::DistillMode::NoDistill);
  const auto sched = schedule(25);
  const auto res = run_online(datagen::init_world(gen, 3), teacher, {student}, sched, dir.path());

  auto world = datagen::init_world(gen, 3);
  for (std::size_t i = 0; i < teacher.pretrain_steps; ++i) datagen::next_batch(world, sched.batch_size);
  Rng rng(student.seed);
  ranker::RankingModel model(student.model, rng);
  auto opt = ranker::ModelOptState::zeros_like(model);
  for (std::size_t t = 0; t < sched.total_steps; ++t) {
    const auto b = datagen::to_batch(datagen::next_batch(world, sched.batch_size), gen.tasks.size());
    ranker::train_step(model, opt, student.train, b.x, b.labels, ranker::SoftTargets::none(gen.tasks.size()));
  }
  EXPECT_EQ(res.students[0].model, model);
}

TEST(RunOnline, AlphaZeroDirectEqualsControl) {
  TempDir a, b;
  const auto world = datagen::init_world(kdrank::testing::small_gen(8, 0.999), 4);
  auto direct = student_job("Direct", 8, ranker::DistillMode::Direct);
  direct.alpha.assign(4, 0.0);
  const auto control = student_job("Control", 8, ranker::DistillMode::NoDistill);
  const auto r1 = run_online(world, teacher_job(8), {direct}, schedule(30), a.path());
  const auto r2 = run_online(world, teacher_job(8), {control}, schedule(30), b.path());
  EXPECT_EQ(r1.students[0].model.trunk(), r2.students[0].model.trunk());
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(r1.students[0].model.tower(t), r2.students[0].model.tower(t));
}

TEST(RunOnline, TeacherDoesNotDependOnTheStoreOrStudents) {
  TempDir a, b;
  const auto world = datagen::init_world(kdrank::testing::small_gen(8, 0.999), 5);
  auto silent = teacher_job(8);
  silent.infer_and_write_every = 0;
  const auto r1 = run_online(world, teacher_job(8),
                             {student_job("D", 8, ranker::DistillMode::Direct), student_job("A", 8, ranker::DistillMode::Auxiliary)},
                             schedule(20), a.path());
  const auto r2 = run_online(world, silent, {}, schedule(20), b.path());
  EXPECT_EQ(r1.teacher, r2.teacher);
  EXPECT_EQ(labelstore::read_manifest(b.path()).version, 0u);
}

TEST(RunOnline, DeterministicAcrossThreadCounts) {
  TempDir a, b;
  const auto world = datagen::init_world(kdrank::testing::small_gen(8, 0.999), 6);
  const std::vector<StudentJob> students{student_job("D", 8, ranker::DistillMode::Direct, 1),
                                         student_job("A", 8, ranker::DistillMode::Auxiliary, 2),
                                         student_job("C", 8, ranker::DistillMode::NoDistill, 3)};
  auto sched = schedule(20);
  sched.online_metrics = true;
  sched.online.n_slates = 100;
  sched.eval_every = 10;
  const auto r1 = run_online(world, teacher_job(8), students, sched, a.path());
  sched.threads = 4;
  const auto r2 = run_online(world, teacher_job(8), students, sched, b.path());
  EXPECT_EQ(r1.log, r2.log);
  for (std::size_t i = 0; i < students.size(); ++i) EXPECT_EQ(r1.students[i].model, r2.students[i].model);
  EXPECT_EQ(r1.step_versions, r2.step_versions);
}

TEST(RunOnline, StudentsShareOneManifestVersionPerStep) {
  TempDir dir;
  const auto world = datagen::init_world(kdrank::testing::small_gen(8), 7);
  auto sched = schedule(12);
  sched.threads = 3;
  const auto res = run_online(world, teacher_job(8),
                              {student_job("D", 8, ranker::DistillMode::Direct), student_job("A", 8, ranker::DistillMode::Auxiliary)},
                              sched, dir.path());
  for (std::size_t t = 0; t < res.step_versions.size(); ++t) {
    EXPECT_EQ(res.students[0].trace[t].manifest_version, res.step_versions[t]);
    EXPECT_EQ(res.students[1].trace[t].manifest_version, res.step_versions[t]);
    EXPECT_EQ(res.step_versions[t], t + 1);
  }
}

TEST(RunOnline, RejectsMismatchedTasks) {
  TempDir dir;
  const auto world = datagen::init_world(kdrank::testing::small_gen(8), 8);
  auto s = student_job("bad", 8, ranker::DistillMode::NoDistill);
  s.model.tasks.pop_back();
  EXPECT_THROW(run_online(world, teacher_job(8), {s}, schedule(2), dir.path()), ConfigError);
  auto t = teacher_job(8);
  t.bias_injection["CTR"] = 1.3;
  EXPECT_THROW(run_online(world, t, {}, schedule(2), dir.path()), ConfigError);
}

TEST(RunOnline, DivergenceNamesTheJob) {
  TempDir dir;
  const auto world = datagen::init_world(kdrank::testing::small_gen(8), 9);
  auto s = student_job("Exploder", 8, ranker::DistillMode::NoDistill);
  s.train.base_lr = 1e300;
  s.train.clippy.reset();
  s.train.activation_clip.reset();
  s.train.warmup_steps = 0;
  try {
    run_online(world, teacher_job(8), {s}, schedule(50), dir.path());
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("Exploder"), std::string::npos) << e.what();
  }
}

TEST(Fleet, TwoIdenticalStudentsMatchEverywhere) {
  TempDir dir;
  const auto world = datagen::init_world(kdrank::testing::small_gen(8), 10);
  const auto rep = run_fleet_consistency(world, teacher_job(8), student_job("S", 8, ranker::DistillMode::Direct), 2, schedule(15),
                                         dir.path());
  EXPECT_TRUE(rep.consistent());
  EXPECT_TRUE(rep.parameters_identical);
  EXPECT_TRUE(rep.violations.empty());
}

TEST(Fleet, FourThreadedStudentsConsumeIdenticalBytes) {
  TempDir dir;
  const auto world = datagen::init_world(kdrank::testing::small_gen(8, 0.999), 11);
  auto sched = schedule(40);
  sched.threads = 4;
  const auto rep = run_fleet_consistency(world, teacher_job(8), student_job("S", 8, ranker::DistillMode::Auxiliary), 4, sched,
                                         dir.path());
  EXPECT_TRUE(rep.consistent()) << (rep.violations.empty() ? "" : rep.violations.front());
  EXPECT_EQ(rep.segments, 40u);
  EXPECT_EQ(rep.steps, 40u);
}

TEST(Fleet, DifferentSeedsShareLabelsButNotParameters) {
  TempDir dir;
  const auto world = datagen::init_world(kdrank::testing::small_gen(8), 12);
  const auto rep = run_fleet_consistency(world, teacher_job(8), student_job("S", 8, ranker::DistillMode::Direct), 2, schedule(10),
                                         dir.path(), {1, 2});
  EXPECT_TRUE(rep.consistent());
  EXPECT_FALSE(rep.parameters_identical);
  EXPECT_THROW(run_fleet_consistency(world, teacher_job(8), student_job("S", 8, ranker::DistillMode::Direct), 1, schedule(2),
                                     dir.path()),
               ConfigError);
}

TEST(Staleness, FrozenTeacherLosesAucUnderDrift) {
  double mid = 0.0, end = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    TempDir dir;
    const auto world = datagen::init_world(kdrank::testing::small_gen(8, 0.999), seed);
    auto teacher = teacher_job(8, seed);
    teacher.freeze_at = 100;
    teacher.infer_and_write_every = 0;
    teacher.model.trunk_widths = {8};
    auto sched = schedule(200, 128);
    sched.eval_every = 100;
    sched.eval_batches = 4;
    sched.eval_seed = seed;
    const auto res = run_online(world, teacher, {}, sched, dir.path());
    const auto rows = res.log.select("teacher", "CTR", "auc");
    ASSERT_EQ(rows.size(), 2u);
    mid += rows[0].value;
    end += rows[1].value;
  }
  EXPECT_LT(end / 10, mid / 10);
}
