#include "kdrank/cli/config.hpp"

#include <concepts>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "kdrank/error.hpp"

namespace kdrank::cli {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& reason) {
  throw ConfigError(fmt::format("{}: {}", path, reason));
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

template <std::unsigned_integral T>
  requires(!std::same_as<T, bool>)
void read(const json& j, const std::string& path, T& out) {
  if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<std::int64_t>() < 0)) {
    fail(path, "expected a non-negative integer");
  }
  out = j.get<T>();
}

void read(const json& j, const std::string& path, double& out) {
  if (!j.is_number()) fail(path, "expected a number");
  out = j.get<double>();
}

void read(const json& j, const std::string& path, bool& out) {
  if (!j.is_boolean()) fail(path, "expected true or false");
  out = j.get<bool>();
}

void read(const json& j, const std::string& path, std::string& out) {
  if (!j.is_string()) fail(path, "expected a string");
  out = j.get<std::string>();
}

template <typename T>
void read(const json& j, const std::string& path, std::vector<T>& out) {
  if (!j.is_array()) fail(path, "expected an array");
  out.clear();
  for (std::size_t i = 0; i < j.size(); ++i) {
    T v{};
    read(j[i], fmt::format("{}[{}]", path, i), v);
    out.push_back(std::move(v));
  }
}

template <typename T>
void read(const json& j, const std::string& path, std::optional<T>& out) {
  if (j.is_null()) {
    out.reset();
    return;
  }
  T v{};
  read(j, path, v);
  out = v;
}

// Object view that records which keys were consumed and rejects the rest.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) fail(path_.empty() ? "config" : path_, "expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (const auto it = j_.find(key); it != j_.end()) read(*it, join(path_, key), out);
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return join(path_, key); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) fail(join(path_, key), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
auto parse_enum(const json* j, const std::string& path, Fn fn) {
  std::string text;
  read(*j, path, text);
  try {
    return fn(text);
  } catch (const ConfigError& e) {
    fail(path, e.what());
  }
}

nncore::TrainConfig parse_train(const json& j, const std::string& path) {
  nncore::TrainConfig cfg;
  Fields f(j, path);
  f.get("base_lr", cfg.base_lr);
  f.get("warmup_steps", cfg.warmup_steps);
  f.get("activation_clip", cfg.activation_clip);
  if (const auto* c = f.child("clippy")) {
    if (c->is_null()) {
      cfg.clippy.reset();
    } else {
      nncore::ClippyConfig clippy;
      Fields cf(*c, f.path("clippy"));
      cf.get("sigma_rel", clippy.sigma_rel);
      cf.get("sigma_abs", clippy.sigma_abs);
      cf.finish();
      cfg.clippy = clippy;
    }
  }
  if (const auto* a = f.child("adam")) {
    Fields af(*a, f.path("adam"));
    af.get("beta1", cfg.adam.beta1);
    af.get("beta2", cfg.adam.beta2);
    af.get("epsilon", cfg.adam.epsilon);
    af.finish();
  }
  f.finish();
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    fail(path, e.what());
  }
  return cfg;
}

json train_json(const nncore::TrainConfig& cfg) {
  json j;
  j["base_lr"] = cfg.base_lr;
  j["warmup_steps"] = cfg.warmup_steps;
  j["activation_clip"] = cfg.activation_clip ? json(*cfg.activation_clip) : json(nullptr);
  j["clippy"] = cfg.clippy ? json{{"sigma_rel", cfg.clippy->sigma_rel}, {"sigma_abs", cfg.clippy->sigma_abs}} : json(nullptr);
  j["adam"] = {{"beta1", cfg.adam.beta1}, {"beta2", cfg.adam.beta2}, {"epsilon", cfg.adam.epsilon}};
  return j;
}

void parse_gen(const json& j, datagen::GenConfig& gen) {
  Fields f(j, "gen");
  f.get("dim", gen.dim);
  f.get("drift_rate", gen.drift_rate);
  f.get("ltv_noise_sigma", gen.ltv_noise_sigma);
  f.get("conflict_angle", gen.conflict_angle);
  f.get("logit_scale", gen.logit_scale);
  if (const auto* tasks = f.child("tasks")) {
    if (!tasks->is_array()) fail("gen.tasks", "expected an array");
    gen.tasks.clear();
    for (std::size_t i = 0; i < tasks->size(); ++i) {
      const auto path = fmt::format("gen.tasks[{}]", i);
      Fields tf((*tasks)[i], path);
      ranker::TaskSpec task;
      tf.get("name", task.name);
      if (const auto* k = tf.child("kind")) task.kind = parse_enum(k, tf.path("kind"), ranker::parse_task_kind);
      if (const auto* c = tf.child("category")) {
        task.category = parse_enum(c, tf.path("category"), ranker::parse_task_category);
      }
      tf.finish();
      gen.tasks.push_back(std::move(task));
    }
  }
  f.finish();
}

json gen_json(const datagen::GenConfig& gen) {
  json tasks = json::array();
  for (const auto& t : gen.tasks) {
    tasks.push_back({{"name", t.name},
                     {"kind", std::string(ranker::to_string(t.kind))},
                     {"category", std::string(ranker::to_string(t.category))}});
  }
  return {{"dim", gen.dim},
          {"drift_rate", gen.drift_rate},
          {"ltv_noise_sigma", gen.ltv_noise_sigma},
          {"conflict_angle", gen.conflict_angle},
          {"logit_scale", gen.logit_scale},
          {"tasks", tasks}};
}

void parse_schedule(const json& j, pipeline::ScheduleConfig& s) {
  Fields f(j, "schedule");
  f.get("total_steps", s.total_steps);
  f.get("batch_size", s.batch_size);
  f.get("eval_every", s.eval_every);
  f.get("eval_batches", s.eval_batches);
  f.get("online_metrics", s.online_metrics);
  f.get("durable_store", s.durable_store);
  f.get("threads", s.threads);
  if (const auto* o = f.child("online")) {
    Fields of(*o, "schedule.online");
    of.get("slate_size", s.online.slate_size);
    of.get("n_slates", s.online.n_slates);
    of.get("policy_task", s.online.policy_task);
    of.get("engagement_task", s.online.engagement_task);
    of.get("satisfaction_task", s.online.satisfaction_task);
    of.finish();
  }
  f.finish();
}

json schedule_json(const pipeline::ScheduleConfig& s) {
  return {{"total_steps", s.total_steps},
          {"batch_size", s.batch_size},
          {"eval_every", s.eval_every},
          {"eval_batches", s.eval_batches},
          {"online_metrics", s.online_metrics},
          {"durable_store", s.durable_store},
          {"threads", s.threads},
          {"online",
           {{"slate_size", s.online.slate_size},
            {"n_slates", s.online.n_slates},
            {"policy_task", s.online.policy_task},
            {"engagement_task", s.online.engagement_task},
            {"satisfaction_task", s.online.satisfaction_task}}}};
}

}  // namespace

RunConfig parse_config(const json& doc) {
  RunConfig cfg;
  auto& spec = cfg.spec;
  Fields f(doc, "");
  if (const auto* fam = f.child("family")) spec.family = parse_enum(fam, "family", experiment::parse_family);
  f.get("seeds", spec.seeds);
  std::string out = cfg.output_dir.string();
  f.get("output_dir", out);
  cfg.output_dir = out;
  f.get("threads", spec.threads);
  if (const auto* g = f.child("gen")) parse_gen(*g, spec.gen);

  if (const auto* s = f.child("student")) {
    Fields sf(*s, "student");
    sf.get("trunk", spec.student_trunk);
    sf.get("tower", spec.tower);
    if (const auto* t = sf.child("train")) spec.student_train = parse_train(*t, "student.train");
    sf.finish();
  }
  if (const auto* t = f.child("teacher")) {
    Fields tf(*t, "teacher");
    tf.get("scale", spec.teacher_scale);
    tf.get("scales", spec.teacher_scales);
    if (const auto* tr = tf.child("train")) spec.teacher_train = parse_train(*tr, "teacher.train");
    tf.get("infer_and_write_every", spec.infer_and_write_every);
    tf.get("label_delay", spec.label_delay);
    tf.get("freeze_at", spec.freeze_at);
    tf.get("pretrain_steps", spec.teacher_pretrain_steps);
    if (const auto* b = tf.child("bias_injection")) {
      if (!b->is_object()) fail("teacher.bias_injection", "expected an object of task: factor");
      spec.bias_injection.clear();
      for (const auto& [task, factor] : b->items()) read(factor, "teacher.bias_injection." + task, spec.bias_injection[task]);
    }
    tf.finish();
  }
  if (const auto* d = f.child("distill")) {
    Fields df(*d, "distill");
    if (const auto* m = df.child("mode")) spec.distill_mode = parse_enum(m, "distill.mode", ranker::parse_distill_mode);
    df.get("tasks", spec.distill_tasks);
    df.get("alpha", spec.alpha);
    df.get("temperature", spec.temperature);
    df.finish();
  }
  if (const auto* list = f.child("students")) {
    if (!list->is_array()) fail("students", "expected an array");
    spec.custom_students.clear();
    for (std::size_t i = 0; i < list->size(); ++i) {
      const auto path = fmt::format("students[{}]", i);
      Fields sf((*list)[i], path);
      experiment::CustomStudent s;
      sf.get("name", s.name);
      if (const auto* m = sf.child("mode")) s.mode = parse_enum(m, sf.path("mode"), ranker::parse_distill_mode);
      sf.get("tasks", s.distill_tasks);
      sf.get("alpha", s.alpha);
      sf.finish();
      spec.custom_students.push_back(std::move(s));
    }
  }
  if (const auto* s = f.child("schedule")) parse_schedule(*s, spec.schedule);
  f.finish();

  spec.work_dir = cfg.output_dir / "stores";
  spec.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("config: cannot read {}", path.string()));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("config: {} is not valid JSON ({})", path.string(), e.what()));
  }
  return parse_config(doc);
}

json to_json(const RunConfig& cfg) {
  const auto& spec = cfg.spec;
  json bias = json::object();
  for (const auto& [task, factor] : spec.bias_injection) bias[task] = factor;
  json students = json::array();
  for (const auto& s : spec.custom_students) {
    students.push_back({{"name", s.name},
                        {"mode", std::string(ranker::to_string(s.mode))},
                        {"tasks", s.distill_tasks},
                        {"alpha", s.alpha}});
  }
  return {{"family", std::string(experiment::to_string(spec.family))},
          {"seeds", spec.seeds},
          {"output_dir", cfg.output_dir.string()},
          {"threads", spec.threads},
          {"gen", gen_json(spec.gen)},
          {"student", {{"trunk", spec.student_trunk}, {"tower", spec.tower}, {"train", train_json(spec.student_train)}}},
          {"teacher",
           {{"scale", spec.teacher_scale},
            {"scales", spec.teacher_scales},
            {"train", train_json(spec.teacher_train)},
            {"infer_and_write_every", spec.infer_and_write_every},
            {"label_delay", spec.label_delay},
            {"freeze_at", spec.freeze_at ? json(*spec.freeze_at) : json(nullptr)},
            {"bias_injection", bias},
            {"pretrain_steps", spec.teacher_pretrain_steps}}},
          {"distill",
           {{"mode", std::string(ranker::to_string(spec.distill_mode))},
            {"tasks", spec.distill_tasks},
            {"alpha", spec.alpha},
            {"temperature", spec.temperature}}},
          {"students", students},
          {"schedule", schedule_json(spec.schedule)}};
}

std::uint64_t config_hash(const RunConfig& cfg) {
  auto j = to_json(cfg);
  j.erase("output_dir");
  j.erase("threads");
  j["schedule"].erase("threads");
  j["schedule"].erase("durable_store");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t hash) { return fmt::format("{:016x}", hash); }

}  // namespace kdrank::cli
