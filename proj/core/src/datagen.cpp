#include "kdrank/datagen.hpp"

#include <cmath>
#include <optional>

#include <fmt/format.h>

#include "kdrank/binary_io.hpp"
#include "kdrank/error.hpp"

namespace kdrank::datagen {

using ranker::TaskCategory;
using ranker::TaskKind;
using ranker::TaskSpec;

void GenConfig::validate() const {
  if (dim < 2) throw ConfigError("gen.dim: must be >= 2");
  if (!(drift_rate >= 0.0 && drift_rate <= 1.0)) throw ConfigError("gen.drift_rate: must be in [0, 1]");
  if (tasks.empty()) throw ConfigError("gen.tasks: at least one task is required");
  if (!(ltv_noise_sigma >= 0.0) || !std::isfinite(ltv_noise_sigma)) throw ConfigError("gen.ltv_noise_sigma: must be >= 0");
  if (!(conflict_angle >= 0.0 && conflict_angle <= std::numbers::pi)) {
    throw ConfigError("gen.conflict_angle: must be in [0, pi]");
  }
  if (!(logit_scale > 0.0) || !std::isfinite(logit_scale)) throw ConfigError("gen.logit_scale: must be positive");
  std::size_t pet = 0;
  std::size_t pst = 0;
  for (const auto& t : tasks) {
    pet += t.category == TaskCategory::PET;
    pst += t.category == TaskCategory::PST;
  }
  if (pet > 1 || pst > 1) {
    throw ConfigError("gen.tasks: the PET/PST conflict angle can only be realized with at most one PET and one PST task");
  }
}

GenConfig GenConfig::desk_default() {
  GenConfig cfg;
  cfg.tasks = {
      {"CTR", TaskKind::Binary, TaskCategory::PET, false},
      {"SAT", TaskKind::Binary, TaskCategory::PST, false},
      {"LTV", TaskKind::Regression, TaskCategory::Other, false},
      {"AUX_CLICK", TaskKind::Binary, TaskCategory::Other, false},
  };
  return cfg;
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void normalize(std::vector<double>& v) {
  const double n = std::sqrt(dot(v, v));
  for (double& x : v) x /= n;
}

std::vector<double> random_unit(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double n2 = 0.0;
  while (n2 < 1e-12) {
    for (double& x : v) x = rng.normal();
    n2 = dot(v, v);
  }
  normalize(v);
  return v;
}

}  // namespace

WorldState init_world(const GenConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  WorldState world;
  world.config_ = cfg;
  world.rng_ = Rng(seed);
  world.latent_.resize(cfg.tasks.size());

  std::optional<std::size_t> pet;
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    if (cfg.tasks[i].category == TaskCategory::PET) pet = i;
  }
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    if (cfg.tasks[i].category == TaskCategory::PST) continue;
    world.latent_[i] = random_unit(world.rng_, cfg.dim);
  }
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    if (cfg.tasks[i].category != TaskCategory::PST) continue;
    if (!pet) {
      world.latent_[i] = random_unit(world.rng_, cfg.dim);
      continue;
    }
    // Rotate away from the PET vector by the conflict angle inside a random
    // plane: w_pst = cos(a) u + sin(a) v, v orthonormal to u.
    const auto& u = world.latent_[*pet];
    std::vector<double> v;
    double n2 = 0.0;
    while (n2 < 1e-12) {
      v = random_unit(world.rng_, cfg.dim);
      const double proj = dot(v, u);
      for (std::size_t k = 0; k < v.size(); ++k) v[k] -= proj * u[k];
      n2 = dot(v, v);
    }
    normalize(v);
    const double c = std::cos(cfg.conflict_angle);
    const double s = std::sin(cfg.conflict_angle);
    std::vector<double> w(cfg.dim);
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = c * u[k] + s * v[k];
    normalize(w);
    world.latent_[i] = std::move(w);
  }
  return world;
}

WorldState WorldState::fork(std::uint64_t seed) const {
  WorldState copy = *this;
  copy.rng_ = Rng(seed);
  // Forked streams never share ids with the parent stream.
  copy.next_id_ = (std::uint64_t{1} << 63) | 1;
  return copy;
}

std::vector<ExampleRecord> next_batch(WorldState& world, std::size_t n) {
  if (n == 0) throw ConfigError("batch size must be >= 1");
  const auto& cfg = world.config_;
  const double k = cfg.logit_scale;
  const double sigma = cfg.ltv_noise_sigma;
  std::vector<ExampleRecord> out(n);
  for (auto& rec : out) {
    rec.example_id = world.next_id_++;
    rec.t = world.t_;
    rec.x.resize(cfg.dim);
    for (double& v : rec.x) v = world.rng_.normal();
    rec.labels.resize(cfg.tasks.size());
    for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
      const double z = k * dot(world.latent_[t], rec.x);
      if (cfg.tasks[t].kind == TaskKind::Binary) {
        rec.labels[t] = world.rng_.uniform() < ranker::sigmoid(z) ? 1.0 : 0.0;
      } else {
        const double noise = sigma > 0.0 ? std::exp(sigma * world.rng_.normal() - 0.5 * sigma * sigma) : 1.0;
        rec.labels[t] = ranker::softplus(z) * noise;
      }
    }
  }

  const double rho = cfg.drift_rate;
  if (rho < 1.0) {
    const double step = std::sqrt(1.0 - rho * rho);
    for (auto& w : world.latent_) {
      for (double& v : w) v = rho * v + step * world.rng_.normal();
      normalize(w);
    }
  }
  ++world.t_;
  return out;
}

double true_task_value(const WorldState& world, std::span<const double> x, std::size_t task) {
  const auto& cfg = world.config();
  if (task >= cfg.tasks.size()) throw ConfigError(fmt::format("unknown task index {}", task));
  if (x.size() != cfg.dim) throw DimensionError(fmt::format("feature vector has {} entries, world dim is {}", x.size(), cfg.dim));
  const double z = cfg.logit_scale * dot(world.latent(task), x);
  return cfg.tasks[task].kind == TaskKind::Binary ? ranker::sigmoid(z) : ranker::softplus(z);
}

double true_task_value(const WorldState& world, std::span<const double> x, std::string_view task) {
  return true_task_value(world, x, ranker::task_index(world.config().tasks, task));
}

Batch to_batch(std::span<const ExampleRecord> records, std::size_t n_tasks) {
  Batch b;
  if (records.empty()) return b;
  const std::size_t dim = records.front().x.size();
  b.x = nncore::Tensor2(records.size(), dim);
  b.labels.assign(n_tasks, std::vector<double>(records.size()));
  b.ids.reserve(records.size());
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.x.size() != dim || rec.labels.size() != n_tasks) throw DimensionError("inconsistent example record shapes");
    b.ids.push_back(rec.example_id);
    std::copy(rec.x.begin(), rec.x.end(), b.x.row(r).begin());
    for (std::size_t t = 0; t < n_tasks; ++t) b.labels[t][r] = rec.labels[t];
  }
  return b;
}

namespace {
constexpr std::string_view kStreamMagic = "SLR1";
constexpr std::uint32_t kStreamVersion = 1;
}  // namespace

void write_stream(const std::filesystem::path& path, std::span<const ExampleRecord> records) {
  binary_io::Writer w;
  w.raw(kStreamMagic);
  w.u32(kStreamVersion);
  const std::uint32_t dim = records.empty() ? 0 : static_cast<std::uint32_t>(records.front().x.size());
  const std::uint16_t n_tasks = records.empty() ? 0 : static_cast<std::uint16_t>(records.front().labels.size());
  w.u32(dim);
  w.u16(n_tasks);
  w.u64(records.size());
  for (const auto& rec : records) {
    if (rec.x.size() != dim || rec.labels.size() != n_tasks) throw DimensionError("inconsistent example record shapes");
    w.u64(rec.example_id);
    w.u64(rec.t);
    for (double v : rec.x) w.f64(v);
    for (double v : rec.labels) w.f64(v);
  }
  w.crc_trailer();
  binary_io::write_file_synced(path, w.bytes());
}

std::vector<ExampleRecord> read_stream(const std::filesystem::path& path) {
  const auto bytes = binary_io::read_file(path);
  const auto payload = binary_io::verify_crc_trailer(bytes, path.string());
  binary_io::Reader r(payload, path.string());
  r.expect_magic(kStreamMagic);
  if (r.u32() != kStreamVersion) throw CorruptionError(path.string() + ": unsupported stream version");
  const std::uint32_t dim = r.u32();
  const std::uint16_t n_tasks = r.u16();
  const std::uint64_t n = r.u64();
  const std::size_t per_record = 16 + 8 * (static_cast<std::size_t>(dim) + n_tasks);
  if (n > r.remaining() / std::max<std::size_t>(per_record, 1)) throw CorruptionError(path.string() + ": record count exceeds file size");
  std::vector<ExampleRecord> out(n);
  for (auto& rec : out) {
    rec.example_id = r.u64();
    rec.t = r.u64();
    rec.x.resize(dim);
    for (double& v : rec.x) v = r.f64();
    rec.labels.resize(n_tasks);
    for (double& v : rec.labels) v = r.f64();
  }
  if (r.remaining() != 0) throw CorruptionError(path.string() + ": trailing bytes");
  return out;
}

}  // namespace kdrank::datagen
