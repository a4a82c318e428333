#include "kdrank/cli/commands.hpp"

#include <fstream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "kdrank/cli/config.hpp"
#include "kdrank/error.hpp"
#include "kdrank/experiment.hpp"
#include "kdrank/labelstore.hpp"

namespace kdrank::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f) throw StoreError(fmt::format("cannot write {}", path.string()));
}

json manifest_json(const RunConfig& cfg, const std::string& status) {
  return {{"config_hash", hash_hex(config_hash(cfg))},
          {"family", std::string(experiment::to_string(cfg.spec.family))},
          {"seeds", cfg.spec.seeds},
          {"label_store", cfg.spec.work_dir.string()},
          {"status", status},
          {"config", to_json(cfg)}};
}

}  // namespace

int cmd_run(const fs::path& config_path, const RunOverrides& overrides, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = load_config(config_path);
    if (overrides.seeds) cfg.spec.seeds = *overrides.seeds;
    if (overrides.threads) cfg.spec.threads = *overrides.threads;
    if (overrides.out) {
      cfg.output_dir = *overrides.out;
      cfg.spec.work_dir = cfg.output_dir / "stores";
    }
    cfg.spec.validate();
  } catch (const ConfigError& e) {
    fmt::print(err, "config error: {}\n", e.what());
    return kConfigError;
  }

  const auto manifest_path = cfg.output_dir / "run_manifest.json";
  try {
    fs::create_directories(cfg.output_dir);
    fs::remove(cfg.output_dir / "metrics.partial.csv");
    write_text(manifest_path, manifest_json(cfg, "running").dump(2) + "\n");
    fmt::print(out, "running {} over {} seed(s), config {}\n", experiment::to_string(cfg.spec.family),
               cfg.spec.seeds.size(), hash_hex(config_hash(cfg)));

    MetricsLog partial;
    MetricsLog log;
    try {
      log = experiment::run_experiment(cfg.spec, &partial);
    } catch (const DivergenceError& e) {
      write_text(cfg.output_dir / "metrics.partial.csv", partial.to_csv());
      auto m = manifest_json(cfg, "diverged");
      m["error"] = e.what();
      write_text(manifest_path, m.dump(2) + "\n");
      fmt::print(err, "divergence: {}\npartial metrics: {}\n", e.what(), (cfg.output_dir / "metrics.partial.csv").string());
      return kRuntimeError;
    }
    write_text(cfg.output_dir / "metrics.csv", log.to_csv());
    write_text(cfg.output_dir / "report.md", experiment::render_report(log));
    write_text(manifest_path, manifest_json(cfg, "complete").dump(2) + "\n");
    fmt::print(out, "wrote {}\n", (cfg.output_dir / "report.md").string());
    return kOk;
  } catch (const CorruptionError& e) {
    fmt::print(err, "corruption: {}\n", e.what());
    return kCorruption;
  } catch (const ConfigError& e) {
    fmt::print(err, "config error: {}\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kRuntimeError;
  }
}

int cmd_inspect(const fs::path& store_dir, std::ostream& out, std::ostream& err) {
  labelstore::InspectReport report;
  try {
    report = labelstore::inspect_store(store_dir);
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kRuntimeError;
  }
  fmt::print(out, "store: {}\n", store_dir.string());
  if (report.manifest_ok) {
    fmt::print(out, "manifest: version {}, {} segments\n", report.manifest_version, report.segments.size());
  } else {
    fmt::print(out, "manifest: CORRUPT ({})\n", report.manifest_error);
  }
  for (const auto& s : report.segments) {
    if (!s.ok) {
      fmt::print(out, "segment {}: CORRUPT ({})\n", s.segment_id, s.error);
      continue;
    }
    std::string tasks;
    for (const auto& t : s.tasks) {
      if (!tasks.empty()) tasks += ",";
      tasks += fmt::format("{}:{}", t.name, ranker::to_string(t.kind));
    }
    fmt::print(out, "segment {}: teacher_version {}, rows {}, ids [{}, {}], tasks {}, checksum OK\n", s.segment_id,
               s.teacher_version, s.rows, s.min_id, s.max_id, tasks);
  }
  for (const auto& o : report.orphans) fmt::print(out, "orphan (uncommitted): {}\n", o);
  fmt::print(out, "total rows: {}\n", report.total_rows);
  if (!report.healthy()) {
    fmt::print(err, "store is corrupt\n");
    return kCorruption;
  }
  return kOk;
}

int cmd_replay(const fs::path& csv_path, const std::optional<fs::path>& report_path, std::ostream& out,
               std::ostream& err) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) {
    fmt::print(err, "error: cannot read {}\n", csv_path.string());
    return kConfigError;
  }
  try {
    const auto log = MetricsLog::read_csv(in);
    const auto target = report_path.value_or(csv_path.parent_path() / "report.md");
    write_text(target, experiment::render_report(log));
    fmt::print(out, "wrote {}\n", target.string());
    return kOk;
  } catch (const ConfigError& e) {
    fmt::print(err, "schema error: {}\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kRuntimeError;
  }
}

}  // namespace kdrank::cli
