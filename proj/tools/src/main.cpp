#include <iostream>

#include "CLI11.hpp"

#include "kdrank/cli/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"kdrank: online distillation experiments for multi-task ranking models"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::string out_dir;
  std::size_t threads = 0;
  auto* run = app.add_subcommand("run", "Run an experiment config and write report.md, metrics.csv, run_manifest.json");
  run->add_option("config", config_path, "JSON experiment config")->required()->check(CLI::ExistingFile);
  run->add_option("--seeds", seeds, "Override the seed list")->delimiter(',');
  run->add_option("--out", out_dir, "Override the output directory");
  run->add_option("--threads", threads, "Worker threads for seeds")->check(CLI::PositiveNumber);

  std::string store_dir;
  auto* inspect = app.add_subcommand("inspect", "Dump a label store's manifest and segment headers");
  inspect->add_option("store_dir", store_dir, "Label store directory")->required();

  std::string csv_path;
  std::string report_path;
  auto* replay = app.add_subcommand("replay", "Re-render report.md from metrics.csv");
  replay->add_option("csv", csv_path, "metrics.csv from a previous run")->required();
  replay->add_option("--out", report_path, "Report path (default: report.md next to the CSV)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kdrank::cli::kConfigError;
  }

  if (*run) {
    kdrank::cli::RunOverrides overrides;
    if (!seeds.empty()) overrides.seeds = seeds;
    if (!out_dir.empty()) overrides.out = out_dir;
    if (threads > 0) overrides.threads = threads;
    return kdrank::cli::cmd_run(config_path, overrides, std::cout, std::cerr);
  }
  if (*inspect) return kdrank::cli::cmd_inspect(store_dir, std::cout, std::cerr);
  std::optional<std::filesystem::path> target;
  if (!report_path.empty()) target = report_path;
  return kdrank::cli::cmd_replay(csv_path, target, std::cout, std::cerr);
}
