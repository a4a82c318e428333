#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

namespace kdrank::cli {

enum ExitCode : int { kOk = 0, kConfigError = 1, kRuntimeError = 2, kCorruption = 3 };

struct RunOverrides {
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::filesystem::path> out;
  std::optional<std::size_t> threads;
};

// Writes report.md, metrics.csv and run_manifest.json under the output
// directory. A diverged run writes metrics.partial.csv instead and marks the
// manifest status "diverged".
int cmd_run(const std::filesystem::path& config_path, const RunOverrides& overrides, std::ostream& out,
            std::ostream& err);

int cmd_inspect(const std::filesystem::path& store_dir, std::ostream& out, std::ostream& err);

// Renders report.md from a metrics.csv; `report_path` defaults to report.md
// next to the CSV.
int cmd_replay(const std::filesystem::path& csv_path, const std::optional<std::filesystem::path>& report_path,
               std::ostream& out, std::ostream& err);

}  // namespace kdrank::cli
