#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "kdrank/error.hpp"
#include "kdrank/experiment.hpp"
#include "kdrank/metrics.hpp"

namespace kdrank::experiment {

namespace {

struct RunMeta {
  std::string family;
  std::size_t seeds = 0;
  std::string policy;
  std::vector<std::string> arms;
  std::map<std::string, std::string> teacher_of;
};

RunMeta read_meta(const MetricsLog& log) {
  RunMeta meta;
  std::vector<std::pair<double, std::string>> arms;
  for (const auto& r : log.rows()) {
    if (r.job != "@run") continue;
    if (r.task == "family") {
      meta.family = r.metric;
      meta.seeds = static_cast<std::size_t>(r.value);
    } else if (r.task == "policy") {
      meta.policy = r.metric;
    } else if (r.task == "arm") {
      arms.emplace_back(r.value, r.metric);
    } else if (r.task.rfind("teacher:", 0) == 0) {
      meta.teacher_of[r.task.substr(8)] = r.metric;
    }
  }
  std::stable_sort(arms.begin(), arms.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& a : arms) meta.arms.push_back(std::move(a.second));
  return meta;
}

class Table {
 public:
  explicit Table(const MetricsLog& log) : log_(log) {}

  // "mean ± se [lo, hi]" for an aggregate row; "-" when absent.
  std::string cell(const std::string& job, const std::string& task, const std::string& metric, int digits = 4) const {
    const auto agg = log_.find_last(job, task, metric);
    if (!agg) return "-";
    std::vector<double> per_seed;
    std::set<std::string> seen;
    const auto& rows = log_.rows();
    for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
      if (it->step != agg->step || it->task != task || it->metric != metric) continue;
      if (it->job.size() <= job.size() + 1 || it->job.compare(0, job.size(), job) != 0 || it->job[job.size()] != '#') continue;
      if (seen.insert(it->job).second) per_seed.push_back(it->value);
    }
    std::string out = fmt::format("{:.{}f}", agg->value, digits);
    if (per_seed.size() >= 2) out += fmt::format(" ± {:.{}f}", metrics::stderr_of_mean(per_seed), digits);
    if (agg->lo && agg->hi) out += fmt::format(" [{:.{}f}, {:.{}f}]", *agg->lo, digits, *agg->hi, digits);
    return out;
  }

 private:
  const MetricsLog& log_;
};

std::string row(const std::vector<std::string>& cells) {
  std::string out = "|";
  for (const auto& c : cells) out += " " + c + " |";
  return out + "\n";
}

std::string rule(std::size_t n) {
  std::string out = "|";
  for (std::size_t i = 0; i < n; ++i) out += "---|";
  return out + "\n";
}

// (task, metric) pairs of the aggregate rows of `job`, in log order.
std::vector<std::pair<std::string, std::string>> aggregate_keys(const MetricsLog& log, const std::string& job) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& r : log.rows()) {
    if (r.job != job || r.metric == "parameters") continue;
    std::pair<std::string, std::string> key{r.task, r.metric};
    if (std::find(out.begin(), out.end(), key) == out.end()) out.push_back(std::move(key));
  }
  return out;
}

std::string metric_label(const std::string& task, const std::string& metric) {
  if (metric == "engagement_lift_pct") return "Engagement lift (%)";
  if (metric == "satisfaction_lift_pct") return "Satisfaction lift (%)";
  if (task == "*") {
    if (metric == "engagement") return "Engagement";
    if (metric == "satisfaction") return "Satisfaction";
    return metric;
  }
  if (metric == "auc") return task + " AUC";
  if (metric == "rmse") return task + " RMSE";
  if (metric == "calibration") return task + " calibration";
  return task + " " + metric;
}

std::string arms_by_metric(const MetricsLog& log, const RunMeta& meta,
                           const std::vector<std::pair<std::string, std::string>>& keys) {
  const Table table(log);
  std::vector<std::string> head{"Metric"};
  head.insert(head.end(), meta.arms.begin(), meta.arms.end());
  std::string out = row(head) + rule(head.size());
  for (const auto& [task, metric] : keys) {
    std::vector<std::string> cells{metric_label(task, metric)};
    for (const auto& arm : meta.arms) cells.push_back(table.cell(arm, task, metric));
    out += row(cells);
  }
  return out;
}

std::string distill_strategy(const MetricsLog& log, const RunMeta& meta) {
  auto keys = aggregate_keys(log, meta.arms.front());
  std::stable_partition(keys.begin(), keys.end(), [](const auto& k) { return k.second == "rmse" || k.second == "calibration"; });
  std::stable_partition(keys.begin(), keys.end(), [](const auto& k) { return k.second == "rmse"; });
  return "## Distillation strategy\n\n" + arms_by_metric(log, meta, keys);
}

std::string teacher_scale(const MetricsLog& log, const RunMeta& meta) {
  const Table table(log);
  const auto& policy = meta.policy;
  std::string out = "## Teacher scale\n\n";
  out += row({"Teacher size", "Teacher params", fmt::format("Teacher {} AUC", policy), fmt::format("Student {} AUC", policy),
              "Engagement lift (%)", "Satisfaction lift (%)"});
  out += rule(6);
  for (const auto& arm : meta.arms) {
    const auto it = meta.teacher_of.find(arm);
    const std::string teacher = it == meta.teacher_of.end() ? "" : it->second;
    const auto params = log.find_last(teacher, "*", "parameters");
    const auto at = teacher.find('@');
    const std::string size = at == std::string::npos ? teacher : teacher.substr(at + 1);
    const bool control = arm == meta.arms.front();
    out += row({control ? size + " (control)" : size, params ? fmt::format("{:.0f}", params->value) : "-",
                table.cell(teacher, policy, "auc"), table.cell(arm, policy, "auc"),
                control ? "-" : table.cell(arm, "*", "engagement_lift_pct", 3),
                control ? "-" : table.cell(arm, "*", "satisfaction_lift_pct", 3)});
  }
  return out;
}

std::string objective_selection(const MetricsLog& log, const RunMeta& meta) {
  const Table table(log);
  std::string out = "## Objective selection\n\n";
  out += row({"Distilled objectives", "Engagement lift (%)", "Satisfaction lift (%)"});
  out += rule(3);
  for (std::size_t i = 1; i < meta.arms.size(); ++i) {
    const auto& arm = meta.arms[i];
    out += row({arm, table.cell(arm, "*", "engagement_lift_pct", 3), table.cell(arm, "*", "satisfaction_lift_pct", 3)});
  }
  return out;
}

// Logs without run metadata (hand-written or filtered CSVs) are listed row by row.
std::string plain_rows(const MetricsLog& log) {
  std::string out = "# kdrank metrics\n\n" + row({"Step", "Job", "Task", "Metric", "Value", "95% interval"}) + rule(6);
  for (const auto& r : log.rows()) {
    const std::string ci = r.lo && r.hi ? fmt::format("[{:.4f}, {:.4f}]", *r.lo, *r.hi) : "-";
    out += row({std::to_string(r.step), r.job, r.task, r.metric, fmt::format("{:.4f}", r.value), ci});
  }
  return out;
}

}  // namespace

std::string render_report(const MetricsLog& log) {
  const auto meta = read_meta(log);
  if (meta.family.empty()) return plain_rows(log);
  if (meta.arms.empty()) throw ConfigError("report: metrics log lists no arms");

  std::string out = "# kdrank experiment report\n\n";
  out += fmt::format("- family: {}\n- seeds: {}\n- policy task: {}\n", meta.family, meta.seeds, meta.policy);
  out += "- cells: mean ± standard error across seeds [95% percentile bootstrap interval, shown with 10+ seeds]\n";
  out += "- lifts are relative to the control arm, scored on identical slates\n\n";

  if (meta.family == "distill-strategy") {
    out += distill_strategy(log, meta);
  } else if (meta.family == "teacher-scale") {
    out += teacher_scale(log, meta);
  } else if (meta.family == "objective-selection") {
    out += objective_selection(log, meta);
  }
  if (meta.family != "distill-strategy") {
    out += "\n## All final metrics\n\n" + arms_by_metric(log, meta, aggregate_keys(log, meta.arms.front()));
  }
  return out;
}

}  // namespace kdrank::experiment
