#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace kdrank {

// One measurement. CSV header: step,job,task,metric,value,lo,hi
// (lo/hi are empty unless the row carries a confidence interval).
struct MetricRow {
  std::int64_t step = 0;
  std::string job;
  std::string task;
  std::string metric;
  double value = 0.0;
  std::optional<double> lo;
  std::optional<double> hi;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

class MetricsLog {
 public:
  void append(MetricRow row) { rows_.push_back(std::move(row)); }
  void append(const MetricsLog& other) { rows_.insert(rows_.end(), other.rows_.begin(), other.rows_.end()); }
  const std::vector<MetricRow>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }

  // Latest row matching job/task/metric, if any.
  std::optional<MetricRow> find_last(std::string_view job, std::string_view task, std::string_view metric) const;
  std::vector<MetricRow> select(std::string_view job, std::string_view task, std::string_view metric) const;

  // Values use 17 significant digits so a read-back is bit-exact.
  void write_csv(std::ostream& out) const;
  std::string to_csv() const;
  // Throws ConfigError naming the missing column or malformed field.
  static MetricsLog read_csv(std::istream& in);

  friend bool operator==(const MetricsLog&, const MetricsLog&) = default;

 private:
  std::vector<MetricRow> rows_;
};

}  // namespace kdrank
