#include "kdrank/metrics_log.hpp"

#include <array>
#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "kdrank/error.hpp"

namespace kdrank {

namespace {

constexpr std::array<std::string_view, 7> kColumns = {"step", "job", "task", "metric", "value", "lo", "hi"};

std::string format_double(double v) { return fmt::format("{:.17g}", v); }

void write_field(std::ostream& out, std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) {
    out << s;
    return;
  }
  out << '"';
  for (char c : s) {
    if (c == '"') out << '"';
    out << c;
  }
  out << '"';
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

double parse_double(const std::string& s, std::size_t line_no) {
  // strtod handles inf/nan spellings that from_chars may not on all libs.
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ConfigError(fmt::format("metrics csv line {}: malformed number '{}'", line_no, s));
  }
  return v;
}

}  // namespace

std::optional<MetricRow> MetricsLog::find_last(std::string_view job, std::string_view task, std::string_view metric) const {
  for (auto it = rows_.rbegin(); it != rows_.rend(); ++it) {
    if (it->job == job && it->task == task && it->metric == metric) return *it;
  }
  return std::nullopt;
}

std::vector<MetricRow> MetricsLog::select(std::string_view job, std::string_view task, std::string_view metric) const {
  std::vector<MetricRow> out;
  for (const auto& r : rows_) {
    if (r.job == job && r.task == task && r.metric == metric) out.push_back(r);
  }
  return out;
}

void MetricsLog::write_csv(std::ostream& out) const {
  out << "step,job,task,metric,value,lo,hi\n";
  for (const auto& r : rows_) {
    out << r.step << ',';
    write_field(out, r.job);
    out << ',';
    write_field(out, r.task);
    out << ',';
    write_field(out, r.metric);
    out << ',' << format_double(r.value) << ',';
    if (r.lo) out << format_double(*r.lo);
    out << ',';
    if (r.hi) out << format_double(*r.hi);
    out << '\n';
  }
}

std::string MetricsLog::to_csv() const {
  std::ostringstream out;
  write_csv(out);
  return out.str();
}

MetricsLog MetricsLog::read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("metrics csv: empty input");
  const auto header = split_csv_line(line);
  std::array<std::size_t, kColumns.size()> index{};
  for (std::size_t c = 0; c < kColumns.size(); ++c) {
    std::size_t found = header.size();
    for (std::size_t h = 0; h < header.size(); ++h) {
      if (header[h] == kColumns[c]) found = h;
    }
    if (found == header.size()) throw ConfigError(fmt::format("metrics csv: missing column '{}'", kColumns[c]));
    index[c] = found;
  }

  MetricsLog log;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) {
      throw ConfigError(fmt::format("metrics csv line {}: expected {} fields, got {}", line_no, header.size(), f.size()));
    }
    MetricRow row;
    const auto& step = f[index[0]];
    const auto res = std::from_chars(step.data(), step.data() + step.size(), row.step);
    if (res.ec != std::errc() || res.ptr != step.data() + step.size()) {
      throw ConfigError(fmt::format("metrics csv line {}: malformed step '{}'", line_no, step));
    }
    row.job = f[index[1]];
    row.task = f[index[2]];
    row.metric = f[index[3]];
    row.value = parse_double(f[index[4]], line_no);
    if (!f[index[5]].empty()) row.lo = parse_double(f[index[5]], line_no);
    if (!f[index[6]].empty()) row.hi = parse_double(f[index[6]], line_no);
    log.append(std::move(row));
  }
  return log;
}

}  // namespace kdrank
