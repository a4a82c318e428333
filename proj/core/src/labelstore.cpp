#include "kdrank/labelstore.hpp"

#include <algorithm>
#include <fstream>
#include <cerrno>
#include <cstring>
#include <numeric>
#include <set>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <fmt/format.h>

#include "kdrank/binary_io.hpp"
#include "kdrank/error.hpp"

namespace kdrank::labelstore {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kSegmentMagic = "SLS1";
constexpr std::string_view kManifestMagic = "SLM1";

std::uint8_t kind_code(ranker::TaskKind kind) { return kind == ranker::TaskKind::Binary ? 0 : 1; }

}  // namespace

Segment Segment::build(std::uint64_t segment_id, std::uint64_t teacher_version, std::vector<TaskColumn> tasks,
                       std::span<const LabelRecord> records) {
  if (records.empty()) throw StoreError("cannot build an empty segment");
  if (tasks.size() > UINT16_MAX) throw StoreError("too many task columns");
  for (const auto& t : tasks) {
    if (t.name.size() > UINT16_MAX) throw StoreError("task name too long");
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return records[a].example_id < records[b].example_id; });

  Segment seg;
  seg.id_ = segment_id;
  seg.teacher_version_ = teacher_version;
  seg.ids_.reserve(records.size());
  seg.columns_.assign(tasks.size(), std::vector<float>(records.size()));
  for (std::size_t row = 0; row < order.size(); ++row) {
    const auto& rec = records[order[row]];
    if (rec.values.size() != tasks.size()) {
      throw StoreError(fmt::format("example {} has {} values, expected {}", rec.example_id, rec.values.size(), tasks.size()));
    }
    if (row > 0 && seg.ids_.back() == rec.example_id) {
      throw StoreError(fmt::format("duplicate example_id {} in segment batch", rec.example_id));
    }
    seg.ids_.push_back(rec.example_id);
    for (std::size_t t = 0; t < tasks.size(); ++t) seg.columns_[t][row] = rec.values[t];
  }
  seg.tasks_ = std::move(tasks);
  return seg;
}

std::vector<std::uint8_t> Segment::encode() const {
  binary_io::Writer w;
  w.raw(kSegmentMagic);
  w.u32(kSegmentFormatVersion);
  w.u64(id_);
  w.u64(teacher_version_);
  w.u16(static_cast<std::uint16_t>(tasks_.size()));
  for (const auto& t : tasks_) {
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.raw(t.name);
    w.u8(kind_code(t.kind));
  }
  w.u64(ids_.size());
  for (std::uint64_t id : ids_) w.u64(id);
  for (const auto& col : columns_) {
    for (float v : col) w.f32(v);
  }
  w.crc_trailer();
  return w.take();
}

Segment Segment::decode(std::span<const std::uint8_t> bytes, std::string_view context) {
  const auto payload = binary_io::verify_crc_trailer(bytes, context);
  binary_io::Reader r(payload, std::string(context));
  r.expect_magic(kSegmentMagic);
  const std::uint32_t version = r.u32();
  if (version != kSegmentFormatVersion) throw CorruptionError(fmt::format("{}: unsupported format version {}", context, version));
  Segment seg;
  seg.id_ = r.u64();
  seg.teacher_version_ = r.u64();
  const std::uint16_t n_tasks = r.u16();
  seg.tasks_.reserve(n_tasks);
  for (std::uint16_t i = 0; i < n_tasks; ++i) {
    TaskColumn col;
    col.name = r.raw(r.u16());
    const std::uint8_t kind = r.u8();
    if (kind > 1) throw CorruptionError(fmt::format("{}: unknown task kind {}", context, kind));
    col.kind = kind == 0 ? ranker::TaskKind::Binary : ranker::TaskKind::Regression;
    seg.tasks_.push_back(std::move(col));
  }
  const std::uint64_t n_rows = r.u64();
  const std::size_t row_bytes = 8 + 4 * static_cast<std::size_t>(n_tasks);
  if (n_rows == 0 || n_rows != r.remaining() / row_bytes || r.remaining() % row_bytes != 0) {
    throw CorruptionError(fmt::format("{}: row count {} inconsistent with file size", context, n_rows));
  }
  seg.ids_.resize(n_rows);
  for (auto& id : seg.ids_) id = r.u64();
  for (std::size_t i = 1; i < seg.ids_.size(); ++i) {
    if (seg.ids_[i] <= seg.ids_[i - 1]) throw CorruptionError(fmt::format("{}: example ids not strictly ascending", context));
  }
  seg.columns_.assign(n_tasks, std::vector<float>(n_rows));
  for (auto& col : seg.columns_) {
    for (float& v : col) v = r.f32();
  }
  return seg;
}

std::optional<std::size_t> Segment::task_column(std::string_view name) const {
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    if (tasks_[i].name == name) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> Segment::find(std::uint64_t example_id, std::size_t* comparisons) const {
  std::size_t lo = 0;
  std::size_t hi = ids_.size();
  std::size_t count = 0;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    ++count;
    if (ids_[mid] < example_id) {
      lo = mid + 1;
    } else {
      hi = mid;
    }
  }
  if (comparisons) *comparisons += count + 1;
  if (lo < ids_.size() && ids_[lo] == example_id) return lo;
  return std::nullopt;
}

std::vector<std::uint8_t> Manifest::encode() const {
  binary_io::Writer w;
  w.raw(kManifestMagic);
  w.u64(version);
  w.u32(static_cast<std::uint32_t>(segment_ids.size()));
  for (std::uint64_t id : segment_ids) w.u64(id);
  w.crc_trailer();
  return w.take();
}

Manifest Manifest::decode(std::span<const std::uint8_t> bytes, std::string_view context) {
  const auto payload = binary_io::verify_crc_trailer(bytes, context);
  binary_io::Reader r(payload, std::string(context));
  r.expect_magic(kManifestMagic);
  Manifest m;
  m.version = r.u64();
  const std::uint32_t n = r.u32();
  if (static_cast<std::size_t>(n) * 8 != r.remaining()) throw CorruptionError(fmt::format("{}: segment list size mismatch", context));
  m.segment_ids.resize(n);
  std::set<std::uint64_t> seen;
  for (auto& id : m.segment_ids) {
    id = r.u64();
    if (!seen.insert(id).second) throw CorruptionError(fmt::format("{}: segment {} listed twice", context, id));
  }
  // One segment is committed per manifest version.
  if (m.version != m.segment_ids.size()) {
    throw CorruptionError(fmt::format("{}: version {} does not match {} segments", context, m.version, n));
  }
  return m;
}

std::optional<float> LabelRef::value(std::string_view task) const {
  const auto col = segment_->task_column(task);
  if (!col) return std::nullopt;
  return segment_->value(*col, row_);
}

Snapshot::Snapshot(std::uint64_t manifest_version, std::vector<std::shared_ptr<const Segment>> segments)
    : version_(manifest_version), segments_(std::move(segments)) {
  for (const auto& s : segments_) rows_ += s->rows();
  by_min_.resize(segments_.size());
  std::iota(by_min_.begin(), by_min_.end(), std::size_t{0});
  std::stable_sort(by_min_.begin(), by_min_.end(),
                   [&](std::size_t a, std::size_t b) { return segments_[a]->min_id() < segments_[b]->min_id(); });
  min_ids_.reserve(by_min_.size());
  prefix_max_.reserve(by_min_.size());
  std::uint64_t running = 0;
  for (std::size_t idx : by_min_) {
    min_ids_.push_back(segments_[idx]->min_id());
    running = std::max(running, segments_[idx]->max_id());
    prefix_max_.push_back(running);
  }
}

std::optional<LabelRef> Snapshot::lookup(std::uint64_t example_id, LookupStats* stats) const {
  std::size_t comparisons = 0;
  std::size_t probed = 0;
  // Last position whose min_id <= example_id.
  std::size_t lo = 0;
  std::size_t hi = min_ids_.size();
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    ++comparisons;
    if (min_ids_[mid] <= example_id) {
      lo = mid + 1;
    } else {
      hi = mid;
    }
  }
  std::optional<LabelRef> best;
  const Segment* best_seg = nullptr;
  for (std::size_t pos = lo; pos-- > 0;) {
    ++comparisons;
    if (prefix_max_[pos] < example_id) break;
    const Segment& seg = *segments_[by_min_[pos]];
    ++comparisons;
    if (seg.max_id() < example_id) continue;
    ++probed;
    const auto row = seg.find(example_id, &comparisons);
    if (!row) continue;
    const bool better = !best_seg || seg.teacher_version() > best_seg->teacher_version() ||
                        (seg.teacher_version() == best_seg->teacher_version() && seg.id() > best_seg->id());
    if (better) {
      best_seg = &seg;
      best.emplace(&seg, *row);
    }
  }
  if (stats) {
    stats->comparisons += comparisons;
    stats->segments_probed += probed;
  }
  return best;
}

double Snapshot::coverage(std::span<const std::uint64_t> ids) const {
  if (ids.empty()) throw ConfigError("coverage of an empty id list");
  std::size_t found = 0;
  for (std::uint64_t id : ids) found += lookup(id).has_value();
  return static_cast<double>(found) / static_cast<double>(ids.size());
}

fs::path manifest_path(const fs::path& dir) { return dir / "MANIFEST"; }

fs::path segment_path(const fs::path& dir, std::uint64_t segment_id) {
  return dir / fmt::format("seg-{:020}.sls", segment_id);
}

Manifest read_manifest(const fs::path& dir) {
  const auto path = manifest_path(dir);
  std::error_code ec;
  if (!fs::exists(path, ec)) return {};
  return Manifest::decode(binary_io::read_file(path), path.string());
}

LabelStore::LabelStore(fs::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (!fs::is_directory(dir_)) throw StoreError(fmt::format("label store directory {} is not usable", dir_.string()));
}

std::uint64_t LabelStore::manifest_version() const { return read_manifest(dir_).version; }

Snapshot LabelStore::open_snapshot() const {
  const auto manifest = read_manifest(dir_);
  return resolve(manifest, manifest.version);
}

Snapshot LabelStore::open_snapshot_at(std::uint64_t version) const {
  const auto manifest = read_manifest(dir_);
  if (version > manifest.version) {
    throw StoreError(fmt::format("manifest version {} not committed yet (current {})", version, manifest.version));
  }
  return resolve(manifest, version);
}

Snapshot LabelStore::resolve(const Manifest& manifest, std::uint64_t version) const {
  std::vector<std::shared_ptr<const Segment>> segments;
  segments.reserve(version);
  for (std::size_t i = 0; i < version; ++i) segments.push_back(load_segment(manifest.segment_ids[i]));
  return Snapshot(version, std::move(segments));
}

std::shared_ptr<const Segment> LabelStore::load_segment(std::uint64_t id) const {
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(id); it != cache_.end()) return it->second;
  }
  const auto path = segment_path(dir_, id);
  auto seg = std::make_shared<const Segment>(Segment::decode(binary_io::read_file(path), path.string()));
  if (seg->id() != id) throw CorruptionError(fmt::format("{}: header names segment {}", path.string(), seg->id()));
  std::lock_guard lock(mu_);
  return cache_.emplace(id, std::move(seg)).first->second;
}

LabelWriter::LabelWriter(fs::path dir, StoreOptions options) : dir_(std::move(dir)), options_(options) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  const auto lock_path = dir_ / "LOCK";
  lock_fd_ = ::open(lock_path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (lock_fd_ < 0) throw StoreError(fmt::format("cannot open {}: {}", lock_path.string(), std::strerror(errno)));
  if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(lock_fd_);
    lock_fd_ = -1;
    throw LockError(fmt::format("label store {} already has a writer", dir_.string()));
  }
  try {
    manifest_ = read_manifest(dir_);
  } catch (...) {
    ::flock(lock_fd_, LOCK_UN);
    ::close(lock_fd_);
    lock_fd_ = -1;
    throw;
  }
}

LabelWriter::~LabelWriter() {
  if (lock_fd_ >= 0) {
    ::flock(lock_fd_, LOCK_UN);
    ::close(lock_fd_);
  }
}

std::uint64_t LabelWriter::next_segment_id() const {
  return manifest_.segment_ids.empty() ? 1 : manifest_.segment_ids.back() + 1;
}

std::uint64_t LabelWriter::append_segment(std::span<const LabelRecord> records, const std::vector<TaskColumn>& tasks,
                                          std::uint64_t teacher_version) {
  const std::uint64_t id = next_segment_id();
  const auto bytes = Segment::build(id, teacher_version, tasks, records).encode();
  const auto seg_path = segment_path(dir_, id);
  if (options_.durable) {
    binary_io::write_file_synced(seg_path, bytes);
  } else {
    std::ofstream out(seg_path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw StoreError(fmt::format("write failed on {}", seg_path.string()));
  }

  Manifest next = manifest_;
  next.segment_ids.push_back(id);
  next.version = manifest_.version + 1;
  const auto tmp = dir_ / "MANIFEST.tmp";
  const auto encoded = next.encode();
  if (options_.durable) {
    binary_io::write_file_synced(tmp, encoded);
  } else {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(encoded.data()), static_cast<std::streamsize>(encoded.size()));
    if (!out) throw StoreError(fmt::format("write failed on {}", tmp.string()));
  }
  std::error_code ec;
  fs::rename(tmp, manifest_path(dir_), ec);
  if (ec) throw StoreError(fmt::format("manifest rename failed in {}: {}", dir_.string(), ec.message()));
  if (options_.durable) binary_io::sync_directory(dir_);
  manifest_ = std::move(next);
  return id;
}

std::size_t LabelWriter::encoded_size(std::span<const LabelRecord> records, const std::vector<TaskColumn>& tasks,
                                      std::uint64_t teacher_version) const {
  return Segment::build(next_segment_id(), teacher_version, tasks, records).encode().size();
}

void LabelWriter::simulate_crash_before_commit(std::span<const LabelRecord> records, const std::vector<TaskColumn>& tasks,
                                               std::uint64_t teacher_version, std::size_t keep_bytes) {
  auto bytes = Segment::build(next_segment_id(), teacher_version, tasks, records).encode();
  bytes.resize(std::min(bytes.size(), keep_bytes));
  binary_io::write_file_synced(segment_path(dir_, next_segment_id()), bytes);
}

bool InspectReport::healthy() const {
  return manifest_ok && std::all_of(segments.begin(), segments.end(), [](const SegmentReport& s) { return s.ok; });
}

InspectReport inspect_store(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw StoreError(fmt::format("{} is not a directory", dir.string()));
  InspectReport report;
  Manifest manifest;
  try {
    manifest = read_manifest(dir);
  } catch (const Error& e) {
    report.manifest_ok = false;
    report.manifest_error = e.what();
  }
  report.manifest_version = manifest.version;
  std::set<std::string> listed;
  for (std::uint64_t id : manifest.segment_ids) {
    SegmentReport sr;
    sr.segment_id = id;
    const auto path = segment_path(dir, id);
    listed.insert(path.filename().string());
    try {
      const auto seg = Segment::decode(binary_io::read_file(path), path.filename().string());
      if (seg.id() != id) throw CorruptionError(fmt::format("header names segment {}", seg.id()));
      sr.ok = true;
      sr.teacher_version = seg.teacher_version();
      sr.rows = seg.rows();
      sr.tasks = seg.tasks();
      sr.min_id = seg.min_id();
      sr.max_id = seg.max_id();
      report.total_rows += seg.rows();
    } catch (const Error& e) {
      sr.error = e.what();
    }
    report.segments.push_back(std::move(sr));
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.starts_with("seg-") && name.ends_with(".sls") && !listed.contains(name)) report.orphans.push_back(name);
  }
  std::sort(report.orphans.begin(), report.orphans.end());
  return report;
}

}  // namespace kdrank::labelstore
