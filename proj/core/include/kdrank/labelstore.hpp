#pragma once

// Append-only columnar soft-label store.
//
// A store is a directory holding immutable segment files and one MANIFEST
// listing the committed segment ids. A single writer (flock on LOCK) appends
// by writing and fsyncing a segment, then atomically renaming a new manifest
// into place. Readers open snapshots pinned to a manifest version; later
// appends never change what a snapshot resolves.
//
// Segment file "seg-<id>.sls", little-endian:
//   "SLS1" | u32 format_version=1 | u64 segment_id | u64 teacher_version
//   | u16 n_tasks | n_tasks x (u16 name_len, name bytes, u8 kind)
//   | u64 n_rows | n_rows x u64 example_id (strictly ascending)
//   | n_tasks x (n_rows x f32) | u32 crc32 of all preceding bytes
// Manifest file "MANIFEST":
//   "SLM1" | u64 manifest_version | u32 n_segments | n_segments x u64 id
//   | u32 crc32 of all preceding bytes
// kind: 0 = binary (value is a probability), 1 = regression.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdrank/ranker.hpp"

namespace kdrank::labelstore {

inline constexpr std::uint32_t kSegmentFormatVersion = 1;

struct TaskColumn {
  std::string name;
  ranker::TaskKind kind = ranker::TaskKind::Binary;

  friend bool operator==(const TaskColumn&, const TaskColumn&) = default;
};

struct LabelRecord {
  std::uint64_t example_id = 0;
  std::vector<float> values;  // one per TaskColumn
};

class Segment {
 public:
  // Sorts records by id; throws StoreError on duplicates or width mismatch.
  static Segment build(std::uint64_t segment_id, std::uint64_t teacher_version, std::vector<TaskColumn> tasks,
                       std::span<const LabelRecord> records);
  // Verifies checksum and structure; throws CorruptionError.
  static Segment decode(std::span<const std::uint8_t> bytes, std::string_view context);
  std::vector<std::uint8_t> encode() const;

  std::uint64_t id() const { return id_; }
  std::uint64_t teacher_version() const { return teacher_version_; }
  const std::vector<TaskColumn>& tasks() const { return tasks_; }
  std::size_t rows() const { return ids_.size(); }
  std::uint64_t min_id() const { return ids_.front(); }
  std::uint64_t max_id() const { return ids_.back(); }
  const std::vector<std::uint64_t>& ids() const { return ids_; }
  float value(std::size_t task, std::size_t row) const { return columns_[task][row]; }
  std::optional<std::size_t> task_column(std::string_view name) const;

  // Binary search over the id column; adds comparisons made to *comparisons.
  std::optional<std::size_t> find(std::uint64_t example_id, std::size_t* comparisons = nullptr) const;

 private:
  std::uint64_t id_ = 0;
  std::uint64_t teacher_version_ = 0;
  std::vector<TaskColumn> tasks_;
  std::vector<std::uint64_t> ids_;
  std::vector<std::vector<float>> columns_;
};

struct Manifest {
  std::uint64_t version = 0;
  std::vector<std::uint64_t> segment_ids;

  std::vector<std::uint8_t> encode() const;
  static Manifest decode(std::span<const std::uint8_t> bytes, std::string_view context);
};

// A resolved teacher label row. Valid while the originating Snapshot lives.
class LabelRef {
 public:
  LabelRef(const Segment* segment, std::size_t row) : segment_(segment), row_(row) {}
  std::uint64_t segment_id() const { return segment_->id(); }
  std::uint64_t teacher_version() const { return segment_->teacher_version(); }
  const std::vector<TaskColumn>& tasks() const { return segment_->tasks(); }
  float value(std::size_t column) const { return segment_->value(column, row_); }
  std::optional<float> value(std::string_view task) const;

 private:
  const Segment* segment_;
  std::size_t row_;
};

struct LookupStats {
  std::size_t comparisons = 0;
  std::size_t segments_probed = 0;
};

class Snapshot {
 public:
  Snapshot() = default;
  Snapshot(std::uint64_t manifest_version, std::vector<std::shared_ptr<const Segment>> segments);

  std::uint64_t manifest_version() const { return version_; }
  std::size_t segment_count() const { return segments_.size(); }
  std::size_t row_count() const { return rows_; }
  const std::vector<std::shared_ptr<const Segment>>& segments() const { return segments_; }

  // Latest teacher_version wins when an id occurs in several segments
  // (ties broken by the highest segment id).
  std::optional<LabelRef> lookup(std::uint64_t example_id, LookupStats* stats = nullptr) const;

  // Fraction of `ids` with a label; throws ConfigError for an empty list.
  double coverage(std::span<const std::uint64_t> ids) const;

 private:
  std::uint64_t version_ = 0;
  std::size_t rows_ = 0;
  std::vector<std::shared_ptr<const Segment>> segments_;  // manifest order
  // Segment indices ordered by min_id, with the running max of max_id so a
  // lookup can stop scanning left once no earlier segment can contain the id.
  std::vector<std::size_t> by_min_;
  std::vector<std::uint64_t> min_ids_;
  std::vector<std::uint64_t> prefix_max_;
};

std::filesystem::path manifest_path(const std::filesystem::path& dir);
std::filesystem::path segment_path(const std::filesystem::path& dir, std::uint64_t segment_id);

// Reads the manifest; a missing manifest is the empty version 0.
Manifest read_manifest(const std::filesystem::path& dir);

struct StoreOptions {
  // fsync segment files, the manifest and the directory on commit.
  bool durable = true;
};

// Reader handle. Thread-safe; caches decoded segments (they are immutable
// once committed).
class LabelStore {
 public:
  // Creates the directory if needed.
  explicit LabelStore(std::filesystem::path dir);
  LabelStore(const LabelStore&) = delete;
  LabelStore& operator=(const LabelStore&) = delete;

  const std::filesystem::path& dir() const { return dir_; }
  std::uint64_t manifest_version() const;

  Snapshot open_snapshot() const;
  // Snapshot of an earlier manifest version (a prefix of the current list).
  Snapshot open_snapshot_at(std::uint64_t version) const;

 private:
  Snapshot resolve(const Manifest& manifest, std::uint64_t version) const;
  std::shared_ptr<const Segment> load_segment(std::uint64_t id) const;

  std::filesystem::path dir_;
  mutable std::mutex mu_;
  mutable std::map<std::uint64_t, std::shared_ptr<const Segment>> cache_;
};

// Exclusive writer. Holds the LOCK file for its lifetime.
class LabelWriter {
 public:
  // Throws LockError if another writer holds the lock.
  explicit LabelWriter(std::filesystem::path dir, StoreOptions options = {});
  ~LabelWriter();
  LabelWriter(const LabelWriter&) = delete;
  LabelWriter& operator=(const LabelWriter&) = delete;

  const std::filesystem::path& dir() const { return dir_; }
  std::uint64_t manifest_version() const { return manifest_.version; }

  // Writes a segment and commits it. Returns the new segment id.
  std::uint64_t append_segment(std::span<const LabelRecord> records, const std::vector<TaskColumn>& tasks,
                               std::uint64_t teacher_version);

  // Fault injection: writes the first `keep_bytes` bytes of the segment the
  // next append would produce and stops before the manifest rename, as if
  // the process died there. The manifest is untouched.
  void simulate_crash_before_commit(std::span<const LabelRecord> records, const std::vector<TaskColumn>& tasks,
                                    std::uint64_t teacher_version, std::size_t keep_bytes);

  // Size in bytes of the segment the next append of `records` would write.
  std::size_t encoded_size(std::span<const LabelRecord> records, const std::vector<TaskColumn>& tasks,
                           std::uint64_t teacher_version) const;

 private:
  std::uint64_t next_segment_id() const;

  std::filesystem::path dir_;
  StoreOptions options_;
  int lock_fd_ = -1;
  Manifest manifest_;
};

struct SegmentReport {
  std::uint64_t segment_id = 0;
  bool ok = false;
  std::string error;
  std::uint64_t teacher_version = 0;
  std::uint64_t rows = 0;
  std::vector<TaskColumn> tasks;
  std::uint64_t min_id = 0;
  std::uint64_t max_id = 0;
};

struct InspectReport {
  bool manifest_ok = true;
  std::string manifest_error;
  std::uint64_t manifest_version = 0;
  std::vector<SegmentReport> segments;
  std::vector<std::string> orphans;  // segment files not listed in the manifest
  std::uint64_t total_rows = 0;

  bool healthy() const;
};

InspectReport inspect_store(const std::filesystem::path& dir);

}  // namespace kdrank::labelstore
