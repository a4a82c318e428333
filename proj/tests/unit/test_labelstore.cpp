#include <gtest/gtest.h>

#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include "kdrank/binary_io.hpp"
#include "kdrank/error.hpp"
#include "kdrank/labelstore.hpp"
#include "kdrank/random.hpp"
#include "oracles.hpp"

using namespace kdrank;
using namespace kdrank::labelstore;
using kdrank::testing::TempDir;

namespace {

const std::vector<TaskColumn> kTasks{{"CTR", ranker::TaskKind::Binary}, {"LTV", ranker::TaskKind::Regression}};

std::vector<LabelRecord> records(std::uint64_t first_id, std::size_t n, float base = 0.0f) {
  std::vector<LabelRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const float v = base + static_cast<float>(i) / 64.0f;
    out.push_back({first_id + i, {v, 2.0f * v + 1.0f}});
  }
  return out;
}

void overwrite(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream(path, std::ios::binary | std::ios::trunc)
      .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(Segment, EncodeDecodeRoundTrip) {
  const auto recs = records(10, 5, 0.25f);
  const auto seg = Segment::build(7, 3, kTasks, recs);
  const auto bytes = seg.encode();
  ASSERT_EQ(std::memcmp(bytes.data(), "SLS1", 4), 0);
  const auto back = Segment::decode(bytes, "test");
  EXPECT_EQ(back.id(), 7u);
  EXPECT_EQ(back.teacher_version(), 3u);
  EXPECT_EQ(back.tasks(), kTasks);
  EXPECT_EQ(back.ids(), seg.ids());
  EXPECT_EQ(back.encode(), bytes);
}

TEST(Segment, ByteLayoutMatchesTheDocumentedFormat) {
  const std::vector<LabelRecord> recs{{5, {0.75f}}};
  const auto bytes = Segment::build(2, 9, {{"CTR", ranker::TaskKind::Binary}}, recs).encode();
  binary_io::Writer w;
  w.raw("SLS1");
  w.u32(1);
  w.u64(2);
  w.u64(9);
  w.u16(1);
  w.u16(3);
  w.raw("CTR");
  w.u8(0);
  w.u64(1);
  w.u64(5);
  w.f32(0.75f);
  w.crc_trailer();
  EXPECT_EQ(bytes, w.bytes());
}

TEST(Segment, RejectsDuplicatesAndWidthMismatch) {
  std::vector<LabelRecord> dup{{1, {0.1f, 0.2f}}, {1, {0.3f, 0.4f}}};
  EXPECT_THROW(Segment::build(1, 1, kTasks, dup), StoreError);
  std::vector<LabelRecord> narrow{{1, {0.1f}}};
  EXPECT_THROW(Segment::build(1, 1, kTasks, narrow), StoreError);
}

TEST(Segment, EveryFlippedByteIsDetected) {
  const auto bytes = Segment::build(1, 1, kTasks, records(1, 4)).encode();
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    auto bad = bytes;
    bad[i] ^= 0x01;
    EXPECT_THROW(Segment::decode(bad, "flip"), CorruptionError) << "byte " << i;
  }
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n));
    EXPECT_THROW(Segment::decode(cut, "truncated"), CorruptionError) << "length " << n;
  }
}

TEST(Store, AppendAndReadBackBitExact) {
  TempDir dir;
  LabelWriter writer(dir.path());
  const auto recs = records(100, 3, 0.1f);
  writer.append_segment(recs, kTasks, 1);
  LabelStore store(dir.path());
  const auto snap = store.open_snapshot();
  for (const auto& r : recs) {
    const auto ref = snap.lookup(r.example_id);
    ASSERT_TRUE(ref);
    EXPECT_EQ(std::bit_cast<std::uint32_t>(ref->value(0)), std::bit_cast<std::uint32_t>(r.values[0]));
    EXPECT_EQ(std::bit_cast<std::uint32_t>(*ref->value("LTV")), std::bit_cast<std::uint32_t>(r.values[1]));
    EXPECT_FALSE(ref->value("SAT"));
  }
  EXPECT_FALSE(snap.lookup(99));
}

TEST(Store, ValueWrittenOnceReadsBackExactly) {
  TempDir dir;
  LabelWriter writer(dir.path());
  const std::vector<LabelRecord> recs{{42, {0.75f, 3.0f}}};
  writer.append_segment(recs, kTasks, 1);
  EXPECT_EQ(*LabelStore(dir.path()).open_snapshot().lookup(42)->value("CTR"), 0.75f);
}

TEST(Store, ManifestVersionsAndSegmentOrder) {
  TempDir dir;
  LabelWriter writer(dir.path());
  EXPECT_EQ(writer.manifest_version(), 0u);
  const auto a = writer.append_segment(records(1, 2), kTasks, 1);
  EXPECT_EQ(writer.manifest_version(), 1u);
  const auto b = writer.append_segment(records(3, 2), kTasks, 2);
  EXPECT_EQ(writer.manifest_version(), 2u);
  const auto m = read_manifest(dir.path());
  EXPECT_EQ(m.version, 2u);
  EXPECT_EQ(m.segment_ids, (std::vector<std::uint64_t>{a, b}));
  const auto bytes = binary_io::read_file(manifest_path(dir.path()));
  EXPECT_EQ(std::memcmp(bytes.data(), "SLM1", 4), 0);
}

TEST(Store, EmptyStoreHasNoSegments) {
  TempDir dir;
  LabelStore store(dir.path() / "fresh");
  const auto snap = store.open_snapshot();
  EXPECT_EQ(snap.manifest_version(), 0u);
  EXPECT_EQ(snap.segment_count(), 0u);
  EXPECT_FALSE(snap.lookup(1));
}

TEST(Store, SnapshotIsolation) {
  TempDir dir;
  LabelWriter writer(dir.path());
  LabelStore store(dir.path());
  writer.append_segment(records(1, 2), kTasks, 1);
  const auto old_snap = store.open_snapshot();
  writer.append_segment(records(50, 2), kTasks, 2);
  EXPECT_FALSE(old_snap.lookup(50));
  EXPECT_TRUE(store.open_snapshot().lookup(50));
  EXPECT_FALSE(store.open_snapshot_at(1).lookup(50));
  EXPECT_THROW(store.open_snapshot_at(3), StoreError);
}

TEST(Store, InterleavedOpensSeeExactlyTheCommittedPrefix) {
  TempDir dir;
  LabelWriter writer(dir.path());
  LabelStore store(dir.path());
  std::vector<Snapshot> snaps;
  for (std::size_t i = 0; i < 100; ++i) {
    snaps.push_back(store.open_snapshot());
    writer.append_segment(records(1000 * (i + 1), i % 7 + 1), kTasks, i + 1);
  }
  for (const auto& s : snaps) {
    std::size_t expect_rows = 0;
    for (std::size_t i = 0; i < s.manifest_version(); ++i) expect_rows += i % 7 + 1;
    EXPECT_EQ(s.segment_count(), s.manifest_version());
    EXPECT_EQ(s.row_count(), expect_rows);
  }
}

TEST(Store, ConcurrentReadersDuringAppends) {
  TempDir dir;
  LabelWriter writer(dir.path());
  LabelStore store(dir.path());
  std::atomic<bool> done{false};
  std::atomic<int> violations{0};
  std::thread reader([&] {
    while (!done) {
      const auto s = store.open_snapshot();
      for (std::uint64_t v = 1; v <= s.manifest_version(); ++v) {
        const auto ref = s.lookup(100 * v);
        if (!ref || ref->teacher_version() != v) ++violations;
      }
    }
  });
  for (std::uint64_t v = 1; v <= 60; ++v) writer.append_segment(records(100 * v, 5), kTasks, v);
  done = true;
  reader.join();
  EXPECT_EQ(violations, 0);
}

TEST(Lookup, LatestTeacherVersionWinsInBothOrders) {
  for (bool newer_first : {false, true}) {
    TempDir dir;
    LabelWriter writer(dir.path());
    const std::vector<LabelRecord> v3{{7, {0.3f, 3.0f}}};
    const std::vector<LabelRecord> v5{{7, {0.5f, 5.0f}}};
    if (newer_first) {
      writer.append_segment(v5, kTasks, 5);
      writer.append_segment(v3, kTasks, 3);
    } else {
      writer.append_segment(v3, kTasks, 3);
      writer.append_segment(v5, kTasks, 5);
    }
    const auto snap = LabelStore(dir.path()).open_snapshot();
    const auto ref = snap.lookup(7);
    ASSERT_TRUE(ref);
    EXPECT_EQ(ref->teacher_version(), 5u);
    EXPECT_EQ(ref->value(0), 0.5f);
  }
}

TEST(Lookup, EqualVersionsPreferHigherSegmentId) {
  TempDir dir;
  LabelWriter writer(dir.path());
  const std::vector<LabelRecord> a{{7, {0.1f, 1.0f}}};
  const std::vector<LabelRecord> b{{7, {0.2f, 2.0f}}};
  writer.append_segment(a, kTasks, 4);
  const auto second = writer.append_segment(b, kTasks, 4);
  const auto snap = LabelStore(dir.path()).open_snapshot();
  const auto ref = snap.lookup(7);
  EXPECT_EQ(ref->segment_id(), second);
  EXPECT_EQ(ref->value(0), 0.2f);
}

TEST(Lookup, CoverageCounts) {
  TempDir dir;
  LabelWriter writer(dir.path());
  writer.append_segment(records(1, 3), kTasks, 1);
  const auto snap = LabelStore(dir.path()).open_snapshot();
  const std::vector<std::uint64_t> all{1, 2, 3}, none{8, 9}, most{1, 2, 3, 4};
  EXPECT_EQ(snap.coverage(all), 1.0);
  EXPECT_EQ(snap.coverage(none), 0.0);
  EXPECT_EQ(snap.coverage(most), 0.75);
  EXPECT_THROW(snap.coverage(std::vector<std::uint64_t>{}), ConfigError);
}

TEST(Lookup, CoverageIsMonotoneInVersion) {
  TempDir dir;
  LabelWriter writer(dir.path());
  LabelStore store(dir.path());
  std::vector<std::uint64_t> ids;
  for (std::uint64_t i = 1; i <= 200; ++i) ids.push_back(i * 3);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const std::uint64_t start = 1 + rng.below(600);
    writer.append_segment(records(start, 1 + rng.below(40)), kTasks, i + 1);
  }
  double prev = 0.0;
  for (std::uint64_t v = 0; v <= 20; ++v) {
    const double c = store.open_snapshot_at(v).coverage(ids);
    EXPECT_GE(c, prev);
    prev = c;
  }
}

TEST(Lookup, ComparisonCountIsLogarithmic) {
  TempDir dir;
  LabelWriter writer(dir.path(), StoreOptions{false});
  const std::size_t segments = 256, rows = 512;
  for (std::size_t s = 0; s < segments; ++s) writer.append_segment(records(1 + s * rows, rows), kTasks, s + 1);
  const auto snap = LabelStore(dir.path()).open_snapshot();
  const double bound = 2.0 * (std::log2(static_cast<double>(segments)) + std::log2(static_cast<double>(rows))) + 8.0;
  Rng rng(2);
  for (int i = 0; i < 2000; ++i) {
    LookupStats stats;
    const std::uint64_t id = 1 + rng.below(segments * rows + 100);
    snap.lookup(id, &stats);
    EXPECT_LE(static_cast<double>(stats.comparisons), bound) << "id " << id;
    EXPECT_LE(stats.segments_probed, 1u);
  }
}

TEST(Writer, SecondWriterIsLockedOut) {
  TempDir dir;
  auto first = std::make_unique<LabelWriter>(dir.path());
  EXPECT_THROW(LabelWriter second(dir.path()), LockError);
  first.reset();
  EXPECT_NO_THROW(LabelWriter third(dir.path()));
}

TEST(Writer, CrashBeforeCommitLeavesAnIgnorableOrphan) {
  TempDir dir;
  LabelWriter writer(dir.path());
  const auto committed = records(1, 10);
  writer.append_segment(committed, kTasks, 1);
  const auto pending = records(100, 10);
  const std::size_t size = writer.encoded_size(pending, kTasks, 2);
  writer.simulate_crash_before_commit(pending, kTasks, 2, size / 2);

  const auto snap = LabelStore(dir.path()).open_snapshot();
  EXPECT_EQ(snap.row_count(), 10u);
  EXPECT_FALSE(snap.lookup(100));
  EXPECT_TRUE(snap.lookup(1));
  const auto report = inspect_store(dir.path());
  EXPECT_EQ(report.orphans.size(), 1u);
  EXPECT_TRUE(report.manifest_ok);

  // The writer recovers and the next append is visible.
  writer.append_segment(pending, kTasks, 2);
  EXPECT_TRUE(LabelStore(dir.path()).open_snapshot().lookup(100));
}

TEST(Inspect, ReportsCorruptSegments) {
  TempDir dir;
  {
    LabelWriter writer(dir.path());
    writer.append_segment(records(1, 4), kTasks, 1);
    writer.append_segment(records(10, 4), kTasks, 2);
  }
  auto report = inspect_store(dir.path());
  EXPECT_TRUE(report.healthy());
  EXPECT_EQ(report.total_rows, 8u);

  const auto seg = segment_path(dir.path(), report.segments[1].segment_id);
  auto bytes = binary_io::read_file(seg);
  bytes[bytes.size() - 9] ^= 0xff;
  overwrite(seg, bytes);
  report = inspect_store(dir.path());
  EXPECT_FALSE(report.healthy());
  EXPECT_TRUE(report.segments[0].ok);
  EXPECT_FALSE(report.segments[1].ok);
  EXPECT_THROW(LabelStore(dir.path()).open_snapshot(), CorruptionError);
}

TEST(Inspect, CorruptManifestIsAStructuredError) {
  TempDir dir;
  {
    LabelWriter writer(dir.path());
    writer.append_segment(records(1, 4), kTasks, 1);
  }
  auto bytes = binary_io::read_file(manifest_path(dir.path()));
  bytes[6] ^= 0x10;
  overwrite(manifest_path(dir.path()), bytes);
  EXPECT_THROW(read_manifest(dir.path()), CorruptionError);
  const auto report = inspect_store(dir.path());
  EXPECT_FALSE(report.manifest_ok);
  EXPECT_FALSE(report.healthy());
}

TEST(Format, RandomFloatsRoundTripBitExact) {
  TempDir dir;
  LabelWriter writer(dir.path(), StoreOptions{false});
  Rng rng(3);
  std::vector<LabelRecord> recs;
  for (std::uint64_t i = 0; i < 5000; ++i) {
    float a, b;
    do {
      a = std::bit_cast<float>(static_cast<std::uint32_t>(rng.next_u64()));
    } while (std::isnan(a));
    do {
      b = std::bit_cast<float>(static_cast<std::uint32_t>(rng.next_u64()));
    } while (std::isnan(b));
    recs.push_back({i + 1, {a, b}});
  }
  writer.append_segment(recs, kTasks, 1);
  const auto snap = LabelStore(dir.path()).open_snapshot();
  for (const auto& r : recs) {
    const auto ref = snap.lookup(r.example_id);
    ASSERT_TRUE(ref);
    EXPECT_EQ(std::bit_cast<std::uint32_t>(ref->value(0)), std::bit_cast<std::uint32_t>(r.values[0]));
    EXPECT_EQ(std::bit_cast<std::uint32_t>(ref->value(1)), std::bit_cast<std::uint32_t>(r.values[1]));
  }
}
