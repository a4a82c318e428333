#pragma once

// Little-endian encode/decode helpers shared by the on-disk formats.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kdrank::binary_io {

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v);
  void f64(double v);
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  // Appends crc32 of everything written so far.
  void crc_trailer() { u32(crc32(bytes_)); }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

// Bounds-checked reader; throws CorruptionError on overrun.
class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string context) : bytes_(bytes), context_(std::move(context)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32();
  double f64();
  std::string raw(std::size_t n);
  void expect_magic(std::string_view magic);

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::uint64_t get(int n);
  void need(std::size_t n);

  std::span<const std::uint8_t> bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

// Verifies the trailing crc32 and returns the payload span (without the
// trailer). Throws CorruptionError naming `context` on mismatch.
std::span<const std::uint8_t> verify_crc_trailer(std::span<const std::uint8_t> bytes, std::string_view context);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

// Writes `bytes` to `path` and fsyncs. Throws StoreError on failure.
void write_file_synced(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// fsync on a directory so a completed rename is durable.
void sync_directory(const std::filesystem::path& dir);

}  // namespace kdrank::binary_io
