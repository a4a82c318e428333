#include "kdrank/binary_io.hpp"

#include <bit>
#include <cerrno>
#include <cstring>
#include <fstream>

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <fmt/format.h>

#include "kdrank/error.hpp"

namespace kdrank::binary_io {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large buffers.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(chunk));
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void Writer::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void Reader::need(std::size_t n) {
  if (n > remaining()) {
    throw CorruptionError(fmt::format("{}: truncated (need {} bytes at offset {}, {} left)", context_, n, pos_, remaining()));
  }
}

std::uint64_t Reader::get(int n) {
  need(static_cast<std::size_t>(n));
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += static_cast<std::size_t>(n);
  return v;
}

float Reader::f32() { return std::bit_cast<float>(u32()); }

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::raw(std::size_t n) {
  need(n);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}

void Reader::expect_magic(std::string_view magic) {
  const std::string got = raw(magic.size());
  if (got != magic) throw CorruptionError(fmt::format("{}: bad magic", context_));
}

std::span<const std::uint8_t> verify_crc_trailer(std::span<const std::uint8_t> bytes, std::string_view context) {
  if (bytes.size() < 4) throw CorruptionError(fmt::format("{}: too short for checksum", context));
  const auto payload = bytes.first(bytes.size() - 4);
  Reader trailer(bytes.last(4), std::string(context));
  const std::uint32_t stored = trailer.u32();
  const std::uint32_t actual = crc32(payload);
  if (stored != actual) {
    throw CorruptionError(fmt::format("{}: checksum mismatch (stored {:08x}, computed {:08x})", context, stored, actual));
  }
  return payload;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StoreError(fmt::format("cannot open {}", path.string()));
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw StoreError(fmt::format("short read on {}", path.string()));
  }
  return bytes;
}

namespace {

class Fd {
 public:
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  int get() const { return fd_; }
  int release() {
    const int fd = fd_;
    fd_ = -1;
    return fd;
  }

 private:
  int fd_;
};

[[noreturn]] void io_fail(std::string_view what, const std::filesystem::path& path) {
  throw StoreError(fmt::format("{} {}: {}", what, path.string(), std::strerror(errno)));
}

}  // namespace

void write_file_synced(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  Fd fd(::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644));
  if (fd.get() < 0) io_fail("cannot create", path);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const ssize_t n = ::write(fd.get(), bytes.data() + off, bytes.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      io_fail("write failed on", path);
    }
    off += static_cast<std::size_t>(n);
  }
  if (::fsync(fd.get()) != 0) io_fail("fsync failed on", path);
  if (::close(fd.release()) != 0) io_fail("close failed on", path);
}

void sync_directory(const std::filesystem::path& dir) {
  Fd fd(::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC));
  if (fd.get() < 0) io_fail("cannot open directory", dir);
  if (::fsync(fd.get()) != 0) io_fail("fsync failed on directory", dir);
}

}  // namespace kdrank::binary_io
