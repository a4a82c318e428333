#pragma once

#include <cstdint>
#include <random>

namespace kdrank {

// Seeded generator with platform-independent uniform and normal draws.
// std::normal_distribution is implementation-defined, so the conversions
// are done here to keep streams bit-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second variate is cached.
  double normal();

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Derives an independent child seed from (base, stream) with splitmix64.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace kdrank
