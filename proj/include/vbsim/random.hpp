#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace vbsim {

/// splitmix64 finalizer; used to fan a master seed out to independent streams.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for replicate `index` of stream family `family` under `master`.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index,
                                    std::uint64_t family = 0) {
  return mix64(mix64(mix64(master) ^ family) ^ index);
}

/// One random stream. Not thread-safe; never share between concurrent callers.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1), 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform on (0, 1]; safe argument for log().
  double uniform_open0() { return 1.0 - uniform(); }

  double normal() { return normal_(engine_); }

  double exponential(double rate) { return -std::log(uniform_open0()) / rate; }

  /// Uniform index in [0, n); n must be positive.
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace vbsim
