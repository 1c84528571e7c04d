#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace transrec {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);

/// Deterministic random stream. All randomness in the project flows from one
/// root seed fanned out into named streams (init, sampler, dropout, shuffle),
/// so components can be replayed independently. Draw algorithms are
/// implemented here rather than taken from <random> distributions, which are
/// not pinned across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed ^ 0x9e3779b97f4a7c15ull)) {}

  /// Derive the stream `name[index]` from a root seed.
  static Rng stream(std::uint64_t root_seed, std::string_view name, std::uint64_t index = 0);

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform double in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Unbiased uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);

  double normal(double mean, double stddev);

  /// Normal draw rejected until within clip_sigmas standard deviations.
  double truncated_normal(double mean, double stddev, double clip_sigmas);

  template <class T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = uniform_index(i + 1);
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace transrec
