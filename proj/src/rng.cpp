#include "transrec/rng.hpp"

#include <cmath>
#include <limits>

namespace transrec {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

Rng Rng::stream(std::uint64_t root_seed, std::string_view name, std::uint64_t index) {
  std::uint64_t s = splitmix64(root_seed) ^ fnv1a64(name);
  s = splitmix64(s + index);
  return Rng(s);
}

std::size_t Rng::uniform_index(std::size_t n) {
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  // Reject the top sliver so x % n is exactly uniform.
  const std::uint64_t rem = (std::numeric_limits<std::uint64_t>::max() % bound + 1) % bound;
  std::uint64_t x = next_u64();
  if (rem != 0) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - rem;
    while (x > limit) x = next_u64();
  }
  return static_cast<std::size_t>(x % bound);
}

double Rng::normal(double mean, double stddev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + stddev * spare_;
  }
  // Box-Muller on two fresh uniforms; u clamped away from 0 for log.
  double u = next_double();
  double v = next_double();
  if (u <= 0.0) u = 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(u));
  const double theta = 6.283185307179586476925286766559 * v;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return mean + stddev * r * std::cos(theta);
}

double Rng::truncated_normal(double mean, double stddev, double clip_sigmas) {
  for (;;) {
    const double z = normal(0.0, 1.0);
    if (std::fabs(z) <= clip_sigmas) return mean + stddev * z;
  }
}

}  // namespace transrec
