#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace relkit {

/// FNV-1a; stable across platforms, used to derive per-name seeds.
std::uint64_t stable_hash(std::string_view text);

/// Seeded PRNG with platform-independent conversions.
///
/// std::mt19937_64's raw output is fixed by the standard, but the std
/// distributions are not, so uniform/normal/index draws are done by hand.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);
  /// Stream derived from a base seed and a label, e.g. a parameter name.
  Rng(std::uint64_t seed, std::string_view label);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      std::swap(first[i - 1], first[index(i)]);
    }
  }

  std::string serialize() const;
  void deserialize(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace relkit
