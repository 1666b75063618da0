#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace dpm {

// Seeded generator whose draws are identical on every platform: the engine
// is std::mt19937_64 (fully specified by the standard) and the
// distributions below are computed from its raw output rather than through
// the implementation-defined <random> distribution classes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be positive.
  std::size_t index(std::size_t n);
  // Uniform integer in [lo, hi].
  std::size_t range(std::size_t lo, std::size_t hi) { return lo + index(hi - lo + 1); }
  bool bernoulli(double p) { return uniform() < p; }
  double normal(double mean, double stddev);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dpm
