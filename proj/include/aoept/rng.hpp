#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace aoept {

// Seeded RNG with self-contained sampling algorithms. The mt19937_64 engine
// is bit-specified by the standard, but std::uniform_int_distribution and
// std::normal_distribution are not; rolling our own keeps every sample
// reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, n). n must be > 0.
  std::uint64_t bounded(std::uint64_t n);

  // Uniform in (0, 1].
  double uniform01();

  // Uniform in [lo, hi).
  double uniform(double lo, double hi);

  double normal(double mean, double stddev);

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(bounded(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace aoept
