#include "aoept/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace aoept {

std::uint64_t Rng::bounded(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::bounded: n must be > 0");
  // Rejection sampling to avoid modulo bias.
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::uniform01() {
  // 53 random bits mapped to (0, 1].
  return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

double Rng::normal(double mean, double stddev) {
  if (have_spare_) {
    have_spare_ = false;
    return mean + stddev * spare_;
  }
  const double u1 = uniform01();
  const double u2 = uniform01();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 6.28318530717958647692 * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return mean + stddev * r * std::cos(theta);
}

}  // namespace aoept
