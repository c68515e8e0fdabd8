#include "promptcam/rng.hpp"

#include <cmath>

namespace pcam {

double Rng::normal() {
  // u1 in (0, 1]: guard the log.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::truncated_normal(double stddev, double halfwidth_sd) {
  for (;;) {
    const double z = normal();
    if (std::fabs(z) <= halfwidth_sd) return z * stddev;
  }
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) return 0;
  const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
  for (;;) {
    const std::uint64_t v = next_u64();
    if (v < limit) return v % n;
  }
}

}  // namespace pcam
