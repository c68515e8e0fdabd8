#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace pcam {

// FNV-1a, 64-bit. Used for substream derivation and for buffer checksums in
// the checkpoint container.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t len,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

// Deterministic splittable RNG (SplitMix64). All randomness in the project
// flows from one master seed through named substreams so components can be
// re-seeded independently without disturbing each other's draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Derive an independent substream. The parent stream is not advanced.
  Rng stream(std::string_view name) const {
    return Rng(mix(state_ ^ fnv1a64(name.data(), name.size())));
  }
  Rng stream(std::uint64_t index) const {
    return Rng(mix(state_ ^ (0x9e3779b97f4a7c15ull + index)));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller without pair caching: draws are a pure function of the
  // stream position, independent of the call pattern around them.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Resampled normal clipped to |z| <= halfwidth_sd standard deviations.
  double truncated_normal(double stddev, double halfwidth_sd = 2.0);

  // Uniform integer in [0, n), rejection sampled.
  std::uint64_t uniform_int(std::uint64_t n);

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace pcam
