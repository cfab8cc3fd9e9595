#pragma once

#include <cmath>
#include <cstdint>

namespace cyrisk {

// Counter-based per-path random stream. State advances by a fixed odd
// increment (splitmix64); the starting counter is a mix of (seed, stream id),
// so adding paths never reshuffles existing ones and draws are reproducible
// across platforms (no std::*_distribution involved).
class PathRng {
 public:
  PathRng(std::uint64_t seed, std::uint64_t stream) {
    counter_ = mix(seed + 0x9E3779B97F4A7C15ull * (stream + 1));
    have_spare_ = false;
  }

  std::uint64_t next_u64() {
    counter_ += 0x9E3779B97F4A7C15ull;
    return mix(counter_);
  }

  // Uniform on (0,1): 53-bit mantissa, offset to avoid exact 0.
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller, cached in pairs.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_uniform();
    double u2 = next_uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t counter_;
  double spare_ = 0.0;
  bool have_spare_;
};

}  // namespace cyrisk
