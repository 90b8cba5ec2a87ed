#ifndef SFLOW_RNG_HPP
#define SFLOW_RNG_HPP

#include <cmath>
#include <cstdint>

namespace sflow {

namespace detail {

// splitmix64 finalizer
inline std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

}  // namespace detail

// Deterministic counter-based stream. Every (seed, index) pair yields its own
// stream, so sample i draws the same numbers no matter how the workload is
// partitioned or which samples were drawn before it.
class SampleRng {
 public:
  SampleRng(std::uint64_t seed, std::uint64_t index) noexcept
      : key_(detail::mix64(detail::mix64(seed + detail::kGolden) ^
                           (index * 0xD2B74407B1CE6E93ULL + 1))),
        counter_(0) {}

  std::uint64_t next_u64() noexcept {
    counter_ += detail::kGolden;
    return detail::mix64(key_ + counter_);
  }

  // Uniform on the open interval (0,1).
  double uniform01() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller. Two uniforms per draw, no caching, so the
  // stream position depends only on the number of draws.
  double gaussian() noexcept {
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace sflow

#endif  // SFLOW_RNG_HPP
