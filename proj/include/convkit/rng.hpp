#pragma once

#include <cmath>
#include <cstdint>

namespace convkit {

namespace detail {

// SplitMix64 finalizer; full-avalanche 64-bit mix.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// Counter-based generator: the draw at counter c is a pure function of
// (seed, stream, c), so identical (seed, stream) pairs replay bit-identical
// sequences on any platform and streams can be split freely across threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {
    key_ = detail::mix64(seed ^ 0x6a09e667f3bcc909ULL) ^
           detail::mix64(stream ^ 0xbb67ae8584caa73bULL);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::uint64_t next_u64() {
    return detail::mix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_);
  }

  // Uniform in [0,1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0,n); Lemire multiply-reject.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    while (true) {
      std::uint64_t x = next_u64();
      __uint128_t m = static_cast<__uint128_t>(x) * n;
      auto lo = static_cast<std::uint64_t>(m);
      if (lo >= n || lo >= static_cast<std::uint64_t>(-static_cast<std::int64_t>(n)) % n)
        return static_cast<std::uint64_t>(m >> 64);
    }
  }

  bool coin() { return (next_u64() >> 63) != 0; }

  // Box-Muller; consumes exactly two draws per call.
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0) u1 = 0x1.0p-53;
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  double gaussian(double mu, double sigma) { return mu + sigma * gaussian(); }

  // Independent child stream; (seed, stream) of the child is a pure function
  // of the parent stream and the substream id.
  Rng fork(std::uint64_t substream) const {
    std::uint64_t s = detail::mix64(stream_ * 0x2545f4914f6cdd1dULL ^
                                    detail::mix64(substream));
    return Rng(seed_, s);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

// Stable stream id for (epoch, sample) so data-loading order cannot reorder
// stochastic augmentation streams.
inline std::uint64_t sample_stream(std::uint64_t epoch, std::uint64_t index) {
  return detail::mix64(epoch * 0x9e3779b97f4a7c15ULL + index);
}

}  // namespace convkit
