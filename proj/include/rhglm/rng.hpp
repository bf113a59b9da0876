#pragma once

// Counter-based random numbers. A stream is identified by a key derived from
// (seed, stream ids...); draw k of a stream is a keyed hash of k, so streams
// for different replicates never share state and any stream can be rebuilt
// from its ids alone.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <utility>
#include <vector>

#include "rhglm/errors.hpp"

namespace rhglm {

namespace detail {

inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

}  // namespace detail

class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) : seed_(seed), key_(detail::mix64(seed ^ 0x243f6a8885a308d3ULL)) {}

  /// Independent sub-stream for e.g. (scenario, replicate).
  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) : Rng(seed) {
    for (auto id : stream) key_ = detail::mix64(key_ ^ detail::mix64(id + detail::kGolden));
  }

  Rng substream(std::uint64_t id) const {
    Rng child = *this;
    child.key_ = detail::mix64(key_ ^ detail::mix64(id + detail::kGolden));
    child.counter_ = 0;
    return child;
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const std::uint64_t c = ++counter_;
    return detail::mix64(detail::mix64(key_ + c * detail::kGolden) ^ (key_ >> 1));
  }

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

  /// Uniform integer in [0, bound), rejection sampled (unbiased).
  std::uint64_t below(std::uint64_t bound) {
    detail::require(bound > 0, "Rng::below: bound must be positive");
    const std::uint64_t limit = max() - max() % bound;
    std::uint64_t r;
    do {
      r = (*this)();
    } while (r >= limit);
    return r % bound;
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t draws() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Standard normal draw (Marsaglia polar method).
inline double sample_normal(Rng& rng) {
  double u, v, s;
  do {
    u = 2.0 * rng.uniform() - 1.0;
    v = 2.0 * rng.uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  // the second variate is discarded to keep each call a pure function of the stream position
  return u * std::sqrt(-2.0 * std::log(s) / s);
}

/// Gamma draw with the given shape and mean (Marsaglia-Tsang squeeze; shapes
/// below one use the U^(1/shape) boost).
inline double sample_gamma(Rng& rng, double shape, double mean) {
  detail::require(shape > 0.0 && mean > 0.0, "sample_gamma: shape and mean must be positive");
  const double scale = mean / shape;
  double boost_log = 0.0;
  double a = shape;
  if (a < 1.0) {
    boost_log = std::log(rng.uniform()) / a;
    a += 1.0;
  }
  const double d = a - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = sample_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2 || std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) {
      return std::exp(std::log(d * v) + boost_log) * scale;
    }
  }
}

/// k distinct indices from [0, n), uniformly at random (partial Fisher-Yates).
inline std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k) {
  detail::require(k <= n, "sample_without_replacement: k exceeds n");
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace rhglm
