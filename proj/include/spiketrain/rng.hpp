#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "spiketrain/tensor.hpp"

// Counter-based splittable RNG. A key plus a draw counter maps through the
// SplitMix64 finalizer to 64 random bits, so draws are pure functions of
// (key, counter) and any draw order gives the same stream. Keys split into
// statistically independent children; a key that has been split should not
// be drawn from again.

namespace spiketrain {

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kSplitDomain = 0xC2B2AE3D27D4EB4Full;
constexpr std::uint64_t kDrawDomain = 0x165667B19E3779F9ull;

}  // namespace detail

struct RngKey {
  std::uint64_t word = 0;

  static RngKey from_seed(std::uint64_t seed) {
    return RngKey{detail::mix64(seed)};
  }

  // 64 raw bits for draw index `counter` within this key's stream.
  std::uint64_t bits(std::uint64_t counter) const {
    return detail::mix64(word ^ detail::mix64(counter + detail::kDrawDomain));
  }

  RngKey child(std::uint64_t index) const {
    return RngKey{
        detail::mix64(word ^ detail::mix64(index + detail::kSplitDomain))};
  }
};

inline std::vector<RngKey> split(RngKey key, std::size_t n) {
  std::vector<RngKey> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(key.child(i));
  return out;
}

inline std::pair<RngKey, RngKey> split2(RngKey key) {
  return {key.child(0), key.child(1)};
}

// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(RngKey key, std::uint64_t counter) {
  return double(key.bits(counter) >> 11) * 0x1.0p-53;
}

// Integer in [lo, hi). The 2^64 modulo bias is far below any tolerance used
// here.
inline std::int64_t randint(RngKey key, std::uint64_t counter,
                            std::int64_t lo, std::int64_t hi) {
  if (lo >= hi)
    throw ArgumentError("randint: empty range [" + std::to_string(lo) + "," +
                        std::to_string(hi) + ")");
  const std::uint64_t range = std::uint64_t(hi - lo);
  return lo + std::int64_t(key.bits(counter) % range);
}

// Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> permutation(RngKey key, std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j =
        std::size_t(key.bits(i - 1) % std::uint64_t(i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

namespace detail {

// Box-Muller from draw indices (2i, 2i+1) of `key`; returns the cosine leg.
inline double normal_at(RngKey key, std::uint64_t i) {
  const double u1 = 1.0 - uniform01(key, 2 * i);  // (0, 1], keeps log finite
  const double u2 = uniform01(key, 2 * i + 1);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace detail

template <typename T>
Tensor<T> rng_uniform(RngKey key, const Shape& shape, T lo = T(0),
                      T hi = T(1)) {
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = lo + T(uniform01(key, i)) * (hi - lo);
  return out;
}

template <typename T>
Tensor<T> rng_normal(RngKey key, const Shape& shape, T mean = T(0),
                     T stddev = T(1)) {
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = mean + stddev * T(detail::normal_at(key, i));
  return out;
}

// Normal(mean, stddev) restricted to [mean + lo_sigma*stddev,
// mean + hi_sigma*stddev] by rejection. Each element gets its own child key
// so rejected attempts never perturb neighbouring elements.
template <typename T>
Tensor<T> rng_truncated_normal(RngKey key, const Shape& shape, T mean,
                               T stddev, T lo_sigma = T(-2),
                               T hi_sigma = T(2)) {
  if (!(lo_sigma < hi_sigma))
    throw ArgumentError("rng_truncated_normal: empty interval");
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const RngKey ek = key.child(i);
    double z = 0.0;
    bool ok = false;
    for (std::uint64_t attempt = 0; attempt < 256; ++attempt) {
      z = detail::normal_at(ek, attempt);
      if (z >= double(lo_sigma) && z <= double(hi_sigma)) {
        ok = true;
        break;
      }
    }
    if (!ok) z = std::min(double(hi_sigma), std::max(double(lo_sigma), z));
    out[i] = mean + stddev * T(z);
  }
  return out;
}

template <typename T>
Tensor<T> rng_bernoulli(RngKey key, const Shape& shape, double p) {
  if (p < 0.0 || p > 1.0)
    throw ArgumentError("rng_bernoulli: p=" + std::to_string(p));
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = uniform01(key, i) < p ? T(1) : T(0);
  return out;
}

}  // namespace spiketrain
