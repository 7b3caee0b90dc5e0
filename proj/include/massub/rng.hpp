#pragma once

#include <cmath>
#include <cstdint>

namespace massub {

// Counter-based randomness: every random quantity is a pure function of
// (seed, index), so results do not depend on chunking or thread count.

inline constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t splitmix_finalize(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stream key for a seed; mix64(seed, i) is output i of SplitMix64 started at this key.
constexpr std::uint64_t stream_key(std::uint64_t seed) noexcept {
  return splitmix_finalize(seed ^ 0x6a09e667f3bcc909ULL);
}

constexpr std::uint64_t mix64_keyed(std::uint64_t key, std::uint64_t index) noexcept {
  return splitmix_finalize(key + (index + 1) * kGoldenGamma);
}

constexpr std::uint64_t mix64(std::uint64_t seed, std::uint64_t index) noexcept {
  return mix64_keyed(stream_key(seed), index);
}

inline constexpr double kUnitScale = 0x1.0p-52;
inline constexpr std::uint64_t kUnitSpan = 1ULL << 52;

/// Maps a hash to the open interval (0,1) on a 2^-52 grid.
constexpr double unit_open(std::uint64_t h) noexcept {
  return (static_cast<double>(h >> 12) + 0.5) * kUnitScale;
}

/// Integer threshold K with unit_open(h) < p  <=>  (h >> 12) < K.
inline std::uint64_t bernoulli_threshold(double p) noexcept {
  if (!(p > 0.0)) return 0;
  if (p >= 1.0) return kUnitSpan;
  const double t = std::ceil(p * static_cast<double>(kUnitSpan) - 0.5);
  return t <= 0.0 ? 0 : static_cast<std::uint64_t>(t);
}

inline bool bernoulli_accept(std::uint64_t h, std::uint64_t threshold) noexcept {
  return (h >> 12) < threshold;
}

/// Derives an independent sub-seed, e.g. one per replication or per pipeline stage.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
  return splitmix_finalize(stream_key(seed) ^ splitmix_finalize(tag + kGoldenGamma));
}

}  // namespace massub
