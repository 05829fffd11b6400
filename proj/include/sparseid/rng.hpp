#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace sparseid {

// SplitMix64 finalizer. Bijective on 64-bit words; passes BigCrush when used
// as out[i] = mix64(key + i*GOLDEN), which is exactly how CounterRng uses it.
inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

/// Fold an ordered list of words into one stream key. Order-sensitive.
inline std::uint64_t derive_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t k = 0x8e88cf6a03b44f8dULL;
  for (std::uint64_t p : parts) k = mix64((k + kGolden) ^ p);
  return k;
}

/// Counter-based generator: output i of stream `key` is mix64(key + (i+1)*GOLDEN).
/// Any (key, counter) pair addresses a draw directly, so independent workers can
/// reproduce identical streams with no sequential coupling.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}
  CounterRng(std::uint64_t seed, std::uint64_t stream) : key_(derive_key({seed, stream})) {}

  std::uint64_t next_u64() { return mix64(key_ + (++counter_) * kGolden); }

  /// Uniform on [0,1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Bernoulli event of probability prob.
  bool bernoulli(double prob) { return uniform01() < prob; }

  /// Standard normal via Box-Muller; draws two uniforms per pair.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0,1] so the log is finite.
    const double u1 = 1.0 - uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Multiply-shift range reduction; bias is < 2^-64 per draw, irrelevant here.
    const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace sparseid
