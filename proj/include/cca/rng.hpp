#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace cca {

// splitmix64 step; used both to expand seeds and to derive sub-stream seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derive an independent stream seed from a master seed and a path of
/// stream indices. Same inputs always give the same output, so parallel
/// and serial execution of seeded work agree.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = master;
  for (std::uint64_t p : path) {
    std::uint64_t mix = s ^ (p + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2));
    s = splitmix64(mix);
  }
  return s;
}

/// Deterministic RNG. mt19937_64 has a standardized output sequence; the
/// mappings to reals and bounded ints are done by hand here because the
/// std distributions are not bit-portable across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of precision.
  double next_real() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  /// Uniform in [-limit, limit).
  double next_uniform(double limit) { return (next_real() * 2.0 - 1.0) * limit; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

} // namespace cca
