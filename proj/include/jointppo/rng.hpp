#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "jointppo/errors.hpp"

namespace jointppo {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic RNG. Doubles are built from raw mt19937_64 words rather than
// std::uniform_real_distribution so streams do not depend on the standard
// library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(splitmix64(seed)) {}

  uint64_t raw() { return gen_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(raw() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) {
    if (n <= 0) throw ContractError("uniform_int: n must be positive");
    // rejection sampling to avoid modulo bias
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
      x = raw();
    } while (x >= limit);
    return static_cast<int>(x % un);
  }

  // Sample an index from an (approximately normalized) probability vector.
  // Zero-probability entries are never selected.
  int categorical(std::span<const double> probs) {
    double total = 0.0;
    for (double p : probs) total += p;
    if (total <= 0.0) throw ContractError("categorical: probabilities sum to zero");
    const double r = uniform() * total;
    double cum = 0.0;
    int last_live = -1;
    for (int i = 0; i < static_cast<int>(probs.size()); ++i) {
      if (probs[i] <= 0.0) continue;
      cum += probs[i];
      last_live = i;
      if (r < cum) return i;
    }
    return last_live;  // r == total up to rounding
  }

  // In-place Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      const int j = uniform_int(i + 1);
      std::swap(v[i], v[static_cast<size_t>(j)]);
    }
  }

  // Independent sub-stream; mixing keeps streams decorrelated across ids.
  Rng split(uint64_t stream_id) { return Rng(splitmix64(gen_() ^ splitmix64(stream_id))); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace jointppo
