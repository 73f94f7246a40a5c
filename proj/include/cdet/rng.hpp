// Counter-based pseudo-random numbers: the stream is a pure function of
// (seed, counter), so saving both reproduces the sequence exactly on any
// platform. Mixing is splitmix64's finalizer.
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace cdet {

class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  uint64_t seed() const { return seed_; }
  uint64_t counter() const { return counter_; }
  void restore(uint64_t seed, uint64_t counter) {
    seed_ = seed;
    counter_ = counter;
  }

  uint64_t next_u64() {
    uint64_t x = seed_ + 0x9E3779B97F4A7C15ull * ++counter_;
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ull;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBull;
    x ^= x >> 31;
    return x;
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [lo, hi)
  int randint(int lo, int hi) {
    return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo));
  }

  // Standard normal via Box-Muller; draws two uniforms per sample so the
  // counter advances deterministically (no cached spare).
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::vector<double> normals(size_t n, double mean, double stddev);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_u64() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t seed_;
  uint64_t counter_;
};

}  // namespace cdet
