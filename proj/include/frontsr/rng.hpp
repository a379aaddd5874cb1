#pragma once

// Counter-based 64-bit generator (splitmix64). Chosen over std engines because
// the stream is fully specified by the algorithm, so datasets and weight init
// are reproducible across platforms and standard-library versions.

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace frontsr {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Independent stream derived from a seed plus a list of stream keys
  // (e.g. {identity, parameter-index}); same inputs -> same stream.
  static Rng keyed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    std::uint64_t s = mix(seed ^ 0x5bf03635ebb8a6bcull);
    for (std::uint64_t k : keys) s = mix(s ^ mix(k + 0x9e3779b97f4a7c15ull));
    return Rng(s);
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  // Uniform in [0, 1): 53 high bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t index(std::size_t n) { return n ? std::size_t(next_u64() % n) : 0; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace frontsr
