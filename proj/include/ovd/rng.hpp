#ifndef OVD_RNG_HPP
#define OVD_RNG_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ovd::rng {

// splitmix64; used both as a mixer and as the generator driving all
// randomness in the project so results do not depend on the standard
// library's distribution implementations.
inline uint64_t splitmix64(uint64_t &state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Named sub-seed: every random stream hangs off the root seed through a
// (tag, index) pair, so a single --seed pins the whole pipeline.
inline uint64_t sub_seed(uint64_t root, std::string_view tag, uint64_t index = 0) {
  uint64_t h = root ^ 0x51a2b3c4d5e6f708ULL;
  for (char c : tag) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
    h *= 0x100000001b3ULL;
  }
  h ^= index + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  uint64_t s = h;
  return splitmix64(s);
}

class Rng {
public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // uniform in [0,1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  uint64_t uniform_int(uint64_t n) { return n ? next_u64() % n : 0; }

  int uniform_int(int lo, int hi_inclusive) {
    return lo + static_cast<int>(uniform_int(
                    static_cast<uint64_t>(hi_inclusive - lo + 1)));
  }

  // Box-Muller; one value per call (the spare is discarded to keep the
  // stream position easy to reason about).
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    return mean + stddev * z;
  }

  template <typename T>
  void shuffle(std::vector<T> &v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  uint64_t state_;
};

} // namespace ovd::rng

#endif
