#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace lcpred {

// 64-bit finalizer used to derive independent substream seeds from one
// master seed. Every seeded component in the pipeline gets its stream
// through derive_seed so that reordering unrelated work never perturbs
// another component's draws.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = splitmix64(master ^ splitmix64(a));
  s = splitmix64(s ^ splitmix64(b + 0x51ed270b7a4fca11ULL));
  return splitmix64(s ^ splitmix64(c + 0x9f7d4a663e193b25ULL));
}

// Seeded RNG with hand-pinned draw transforms. The standard distributions
// are implementation-defined, so all sampling goes through the helpers
// below to keep corpora and training runs byte-reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  // standard normal, Box-Muller with cached spare
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // uniform index in [0, n); n must be positive
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

  // Fisher-Yates, pinned (std::shuffle's draw pattern is unspecified)
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace lcpred
