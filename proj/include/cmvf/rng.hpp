#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace cmvf {

// splitmix64 finalizer; used to derive independent stream seeds from a root
// seed plus a tag, so every source of randomness in a run is a pure function
// of the single user-facing seed.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t stream_seed(std::uint64_t root, std::string_view tag, std::uint64_t a = 0,
                          std::uint64_t b = 0);

// mt19937_64 plus hand-rolled double distributions. The standard pins the
// engine's integer output bit-exactly but leaves <random> distributions
// implementation-defined; runs must reproduce across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller (pair cached)
  double normal();

  // uniform integer in [0, n), rejection sampled to kill modulo bias
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cmvf
