// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace maxico {

// mt19937_64 wrapper with explicit value mappings. std:: distributions are
// avoided on purpose: their outputs are not pinned by the standard, and we
// need bit-identical streams across processes and checkpoint round-trips.
class Rng {
 public:
  Rng() : gen_(0) {}
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
  }

  // Box-Muller, both uniforms consumed every call so the stream stays
  // stateless beyond the generator itself (checkpoint-friendly).
  double normal() {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = last - first;
    for (auto i = n - 1; i > 0; --i) {
      auto j = uniform_int(i + 1);
      std::swap(first[i], first[j]);
    }
  }

  template <typename C>
  void shuffle(C& container) {
    shuffle(container.begin(), container.end());
  }

  std::string serialize() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
  }

 private:
  std::mt19937_64 gen_;
};

// FNV-1a, used for stream derivation and config fingerprints.
inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t mix_seed(uint64_t seed, const std::string& stream_name) {
  uint64_t h = fnv1a(stream_name);
  h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

// Independent named stream derived from a master seed. Data loading, beta
// sampling, augmentation and init each get their own so consumption order
// in one cannot perturb the others.
inline Rng named_stream(uint64_t master_seed, const std::string& name) {
  return Rng(mix_seed(master_seed, name));
}

}  // namespace maxico
