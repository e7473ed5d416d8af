#pragma once

#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <string_view>

namespace escape {

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

/// Derive a child seed from a root seed and a label. Every source of
/// randomness in a run is seeded this way so reruns are reproducible.
inline uint64_t derive_seed(uint64_t root, std::string_view label) {
  uint64_t h = fnv1a64(&root, sizeof(root));
  return fnv1a64(label, h);
}

inline uint64_t derive_seed(uint64_t root, std::string_view label, uint64_t index) {
  uint64_t h = derive_seed(root, label);
  return fnv1a64(&index, sizeof(index), h);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  std::mt19937_64& gen() { return gen_; }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(gen_);
  }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) {
    return std::uniform_int_distribution<uint64_t>(0, n - 1)(gen_);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace escape
