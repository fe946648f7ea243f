#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "advlat/tensor.hpp"

namespace advlat {

/// xoshiro256** seeded through splitmix64, with Box-Muller normals.
/// The stream is a pure function of the seed on every platform.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0);

  /// Independent stream for (seed, index), e.g. one per evaluated example.
  static SeededRng stream(std::uint64_t seed, std::uint64_t index);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n) without modulo bias.
  std::uint64_t uniform_index(std::uint64_t n);
  double normal();

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

Tensor sample_standard_normal(const Shape& shape, SeededRng& rng);
Tensor sample_uniform(const Shape& shape, double lo, double hi, SeededRng& rng);

}  // namespace advlat
