#pragma once

#include <cstdint>
#include <vector>

#include "qrec/tensor.hpp"

namespace qrec {

/// Counter-free splittable generator built on splitmix64. split() derives an
/// independent stream, so components can be seeded once and never contend on
/// shared state; the same seed always yields the same draw sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double next_uniform();
  /// Standard normal via Box-Muller, one value per call.
  double next_normal();
  /// Uniform integer in [0, n); rejection sampled, so no modulo bias.
  std::uint64_t next_index(std::uint64_t n);
  bool next_bernoulli(double p);

  Rng split();

  Tensor normal_tensor(std::size_t rows, std::size_t cols, double stddev);
  /// Fisher-Yates shuffle of [0, n).
  std::vector<std::size_t> permutation(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = next_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace qrec
