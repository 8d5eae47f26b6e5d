#include "qrec/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace qrec {

namespace {

std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::next_u64() {
  state_ += 0x9e3779b97f4a7c15ull;
  return mix(state_);
}

double Rng::next_uniform() {
  // 53 random bits -> [0, 1) with full double resolution.
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_normal() {
  double u1 = next_uniform();
  double u2 = next_uniform();
  while (u1 <= 0.0) u1 = next_uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::next_index(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("next_index: empty range");
  const std::uint64_t limit = ~0ull - ~0ull % n;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

bool Rng::next_bernoulli(double p) { return next_uniform() < p; }

Rng Rng::split() {
  // Derive a child seed far from the parent sequence; mixing twice keeps
  // sibling streams decorrelated even for adjacent seeds.
  return Rng(mix(next_u64() ^ 0xd1b54a32d192ed03ull));
}

Tensor Rng::normal_tensor(std::size_t rows, std::size_t cols, double stddev) {
  std::vector<double> d(rows * cols);
  for (double& v : d) {
    // Round through float so checkpoints (32-bit payload) restore exactly.
    v = static_cast<double>(static_cast<float>(next_normal() * stddev));
  }
  return Tensor(rows, cols, std::move(d));
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  shuffle(p);
  return p;
}

}  // namespace qrec
