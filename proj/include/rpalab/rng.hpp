#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "rpalab/tensor.hpp"

namespace rpalab {

/// Seeded stream. Uniform/normal draws are computed here rather than through
/// <random> distributions so the stream is bit-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t draws() const { return draws_; }

  /// Independent stream for a named component: seed is mixed with a hash of the label.
  Rng fork(std::string_view label) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Index drawn from an unnormalized nonnegative weight vector.
  std::size_t categorical(const std::vector<double>& weights);

  Tensor normal_tensor(Shape shape, double stddev = 1.0);
  Tensor uniform_tensor(Shape shape, double lo, double hi);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::uint64_t draws_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text, std::uint64_t h = 1469598103934665603ULL);

}  // namespace rpalab
