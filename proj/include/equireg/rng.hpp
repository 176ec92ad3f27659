#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "equireg/tensor.hpp"

namespace equireg {

/// Seeded random stream. Each sampler chain, noise draw and group-element
/// policy owns its own Rng so that runs are reproducible from seeds alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  /// Independent stream derived from this stream's seed (not its state).
  Rng fork(std::uint64_t stream) const;

  double normal();
  double uniform();
  double uniform(double lo, double hi);
  std::size_t index(std::size_t n);
  bool bernoulli(double p);
  std::vector<double> normal_vector(std::size_t n);
  Tensor normal_tensor(const Shape& shape);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace equireg
