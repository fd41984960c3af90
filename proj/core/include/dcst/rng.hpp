#pragma once

#include <cstdint>
#include <random>

#include "dcst/tensor.hpp"

namespace dcst {

/// Seeded generator used for initialization, data synthesis and sampling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Deterministic child stream, independent of how much of this stream has
  /// been consumed.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  double uniform(double lo = 0.0, double hi = 1.0);
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Normal resampled until it lies within two standard deviations.
  double truncated_normal(double stddev);
  bool bernoulli(double p);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

Tensor uniform_tensor(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f,
                      bool requires_grad = false);
Tensor normal_tensor(Shape shape, Rng& rng, float stddev, bool requires_grad = false);

}  // namespace dcst
