#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "iwadv/autodiff/tensor.hpp"

namespace iwadv::ad {

/// Seeded stream of Gaussian, uniform and Bernoulli draws. Two sources built
/// from the same seed produce the same sequence of draws.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed = 0);

  double gaussian();
  double uniform();  // [0, 1)
  bool bernoulli(double p);
  std::uint64_t next_u64();
  std::size_t index(std::size_t n);  // uniform on {0, ..., n-1}

  Tensor gaussian(Shape shape);
  Tensor uniform(Shape shape);
  Tensor bernoulli(Shape shape, double p);

  /// Independent child stream; advances this source by one draw.
  RandomSource split();

  std::string serialize() const;
  static RandomSource deserialize(const std::string& state);

  bool operator==(const RandomSource& other) const;

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

}  // namespace iwadv::ad
