#pragma once

#include "irra/nn.hpp"
#include "irra/tensor.hpp"

#include <random>
#include <vector>

namespace irra::test {

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<double> to_vector(const Tensor& t) {
  return {t.values().begin(), t.values().end()};
}

}  // namespace irra::test
