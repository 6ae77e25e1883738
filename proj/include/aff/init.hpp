#pragma once

#include <cmath>

#include "aff/rng.hpp"
#include "aff/tensor.hpp"

namespace aff {

template <typename S>
Tensor<S> uniform_symmetric(Shape shape, double bound, Rng& rng) {
  Tensor<S> t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<S>(rng.uniform(-bound, bound));
  }
  return t;
}

// Kaiming normal, fan-in mode with ReLU gain: std = sqrt(2 / fan_in).
template <typename S>
Tensor<S> kaiming_normal(Shape shape, Index fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor<S> t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<S>(rng.normal() * stddev);
  }
  return t;
}

}  // namespace aff
