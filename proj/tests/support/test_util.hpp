#pragma once

#include <cmath>

#include "bseg/ad/tensor.hpp"
#include "bseg/common/rng.hpp"

namespace bseg::testing {

template <typename T = double>
ad::Tensor<T> random_tensor(ad::Shape shape, Rng& rng, double scale = 1.0) {
  ad::Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(normal(rng, 0.0, scale));
  return t;
}

// Random values kept at least `margin` away from zero (relu kink).
inline ad::Tensor<double> random_away_from_zero(ad::Shape shape, Rng& rng, double margin = 1e-2) {
  auto t = random_tensor(std::move(shape), rng);
  for (auto& v : t.data()) {
    while (std::abs(v) < margin) v = normal(rng);
  }
  return t;
}

}  // namespace bseg::testing
