#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "nwflow/rng.hpp"
#include "nwflow/tensor.hpp"

namespace testutil {

inline nwflow::Tensor random_tensor(nwflow::Rng& rng, nwflow::Shape shape, double scale = 1.0) {
  nwflow::Tensor t = nwflow::Tensor::zeros(std::move(shape));
  for (nwflow::Index i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

}  // namespace testutil
