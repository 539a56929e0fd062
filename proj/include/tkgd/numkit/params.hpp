#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tkgd/numkit/rng.hpp"
#include "tkgd/numkit/tensor.hpp"

namespace tkgd {

struct ParamRef {
  std::string name;
  Tensor* tensor;
};

struct ConstParamRef {
  std::string name;
  const Tensor* tensor;
};

inline Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

// Glorot-uniform for a fan_in x fan_out matrix.
inline Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_tensor({fan_in, fan_out}, bound, rng);
}

}  // namespace tkgd
