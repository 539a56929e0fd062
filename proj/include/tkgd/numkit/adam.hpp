#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "tkgd/errors.hpp"
#include "tkgd/numkit/tensor.hpp"

namespace tkgd {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment accumulators for one parameter tensor.
struct AdamState {
  Tensor m;
  Tensor v;
  std::uint64_t step = 0;
  AdamHyper hyper;
};

// One bias-corrected Adam update. Returns the updated parameters and
// advances `state.step` by exactly one.
inline Tensor adam_step(AdamState& state, const Tensor& params, const Tensor& grads) {
  if (params.shape() != grads.shape())
    throw DimensionError("adam_step: params " + shape_str(params.shape()) + " vs grads " +
                         shape_str(grads.shape()));
  if (state.m.empty()) {
    state.m = Tensor(params.shape());
    state.v = Tensor(params.shape());
  }
  if (state.m.shape() != params.shape())
    throw DimensionError("adam_step: state " + shape_str(state.m.shape()) + " vs params " +
                         shape_str(params.shape()));

  const AdamHyper& h = state.hyper;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);

  Tensor out = params;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double g = grads[i];
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    out[i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
  }
  return out;
}

// Adam over a set of named tensors.
class Adam {
 public:
  explicit Adam(AdamHyper hyper = {}) : hyper_(hyper) {}

  void update(const std::string& name, Tensor& params, const Tensor& grads) {
    auto [it, inserted] = states_.try_emplace(name);
    if (inserted) it->second.hyper = hyper_;
    params = adam_step(it->second, params, grads);
  }

  std::map<std::string, AdamState>& states() { return states_; }
  const std::map<std::string, AdamState>& states() const { return states_; }
  const AdamHyper& hyper() const { return hyper_; }

 private:
  AdamHyper hyper_;
  std::map<std::string, AdamState> states_;
};

}  // namespace tkgd
