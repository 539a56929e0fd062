#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tkgd/numkit/tape.hpp"

namespace tkgd {

// Scalar-valued function of differentiable inputs, evaluated on a fresh tape.
using TapedFunction = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> params;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

struct GradCheckOptions {
  double step = 1e-5;
  // Relative error is |tape - fd| / max(|tape|, |fd|, floor).
  double floor = 1e-6;
};

inline double evaluate_scalar(const TapedFunction& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
  return f(tape, vars).value().item();
}

inline std::vector<Tensor> tape_gradients(const TapedFunction& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
  Var out = f(tape, vars);
  tape.backward(out);
  std::vector<Tensor> grads;
  grads.reserve(vars.size());
  for (const Var& v : vars) grads.push_back(v.grad());
  return grads;
}

// Compares tape gradients with central finite differences. Disagreement is
// reported, never thrown.
inline GradCheckReport grad_check(const TapedFunction& f, std::vector<Tensor> params, double tolerance,
                                  std::vector<std::string> names = {}, GradCheckOptions opts = {}) {
  GradCheckReport report;
  report.tolerance = tolerance;
  const std::vector<Tensor> analytic = tape_gradients(f, params);
  for (std::size_t p = 0; p < params.size(); ++p) {
    GradCheckEntry entry;
    entry.name = p < names.size() ? names[p] : "param" + std::to_string(p);
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double saved = params[p][i];
      params[p][i] = saved + opts.step;
      const double up = evaluate_scalar(f, params);
      params[p][i] = saved - opts.step;
      const double down = evaluate_scalar(f, params);
      params[p][i] = saved;
      const double fd = (up - down) / (2.0 * opts.step);
      const double a = analytic[p][i];
      const double abs_err = std::abs(a - fd);
      const double rel = abs_err / std::max({std::abs(a), std::abs(fd), opts.floor});
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.params.push_back(std::move(entry));
  }
  return report;
}

}  // namespace tkgd
