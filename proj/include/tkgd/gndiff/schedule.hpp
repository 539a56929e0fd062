#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "tkgd/corpus/token_entropy.hpp"
#include "tkgd/errors.hpp"
#include "tkgd/numkit/tensor.hpp"

namespace tkgd::gndiff {

using corpus::Token;
using corpus::TokenLayout;

inline constexpr std::size_t kSeqLen = 3;

// (subject, relation, object) tokens over the combined vocabulary.
using NodeSequence = std::array<Token, kSeqLen>;
using PerPosition = std::array<double, kSeqLen>;

// Per-position survival curves of the absorbing chain for one sequence.
// Survival decreases linearly in t, bent per token by G(t) = mu sin(t pi / T)
// scaled with the token's entropy relative to the sequence mean: tokens
// carrying more information are masked first in the forward process.
struct DiffusionSchedule {
  std::size_t steps = 0;
  double amplitude = 0.0;
  PerPosition entropy{};
  PerPosition relative_entropy{};
  std::vector<PerPosition> alpha_bar_raw;  // before clamping, t = 0..T
  std::vector<PerPosition> alpha_bar;      // clamped to [0, 1], non-increasing
  std::vector<PerPosition> beta;           // beta[t] = 1 - alpha_bar[t] / alpha_bar[t-1]; beta[0] = 0
  bool saturated = false;
  std::string warning;

  double survival(std::size_t t, std::size_t i) const { return alpha_bar.at(t)[i]; }

  // Probability that a masked position at step t reverts to its clean token
  // at step t - 1 under q(x_{t-1} | x_t, x_0).
  double revert(std::size_t t, std::size_t i) const {
    const double at = alpha_bar.at(t)[i];
    const double prev = alpha_bar.at(t - 1)[i];
    if (1.0 - at <= 0.0) return 1.0;
    return std::clamp((prev - at) / (1.0 - at), 0.0, 1.0);
  }
};

inline double schedule_bend(std::size_t t, std::size_t steps, double amplitude) {
  if (t == 0 || t == steps) return 0.0;
  return amplitude * std::sin(static_cast<double>(t) * std::numbers::pi / static_cast<double>(steps));
}

inline DiffusionSchedule build_schedule(const PerPosition& entropies, std::size_t steps, double amplitude) {
  if (steps < 2) throw ConfigError("diffusion needs at least 2 steps");
  if (!(amplitude >= 0.0)) throw ConfigError("schedule amplitude must be non-negative");

  DiffusionSchedule s;
  s.steps = steps;
  s.amplitude = amplitude;
  s.entropy = entropies;
  double total = 0.0;
  for (double h : entropies) total += h;
  for (std::size_t i = 0; i < kSeqLen; ++i) {
    const double h = std::max(entropies[i], 1e-12);
    s.relative_entropy[i] = 1.0 - total / (static_cast<double>(kSeqLen) * h);
  }

  const double T = static_cast<double>(steps);
  s.alpha_bar_raw.resize(steps + 1);
  s.alpha_bar.resize(steps + 1);
  s.beta.resize(steps + 1);
  std::size_t clamped = 0;
  for (std::size_t t = 0; t <= steps; ++t) {
    const double g = schedule_bend(t, steps, amplitude);
    for (std::size_t i = 0; i < kSeqLen; ++i) {
      const double raw = 1.0 - static_cast<double>(t) / T - g * s.relative_entropy[i];
      s.alpha_bar_raw[t][i] = raw;
      double a = std::clamp(raw, 0.0, 1.0);
      if (t > 0) a = std::min(a, s.alpha_bar[t - 1][i]);
      if (t > 0 && t < steps && a != raw) ++clamped;
      s.alpha_bar[t][i] = a;
      s.beta[t][i] = t == 0 ? 0.0 : (s.alpha_bar[t - 1][i] > 0.0 ? 1.0 - a / s.alpha_bar[t - 1][i] : 1.0);
    }
  }
  const std::size_t interior = (steps - 1) * kSeqLen;
  if (interior > 0 && 2 * clamped > interior) {
    s.saturated = true;
    s.warning = "schedule amplitude " + std::to_string(amplitude) + " clamps " +
                std::to_string(clamped) + " of " + std::to_string(interior) + " interior survival values";
  }
  return s;
}

inline DiffusionSchedule build_schedule(const corpus::TokenEntropy& entropy, const NodeSequence& x0,
                                        std::size_t steps, double amplitude) {
  return build_schedule(PerPosition{entropy.entropy(x0[0]), entropy.entropy(x0[1]), entropy.entropy(x0[2])},
                        steps, amplitude);
}

// Inference-time schedule for (s, r, ?): the tail uses the expected object entropy.
inline DiffusionSchedule build_query_schedule(const corpus::TokenEntropy& entropy, Token s, Token r,
                                              std::size_t steps, double amplitude) {
  return build_schedule(PerPosition{entropy.entropy(s), entropy.entropy(r), entropy.expected_object_entropy()},
                        steps, amplitude);
}

// One-step transition matrix for position i: tokens keep their value with
// probability 1 - beta_t and fall into the mask (the last category) with
// probability beta_t; the mask is absorbing.
inline Tensor transition_matrix(const DiffusionSchedule& s, std::size_t t, std::size_t i, std::size_t vocab) {
  if (t < 1 || t > s.steps) throw DomainError("transition_matrix: t out of range");
  const std::size_t mask = vocab - 1;
  const double b = s.beta[t][i];
  Tensor Q({vocab, vocab});
  for (std::size_t a = 0; a < vocab; ++a) {
    if (a == mask) {
      Q(a, mask) = 1.0;
    } else {
      Q(a, a) = 1.0 - b;
      Q(a, mask) += b;
    }
  }
  return Q;
}

// q(x_t | x_0) per position, as a kSeqLen x vocab matrix.
inline Tensor forward_marginal(const DiffusionSchedule& s, const NodeSequence& x0, std::size_t t, std::size_t vocab) {
  if (t > s.steps) throw DomainError("forward_marginal: t beyond the last step");
  const std::size_t mask = vocab - 1;
  Tensor out({kSeqLen, vocab});
  for (std::size_t i = 0; i < kSeqLen; ++i) {
    if (x0[i] >= mask) throw DomainError("forward_marginal: x0 must not contain the mask");
    const double a = s.alpha_bar[t][i];
    out(i, x0[i]) += a;
    out(i, mask) += 1.0 - a;
  }
  return out;
}

// q(x_{t-1} | x_t, x_0) per position for the absorbing chain.
inline Tensor posterior(const DiffusionSchedule& s, const NodeSequence& xt, const NodeSequence& x0, std::size_t t,
                        std::size_t vocab) {
  if (t < 1 || t > s.steps) throw DomainError("posterior: t out of range");
  const std::size_t mask = vocab - 1;
  Tensor out({kSeqLen, vocab});
  for (std::size_t i = 0; i < kSeqLen; ++i) {
    if (xt[i] != mask && xt[i] != x0[i])
      throw DomainError("posterior: x_t token " + std::to_string(xt[i]) + " at position " + std::to_string(i) +
                        " is neither x_0 nor the mask");
    if (xt[i] != mask) {
      out(i, xt[i]) = 1.0;
      continue;
    }
    const double rev = s.revert(t, i);
    out(i, x0[i]) += rev;
    out(i, mask) += 1.0 - rev;
  }
  return out;
}

// Samples x_t ~ q(x_t | x_0).
template <class Rng>
NodeSequence sample_forward(const DiffusionSchedule& s, const NodeSequence& x0, std::size_t t, Token mask, Rng& rng) {
  NodeSequence xt = x0;
  for (std::size_t i = 0; i < kSeqLen; ++i)
    if (rng.uniform() >= s.alpha_bar[t][i]) xt[i] = mask;
  return xt;
}

}  // namespace tkgd::gndiff
