#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "tkgd/corpus/token_entropy.hpp"
#include "tkgd/gndiff/denoiser.hpp"
#include "tkgd/gndiff/schedule.hpp"
#include "tkgd/numkit/rng.hpp"
#include "tkgd/numkit/tape.hpp"

namespace tkgd::gndiff {

// p_theta(x_{t-1} | x_t) = sum over x0 of q(x_{t-1} | x_t, x0) p_theta(x0 | x_t).
// For the absorbing chain an unmasked position stays put; a masked position
// reverts to token k with probability revert_t * p(x0 = k).
inline Tensor reverse_step(const DiffusionSchedule& s, const NodeSequence& xt, const Tensor& x0_probs, std::size_t t) {
  const std::size_t vocab = x0_probs.cols();
  const std::size_t mask = vocab - 1;
  Tensor out({kSeqLen, vocab});
  for (std::size_t i = 0; i < kSeqLen; ++i) {
    if (xt[i] != mask) {
      out(i, xt[i]) = 1.0;
      continue;
    }
    const double rev = s.revert(t, i);
    double stay = 1.0 - rev;
    for (std::size_t k = 0; k < vocab; ++k) {
      if (k == mask) {
        stay += rev * x0_probs(i, k);
        continue;
      }
      out(i, k) = rev * x0_probs(i, k);
    }
    out(i, mask) = stay;
  }
  return out;
}

// KL(q || p) summed over rows. Categories with q = 0 contribute nothing.
inline double categorical_kl(const Tensor& q, const Tensor& p) {
  if (q.shape() != p.shape()) throw DimensionError("categorical_kl: shape mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] <= 0.0) continue;
    if (p[i] <= 0.0) return INFINITY;
    kl += q[i] * (std::log(q[i]) - std::log(p[i]));
  }
  return kl;
}

// One training example of the variational bound: the step and the corrupted
// sequence drawn for it.
struct DiffusionDraw {
  NodeSequence x0;
  std::size_t t = 1;
  NodeSequence xt;
  PerPosition weight{};  // revert probability at masked positions, 0 elsewhere
};

inline DiffusionDraw draw_for_step(const DiffusionSchedule& s, const NodeSequence& x0, std::size_t t,
                                   const NodeSequence& xt, Token mask) {
  DiffusionDraw d{x0, t, xt, {}};
  for (std::size_t i = 0; i < kSeqLen; ++i) d.weight[i] = xt[i] == mask ? s.revert(t, i) : 0.0;
  return d;
}

// The bound's term for a drawn (t, x_t), averaged over the batch. With the
// x0-parameterization the per-step KL between the true posterior and
// p_theta(x_{t-1} | x_t) reduces to revert_t * (-log p_theta(x0 | x_t)) at
// each masked position; at t = 1 revert = 1 and the term is the
// reconstruction likelihood. The prior term vanishes because q(x_T | x0) and
// p(x_T) are both the all-mask point mass.
inline Var diffusion_loss(const DenoiserVars& vars, const DenoiserParams& p, std::span<const DiffusionDraw> draws) {
  Tape& tape = vars.token_embedding.tape();
  if (draws.empty()) return tape.constant(Tensor::scalar(0.0));
  std::vector<NodeSequence> xt;
  std::vector<std::size_t> steps;
  for (const auto& d : draws) {
    xt.push_back(d.xt);
    steps.push_back(d.t);
  }
  std::vector<std::size_t> picks;
  std::vector<double> weights;
  const std::size_t vocab = p.layout.vocab_size();
  for (std::size_t b = 0; b < draws.size(); ++b)
    for (std::size_t i = 0; i < kSeqLen; ++i) {
      if (draws[b].weight[i] <= 0.0) continue;
      picks.push_back((b * kSeqLen + i) * vocab + draws[b].x0[i]);
      weights.push_back(draws[b].weight[i]);
    }
  if (picks.empty()) return tape.constant(Tensor::scalar(0.0));
  Var logp = log_softmax_rows(denoise_x0(vars, p, xt, steps));
  Var picked = take(logp, std::move(picks));
  Var weighted = picked * tape.constant(Tensor::vector(std::move(weights)));
  return scale(sum(weighted), -1.0 / static_cast<double>(draws.size()));
}

// Draws t uniformly in [1, T] and x_t ~ q(x_t | x0) for every sequence.
inline std::vector<DiffusionDraw> draw_batch(const corpus::TokenEntropy& entropy, const TokenLayout& layout,
                                             std::span<const NodeSequence> x0s, std::size_t steps, double amplitude,
                                             Rng& rng) {
  std::vector<DiffusionDraw> out;
  out.reserve(x0s.size());
  for (const auto& x0 : x0s) {
    const DiffusionSchedule s = build_schedule(entropy, x0, steps, amplitude);
    const std::size_t t = 1 + static_cast<std::size_t>(rng.below(steps));
    const NodeSequence xt = sample_forward(s, x0, t, layout.mask(), rng);
    out.push_back(draw_for_step(s, x0, t, xt, layout.mask()));
  }
  return out;
}

inline Var diffusion_loss(const DenoiserVars& vars, const DenoiserParams& p, const corpus::TokenEntropy& entropy,
                          std::span<const NodeSequence> x0s, std::size_t steps, double amplitude, Rng& rng) {
  const auto draws = draw_batch(entropy, p.layout, x0s, steps, amplitude, rng);
  return diffusion_loss(vars, p, draws);
}

struct ConditionalSample {
  Token tail = 0;
  std::vector<double> tail_distribution;  // over entity ids
  std::vector<NodeSequence> trajectory;   // x_T before clamping, then x_T..x_0
};

// Reverse chain from the all-mask state with subject and relation clamped.
// `predict(x_t, t)` returns p_theta(x0 | x_t) as a kSeqLen x vocab matrix.
// The returned distribution is the last x0 prediction made for the tail,
// i.e. the one its final token was drawn from.
template <class Predictor>
ConditionalSample sample_conditional(const DiffusionSchedule& s, const TokenLayout& layout, Predictor&& predict,
                                     Token subject, Token relation, Rng& rng, bool greedy = false) {
  const Token mask = layout.mask();
  ConditionalSample out;
  NodeSequence x{mask, mask, mask};
  out.trajectory.push_back(x);
  x[0] = subject;
  x[1] = relation;
  out.trajectory.push_back(x);
  for (std::size_t t = s.steps; t >= 1; --t) {
    if (x[2] == mask) {
      const Tensor probs = predict(x, t);
      const Tensor step = reverse_step(s, x, probs, t);
      std::vector<double> tail(layout.num_entities);
      double z = 0.0;
      for (std::size_t e = 0; e < layout.num_entities; ++e) z += (tail[e] = probs(2, e));
      if (z > 0.0)
        for (double& v : tail) v /= z;
      const std::span<const double> row = step.row(2);
      Token next = mask;
      if (greedy) {
        double best = row[mask];
        for (std::size_t k = 0; k < layout.num_entities; ++k)
          if (row[k] > best) {
            best = row[k];
            next = static_cast<Token>(k);
          }
      } else {
        next = static_cast<Token>(rng.categorical(row));
      }
      if (next != mask) {
        x[2] = next;
        out.tail = next;
        out.tail_distribution = std::move(tail);
      }
    }
    out.trajectory.push_back(x);
  }
  if (x[2] == mask) throw DomainError("reverse chain ended with a masked tail");
  return out;
}

// Mean of the final tail distributions of `chains` independent reverse
// chains; chain c uses rng.split(c).
template <class Predictor>
std::vector<double> p_diff(const DiffusionSchedule& s, const TokenLayout& layout, Predictor&& predict, Token subject,
                           Token relation, std::size_t chains, const Rng& rng, bool greedy = false) {
  if (chains == 0) throw ConfigError("p_diff needs at least one chain");
  std::vector<double> acc(layout.num_entities, 0.0);
  for (std::size_t c = 0; c < chains; ++c) {
    Rng chain_rng = rng.split(c);
    const auto sample = sample_conditional(s, layout, predict, subject, relation, chain_rng, greedy);
    for (std::size_t e = 0; e < acc.size(); ++e) acc[e] += sample.tail_distribution[e];
  }
  for (double& v : acc) v /= static_cast<double>(chains);
  return acc;
}

// Predictor for one (s, r) query. While the tail is masked the denoiser
// input depends only on t, so predictions for all steps are computed in one
// batched pass and reused across chains.
class QueryPredictor {
 public:
  QueryPredictor(const DenoiserParams& params, Token subject, Token relation, std::size_t steps)
      : params_(&params), subject_(subject), relation_(relation) {
    const Token mask = params.layout.mask();
    std::vector<NodeSequence> xs(steps, NodeSequence{subject, relation, mask});
    std::vector<std::size_t> ts(steps);
    for (std::size_t t = 1; t <= steps; ++t) ts[t - 1] = t;
    Tape tape;
    auto vars = DenoiserVars::bind(tape, params, false);
    const Tensor probs = softmax_rows(denoise_x0(vars, params, xs, ts)).value();
    const std::size_t vocab = params.layout.vocab_size();
    cache_.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      Tensor block({kSeqLen, vocab});
      std::copy_n(probs.data().data() + t * kSeqLen * vocab, kSeqLen * vocab, block.data().data());
      cache_.push_back(std::move(block));
    }
  }

  Tensor operator()(const NodeSequence& xt, std::size_t t) const {
    if (xt[0] == subject_ && xt[1] == relation_ && xt[2] == params_->layout.mask() && t >= 1 && t <= cache_.size())
      return cache_[t - 1];
    return predict_x0(*params_, xt, t);
  }

 private:
  const DenoiserParams* params_;
  Token subject_, relation_;
  std::vector<Tensor> cache_;
};

}  // namespace tkgd::gndiff
