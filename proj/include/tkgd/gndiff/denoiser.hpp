#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "tkgd/gndiff/schedule.hpp"
#include "tkgd/numkit/params.hpp"
#include "tkgd/numkit/tape.hpp"

namespace tkgd::gndiff {

// x0-predictor: embeddings of the three (possibly masked) tokens and a
// sinusoidal step embedding, one tanh hidden layer, per-position logits over
// the combined vocabulary.
struct DenoiserParams {
  TokenLayout layout;
  std::size_t width = 128;
  std::size_t hidden = 128;
  Tensor token_embedding;  // vocab x width
  Tensor hidden_weight;    // (kSeqLen + 1) * width x hidden
  Tensor hidden_bias;      // 1 x hidden
  Tensor output_weight;    // hidden x kSeqLen * vocab
  Tensor output_bias;      // 1 x kSeqLen * vocab

  static DenoiserParams init(const TokenLayout& layout, std::size_t width, std::size_t hidden, Rng& rng) {
    DenoiserParams p;
    p.layout = layout;
    p.width = width;
    p.hidden = hidden;
    const std::size_t vocab = layout.vocab_size();
    p.token_embedding = uniform_tensor({vocab, width}, 1.0 / std::sqrt(static_cast<double>(width)), rng);
    p.hidden_weight = glorot((kSeqLen + 1) * width, hidden, rng);
    p.hidden_bias = Tensor({1, hidden});
    p.output_weight = glorot(hidden, kSeqLen * vocab, rng);
    p.output_bias = Tensor({1, kSeqLen * vocab});
    return p;
  }

  std::vector<ParamRef> refs() {
    return {{"denoiser.token_embedding", &token_embedding},
            {"denoiser.hidden_weight", &hidden_weight},
            {"denoiser.hidden_bias", &hidden_bias},
            {"denoiser.output_weight", &output_weight},
            {"denoiser.output_bias", &output_bias}};
  }

  std::vector<ConstParamRef> refs() const {
    return {{"denoiser.token_embedding", &token_embedding},
            {"denoiser.hidden_weight", &hidden_weight},
            {"denoiser.hidden_bias", &hidden_bias},
            {"denoiser.output_weight", &output_weight},
            {"denoiser.output_bias", &output_bias}};
  }
};

struct DenoiserVars {
  Var token_embedding, hidden_weight, hidden_bias, output_weight, output_bias;

  static DenoiserVars bind(Tape& tape, const DenoiserParams& p, bool trainable) {
    auto put = [&](const Tensor& t) { return trainable ? tape.leaf(t) : tape.constant(t); };
    return {put(p.token_embedding), put(p.hidden_weight), put(p.hidden_bias), put(p.output_weight),
            put(p.output_bias)};
  }

  std::vector<Var> all() const { return {token_embedding, hidden_weight, hidden_bias, output_weight, output_bias}; }
};

inline std::vector<double> time_embedding(std::size_t t, std::size_t width) {
  std::vector<double> out(width);
  const std::size_t half = width / 2;
  for (std::size_t k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    out[2 * k] = std::sin(static_cast<double>(t) * freq);
    out[2 * k + 1] = std::cos(static_cast<double>(t) * freq);
  }
  return out;
}

// 0 where (position, token) is a legal clean token, -inf elsewhere. The mask
// token is never a legal prediction.
inline Tensor role_mask(const TokenLayout& layout) {
  const std::size_t vocab = layout.vocab_size();
  Tensor m({1, kSeqLen * vocab}, -INFINITY);
  for (std::size_t i = 0; i < kSeqLen; ++i)
    for (Token tok = 0; tok < vocab; ++tok) {
      const bool ok = i == 1 ? layout.is_relation(tok) : layout.is_entity(tok);
      if (ok) m(0, i * vocab + tok) = 0.0;
    }
  return m;
}

// Logits of x0 given (x_t, t) for a batch; shape (kSeqLen * B) x vocab, row
// b * kSeqLen + i holds position i of sequence b.
inline Var denoise_x0(const DenoiserVars& vars, const DenoiserParams& p, std::span<const NodeSequence> xt,
                      std::span<const std::size_t> steps) {
  if (xt.size() != steps.size()) throw DimensionError("denoise_x0: one step per sequence required");
  Tape& tape = vars.token_embedding.tape();
  const std::size_t batch = xt.size();
  const std::size_t vocab = p.layout.vocab_size();

  std::vector<std::size_t> ids;
  ids.reserve(batch * kSeqLen);
  for (const auto& seq : xt)
    for (Token tok : seq) {
      if (tok >= vocab) throw DimensionError("denoise_x0: token out of vocabulary");
      ids.push_back(tok);
    }
  Var tokens = reshape(gather_rows(vars.token_embedding, ids), Shape{batch, kSeqLen * p.width});

  Tensor time({batch, p.width});
  for (std::size_t b = 0; b < batch; ++b) {
    const auto e = time_embedding(steps[b], p.width);
    std::copy(e.begin(), e.end(), time.row(b).begin());
  }
  Var input = concat_cols(tokens, tape.constant(std::move(time)));
  Var hidden = tanh(matmul(input, vars.hidden_weight) + vars.hidden_bias);
  Var logits = matmul(hidden, vars.output_weight) + vars.output_bias;
  logits = logits + tape.constant(role_mask(p.layout));
  return reshape(logits, Shape{batch * kSeqLen, vocab});
}

// Probabilities of x0 for one sequence, kSeqLen x vocab. No gradients.
inline Tensor predict_x0(const DenoiserParams& p, const NodeSequence& xt, std::size_t step) {
  Tape tape;
  auto vars = DenoiserVars::bind(tape, p, false);
  const NodeSequence seqs[1] = {xt};
  const std::size_t ts[1] = {step};
  return softmax_rows(denoise_x0(vars, p, seqs, ts)).value();
}

}  // namespace tkgd::gndiff
