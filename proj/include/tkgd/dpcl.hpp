#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tkgd/corpus/periodic_index.hpp"
#include "tkgd/errors.hpp"
#include "tkgd/geometry.hpp"
#include "tkgd/numkit/params.hpp"
#include "tkgd/numkit/tape.hpp"

namespace tkgd::dpcl {

using corpus::EntityId;
using corpus::RelationId;
using corpus::TimeIndex;
using geometry::Space;

struct DpclParams {
  Tensor entity;              // |E| x d
  Tensor relation;            // |R| x d
  Tensor periodic_weight;     // d x 2d
  Tensor periodic_bias;       // 1 x d
  Tensor nonperiodic_weight;  // d x 2d
  Tensor nonperiodic_bias;    // 1 x d
  Tensor contrast_weight;     // d x 2d
  Tensor contrast_bias;       // 1 x d

  std::size_t dim() const { return entity.cols(); }
  std::size_t num_entities() const { return entity.rows(); }
  std::size_t num_relations() const { return relation.rows(); }

  static DpclParams init(std::size_t num_entities, std::size_t num_relations, std::size_t dim, Rng& rng) {
    DpclParams p;
    const double emb = 0.1 / std::sqrt(static_cast<double>(dim));
    p.entity = uniform_tensor({num_entities, dim}, emb, rng);
    p.relation = uniform_tensor({num_relations, dim}, emb, rng);
    const double w = std::sqrt(6.0 / static_cast<double>(3 * dim));
    p.periodic_weight = uniform_tensor({dim, 2 * dim}, w, rng);
    p.periodic_bias = Tensor({1, dim});
    p.nonperiodic_weight = uniform_tensor({dim, 2 * dim}, w, rng);
    p.nonperiodic_bias = Tensor({1, dim});
    p.contrast_weight = uniform_tensor({dim, 2 * dim}, w, rng);
    p.contrast_bias = Tensor({1, dim});
    return p;
  }

  std::vector<ParamRef> refs() {
    return {{"dpcl.entity", &entity},
            {"dpcl.relation", &relation},
            {"dpcl.periodic_weight", &periodic_weight},
            {"dpcl.periodic_bias", &periodic_bias},
            {"dpcl.nonperiodic_weight", &nonperiodic_weight},
            {"dpcl.nonperiodic_bias", &nonperiodic_bias},
            {"dpcl.contrast_weight", &contrast_weight},
            {"dpcl.contrast_bias", &contrast_bias}};
  }

  std::vector<ConstParamRef> refs() const {
    std::vector<ConstParamRef> out;
    for (auto& r : const_cast<DpclParams*>(this)->refs()) out.push_back({r.name, r.tensor});
    return out;
  }
};

struct DpclVars {
  Var entity, relation, periodic_weight, periodic_bias, nonperiodic_weight, nonperiodic_bias, contrast_weight,
      contrast_bias;

  static DpclVars bind(Tape& tape, const DpclParams& p, bool trainable) {
    auto put = [&](const Tensor& t) { return trainable ? tape.leaf(t) : tape.constant(t); };
    return {put(p.entity),          put(p.relation),          put(p.periodic_weight), put(p.periodic_bias),
            put(p.nonperiodic_weight), put(p.nonperiodic_bias), put(p.contrast_weight), put(p.contrast_bias)};
  }

  std::vector<Var> all() const {
    return {entity, relation, periodic_weight, periodic_bias, nonperiodic_weight, nonperiodic_bias, contrast_weight,
            contrast_bias};
  }
};

struct Query {
  EntityId s = 0;
  RelationId r = 0;
  TimeIndex t = 0;
  EntityId o = 0;
};

// Queries with their signed frequency rows and periodic labels.
struct QueryBatch {
  std::vector<Query> queries;
  Tensor z;                 // B x |E|, entries +-lambda
  std::vector<int> labels;  // 1 when the ground truth is in the history

  std::size_t size() const { return queries.size(); }

  static QueryBatch build(std::vector<Query> queries, const corpus::PeriodicIndex& index) {
    QueryBatch b;
    const std::size_t n = index.num_entities();
    b.z = Tensor({queries.size(), n});
    b.labels.resize(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
      const Query& q = queries[i];
      const auto row = index.z_row(q.s, q.r, q.t);
      std::copy(row.begin(), row.end(), b.z.row(i).begin());
      b.labels[i] = row.at(q.o) > 0.0 ? 1 : 0;
    }
    b.queries = std::move(queries);
    return b;
  }

  std::vector<std::size_t> subjects() const {
    std::vector<std::size_t> v;
    for (const auto& q : queries) v.push_back(q.s);
    return v;
  }
  std::vector<std::size_t> relations() const {
    std::vector<std::size_t> v;
    for (const auto& q : queries) v.push_back(q.r);
    return v;
  }
  std::vector<std::size_t> objects() const {
    std::vector<std::size_t> v;
    for (const auto& q : queries) v.push_back(q.o);
    return v;
  }
};

// Which distance feeds each head; Hyp/Euc is periodic -> Poincare,
// non-periodic -> Euclidean.
struct MappingStrategy {
  Space periodic = Space::poincare;
  Space nonperiodic = Space::euclidean;

  static MappingStrategy parse(const std::string& name) {
    auto space = [&](const std::string& s) {
      if (s == "Hyp" || s == "hyp") return Space::poincare;
      if (s == "Euc" || s == "euc") return Space::euclidean;
      throw ConfigError("unknown mapping strategy '" + name + "'");
    };
    const auto slash = name.find('/');
    if (slash == std::string::npos) throw ConfigError("unknown mapping strategy '" + name + "'");
    return {space(name.substr(0, slash)), space(name.substr(slash + 1))};
  }

  std::string name() const {
    auto s = [](Space x) { return x == Space::poincare ? "Hyp" : "Euc"; };
    return std::string(s(periodic)) + "/" + s(nonperiodic);
  }

  friend bool operator==(const MappingStrategy&, const MappingStrategy&) = default;
};

struct ScoreOptions {
  MappingStrategy mapping;
  double distance_sign = 1.0;
};

namespace detail {

inline Var query_input(const DpclVars& v, const QueryBatch& batch) {
  const auto s = batch.subjects();
  const auto r = batch.relations();
  return concat_cols(gather_rows(v.entity, s), gather_rows(v.relation, r));
}

// tanh(W (s ++ r) + b) E^T
inline Var affine_scores(const DpclVars& v, const Var& input, const Var& weight, const Var& bias) {
  Var h = tanh(matmul(input, transpose(weight)) + bias);
  return matmul(h, transpose(v.entity));
}

inline Var distance_term(const DpclVars& v, const QueryBatch& batch, Space space) {
  const auto s = batch.subjects();
  if (space == Space::poincare) {
    Var ball = geometry::project_rows_to_ball(v.entity);
    return geometry::pairwise_distance(space, gather_rows(ball, s), ball);
  }
  return geometry::pairwise_distance(space, gather_rows(v.entity, s), v.entity);
}

}  // namespace detail

// Periodic head: tanh(W_p (s ++ r) + b_p) E^T + Z + sign * dist(s, o_i).
inline Var periodic_scores(const DpclVars& v, const QueryBatch& batch, const ScoreOptions& opts = {}) {
  Tape& tape = v.entity.tape();
  Var input = detail::query_input(v, batch);
  Var score = detail::affine_scores(v, input, v.periodic_weight, v.periodic_bias) + tape.constant(batch.z);
  return score + scale(detail::distance_term(v, batch, opts.mapping.periodic), opts.distance_sign);
}

// Non-periodic head: tanh(W_np (s ++ r) + b_np) E^T - Z + sign * dist(s, o_i).
inline Var nonperiodic_scores(const DpclVars& v, const QueryBatch& batch, const ScoreOptions& opts = {}) {
  Tape& tape = v.entity.tape();
  Var input = detail::query_input(v, batch);
  Var score = detail::affine_scores(v, input, v.nonperiodic_weight, v.nonperiodic_bias) - tape.constant(batch.z);
  return score + scale(detail::distance_term(v, batch, opts.mapping.nonperiodic), opts.distance_sign);
}

// -log(softmax(S_p)[gt] + softmax(S_np)[gt]), averaged over the batch. The
// argument of the log may exceed 1, so the loss can be negative.
inline Var ce_loss(const Var& periodic, const Var& nonperiodic, std::span<const std::size_t> truth) {
  if (periodic.shape() != nonperiodic.shape()) throw DimensionError("ce_loss: score shapes differ");
  Var both = softmax_rows(periodic) + softmax_rows(nonperiodic);
  Var picked = pick(both, truth);
  return scale(sum(log(picked)), -1.0 / static_cast<double>(truth.size()));
}

// L2-normalized contrastive query representation.
inline Var contrast_embedding(const DpclVars& v, const QueryBatch& batch) {
  Var input = detail::query_input(v, batch);
  return l2_normalize_rows(tanh(matmul(input, transpose(v.contrast_weight)) + v.contrast_bias));
}

// Supervised contrastive loss over unit vectors z with integer labels:
// sum over anchors q of -1/|P(q)| sum_{p in P(q)} log softmax_{a != q}(z_q.z_a / tau)[p],
// divided by the batch size. Anchors without positives contribute 0.
inline Var supcon_from_embeddings(const Var& z, std::span<const int> labels, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("contrastive temperature must be positive");
  const std::size_t n = labels.size();
  if (z.shape().size() != 2 || z.shape()[0] != n) throw DimensionError("supcon: one label per embedding row");
  Tape& tape = z.tape();
  if (n < 2) return tape.constant(Tensor::scalar(0.0));

  Var logits = scale(matmul(z, transpose(z)), 1.0 / temperature);
  Var flat = reshape(logits, Shape{n * n});
  // Off-diagonal entries of each row, in row-major order.
  std::vector<std::size_t> off;
  off.reserve(n * (n - 1));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) off.push_back(i * n + j);
  Var others = reshape(take(flat, off), Shape{n, n - 1});
  Var logp = log_softmax_rows(others);

  std::vector<std::size_t> idx;
  std::vector<double> w;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t positives = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && labels[j] == labels[i]) ++positives;
    if (positives == 0) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || labels[j] != labels[i]) continue;
      const std::size_t col = j < i ? j : j - 1;
      idx.push_back(i * (n - 1) + col);
      w.push_back(1.0 / static_cast<double>(positives));
    }
  }
  if (idx.empty()) return tape.constant(Tensor::scalar(0.0));
  Var picked = take(logp, std::move(idx)) * tape.constant(Tensor::vector(std::move(w)));
  return scale(sum(picked), -1.0 / static_cast<double>(n));
}

inline Var supcon_loss(const DpclVars& v, const QueryBatch& batch, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("contrastive temperature must be positive");
  return supcon_from_embeddings(contrast_embedding(v, batch), batch.labels, temperature);
}

// Plain-value scores for inference.
struct HeadScores {
  Tensor periodic;
  Tensor nonperiodic;
};

inline HeadScores score_heads(const DpclParams& params, const QueryBatch& batch, const ScoreOptions& opts = {}) {
  Tape tape;
  auto v = DpclVars::bind(tape, params, false);
  return {periodic_scores(v, batch, opts).value(), nonperiodic_scores(v, batch, opts).value()};
}

}  // namespace tkgd::dpcl
