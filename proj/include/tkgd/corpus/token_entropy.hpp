#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tkgd/corpus/quad_store.hpp"
#include "tkgd/errors.hpp"

namespace tkgd::corpus {

using Token = std::uint32_t;

// Combined diffusion vocabulary: entities, then relations, then the mask.
struct TokenLayout {
  std::size_t num_entities = 0;
  std::size_t num_relations = 0;

  Token entity(EntityId e) const { return static_cast<Token>(e); }
  Token relation(RelationId r) const { return static_cast<Token>(num_entities + r); }
  Token mask() const { return static_cast<Token>(num_entities + num_relations); }
  std::size_t vocab_size() const { return num_entities + num_relations + 1; }

  bool is_entity(Token t) const { return t < num_entities; }
  bool is_relation(Token t) const { return t >= num_entities && t < num_entities + num_relations; }
  bool is_mask(Token t) const { return t == mask(); }

  static TokenLayout of(const QuadStore& store) { return {store.num_entities(), store.num_relations()}; }
};

// H(x) = -log(count(x) / total) with counts over all three positions of the
// training quads. Unseen tokens are smoothed to count 1.
class TokenEntropy {
 public:
  TokenEntropy() = default;

  static TokenEntropy from_counts(std::vector<std::uint64_t> counts, std::uint64_t total_positions) {
    if (total_positions == 0) throw DataError("token entropy needs a non-empty corpus");
    TokenEntropy te;
    te.counts_ = std::move(counts);
    te.total_ = total_positions;
    te.entropy_.resize(te.counts_.size());
    for (std::size_t i = 0; i < te.counts_.size(); ++i) {
      const double c = static_cast<double>(te.counts_[i] ? te.counts_[i] : 1);
      te.entropy_[i] = -std::log(c / static_cast<double>(total_positions));
    }
    return te;
  }

  static TokenEntropy from_store(const QuadStore& store) {
    const auto train = store.split(Split::train);
    if (train.empty()) throw EmptyDatasetError("token entropy needs a non-empty training split");
    const TokenLayout layout = TokenLayout::of(store);
    std::vector<std::uint64_t> counts(layout.vocab_size(), 0);
    for (const Quad& q : train) {
      ++counts[layout.entity(q.s)];
      ++counts[layout.relation(q.r)];
      ++counts[layout.entity(q.o)];
    }
    TokenEntropy te = from_counts(std::move(counts), 3 * train.size());
    double acc = 0.0;
    for (const Quad& q : train) acc += te.entropy(layout.entity(q.o));
    te.object_entropy_ = acc / static_cast<double>(train.size());
    return te;
  }

  double entropy(Token t) const { return entropy_.at(t); }
  std::uint64_t count(Token t) const { return counts_.at(t); }
  std::uint64_t total_positions() const noexcept { return total_; }
  std::size_t size() const noexcept { return entropy_.size(); }

  // Mean entropy of the object token over training quads. Stands in for the
  // unknown tail token when building a schedule at inference time.
  double expected_object_entropy() const noexcept { return object_entropy_; }

 private:
  std::vector<std::uint64_t> counts_;
  std::vector<double> entropy_;
  std::uint64_t total_ = 0;
  double object_entropy_ = 0.0;
};

}  // namespace tkgd::corpus
