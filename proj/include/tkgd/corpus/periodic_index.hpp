#pragma once

#include <algorithm>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "tkgd/corpus/quad_store.hpp"
#include "tkgd/errors.hpp"

namespace tkgd::corpus {

// Set of splits whose facts feed the history.
struct SplitSet {
  bool train = true;
  bool valid = true;
  bool test = true;

  static SplitSet all() { return {}; }
  static SplitSet train_only() { return {true, false, false}; }
  bool contains(Split s) const {
    return s == Split::train ? train : s == Split::valid ? valid : test;
  }
};

// For every (s, r) pair, the objects seen with it and the first timestamp
// each was seen. History at time t is the set of objects whose first
// occurrence is strictly before t.
class PeriodicIndex {
 public:
  PeriodicIndex(const QuadStore& store, double lambda, SplitSet scope = SplitSet::all())
      : lambda_(lambda), num_entities_(store.num_entities()) {
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
    std::unordered_map<std::uint64_t, std::unordered_map<EntityId, TimeIndex>> first;
    for (const Quad& q : store.quads()) {
      if (!scope.contains(store.split_of(q.t))) continue;
      auto& objs = first[key(q.s, q.r)];
      auto [it, inserted] = objs.try_emplace(q.o, q.t);
      if (!inserted) it->second = std::min(it->second, q.t);
    }
    for (auto& [k, objs] : first) {
      auto& list = by_pair_[k];
      list.reserve(objs.size());
      for (const auto& [o, t] : objs) list.push_back({t, o});
      std::sort(list.begin(), list.end(), [](const Entry& a, const Entry& b) {
        return a.first_time != b.first_time ? a.first_time < b.first_time : a.object < b.object;
      });
    }
  }

  double lambda() const noexcept { return lambda_; }
  std::size_t num_entities() const noexcept { return num_entities_; }

  // Objects o with some (s, r, o, k), k < t, in scope; ascending ids.
  std::vector<EntityId> history(EntityId s, RelationId r, TimeIndex t) const {
    std::vector<EntityId> out;
    for (const Entry* e = begin(s, r), *end = prefix_end(s, r, t); e != end; ++e) out.push_back(e->object);
    std::sort(out.begin(), out.end());
    return out;
  }

  bool in_history(EntityId s, RelationId r, TimeIndex t, EntityId o) const {
    for (const Entry* e = begin(s, r), *end = prefix_end(s, r, t); e != end; ++e)
      if (e->object == o) return true;
    return false;
  }

  double z(EntityId s, RelationId r, TimeIndex t, EntityId o) const {
    return in_history(s, r, t, o) ? lambda_ : -lambda_;
  }

  // Z over every entity id.
  std::vector<double> z_row(EntityId s, RelationId r, TimeIndex t) const {
    std::vector<double> row(num_entities_, -lambda_);
    for (const Entry* e = begin(s, r), *end = prefix_end(s, r, t); e != end; ++e) row[e->object] = lambda_;
    return row;
  }

  bool is_new_event(EntityId s, RelationId r, EntityId o, TimeIndex t) const {
    return !in_history(s, r, t, o);
  }

 private:
  struct Entry {
    TimeIndex first_time;
    EntityId object;
  };

  static std::uint64_t key(EntityId s, RelationId r) {
    return (static_cast<std::uint64_t>(s) << 32) | r;
  }

  const std::vector<Entry>* list(EntityId s, RelationId r) const {
    auto it = by_pair_.find(key(s, r));
    return it == by_pair_.end() ? nullptr : &it->second;
  }

  const Entry* begin(EntityId s, RelationId r) const {
    const auto* l = list(s, r);
    return l ? l->data() : nullptr;
  }

  const Entry* prefix_end(EntityId s, RelationId r, TimeIndex t) const {
    const auto* l = list(s, r);
    if (!l) return nullptr;
    auto it = std::lower_bound(l->begin(), l->end(), t,
                               [](const Entry& e, TimeIndex v) { return e.first_time < v; });
    return l->data() + (it - l->begin());
  }

  double lambda_;
  std::size_t num_entities_;
  std::unordered_map<std::uint64_t, std::vector<Entry>> by_pair_;
};

}  // namespace tkgd::corpus
