#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "tkgd/corpus/quad_store.hpp"
#include "tkgd/errors.hpp"
#include "tkgd/numkit/rng.hpp"

namespace tkgd::corpus {

namespace detail {

inline Vocabulary numbered(const std::string& prefix, std::size_t n) {
  Vocabulary v;
  for (std::size_t i = 0; i < n; ++i) v.insert(prefix + std::to_string(i));
  return v;
}

inline std::vector<std::string> time_names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(std::to_string(i));
  return out;
}

}  // namespace detail

struct PlantedPeriodOptions {
  std::size_t entities = 20;
  std::size_t relations = 4;
  std::size_t timestamps = 60;
  std::size_t pairs = 40;
  std::size_t period = 5;
  TimeIndex valid_start = 48;
  TimeIndex test_start = 54;
};

// Every chosen (s, r) pair has one object and fires at the timestamps
// congruent to its phase modulo the period.
inline QuadStore planted_period_corpus(std::uint64_t seed, const PlantedPeriodOptions& o = {}) {
  if (o.pairs > o.entities * o.relations) throw ConfigError("more pairs than (s, r) combinations");
  if (o.period == 0 || o.entities < 2) throw ConfigError("degenerate planted corpus");
  Rng rng(seed);
  std::vector<std::pair<EntityId, RelationId>> all;
  for (EntityId s = 0; s < o.entities; ++s)
    for (RelationId r = 0; r < o.relations; ++r) all.emplace_back(s, r);
  rng.shuffle(std::span(all));
  all.resize(o.pairs);
  std::sort(all.begin(), all.end());

  std::vector<Quad> quads;
  for (const auto& [s, r] : all) {
    EntityId obj = static_cast<EntityId>(rng.below(o.entities - 1));
    if (obj >= s) ++obj;
    const auto phase = static_cast<TimeIndex>(rng.below(o.period));
    for (TimeIndex t = phase; t < o.timestamps; t += static_cast<TimeIndex>(o.period)) quads.push_back({s, r, obj, t});
  }
  return QuadStore(detail::numbered("e", o.entities), detail::numbered("r", o.relations),
                   detail::time_names(o.timestamps), std::move(quads), o.valid_start, o.test_start);
}

struct NoveltyOptions {
  std::size_t entities = 40;
  std::size_t relations = 4;
  std::size_t subjects = 16;
  std::size_t class_size = 10;    // candidate objects per relation
  std::size_t reserved = 3;       // class members a pair first uses in the test period
  std::size_t timestamps = 50;
  double fire_probability = 0.4;
  double novelty_rate = 0.5;      // chance a pre-test fact introduces an unused object
  TimeIndex valid_start = 40;
  TimeIndex test_start = 45;
};

// Relations draw objects from a fixed class. Each (s, r) pair keeps adding
// unused class members over time and otherwise repeats its own earlier
// objects. Test facts alternate globally between a repeat and a first
// occurrence taken from class members the pair kept in reserve, so half of
// the test quads are new events.
inline QuadStore novelty_corpus(std::uint64_t seed, const NoveltyOptions& o = {}) {
  if (o.class_size > o.entities || o.reserved >= o.class_size || o.subjects > o.entities)
    throw ConfigError("inconsistent novelty corpus options");
  Rng rng(seed);
  std::vector<std::vector<EntityId>> classes(o.relations);
  for (auto& c : classes) {
    std::vector<EntityId> ids(o.entities);
    for (EntityId e = 0; e < o.entities; ++e) ids[e] = e;
    rng.shuffle(std::span(ids));
    c.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(o.class_size));
  }
  struct Pair {
    EntityId s;
    RelationId r;
    std::vector<EntityId> unused, used, reserve;
  };
  std::vector<Pair> pairs;
  for (EntityId s = 0; s < o.subjects; ++s)
    for (RelationId r = 0; r < o.relations; ++r) {
      std::vector<EntityId> pool = classes[r];
      rng.shuffle(std::span(pool));
      Pair p{s, r, {}, {}, {}};
      p.reserve.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(o.reserved));
      p.unused.assign(pool.begin() + static_cast<std::ptrdiff_t>(o.reserved), pool.end());
      pairs.push_back(std::move(p));
    }
  std::vector<Quad> quads;
  bool novel_turn = false;
  for (TimeIndex t = 0; t < o.timestamps; ++t)
    for (Pair& p : pairs) {
      if (rng.uniform() >= o.fire_probability) continue;
      EntityId obj;
      if (t < o.test_start) {
        const bool introduce = p.used.empty() || (!p.unused.empty() && rng.uniform() < o.novelty_rate);
        if (introduce && !p.unused.empty()) {
          obj = p.unused.back();
          p.unused.pop_back();
          p.used.push_back(obj);
        } else {
          obj = p.used[rng.below(p.used.size())];
        }
      } else {
        if (p.used.empty()) continue;
        novel_turn = !novel_turn;
        if (novel_turn && !p.reserve.empty()) {
          obj = p.reserve.back();
          p.reserve.pop_back();
        } else {
          novel_turn = false;
          obj = p.used[rng.below(p.used.size())];
        }
      }
      quads.push_back({p.s, p.r, obj, t});
    }
  return QuadStore(detail::numbered("e", o.entities), detail::numbered("r", o.relations),
                   detail::time_names(o.timestamps), std::move(quads), o.valid_start, o.test_start);
}

// Uniformly random quads; for fixtures and property tests.
inline QuadStore random_corpus(std::uint64_t seed, std::size_t entities, std::size_t relations, std::size_t timestamps,
                               std::size_t count) {
  if (timestamps < 3) throw ConfigError("random corpus needs at least 3 timestamps");
  Rng rng(seed);
  std::vector<Quad> quads;
  quads.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    quads.push_back({static_cast<EntityId>(rng.below(entities)), static_cast<RelationId>(rng.below(relations)),
                     static_cast<EntityId>(rng.below(entities)), static_cast<TimeIndex>(rng.below(timestamps))});
  const auto [b1, b2] = quantile_boundaries(quads, timestamps);
  return QuadStore(detail::numbered("e", entities), detail::numbered("r", relations), detail::time_names(timestamps),
                   std::move(quads), b1, b2);
}

}  // namespace tkgd::corpus
