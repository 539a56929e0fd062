#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tkgd/errors.hpp"

namespace tkgd::corpus {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;
using TimeIndex = std::uint32_t;

struct Quad {
  EntityId s = 0;
  RelationId r = 0;
  EntityId o = 0;
  TimeIndex t = 0;

  friend bool operator==(const Quad&, const Quad&) = default;
};

enum class Split { train, valid, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

// Bidirectional string <-> dense id map.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> names) {
    for (auto& n : names) insert(std::move(n));
  }

  std::uint32_t insert(std::string name) {
    auto [it, inserted] = ids_.try_emplace(name, static_cast<std::uint32_t>(names_.size()));
    if (inserted) names_.push_back(std::move(name));
    return it->second;
  }

  bool contains(std::string_view name) const { return ids_.count(std::string(name)) != 0; }

  std::uint32_t id_of(std::string_view name) const {
    auto it = ids_.find(std::string(name));
    if (it == ids_.end()) throw DataError("unknown vocabulary entry '" + std::string(name) + "'");
    return it->second;
  }

  const std::string& name_of(std::uint32_t id) const { return names_.at(id); }
  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> ids_;
};

// Time-sorted quadruples with vocabularies and a contiguous-in-time split.
// Train holds timestamps [0, valid_start), valid [valid_start, test_start),
// test [test_start, num_timestamps).
class QuadStore {
 public:
  QuadStore() = default;

  QuadStore(Vocabulary entities, Vocabulary relations, std::vector<std::string> timestamps,
            std::vector<Quad> quads, TimeIndex valid_start, TimeIndex test_start)
      : entities_(std::move(entities)),
        relations_(std::move(relations)),
        timestamps_(std::move(timestamps)),
        quads_(std::move(quads)),
        valid_start_(valid_start),
        test_start_(test_start) {
    if (valid_start_ > test_start_ || test_start_ > timestamps_.size())
      throw DataError("split boundaries out of order");
    for (const Quad& q : quads_) {
      if (q.s >= entities_.size() || q.o >= entities_.size() || q.r >= relations_.size() ||
          q.t >= timestamps_.size())
        throw DataError("quad id out of vocabulary range");
    }
    std::stable_sort(quads_.begin(), quads_.end(),
                     [](const Quad& a, const Quad& b) { return a.t < b.t; });
    auto first_at = [&](TimeIndex t) {
      return static_cast<std::size_t>(
          std::lower_bound(quads_.begin(), quads_.end(), t,
                           [](const Quad& q, TimeIndex v) { return q.t < v; }) -
          quads_.begin());
    };
    train_end_ = first_at(valid_start_);
    valid_end_ = first_at(test_start_);
  }

  const Vocabulary& entities() const noexcept { return entities_; }
  const Vocabulary& relations() const noexcept { return relations_; }
  const std::vector<std::string>& timestamps() const noexcept { return timestamps_; }
  std::size_t num_entities() const noexcept { return entities_.size(); }
  std::size_t num_relations() const noexcept { return relations_.size(); }
  std::size_t num_timestamps() const noexcept { return timestamps_.size(); }

  std::span<const Quad> quads() const noexcept { return quads_; }

  std::span<const Quad> split(Split s) const {
    switch (s) {
      case Split::train: return {quads_.data(), train_end_};
      case Split::valid: return {quads_.data() + train_end_, valid_end_ - train_end_};
      case Split::test: return {quads_.data() + valid_end_, quads_.size() - valid_end_};
    }
    return {};
  }

  Split split_of(TimeIndex t) const {
    if (t < valid_start_) return Split::train;
    if (t < test_start_) return Split::valid;
    return Split::test;
  }

  TimeIndex valid_start() const noexcept { return valid_start_; }
  TimeIndex test_start() const noexcept { return test_start_; }
  std::size_t train_end() const noexcept { return train_end_; }
  std::size_t valid_end() const noexcept { return valid_end_; }

 private:
  Vocabulary entities_;
  Vocabulary relations_;
  std::vector<std::string> timestamps_;
  std::vector<Quad> quads_;
  TimeIndex valid_start_ = 0;
  TimeIndex test_start_ = 0;
  std::size_t train_end_ = 0;
  std::size_t valid_end_ = 0;
};

namespace detail {

struct RawQuad {
  std::string s, r, o, t;
};

inline bool parse_int(std::string_view s, long long& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

// Numeric order when every name is an integer, lexicographic otherwise.
inline std::vector<std::string> sorted_names(std::vector<std::string> names) {
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  bool numeric = true;
  long long v = 0;
  for (const auto& n : names) numeric = numeric && parse_int(n, v);
  if (numeric) {
    std::sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
      long long x = 0, y = 0;
      parse_int(a, x);
      parse_int(b, y);
      return x < y;
    });
  }
  return names;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  if (line.find('\t') != std::string_view::npos) {
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string_view::npos ? line.npos : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
  } else {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ')) ++i;
      const std::size_t start = i;
      while (i < line.size() && line[i] != ' ') ++i;
      if (i > start) fields.push_back(line.substr(start, i - start));
    }
  }
  return fields;
}

inline std::vector<RawQuad> read_raw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<RawQuad> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto fields = split_fields(line);
    if (fields.size() != 4 && fields.size() != 5)
      throw ParseError(path.string(), lineno,
                       "expected 4 or 5 tab-separated fields, found " + std::to_string(fields.size()));
    for (std::size_t i = 0; i < 4; ++i)
      if (fields[i].empty()) throw ParseError(path.string(), lineno, "empty field");
    out.push_back({std::string(fields[0]), std::string(fields[1]), std::string(fields[2]),
                   std::string(fields[3])});
  }
  return out;
}

struct Encoded {
  Vocabulary entities, relations;
  std::vector<std::string> timestamps;
  std::unordered_map<std::string, TimeIndex> time_ids;
};

inline Encoded encode(const std::vector<const std::vector<RawQuad>*>& parts) {
  std::vector<std::string> ents, rels, times;
  for (const auto* part : parts)
    for (const RawQuad& q : *part) {
      ents.push_back(q.s);
      ents.push_back(q.o);
      rels.push_back(q.r);
      times.push_back(q.t);
    }
  Encoded e;
  e.entities = Vocabulary(sorted_names(std::move(ents)));
  e.relations = Vocabulary(sorted_names(std::move(rels)));
  e.timestamps = sorted_names(std::move(times));
  for (std::size_t i = 0; i < e.timestamps.size(); ++i)
    e.time_ids.emplace(e.timestamps[i], static_cast<TimeIndex>(i));
  return e;
}

inline std::vector<Quad> to_quads(const Encoded& e, const std::vector<RawQuad>& raw) {
  std::vector<Quad> out;
  out.reserve(raw.size());
  for (const RawQuad& q : raw)
    out.push_back({e.entities.id_of(q.s), e.relations.id_of(q.r), e.entities.id_of(q.o),
                   e.time_ids.at(q.t)});
  return out;
}

}  // namespace detail

// Boundaries at the 80% / 90% cumulative quad-count quantiles over distinct
// timestamps. Each split receives at least one timestamp.
inline std::pair<TimeIndex, TimeIndex> quantile_boundaries(std::span<const Quad> quads,
                                                           std::size_t num_timestamps,
                                                           double train_frac = 0.8,
                                                           double valid_frac = 0.1) {
  if (num_timestamps < 3)
    throw DataError("need at least 3 distinct timestamps to split, found " +
                    std::to_string(num_timestamps));
  std::vector<std::size_t> per_time(num_timestamps, 0);
  for (const Quad& q : quads) ++per_time[q.t];
  const double n = static_cast<double>(quads.size());
  auto boundary = [&](double frac) {
    std::size_t before = 0;
    for (std::size_t t = 0; t < num_timestamps; ++t) {
      if (static_cast<double>(before) >= frac * n) return static_cast<TimeIndex>(t);
      before += per_time[t];
    }
    return static_cast<TimeIndex>(num_timestamps);
  };
  TimeIndex b1 = boundary(train_frac);
  TimeIndex b2 = boundary(train_frac + valid_frac);
  const auto nt = static_cast<TimeIndex>(num_timestamps);
  b1 = std::clamp<TimeIndex>(b1, 1, nt - 2);
  b2 = std::clamp<TimeIndex>(b2, b1 + 1, nt - 1);
  return {b1, b2};
}

// One file, split 80/10/10 by timestamp.
inline QuadStore load_quads(const std::filesystem::path& path) {
  auto raw = detail::read_raw(path);
  if (raw.empty()) throw EmptyDatasetError("'" + path.string() + "' contains no quads");
  auto enc = detail::encode({&raw});
  auto quads = detail::to_quads(enc, raw);
  const auto [b1, b2] = quantile_boundaries(quads, enc.timestamps.size());
  return QuadStore(std::move(enc.entities), std::move(enc.relations), std::move(enc.timestamps),
                   std::move(quads), b1, b2);
}

// Explicit train / valid / test files. The splits must be contiguous in time.
inline QuadStore load_quads(const std::filesystem::path& train, const std::filesystem::path& valid,
                            const std::filesystem::path& test) {
  auto r_train = detail::read_raw(train);
  auto r_valid = detail::read_raw(valid);
  auto r_test = detail::read_raw(test);
  if (r_train.empty()) throw EmptyDatasetError("'" + train.string() + "' contains no quads");
  if (r_valid.empty()) throw EmptyDatasetError("'" + valid.string() + "' contains no quads");
  if (r_test.empty()) throw EmptyDatasetError("'" + test.string() + "' contains no quads");
  auto enc = detail::encode({&r_train, &r_valid, &r_test});
  auto q_train = detail::to_quads(enc, r_train);
  auto q_valid = detail::to_quads(enc, r_valid);
  auto q_test = detail::to_quads(enc, r_test);
  auto tmin = [](const std::vector<Quad>& q) {
    TimeIndex m = q.front().t;
    for (const Quad& x : q) m = std::min(m, x.t);
    return m;
  };
  auto tmax = [](const std::vector<Quad>& q) {
    TimeIndex m = q.front().t;
    for (const Quad& x : q) m = std::max(m, x.t);
    return m;
  };
  if (!(tmax(q_train) < tmin(q_valid) && tmax(q_valid) < tmin(q_test)))
    throw DataError("train/valid/test files are not contiguous in time");
  const TimeIndex b1 = tmin(q_valid), b2 = tmin(q_test);
  std::vector<Quad> all = std::move(q_train);
  all.insert(all.end(), q_valid.begin(), q_valid.end());
  all.insert(all.end(), q_test.begin(), q_test.end());
  return QuadStore(std::move(enc.entities), std::move(enc.relations), std::move(enc.timestamps),
                   std::move(all), b1, b2);
}

// Keeps the earliest occurrence of each distinct (s, r, o) triple. Timestamps
// and split boundaries are unchanged.
inline QuadStore extract_new_events(const QuadStore& store) {
  struct Key {
    EntityId s;
    RelationId r;
    EntityId o;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
      std::uint64_t h = (static_cast<std::uint64_t>(k.s) << 32) ^ (static_cast<std::uint64_t>(k.r) << 16) ^ k.o;
      h ^= h >> 33;
      h *= 0xff51afd7ed558ccdULL;
      return static_cast<std::size_t>(h ^ (h >> 33));
    }
  };
  std::unordered_map<Key, bool, KeyHash> seen;
  std::vector<Quad> kept;
  for (const Quad& q : store.quads())
    if (seen.try_emplace(Key{q.s, q.r, q.o}, true).second) kept.push_back(q);
  return QuadStore(store.entities(), store.relations(), store.timestamps(), std::move(kept),
                   store.valid_start(), store.test_start());
}

}  // namespace tkgd::corpus
