#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "tkgd/corpus/periodic_index.hpp"
#include "tkgd/corpus/quad_store.hpp"
#include "tkgd/corpus/token_entropy.hpp"
#include "tkgd/dpcl.hpp"
#include "tkgd/engine/model.hpp"
#include "tkgd/gndiff/diffusion.hpp"

namespace tkgd::evaluate {

using corpus::EntityId;
using corpus::RelationId;
using corpus::Split;
using corpus::TimeIndex;
using json = nlohmann::json;

struct Metrics {
  std::size_t count = 0;
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;

  bool empty() const { return count == 0; }

  json to_json() const {
    return json{{"count", count}, {"empty", empty()}, {"mrr", mrr}, {"hits@1", hits1}, {"hits@3", hits3},
                {"hits@10", hits10}};
  }
};

inline Metrics metrics_from_ranks(std::span<const std::size_t> ranks) {
  Metrics m;
  m.count = ranks.size();
  if (ranks.empty()) return m;
  for (std::size_t r : ranks) {
    if (r == 0) throw DomainError("ranks are 1-based");
    m.mrr += 1.0 / static_cast<double>(r);
    m.hits1 += r <= 1;
    m.hits3 += r <= 3;
    m.hits10 += r <= 10;
  }
  const double n = static_cast<double>(ranks.size());
  m.mrr /= n;
  m.hits1 /= n;
  m.hits3 /= n;
  m.hits10 /= n;
  return m;
}

enum class Stratum { all, new_events, periodic };

inline const char* stratum_name(Stratum s) {
  switch (s) {
    case Stratum::all: return "all";
    case Stratum::new_events: return "new-events";
    case Stratum::periodic: return "periodic";
  }
  return "?";
}

inline Stratum parse_stratum(const std::string& s) {
  if (s == "all") return Stratum::all;
  if (s == "new" || s == "new-events") return Stratum::new_events;
  if (s == "periodic") return Stratum::periodic;
  throw ConfigError("unknown stratum '" + s + "' (expected all, new or periodic)");
}

// Which probability the ranks are computed from.
enum class Component { combined, diffusion, dpcl };

inline const char* component_name(Component c) {
  switch (c) {
    case Component::combined: return "DPCL-Diff";
    case Component::diffusion: return "GNDiff-only";
    case Component::dpcl: return "DPCL-only";
  }
  return "?";
}

// softmax over S_p + S_np ("sum") or max(S_p, S_np) ("max").
inline std::vector<double> p_dpcl(std::span<const double> periodic, std::span<const double> nonperiodic,
                                  const std::string& mode = "sum") {
  if (periodic.size() != nonperiodic.size()) throw DimensionError("p_dpcl: head lengths differ");
  std::vector<double> s(periodic.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = mode == "max" ? std::max(periodic[i], nonperiodic[i]) : periodic[i] + nonperiodic[i];
  const double top = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (double& v : s) z += (v = std::exp(v - top));
  for (double& v : s) v /= z;
  return s;
}

inline std::vector<double> combine(std::span<const double> diffusion, std::span<const double> dpcl) {
  if (diffusion.size() != dpcl.size())
    throw DimensionError("combine: lengths " + std::to_string(diffusion.size()) + " and " +
                         std::to_string(dpcl.size()) + " differ");
  std::vector<double> out(diffusion.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (diffusion[i] + dpcl[i]);
  return out;
}

// Hard routing: historical candidates take the DPCL probability, the rest
// the diffusion probability; renormalized.
inline std::vector<double> route_by_novelty(std::span<const double> diffusion, std::span<const double> dpcl,
                                            std::span<const EntityId> history) {
  if (diffusion.size() != dpcl.size()) throw DimensionError("route_by_novelty: lengths differ");
  std::vector<double> out(diffusion.begin(), diffusion.end());
  for (EntityId h : history) out.at(h) = dpcl[h];
  double z = 0.0;
  for (double v : out) z += v;
  if (z > 0.0)
    for (double& v : out) v /= z;
  return out;
}

// 1 + number of competitors scoring at least as high as the ground truth
// (ties count against it), skipping the ids in `filtered`.
inline std::size_t filtered_rank(std::span<const double> p, EntityId truth, std::span<const EntityId> filtered) {
  const double g = p[truth];
  std::size_t rank = 1;
  for (std::size_t o = 0; o < p.size(); ++o) {
    if (o == truth || !(p[o] >= g)) continue;
    if (std::find(filtered.begin(), filtered.end(), static_cast<EntityId>(o)) != filtered.end()) continue;
    ++rank;
  }
  return rank;
}

inline std::size_t raw_rank(std::span<const double> p, EntityId truth) { return filtered_rank(p, truth, {}); }

struct QueryResult {
  dpcl::Query query;
  std::size_t rank = 0;
  std::size_t raw_rank = 0;
  bool new_event = false;
};

struct RankReport {
  Stratum stratum = Stratum::all;
  Component component = Component::combined;
  std::vector<QueryResult> results;
  Metrics metrics;

  json to_json(bool per_query = false) const {
    json j = metrics.to_json();
    j["stratum"] = stratum_name(stratum);
    j["component"] = component_name(component);
    if (per_query) {
      json rows = json::array();
      for (const auto& r : results)
        rows.push_back({{"s", r.query.s}, {"r", r.query.r}, {"o", r.query.o}, {"t", r.query.t}, {"rank", r.rank},
                        {"raw_rank", r.raw_rank}, {"new_event", r.new_event}});
      j["queries"] = std::move(rows);
    }
    return j;
  }
};

inline RankReport make_report(Stratum stratum, Component component, std::vector<QueryResult> results) {
  RankReport rep{stratum, component, std::move(results), {}};
  std::vector<std::size_t> ranks;
  ranks.reserve(rep.results.size());
  for (const auto& r : rep.results) ranks.push_back(r.rank);
  rep.metrics = metrics_from_ranks(ranks);
  return rep;
}

struct EvalOptions {
  Component component = Component::combined;
  std::optional<std::size_t> chains;  // defaults to the model's C
  std::uint64_t seed = 0;
  bool greedy = false;
};

// Produces distributions over entities for (s, r, t) queries.
class Evaluator {
 public:
  Evaluator(const engine::Model& model, const corpus::QuadStore& store, const corpus::PeriodicIndex& index,
            const corpus::TokenEntropy& entropy)
      : model_(&model), store_(&store), index_(&index), entropy_(&entropy), layout_(corpus::TokenLayout::of(store)) {}

  // DPCL distributions for a list of queries, row per query.
  std::vector<std::vector<double>> dpcl_distributions(std::span<const dpcl::Query> queries) const {
    std::vector<std::vector<double>> out;
    out.reserve(queries.size());
    const auto opts = model_->config.score_options();
    constexpr std::size_t chunk = 256;
    for (std::size_t begin = 0; begin < queries.size(); begin += chunk) {
      const std::size_t end = std::min(queries.size(), begin + chunk);
      auto batch = dpcl::QueryBatch::build({queries.begin() + begin, queries.begin() + end}, *index_);
      const auto heads = dpcl::score_heads(model_->dpcl, batch, opts);
      for (std::size_t i = 0; i < batch.size(); ++i)
        out.push_back(p_dpcl(heads.periodic.row(i), heads.nonperiodic.row(i), model_->config.score_mode));
    }
    return out;
  }

  // Mean final tail distribution over C reverse chains. Chains for (s, r)
  // draw from seed.split(s, r), so the result does not depend on query order.
  std::vector<double> diffusion_distribution(EntityId s, RelationId r, const EvalOptions& opts) const {
    const std::size_t chains = opts.chains.value_or(model_->config.chains);
    const auto& cfg = model_->config;
    const auto sched =
        gndiff::build_query_schedule(*entropy_, layout_.entity(s), layout_.relation(r), cfg.steps, cfg.mu);
    gndiff::QueryPredictor predict(model_->denoiser, layout_.entity(s), layout_.relation(r), cfg.steps);
    const Rng rng = Rng(opts.seed).split(s, r);
    return gndiff::p_diff(sched, layout_, predict, layout_.entity(s), layout_.relation(r), chains, rng, opts.greedy);
  }

  // Final distributions for the requested component, honouring the model's
  // ablation and routing flags for the combined output.
  std::vector<std::vector<double>> distributions(std::span<const dpcl::Query> queries, const EvalOptions& opts) const {
    const auto& cfg = model_->config;
    bool use_dpcl = opts.component != Component::diffusion;
    bool use_diff = opts.component != Component::dpcl;
    if (opts.component == Component::combined) {
      if (cfg.no_gndiff) use_diff = false;
      if (cfg.no_dpcl) use_dpcl = false;
    }
    std::vector<std::vector<double>> dp;
    if (use_dpcl) dp = dpcl_distributions(queries);
    std::map<std::pair<EntityId, RelationId>, std::vector<double>> diff_cache;
    std::vector<std::vector<double>> out;
    out.reserve(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
      const auto& q = queries[i];
      const std::vector<double>* diff = nullptr;
      if (use_diff) {
        auto key = std::make_pair(q.s, q.r);
        auto it = diff_cache.find(key);
        if (it == diff_cache.end()) it = diff_cache.emplace(key, diffusion_distribution(q.s, q.r, opts)).first;
        diff = &it->second;
      }
      if (!use_diff) out.push_back(std::move(dp[i]));
      else if (!use_dpcl) out.push_back(*diff);
      else if (cfg.route_by_novelty) out.push_back(route_by_novelty(*diff, dp[i], index_->history(q.s, q.r, q.t)));
      else out.push_back(combine(*diff, dp[i]));
    }
    return out;
  }

  // Reports for `all` plus each requested stratum. Filtering removes other
  // objects true for the same (s, r, t) within the evaluated split.
  std::vector<RankReport> evaluate_split(Split split, std::span<const Stratum> strata,
                                         const EvalOptions& opts = {}) const {
    const auto quads = store_->split(split);
    std::vector<dpcl::Query> queries;
    queries.reserve(quads.size());
    std::map<std::tuple<EntityId, RelationId, TimeIndex>, std::vector<EntityId>> truths;
    for (const auto& q : quads) {
      queries.push_back({q.s, q.r, q.t, q.o});
      truths[{q.s, q.r, q.t}].push_back(q.o);
    }
    const auto dist = distributions(queries, opts);
    std::vector<QueryResult> results;
    results.reserve(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
      const auto& q = queries[i];
      const auto& same = truths.at({q.s, q.r, q.t});
      std::vector<EntityId> others;
      for (EntityId o : same)
        if (o != q.o) others.push_back(o);
      results.push_back({q, filtered_rank(dist[i], q.o, others), raw_rank(dist[i], q.o),
                         index_->is_new_event(q.s, q.r, q.o, q.t)});
    }
    std::vector<RankReport> reports;
    reports.push_back(make_report(Stratum::all, opts.component, results));
    for (Stratum s : strata) {
      if (s == Stratum::all) continue;
      std::vector<QueryResult> part;
      for (const auto& r : results)
        if (r.new_event == (s == Stratum::new_events)) part.push_back(r);
      reports.push_back(make_report(s, opts.component, std::move(part)));
    }
    return reports;
  }

 private:
  const engine::Model* model_;
  const corpus::QuadStore* store_;
  const corpus::PeriodicIndex* index_;
  const corpus::TokenEntropy* entropy_;
  corpus::TokenLayout layout_;
};

// One row per labelled report; columns follow the usual
// MRR / H@1 / H@3 / H@10 layout, in percent.
struct TableRow {
  std::string label;
  Metrics metrics;
};

inline std::string format_table(std::span<const TableRow> rows) {
  std::size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.label.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %8s %8s %8s %8s %6s\n", static_cast<int>(width), "Model", "MRR", "H@1", "H@3",
                "H@10", "n");
  out += buf;
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    if (m.empty()) {
      std::snprintf(buf, sizeof buf, "%-*s %8s %8s %8s %8s %6zu\n", static_cast<int>(width), r.label.c_str(), "-",
                    "-", "-", "-", m.count);
    } else {
      std::snprintf(buf, sizeof buf, "%-*s %8.2f %8.2f %8.2f %8.2f %6zu\n", static_cast<int>(width),
                    r.label.c_str(), 100 * m.mrr, 100 * m.hits1, 100 * m.hits3, 100 * m.hits10, m.count);
    }
    out += buf;
  }
  return out;
}

}  // namespace tkgd::evaluate
