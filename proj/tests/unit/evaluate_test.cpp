#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "tkgd/corpus/synthetic.hpp"
#include "tkgd/engine/model.hpp"
#include "tkgd/evaluate.hpp"

namespace tkgd::evaluate {
namespace {

TEST(Metrics, RanksOneTwoFour) {
  const std::vector<std::size_t> ranks{1, 2, 4};
  const auto m = metrics_from_ranks(ranks);
  EXPECT_NEAR(m.mrr, 0.58333, 1e-5);
  EXPECT_NEAR(m.mrr, (1.0 + 0.5 + 0.25) / 3.0, 1e-9);
  EXPECT_NEAR(m.hits1, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.hits3, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(m.hits10, 1.0);
  EXPECT_EQ(m.count, 3u);
}

TEST(Metrics, EmptyStratumIsFlagged) {
  const auto m = metrics_from_ranks({});
  EXPECT_TRUE(m.empty());
  EXPECT_TRUE(m.to_json().at("empty").get<bool>());
  const std::vector<std::size_t> zero{0};
  EXPECT_THROW(metrics_from_ranks(zero), DomainError);
}

TEST(Combine, AveragesTheTwoDistributions) {
  const std::vector<double> a{0.5, 0.3, 0.2}, b{0.1, 0.1, 0.8};
  const auto c = combine(a, b);
  EXPECT_NEAR(c[0], 0.3, 1e-15);
  EXPECT_NEAR(c[1], 0.2, 1e-15);
  EXPECT_NEAR(c[2], 0.5, 1e-15);
  const std::vector<double> shorter{1.0};
  EXPECT_THROW(combine(a, shorter), DimensionError);
}

TEST(PDpcl, SoftmaxOfSummedHeads) {
  const std::vector<double> sp{1.0, 0.0, -1.0}, snp{0.0, 1.0, 0.0};
  const auto p = p_dpcl(sp, snp);
  const double z = std::exp(1.0) + std::exp(1.0) + std::exp(-1.0);
  EXPECT_NEAR(p[0], std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(p[1], std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(p[2], std::exp(-1.0) / z, 1e-15);
  const auto q = p_dpcl(sp, snp, "max");
  const double zm = 2 * std::exp(1.0) + 1.0;
  EXPECT_NEAR(q[2], 1.0 / zm, 1e-15);
}

TEST(Routing, HistoryTakesDpclRestTakesDiffusion) {
  const std::vector<double> diff{0.4, 0.4, 0.2}, dp{0.1, 0.8, 0.1};
  const std::vector<EntityId> hist{1};
  const auto r = route_by_novelty(diff, dp, hist);
  EXPECT_NEAR(r[0], 0.4 / 1.4, 1e-15);
  EXPECT_NEAR(r[1], 0.8 / 1.4, 1e-15);
  EXPECT_NEAR(r[2], 0.2 / 1.4, 1e-15);
}

TEST(Rank, TiesCountAgainstTheTruth) {
  const std::vector<double> p{0.2, 0.2, 0.5, 0.1};
  EXPECT_EQ(raw_rank(p, 0), 3u);
  EXPECT_EQ(raw_rank(p, 2), 1u);
  const std::vector<EntityId> filtered{2};
  EXPECT_EQ(filtered_rank(p, 0, filtered), 2u);
}

// Sort all unfiltered candidates by probability, truth placed after its ties.
std::size_t oracle_rank(const std::vector<double>& p, EntityId truth, const std::vector<EntityId>& filtered) {
  std::vector<EntityId> cands;
  for (EntityId o = 0; o < p.size(); ++o)
    if (o == truth || std::find(filtered.begin(), filtered.end(), o) == filtered.end()) cands.push_back(o);
  std::sort(cands.begin(), cands.end(), [&](EntityId a, EntityId b) {
    if (p[a] != p[b]) return p[a] > p[b];
    return (a != truth) && (b == truth);
  });
  return static_cast<std::size_t>(std::find(cands.begin(), cands.end(), truth) - cands.begin()) + 1;
}

TEST(Rank, MatchesExhaustiveOracleOnSixEntities) {
  Rng rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> p(6);
    // Coarse values produce plenty of ties.
    for (double& v : p) v = static_cast<double>(rng.below(4)) / 4.0;
    const auto truth = static_cast<EntityId>(rng.below(6));
    std::vector<EntityId> filtered;
    for (EntityId o = 0; o < 6; ++o)
      if (o != truth && rng.uniform() < 0.3) filtered.push_back(o);
    const std::size_t f = filtered_rank(p, truth, filtered);
    ASSERT_EQ(f, oracle_rank(p, truth, filtered));
    ASSERT_EQ(raw_rank(p, truth), oracle_rank(p, truth, {}));
    ASSERT_LE(f, raw_rank(p, truth));
  }
}

TEST(Strata, ParseNames) {
  EXPECT_EQ(parse_stratum("all"), Stratum::all);
  EXPECT_EQ(parse_stratum("new"), Stratum::new_events);
  EXPECT_EQ(parse_stratum("new-events"), Stratum::new_events);
  EXPECT_EQ(parse_stratum("periodic"), Stratum::periodic);
  EXPECT_THROW(parse_stratum("old"), ConfigError);
}

engine::TrainConfig small_config() {
  engine::TrainConfig c;
  c.d_dpcl = 4;
  c.d_diff = 4;
  c.d_hidden = 6;
  c.steps = 5;
  c.chains = 3;
  c.seed = 2;
  return c;
}

struct Fixture {
  corpus::QuadStore store = corpus::random_corpus(9, 8, 3, 12, 300);
  engine::Model model = engine::Model::init(small_config(), store);
  corpus::PeriodicIndex index{store, 2.0};
  corpus::TokenEntropy entropy = corpus::TokenEntropy::from_store(store);
};

TEST(Evaluator, StrataPartitionTheSplit) {
  Fixture f;
  Evaluator ev(f.model, f.store, f.index, f.entropy);
  const std::vector<Stratum> strata{Stratum::new_events, Stratum::periodic};
  EvalOptions opts;
  opts.seed = 5;
  const auto reports = ev.evaluate_split(Split::test, strata, opts);
  ASSERT_EQ(reports.size(), 3u);
  EXPECT_EQ(reports[0].stratum, Stratum::all);
  EXPECT_EQ(reports[0].metrics.count, f.store.split(Split::test).size());
  EXPECT_EQ(reports[1].metrics.count + reports[2].metrics.count, reports[0].metrics.count);
  EXPECT_GT(reports[1].metrics.count, 0u);
  EXPECT_GT(reports[2].metrics.count, 0u);
  for (const auto& r : reports[1].results) EXPECT_TRUE(r.new_event);
  for (const auto& r : reports[2].results) EXPECT_FALSE(r.new_event);
  for (const auto& r : reports[0].results) {
    EXPECT_EQ(r.new_event, f.index.is_new_event(r.query.s, r.query.r, r.query.o, r.query.t));
    EXPECT_LE(r.rank, r.raw_rank);
    EXPECT_GE(r.rank, 1u);
  }
}

TEST(Evaluator, FiltersOnlySameTimestampTruths) {
  Fixture f;
  Evaluator ev(f.model, f.store, f.index, f.entropy);
  EvalOptions opts;
  opts.component = Component::dpcl;
  const auto report = ev.evaluate_split(Split::test, {}, opts).front();
  const auto quads = f.store.split(Split::test);
  for (std::size_t i = 0; i < quads.size(); ++i) {
    const auto& q = quads[i];
    const dpcl::Query query{q.s, q.r, q.t, q.o};
    const auto p = ev.dpcl_distributions(std::span(&query, 1)).front();
    std::vector<EntityId> others;
    for (const auto& x : quads)
      if (x.s == q.s && x.r == q.r && x.t == q.t && x.o != q.o) others.push_back(x.o);
    EXPECT_EQ(report.results[i].rank, oracle_rank(p, q.o, others));
  }
}

TEST(Evaluator, RepeatedEvaluationIsIdentical) {
  Fixture f;
  Evaluator ev(f.model, f.store, f.index, f.entropy);
  EvalOptions opts;
  opts.seed = 17;
  const auto a = ev.evaluate_split(Split::test, {}, opts).front();
  const auto b = ev.evaluate_split(Split::test, {}, opts).front();
  EXPECT_EQ(a.to_json(true), b.to_json(true));
  opts.seed = 18;
  Evaluator other(f.model, f.store, f.index, f.entropy);
  const auto c = other.evaluate_split(Split::test, {}, opts).front();
  EXPECT_EQ(c.metrics.count, a.metrics.count);
}

TEST(Evaluator, DistributionsAreNormalizedPerComponent) {
  Fixture f;
  Evaluator ev(f.model, f.store, f.index, f.entropy);
  std::vector<dpcl::Query> qs{{0, 1, 10, 2}, {3, 0, 11, 4}};
  for (Component c : {Component::combined, Component::diffusion, Component::dpcl}) {
    EvalOptions opts;
    opts.component = c;
    for (const auto& p : ev.distributions(qs, opts)) {
      ASSERT_EQ(p.size(), 8u);
      EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    }
  }
}

TEST(Evaluator, CombinedIsTheMeanOfComponents) {
  Fixture f;
  Evaluator ev(f.model, f.store, f.index, f.entropy);
  std::vector<dpcl::Query> qs{{1, 2, 9, 5}};
  EvalOptions opts;
  opts.seed = 4;
  const auto full = ev.distributions(qs, opts).front();
  opts.component = Component::diffusion;
  const auto diff = ev.distributions(qs, opts).front();
  opts.component = Component::dpcl;
  const auto dp = ev.distributions(qs, opts).front();
  for (std::size_t e = 0; e < full.size(); ++e) EXPECT_NEAR(full[e], 0.5 * (diff[e] + dp[e]), 1e-15);
}

TEST(Evaluator, AblatedModelUsesTheRemainingComponent) {
  Fixture f;
  f.model.config.no_gndiff = true;
  Evaluator ev(f.model, f.store, f.index, f.entropy);
  std::vector<dpcl::Query> qs{{1, 2, 9, 5}};
  const auto combined = ev.distributions(qs, {}).front();
  EvalOptions only;
  only.component = Component::dpcl;
  EXPECT_EQ(combined, ev.distributions(qs, only).front());
}

TEST(Table, FormatsPercentAndEmptyRows) {
  const std::vector<std::size_t> ranks{1, 2, 4};
  const std::vector<TableRow> rows{{"DPCL-Diff", metrics_from_ranks(ranks)}, {"GNDiff-only", Metrics{}}};
  const auto text = format_table(rows);
  EXPECT_NE(text.find("58.33"), std::string::npos) << text;
  EXPECT_NE(text.find("GNDiff-only"), std::string::npos);
  EXPECT_NE(text.find(" -"), std::string::npos);
}

}  // namespace
}  // namespace tkgd::evaluate
