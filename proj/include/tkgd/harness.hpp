#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tkgd/corpus/quad_store.hpp"
#include "tkgd/engine/trainer.hpp"
#include "tkgd/evaluate.hpp"

namespace tkgd::evaluate {

struct HarnessRow {
  std::string label;
  engine::TrainConfig config;
  std::vector<RankReport> reports;  // `all` first, then requested strata

  const Metrics& metrics() const { return reports.front().metrics; }
};

using ProgressFn = std::function<void(const std::string& label, const engine::EpochMetrics&)>;

// Trains one configuration from scratch and evaluates its best-validation
// parameters on `split`.
inline HarnessRow train_and_evaluate(const std::string& label, const engine::TrainConfig& config,
                                     const corpus::QuadStore& store, Split split,
                                     std::span<const Stratum> strata = {}, const ProgressFn& progress = {}) {
  engine::Trainer trainer(store, config);
  trainer.run([&](const engine::EpochMetrics& m, const engine::Trainer&) {
    if (progress) progress(label, m);
  });
  Evaluator ev(trainer.best_model(), store, trainer.index(), trainer.entropy());
  EvalOptions opts;
  opts.seed = config.seed;
  return {label, config, ev.evaluate_split(split, strata, opts)};
}

inline const std::vector<std::string>& mapping_strategies() {
  static const std::vector<std::string> names = {"Hyp/Euc", "Euc/Hyp", "Hyp/Hyp", "Euc/Euc"};
  return names;
}

// DPCL alone under each distance assignment, one shared seed.
inline std::vector<HarnessRow> mapping_strategy_harness(const engine::TrainConfig& base, const corpus::QuadStore& store,
                                                        Split split, std::span<const Stratum> strata = {},
                                                        const ProgressFn& progress = {}) {
  std::vector<HarnessRow> rows;
  for (const auto& name : mapping_strategies()) {
    engine::TrainConfig c = base;
    c.no_gndiff = true;
    c.no_dpcl = false;
    c.mapping_strategy = name;
    rows.push_back(train_and_evaluate(name, c, store, split, strata, progress));
  }
  return rows;
}

// full, no_gndiff, no_dpcl, then the four mapping strategies.
inline std::vector<HarnessRow> ablation_table(const engine::TrainConfig& base, const corpus::QuadStore& store,
                                              Split split, std::span<const Stratum> strata = {},
                                              const ProgressFn& progress = {}) {
  std::vector<HarnessRow> rows;
  engine::TrainConfig full = base;
  full.no_gndiff = full.no_dpcl = false;
  rows.push_back(train_and_evaluate("full", full, store, split, strata, progress));
  engine::TrainConfig a = full;
  a.no_gndiff = true;
  rows.push_back(train_and_evaluate("no_gndiff", a, store, split, strata, progress));
  engine::TrainConfig b = full;
  b.no_dpcl = true;
  rows.push_back(train_and_evaluate("no_dpcl", b, store, split, strata, progress));
  for (auto& r : mapping_strategy_harness(full, store, split, strata, progress)) rows.push_back(std::move(r));
  return rows;
}

inline std::vector<double> sweep_grid(const std::string& param) {
  if (param == "alpha") return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  if (param == "lambda") return {1, 2, 3, 4, 5, 6, 7, 8};
  throw ConfigError("unknown sweep parameter '" + param + "' (expected alpha or lambda)");
}

inline std::vector<HarnessRow> sweep(const engine::TrainConfig& base, const corpus::QuadStore& store,
                                     const std::string& param, Split split, const ProgressFn& progress = {}) {
  std::vector<HarnessRow> rows;
  for (double v : sweep_grid(param)) {
    engine::TrainConfig c = base;
    if (param == "alpha") c.alpha = v;
    else c.lambda = v;
    char label[32];
    std::snprintf(label, sizeof label, "%g", v);
    rows.push_back(train_and_evaluate(label, c, store, split, {}, progress));
  }
  return rows;
}

}  // namespace tkgd::evaluate
