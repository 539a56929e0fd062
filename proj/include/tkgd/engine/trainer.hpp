#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tkgd/corpus/periodic_index.hpp"
#include "tkgd/corpus/quad_store.hpp"
#include "tkgd/corpus/token_entropy.hpp"
#include "tkgd/dpcl.hpp"
#include "tkgd/engine/checkpoint.hpp"
#include "tkgd/engine/config.hpp"
#include "tkgd/engine/model.hpp"
#include "tkgd/evaluate.hpp"
#include "tkgd/geometry.hpp"
#include "tkgd/gndiff/diffusion.hpp"

namespace tkgd::engine {

struct StepLosses {
  double total = 0.0;
  double ce = 0.0;
  double sup = 0.0;
  double diff = 0.0;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  std::size_t stage = 1;
  double loss_total = 0.0;
  double loss_ce = 0.0;
  double loss_sup = 0.0;
  double loss_diff = 0.0;
  double val_mrr = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;

  json to_json() const {
    json j{{"epoch", epoch},         {"stage", stage},         {"loss_total", loss_total},
           {"loss_ce", loss_ce},     {"loss_sup", loss_sup},   {"loss_diff", loss_diff},
           {"wall_seconds", wall_seconds}};
    j["val_mrr"] = std::isnan(val_mrr) ? json(nullptr) : json(val_mrr);
    return j;
  }
};

// Fixed stream ids under the run's root generator.
namespace streams {
inline constexpr std::uint64_t shuffle = 1;
inline constexpr std::uint64_t batch = 2;
inline constexpr std::uint64_t validation = 3;
}  // namespace streams

class Trainer {
 public:
  using EpochCallback = std::function<void(const EpochMetrics&, const Trainer&)>;

  Trainer(const corpus::QuadStore& store, const TrainConfig& config)
      : store_(&store),
        index_(store, config.lambda),
        entropy_(corpus::TokenEntropy::from_store(store)),
        layout_(corpus::TokenLayout::of(store)) {
    config.validate();
    ckpt_.model = Model::init(config, store);
    ckpt_.adam = Adam(AdamHyper{config.lr});
    const Rng root(config.seed);
    ckpt_.state.rng_key = root.key();
    ckpt_.state.rng_counter = root.counter();
    best_ = ckpt_.model;
  }

  // Resumes from a checkpoint written by save_checkpoint(checkpoint()).
  // `best` restores the best-validation parameters saved alongside it.
  Trainer(const corpus::QuadStore& store, Checkpoint ckpt, std::optional<Model> best = std::nullopt)
      : store_(&store),
        index_(store, ckpt.model.config.lambda),
        entropy_(corpus::TokenEntropy::from_store(store)),
        layout_(corpus::TokenLayout::of(store)),
        ckpt_(std::move(ckpt)) {
    if (ckpt_.model.dpcl.num_entities() != store.num_entities() ||
        ckpt_.model.dpcl.num_relations() != store.num_relations())
      throw DataError("checkpoint vocabulary does not match the dataset");
    best_ = best ? std::move(*best) : ckpt_.model;
  }

  const TrainConfig& config() const { return ckpt_.model.config; }
  const Checkpoint& checkpoint() const { return ckpt_; }
  const Model& model() const { return ckpt_.model; }
  Model& model() { return ckpt_.model; }
  // Parameters at the epoch with the best validation MRR seen by this
  // trainer (the current ones if no validation has run yet).
  const Model& best_model() const { return best_; }
  const corpus::PeriodicIndex& index() const { return index_; }
  const corpus::TokenEntropy& entropy() const { return entropy_; }
  bool done() const { return ckpt_.state.epoch >= config().total_epochs(); }

  // Joint loss of one batch on a fresh tape, backward, Adam and
  // re-projection. `second_stage` adds the contrastive term.
  StepLosses step(std::span<const corpus::Quad> quads, Rng& rng, bool second_stage) {
    const TrainConfig& cfg = config();
    Model& m = ckpt_.model;
    const double a = cfg.effective_alpha();
    const bool train_dpcl = !cfg.no_dpcl;
    const bool train_diff = !cfg.no_gndiff;

    Tape tape;
    StepLosses out;
    std::vector<Var> terms;
    dpcl::DpclVars dv;
    gndiff::DenoiserVars nv;
    if (train_dpcl) {
      dv = dpcl::DpclVars::bind(tape, m.dpcl, true);
      std::vector<dpcl::Query> qs;
      qs.reserve(quads.size());
      for (const auto& q : quads) qs.push_back({q.s, q.r, q.t, q.o});
      const auto batch = dpcl::QueryBatch::build(std::move(qs), index_);
      const auto opts = cfg.score_options();
      const auto truth = batch.objects();
      Var ce = dpcl::ce_loss(dpcl::periodic_scores(dv, batch, opts), dpcl::nonperiodic_scores(dv, batch, opts), truth);
      out.ce = ce.value().item();
      Var d = ce;
      if (second_stage) {
        Var sup = dpcl::supcon_loss(dv, batch, cfg.tau);
        out.sup = sup.value().item();
        d = d + sup;
      }
      terms.push_back(scale(d, 1.0 - a));
    }
    if (train_diff) {
      nv = gndiff::DenoiserVars::bind(tape, m.denoiser, true);
      std::vector<gndiff::NodeSequence> x0s;
      x0s.reserve(quads.size());
      for (const auto& q : quads) x0s.push_back({layout_.entity(q.s), layout_.relation(q.r), layout_.entity(q.o)});
      const auto draws = gndiff::draw_batch(entropy_, layout_, x0s, cfg.steps, cfg.mu, rng);
      Var diff = gndiff::diffusion_loss(nv, m.denoiser, draws);
      out.diff = diff.value().item();
      terms.push_back(scale(diff, a));
    }
    Var total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) total = total + terms[i];
    out.total = total.value().item();
    if (!std::isfinite(out.total)) throw NumericError("non-finite joint loss");
    tape.backward(total);

    if (train_dpcl) {
      auto refs = m.dpcl.refs();
      auto vars = dv.all();
      for (std::size_t i = 0; i < refs.size(); ++i) ckpt_.adam.update(refs[i].name, *refs[i].tensor, vars[i].grad());
      const auto map = cfg.mapping();
      if (map.periodic == geometry::Space::poincare || map.nonperiodic == geometry::Space::poincare)
        geometry::project_rows_in_place(m.dpcl.entity);
    }
    if (train_diff) {
      auto refs = m.denoiser.refs();
      auto vars = nv.all();
      for (std::size_t i = 0; i < refs.size(); ++i) ckpt_.adam.update(refs[i].name, *refs[i].tensor, vars[i].grad());
    }
    return out;
  }

  // Validation MRR of the current parameters; NaN without a validation split.
  double validate() const {
    if (store_->split(corpus::Split::valid).empty()) return std::numeric_limits<double>::quiet_NaN();
    evaluate::Evaluator ev(ckpt_.model, *store_, index_, entropy_);
    evaluate::EvalOptions opts;
    opts.seed = ckpt_.state.rng().split(streams::validation).key();
    if (config().val_chains) opts.chains = config().val_chains;
    return ev.evaluate_split(corpus::Split::valid, {}, opts).front().metrics.mrr;
  }

  EpochMetrics run_epoch(bool with_validation = true) {
    if (done()) throw ConfigError("training already finished");
    const auto start = std::chrono::steady_clock::now();
    const TrainConfig& cfg = config();
    const std::size_t e = ckpt_.state.epoch;
    const bool second_stage = e >= cfg.epochs_stage1;
    const Rng root = ckpt_.state.rng();

    const auto train = store_->split(corpus::Split::train);
    if (train.empty()) throw EmptyDatasetError("training split is empty");
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = root.split(streams::shuffle, e);
    shuffle_rng.shuffle(std::span<std::size_t>(order));

    EpochMetrics em;
    em.epoch = e + 1;
    em.stage = second_stage ? 2 : 1;
    std::size_t batches = 0;
    std::vector<corpus::Quad> batch;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch, ++batches) {
      batch.clear();
      for (std::size_t i = begin; i < std::min(order.size(), begin + cfg.batch); ++i) batch.push_back(train[order[i]]);
      Rng rng = root.split(streams::batch, e, batches);
      StepLosses l;
      try {
        l = step(batch, rng, second_stage);
      } catch (const NumericError& err) {
        throw NumericError("epoch " + std::to_string(e + 1) + ", batch " + std::to_string(batches) +
                           ": " + err.what() + " (last batch losses: ce " + std::to_string(last_.ce) + ", sup " +
                           std::to_string(last_.sup) + ", diff " + std::to_string(last_.diff) + ")");
      }
      last_ = l;
      em.loss_total += l.total;
      em.loss_ce += l.ce;
      em.loss_sup += l.sup;
      em.loss_diff += l.diff;
    }
    const double n = static_cast<double>(batches);
    em.loss_total /= n;
    em.loss_ce /= n;
    em.loss_sup /= n;
    em.loss_diff /= n;
    ckpt_.state.epoch = e + 1;
    ckpt_.state.last_loss = em.loss_total;

    if (with_validation) {
      em.val_mrr = validate();
      if (!std::isnan(em.val_mrr) && em.val_mrr > ckpt_.state.best_val_mrr) {
        ckpt_.state.best_val_mrr = em.val_mrr;
        ckpt_.state.best_epoch = e + 1;
        best_ = ckpt_.model;
      }
    }
    if (std::isnan(em.val_mrr)) best_ = ckpt_.model;
    em.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return em;
  }

  // Runs the remaining epochs (or at most `max_epochs` of them).
  std::vector<EpochMetrics> run(const EpochCallback& on_epoch = {}, std::size_t max_epochs = SIZE_MAX,
                                bool with_validation = true) {
    std::vector<EpochMetrics> out;
    while (!done() && out.size() < max_epochs) {
      out.push_back(run_epoch(with_validation));
      if (on_epoch) on_epoch(out.back(), *this);
    }
    return out;
  }

 private:
  const corpus::QuadStore* store_;
  corpus::PeriodicIndex index_;
  corpus::TokenEntropy entropy_;
  corpus::TokenLayout layout_;
  Checkpoint ckpt_;
  Model best_;
  StepLosses last_;
};

// Trains from scratch and returns the final checkpoint.
inline Checkpoint train(const TrainConfig& config, const corpus::QuadStore& store,
                        const Trainer::EpochCallback& on_epoch = {}) {
  Trainer t(store, config);
  t.run(on_epoch);
  return t.checkpoint();
}

}  // namespace tkgd::engine
