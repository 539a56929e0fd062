#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "tkgd/corpus/synthetic.hpp"
#include "tkgd/engine/checkpoint.hpp"
#include "tkgd/engine/config.hpp"
#include "tkgd/engine/trainer.hpp"
#include "tkgd/evaluate.hpp"
#include "tkgd/numkit/gradcheck.hpp"

namespace tkgd::engine {
namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("tkgd_engine_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

TrainConfig tiny_config(std::uint64_t seed = 3) {
  TrainConfig c;
  c.d_dpcl = 4;
  c.d_diff = 4;
  c.d_hidden = 6;
  c.batch = 8;
  c.lr = 0.01;
  c.epochs_stage1 = 2;
  c.epochs_stage2 = 2;
  c.steps = 5;
  c.chains = 2;
  c.val_chains = 1;
  c.seed = seed;
  return c;
}

corpus::QuadStore tiny_store() {
  corpus::PlantedPeriodOptions o;
  o.entities = 6;
  o.relations = 2;
  o.timestamps = 20;
  o.pairs = 6;
  o.period = 4;
  o.valid_start = 15;
  o.test_start = 18;
  return corpus::planted_period_corpus(11, o);
}

bool same_tensor(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::ranges::equal(a.data(), b.data());
}

bool same_params(const Model& a, const Model& b) {
  const auto ra = a.refs(), rb = b.refs();
  if (ra.size() != rb.size()) return false;
  for (std::size_t i = 0; i < ra.size(); ++i)
    if (!same_tensor(*ra[i].tensor, *rb[i].tensor)) return false;
  return true;
}

TEST(JointLoss, Examples) {
  TrainConfig c;
  c.alpha = 0.0;
  EXPECT_EQ(joint_loss(c, 0.5, 0.25, 1.0), 0.75);
  c.alpha = 1.0;
  EXPECT_EQ(joint_loss(c, 0.5, 0.25, 1.0), 1.0);
  c.alpha = 0.2;
  EXPECT_NEAR(joint_loss(c, 0.5, 0.25, 1.0), 0.8, 1e-15);
  EXPECT_NEAR(joint_loss(c, 0.5, 0.25, 1.0, false), 0.2 + 0.8 * 0.5, 1e-15);
}

TEST(JointLoss, AblationFlagsOverrideAlpha) {
  TrainConfig c;
  c.alpha = 0.2;
  c.no_gndiff = true;
  EXPECT_EQ(joint_loss(c, 0.5, 0.25, 1.0), 0.75);
  c.no_gndiff = false;
  c.no_dpcl = true;
  EXPECT_EQ(joint_loss(c, 0.5, 0.25, 1.0), 1.0);
}

TEST(Config, DefaultsAndValidation) {
  const TrainConfig c;
  EXPECT_EQ(c.d_dpcl, 200u);
  EXPECT_EQ(c.d_diff, 128u);
  EXPECT_EQ(c.batch, 64u);
  EXPECT_EQ(c.lr, 0.001);
  EXPECT_EQ(c.epochs_stage1, 30u);
  EXPECT_EQ(c.epochs_stage2, 20u);
  EXPECT_EQ(c.alpha, 0.2);
  EXPECT_EQ(c.lambda, 2.0);
  EXPECT_EQ(c.tau, 0.1);
  EXPECT_EQ(c.steps, 50u);
  EXPECT_EQ(c.mu, 0.25);
  EXPECT_EQ(c.chains, 8u);
  EXPECT_NO_THROW(c.validate());
  for (const char* bad : {"alpha=1.5", "alpha=-0.1", "lambda=0", "tau=0", "lr=-1", "T=1", "C=0",
                          "mapping_strategy=Hyp", "score_mode=mean", "distance_sign=0.5"}) {
    TrainConfig x;
    x.apply_override(bad);
    EXPECT_THROW(x.validate(), ConfigError) << bad;
  }
  TrainConfig both;
  both.no_dpcl = both.no_gndiff = true;
  EXPECT_THROW(both.validate(), ConfigError);
}

TEST(Config, ParseOverridesAndErrors) {
  const auto c = TrainConfig::parse("# tiny\nalpha = 0.4\n\nT=7  # steps\nmapping_strategy = Euc/Hyp\nno_gndiff = true\n");
  EXPECT_EQ(c.alpha, 0.4);
  EXPECT_EQ(c.steps, 7u);
  EXPECT_EQ(c.mapping_strategy, "Euc/Hyp");
  EXPECT_TRUE(c.no_gndiff);
  try {
    TrainConfig::parse("alpha = 0.4\nbogus = 1\n", "x.cfg");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("x.cfg"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find('2'), std::string::npos);
  }
  EXPECT_THROW(TrainConfig::parse("alpha 0.4\n"), ParseError);
  TrainConfig o;
  EXPECT_THROW(o.apply_override("lambda"), ConfigError);
  EXPECT_THROW(o.apply_override("batch=-3"), ConfigError);
  EXPECT_THROW(o.apply_override("lr=fast"), ConfigError);
}

TEST(Config, JsonRoundTripAndHash) {
  TrainConfig c = tiny_config();
  c.mapping_strategy = "Hyp/Hyp";
  const auto back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.hash(), c.hash());
  TrainConfig reseeded = c;
  reseeded.seed = 99;
  EXPECT_EQ(reseeded.hash(), c.hash());
  EXPECT_NE(reseeded.run_name(), c.run_name());
  TrainConfig changed = c;
  changed.lambda = 3;
  EXPECT_NE(changed.hash(), c.hash());
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  const auto store = tiny_store();
  Trainer t(store, tiny_config());
  t.run({}, 1);
  TempDir dir;
  const auto a = dir.path / "a.ckpt", b = dir.path / "b.ckpt";
  save_checkpoint(t.checkpoint(), a);
  const Checkpoint loaded = load_checkpoint(a);
  save_checkpoint(loaded, b);
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  const std::string ba((std::istreambuf_iterator<char>(fa)), {}), bb((std::istreambuf_iterator<char>(fb)), {});
  EXPECT_EQ(ba, bb);
  EXPECT_EQ(ba.substr(0, 4), "TKGD");
  EXPECT_TRUE(same_params(loaded.model, t.model()));
  EXPECT_EQ(loaded.state.epoch, 1u);
}

TEST(Checkpoint, CorruptInputs) {
  const auto store = tiny_store();
  Trainer t(store, tiny_config());
  const std::string bytes = encode_checkpoint(t.checkpoint());
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), CorruptionError);
  std::string bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(decode_checkpoint(bad_version), IncompatibleVersionError);
  for (std::size_t cut : {std::size_t{2}, std::size_t{6}, bytes.size() / 2, bytes.size() - 1})
    EXPECT_THROW(decode_checkpoint(std::string_view(bytes).substr(0, cut)), CorruptionError) << cut;
  EXPECT_THROW(decode_checkpoint(bytes + "x"), CorruptionError);
  EXPECT_THROW(load_checkpoint("/nonexistent/none.ckpt"), DataError);
}

TEST(Training, SameSeedIsBitIdentical) {
  const auto store = tiny_store();
  Trainer a(store, tiny_config()), b(store, tiny_config());
  const auto ma = a.run(), mb = b.run();
  ASSERT_EQ(ma.size(), 4u);
  for (std::size_t i = 0; i < ma.size(); ++i) {
    EXPECT_EQ(ma[i].loss_total, mb[i].loss_total);
    EXPECT_EQ(ma[i].val_mrr, mb[i].val_mrr);
  }
  EXPECT_TRUE(same_params(a.model(), b.model()));
  EXPECT_EQ(encode_checkpoint(a.checkpoint()), encode_checkpoint(b.checkpoint()));
  Trainer c(store, tiny_config(4));
  c.run();
  EXPECT_FALSE(same_params(a.model(), c.model()));
}

TEST(Training, ResumeMatchesUninterrupted) {
  const auto store = tiny_store();
  Trainer full(store, tiny_config());
  const auto curve = full.run();
  TempDir dir;
  Trainer first(store, tiny_config());
  first.run({}, 3);  // crosses into the second stage
  save_checkpoint(first.checkpoint(), dir.path / "mid.ckpt");
  Trainer resumed(store, load_checkpoint(dir.path / "mid.ckpt"));
  const auto rest = resumed.run();
  ASSERT_EQ(rest.size(), 1u);
  EXPECT_NEAR(rest.back().loss_total, curve.back().loss_total, 1e-12);
  EXPECT_TRUE(same_params(resumed.model(), full.model()));
}

TEST(Training, ResumeRejectsOtherVocabulary) {
  const auto store = tiny_store();
  Trainer t(store, tiny_config());
  const auto other = corpus::random_corpus(1, 9, 2, 10, 50);
  EXPECT_THROW(Trainer(other, t.checkpoint()), DataError);
}

TEST(Training, AblationsFreezeTheExcludedComponent) {
  const auto store = tiny_store();
  for (bool no_dpcl : {false, true}) {
    TrainConfig c = tiny_config();
    c.no_dpcl = no_dpcl;
    c.no_gndiff = !no_dpcl;
    Trainer t(store, c);
    const Model before = t.model();
    t.run();
    const auto b = before.refs();
    const auto a = std::as_const(t).model().refs();
    bool trained_changed = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const bool is_dpcl = a[i].name.rfind("dpcl.", 0) == 0;
      const bool frozen = no_dpcl ? is_dpcl : !is_dpcl;
      if (frozen) {
        EXPECT_TRUE(same_tensor(*a[i].tensor, *b[i].tensor)) << a[i].name;
      } else {
        trained_changed |= !same_tensor(*a[i].tensor, *b[i].tensor);
      }
    }
    EXPECT_TRUE(trained_changed);
    for (const auto& [name, st] : t.checkpoint().adam.states())
      EXPECT_EQ(name.rfind("dpcl.", 0) == 0, !no_dpcl) << name;
  }
}

TEST(Training, StageOneHasNoContrastiveTerm) {
  const auto store = tiny_store();
  Trainer t(store, tiny_config());
  const auto m = t.run();
  EXPECT_EQ(m[0].stage, 1);
  EXPECT_EQ(m[0].loss_sup, 0.0);
  EXPECT_EQ(m[2].stage, 2);
  EXPECT_GT(m[2].loss_sup, 0.0);
}

TEST(Training, PoincareHeadKeepsEntitiesInsideTheBall) {
  const auto store = tiny_store();
  TrainConfig c = tiny_config();
  c.lr = 0.5;
  Trainer t(store, c);
  t.run({}, 2, false);
  const Tensor& e = t.model().dpcl.entity;
  for (std::size_t i = 0; i < e.rows(); ++i)
    EXPECT_LT(geometry::squared_norm(e.row(i)), 1.0);
}

corpus::QuadStore single_fact() {
  corpus::Vocabulary e, r;
  for (const char* n : {"a", "b", "c", "d"}) e.insert(n);
  r.insert("likes");
  return corpus::QuadStore(e, r, {"0", "1", "2"}, {{0, 0, 2, 0}}, 1, 2);
}

TEST(Training, SingleFactIsMemorized) {
  const auto store = single_fact();
  TrainConfig c = tiny_config();
  c.epochs_stage1 = 30;
  c.epochs_stage2 = 20;
  Trainer t(store, c);
  const auto curve = t.run();
  ASSERT_EQ(curve.size(), 50u);
  EXPECT_LT(curve.back().loss_total, curve.front().loss_total);
  evaluate::Evaluator ev(t.model(), store, t.index(), t.entropy());
  evaluate::EvalOptions opts;
  opts.seed = 1;
  const dpcl::Query q{0, 0, 1, 2};
  const auto p = ev.distributions(std::span<const dpcl::Query>(&q, 1), opts).front();
  EXPECT_EQ(std::max_element(p.begin(), p.end()) - p.begin(), 2);
}

// Joint objective with the diffusion term as an exact expectation over the
// step and every mask pattern, rather than the one-draw estimate used in
// training.
double expected_joint_loss(const Trainer& t, const corpus::Quad& q) {
  const TrainConfig& cfg = t.config();
  const Model& m = t.model();
  const auto layout = m.denoiser.layout;
  const auto batch = dpcl::QueryBatch::build({{q.s, q.r, q.t, q.o}}, t.index());
  const auto heads = dpcl::score_heads(m.dpcl, batch, cfg.score_options());
  Tape tape;
  const std::vector<std::size_t> truth{q.o};
  const double ce = dpcl::ce_loss(tape.constant(heads.periodic), tape.constant(heads.nonperiodic), truth).value().item();

  const gndiff::NodeSequence x0{layout.entity(q.s), layout.relation(q.r), layout.entity(q.o)};
  const auto s = gndiff::build_schedule(t.entropy(), x0, cfg.steps, cfg.mu);
  auto vars = gndiff::DenoiserVars::bind(tape, m.denoiser, false);
  double diff = 0.0;
  for (std::size_t step = 1; step <= cfg.steps; ++step)
    for (unsigned pattern = 0; pattern < 8; ++pattern) {
      gndiff::NodeSequence xt = x0;
      double prob = 1.0 / static_cast<double>(cfg.steps);
      for (std::size_t i = 0; i < 3; ++i) {
        const double keep = s.alpha_bar[step][i];
        if (pattern >> i & 1u) {
          xt[i] = layout.mask();
          prob *= 1.0 - keep;
        } else {
          prob *= keep;
        }
      }
      if (prob == 0.0) continue;
      const auto d = gndiff::draw_for_step(s, x0, step, xt, layout.mask());
      diff += prob * gndiff::diffusion_loss(vars, m.denoiser, std::span(&d, 1)).value().item();
    }
  return joint_loss(cfg, ce, 0.0, diff);
}

TEST(Training, SingleFactLossIsMonotoneAfterWarmUp) {
  const auto store = single_fact();
  const corpus::Quad fact = store.split(corpus::Split::train).front();
  Trainer t(store, TrainConfig{});
  std::vector<double> curve;
  while (!t.done()) {
    t.run_epoch(false);
    curve.push_back(expected_joint_loss(t, fact));
  }
  ASSERT_EQ(curve.size(), 50u);
  for (std::size_t e = 3; e < curve.size(); ++e)
    EXPECT_LE(curve[e], curve[e - 1]) << "epoch " << e + 1;
}

TEST(Training, NonFiniteLossCarriesDiagnostics) {
  const auto store = tiny_store();
  TrainConfig c = tiny_config();
  c.lr = 1e300;
  Trainer t(store, c);
  try {
    t.run({}, SIZE_MAX, false);
    FAIL() << "expected a numeric failure";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch"), std::string::npos) << msg;
    EXPECT_NE(msg.find("ce"), std::string::npos) << msg;
  }
}

TEST(Training, EmptyTrainSplitIsRejected) {
  corpus::Vocabulary e, r;
  e.insert("a");
  e.insert("b");
  r.insert("r");
  EXPECT_THROW(
      {
        const corpus::QuadStore store(e, r, {"0", "1", "2"}, {{0, 0, 1, 2}}, 1, 2);
        Trainer t(store, tiny_config());
      },
      DataError);
}

TEST(Gradients, JointLossOnFiveEntityFixture) {
  const auto store = corpus::random_corpus(5, 5, 2, 6, 30);
  const TrainConfig cfg = tiny_config();
  const Model m = Model::init(cfg, store);
  const corpus::PeriodicIndex index(store, cfg.lambda);
  const auto entropy = corpus::TokenEntropy::from_store(store);
  const auto layout = corpus::TokenLayout::of(store);
  const auto train = store.split(corpus::Split::train);
  std::vector<dpcl::Query> qs;
  std::vector<gndiff::NodeSequence> x0s;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& q = train[i];
    qs.push_back({q.s, q.r, q.t, q.o});
    x0s.push_back({layout.entity(q.s), layout.relation(q.r), layout.entity(q.o)});
  }
  const auto batch = dpcl::QueryBatch::build(qs, index);
  Rng rng(8);
  const auto draws = gndiff::draw_batch(entropy, layout, x0s, cfg.steps, cfg.mu, rng);
  const auto truth = batch.objects();
  const double a = cfg.alpha;
  auto f = [&](Tape&, std::span<const Var> in) {
    dpcl::DpclVars dv{in[0], in[1], in[2], in[3], in[4], in[5], in[6], in[7]};
    gndiff::DenoiserVars nv{in[8], in[9], in[10], in[11], in[12]};
    const auto opts = cfg.score_options();
    Var d = dpcl::ce_loss(dpcl::periodic_scores(dv, batch, opts), dpcl::nonperiodic_scores(dv, batch, opts), truth) +
            dpcl::supcon_loss(dv, batch, cfg.tau);
    return scale(d, 1.0 - a) + scale(gndiff::diffusion_loss(nv, m.denoiser, draws), a);
  };
  std::vector<Tensor> params;
  for (const auto& r : m.refs()) params.push_back(*r.tensor);
  ASSERT_EQ(params.size(), 13u);
  const auto report = grad_check(f, params, 1e-4);
  EXPECT_TRUE(report.passed()) << report.max_rel_error;
}

}  // namespace
}  // namespace tkgd::engine
