#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "tkgd/corpus/bundle.hpp"
#include "tkgd/corpus/periodic_index.hpp"
#include "tkgd/corpus/quad_store.hpp"
#include "tkgd/corpus/synthetic.hpp"
#include "tkgd/corpus/token_entropy.hpp"

namespace tkgd::corpus {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / (std::string("tkgd_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(path_ / name, std::ios::binary) << text;
    return path_ / name;
  }

 private:
  fs::path path_;
};

QuadStore store_of(std::size_t entities, std::size_t relations, std::size_t timestamps, std::vector<Quad> quads,
                   TimeIndex valid_start, TimeIndex test_start) {
  Vocabulary e, r;
  for (std::size_t i = 0; i < entities; ++i) e.insert("e" + std::to_string(i));
  for (std::size_t i = 0; i < relations; ++i) r.insert("r" + std::to_string(i));
  std::vector<std::string> t;
  for (std::size_t i = 0; i < timestamps; ++i) t.push_back(std::to_string(i));
  return QuadStore(e, r, t, std::move(quads), valid_start, test_start);
}

// Objects with some (s, r, o, k), k < t.
std::set<EntityId> brute_history(const QuadStore& store, EntityId s, RelationId r, TimeIndex t) {
  std::set<EntityId> out;
  for (const Quad& q : store.quads())
    if (q.s == s && q.r == r && q.t < t) out.insert(q.o);
  return out;
}

TEST(LoadQuads, TenLineFile) {
  TempDir dir;
  const auto path = dir.write("q.tsv",
                              "A\tlikes\tB\t5\n"
                              "B\tlikes\tC\t1\n"
                              "C\thates\tD\t3\n"
                              "A\thates\tC\t2\n"
                              "D\tlikes\tA\t9\n"
                              "B\thates\tA\t4\n"
                              "C\tlikes\tB\t6\n"
                              "D\thates\tB\t7\n"
                              "A\tlikes\tD\t8\n"
                              "B\tlikes\tD\t10\n");
  const QuadStore store = load_quads(path);
  EXPECT_EQ(store.num_entities(), 4u);
  EXPECT_EQ(store.num_relations(), 2u);
  EXPECT_EQ(store.quads().size(), 10u);
  EXPECT_TRUE(std::is_sorted(store.quads().begin(), store.quads().end(),
                             [](const Quad& a, const Quad& b) { return a.t < b.t; }));
  // Integer timestamps sort numerically: "10" comes last, not after "1".
  EXPECT_EQ(store.timestamps().back(), "10");
  EXPECT_EQ(store.split(Split::train).size() + store.split(Split::valid).size() + store.split(Split::test).size(),
            10u);
  EXPECT_EQ(store.split(Split::train).size(), 8u);
  EXPECT_FALSE(store.split(Split::valid).empty());
  EXPECT_FALSE(store.split(Split::test).empty());
}

TEST(LoadQuads, FifthFieldIgnoredAndCrlfAccepted) {
  TempDir dir;
  const auto path = dir.write("q.tsv", "0\t0\t1\t0\textra\r\n1\t0\t2\t1\r\n\n2\t0\t0\t2\r\n");
  const QuadStore store = load_quads(path);
  EXPECT_EQ(store.quads().size(), 3u);
}

TEST(LoadQuads, ThreeFieldLineNamesTheLine) {
  TempDir dir;
  const auto path = dir.write("bad.tsv", "A\tr\tB\t1\nA\tr\tB\n");
  try {
    load_quads(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("bad.tsv:2"), std::string::npos);
  }
}

TEST(LoadQuads, EmptyFile) {
  TempDir dir;
  EXPECT_THROW(load_quads(dir.write("empty.tsv", "")), EmptyDatasetError);
  EXPECT_THROW(load_quads(dir.path() / "missing.tsv"), DataError);
}

TEST(LoadQuads, ThreeFiles) {
  TempDir dir;
  const auto train = dir.write("train.txt", "a\tr\tb\t0\nb\tr\tc\t1\n");
  const auto valid = dir.write("valid.txt", "a\tr\tc\t2\n");
  const auto test = dir.write("test.txt", "c\tr\ta\t3\nc\tr\tb\t3\n");
  const QuadStore store = load_quads(train, valid, test);
  EXPECT_EQ(store.split(Split::train).size(), 2u);
  EXPECT_EQ(store.split(Split::valid).size(), 1u);
  EXPECT_EQ(store.split(Split::test).size(), 2u);
  EXPECT_EQ(store.valid_start(), 2u);
  EXPECT_EQ(store.test_start(), 3u);

  const auto overlap = dir.write("overlap.txt", "a\tr\tc\t1\n");
  EXPECT_THROW(load_quads(train, overlap, test), DataError);
}

TEST(QuadStoreProperty, SplitsRespectTime) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const QuadStore store = random_corpus(seed, 12, 3, 15, 300);
    const auto train = store.split(Split::train);
    const auto valid = store.split(Split::valid);
    const auto test = store.split(Split::test);
    ASSERT_FALSE(train.empty());
    TimeIndex max_train = 0;
    for (const Quad& q : train) max_train = std::max(max_train, q.t);
    for (const Quad& q : valid) EXPECT_GT(q.t, max_train);
    for (const Quad& q : test) {
      EXPECT_GT(q.t, max_train);
      for (const Quad& v : valid) EXPECT_GT(q.t, v.t);
    }
  }
}

TEST(PeriodicIndex, SingleFact) {
  // (A, likes, B, 1) with A=0, likes=0, B=1, C=2
  const QuadStore store = store_of(3, 1, 4, {{0, 0, 1, 1}}, 2, 3);
  const PeriodicIndex index(store, 2.0);
  EXPECT_EQ(index.z(0, 0, 2, 1), 2.0);
  EXPECT_EQ(index.z(0, 0, 2, 2), -2.0);
  EXPECT_EQ(index.z(0, 0, 1, 1), -2.0);  // strictly before
  EXPECT_TRUE(index.history(0, 0, 0).empty());
  for (EntityId o = 0; o < 3; ++o) EXPECT_EQ(index.z(0, 0, 0, o), -2.0);
}

TEST(PeriodicIndex, NewEventExamples) {
  const QuadStore store = store_of(3, 1, 4, {{0, 0, 1, 1}}, 2, 3);
  const PeriodicIndex index(store, 2.0);
  EXPECT_FALSE(index.is_new_event(0, 0, 1, 2));
  EXPECT_TRUE(index.is_new_event(0, 0, 2, 2));
}

TEST(PeriodicIndex, RejectsNonPositiveLambda) {
  const QuadStore store = store_of(3, 1, 4, {{0, 0, 1, 1}}, 2, 3);
  EXPECT_THROW(PeriodicIndex(store, 0.0), ConfigError);
  EXPECT_THROW(PeriodicIndex(store, -1.0), ConfigError);
}

TEST(PeriodicIndex, AgreesWithBruteForceScan) {
  const QuadStore store = random_corpus(99, 8, 3, 12, 1000);
  const PeriodicIndex index(store, 2.0);
  for (EntityId s = 0; s < 8; ++s)
    for (RelationId r = 0; r < 3; ++r)
      for (TimeIndex t = 0; t <= 12; ++t) {
        const auto expected = brute_history(store, s, r, t);
        const auto got = index.history(s, r, t);
        ASSERT_EQ(std::set<EntityId>(got.begin(), got.end()), expected);
        const auto row = index.z_row(s, r, t);
        for (EntityId o = 0; o < 8; ++o) {
          const double want = expected.count(o) ? 2.0 : -2.0;
          ASSERT_EQ(index.z(s, r, t, o), want);
          ASSERT_EQ(row[o], want);
          ASSERT_EQ(index.is_new_event(s, r, o, t), expected.count(o) == 0);
        }
      }
}

TEST(PeriodicIndex, NewEventFractionMatchesBruteForce) {
  const QuadStore store = random_corpus(7, 10, 2, 20, 400);
  const PeriodicIndex index(store, 2.0);
  std::size_t fast = 0, slow = 0;
  for (const Quad& q : store.quads()) {
    fast += index.is_new_event(q.s, q.r, q.o, q.t);
    slow += brute_history(store, q.s, q.r, q.t).count(q.o) == 0;
  }
  EXPECT_EQ(fast, slow);
}

TEST(ExtractNewEvents, KeepsFirstOccurrences) {
  // (A,r,B,1), (A,r,B,3), (A,r,C,2)
  const QuadStore store = store_of(3, 1, 5, {{0, 0, 1, 1}, {0, 0, 1, 3}, {0, 0, 2, 2}}, 3, 4);
  const QuadStore out = extract_new_events(store);
  ASSERT_EQ(out.quads().size(), 2u);
  EXPECT_EQ(out.quads()[0], (Quad{0, 0, 1, 1}));
  EXPECT_EQ(out.quads()[1], (Quad{0, 0, 2, 2}));
  EXPECT_EQ(out.valid_start(), store.valid_start());
  EXPECT_EQ(out.test_start(), store.test_start());
}

TEST(ExtractNewEvents, IdentityWithoutRepeatsAndIdempotent) {
  const QuadStore distinct = store_of(4, 1, 4, {{0, 0, 1, 0}, {1, 0, 2, 1}, {2, 0, 3, 2}, {3, 0, 0, 3}}, 2, 3);
  const QuadStore same = extract_new_events(distinct);
  EXPECT_TRUE(std::equal(same.quads().begin(), same.quads().end(), distinct.quads().begin(), distinct.quads().end()));

  const QuadStore store = random_corpus(3, 5, 2, 10, 300);
  const QuadStore once = extract_new_events(store);
  const QuadStore twice = extract_new_events(once);
  EXPECT_LT(once.quads().size(), store.quads().size());
  EXPECT_TRUE(std::equal(once.quads().begin(), once.quads().end(), twice.quads().begin(), twice.quads().end()));
}

TEST(TokenEntropy, HalfOfPositions) {
  // Token 0 fills 3 of 6 positions.
  const auto te = TokenEntropy::from_counts({3, 1, 2}, 6);
  EXPECT_NEAR(te.entropy(0), 0.6931471805599453, 1e-15);
  EXPECT_EQ(TokenEntropy::from_counts({5}, 5).entropy(0), 0.0);
}

TEST(TokenEntropy, CountsAndBounds) {
  const QuadStore store = random_corpus(11, 9, 3, 10, 200);
  const auto te = TokenEntropy::from_store(store);
  const auto layout = TokenLayout::of(store);
  std::uint64_t total = 0;
  for (Token t = 0; t < layout.vocab_size(); ++t) total += te.count(t);
  EXPECT_EQ(total, 3 * store.split(Split::train).size());
  const double cap = std::log(static_cast<double>(te.total_positions()));
  for (Token t = 0; t < layout.vocab_size(); ++t) {
    if (te.count(t) == 0) {
      EXPECT_DOUBLE_EQ(te.entropy(t), cap);  // smoothed to frequency 1
      continue;
    }
    EXPECT_GT(te.entropy(t), 0.0);
    EXPECT_LT(te.entropy(t), cap);
    for (Token u = 0; u < layout.vocab_size(); ++u)
      if (te.count(u) > te.count(t)) {
        EXPECT_LT(te.entropy(u), te.entropy(t));
      }
  }
}

TEST(Bundle, RoundTripAndIdempotentBytes) {
  TempDir dir;
  const QuadStore store = random_corpus(5, 7, 2, 9, 120);
  write_bundle(store, dir.path() / "a");
  write_bundle(store, dir.path() / "b");
  for (const char* f : {"entities.tsv", "relations.tsv", "timestamps.tsv", "quads.bin", "stats.json"}) {
    std::ifstream a(dir.path() / "a" / f, std::ios::binary), b(dir.path() / "b" / f, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    EXPECT_EQ(sa, sb) << f;
  }
  const QuadStore back = read_bundle(dir.path() / "a");
  EXPECT_TRUE(std::equal(back.quads().begin(), back.quads().end(), store.quads().begin(), store.quads().end()));
  EXPECT_EQ(back.entities().names(), store.entities().names());
  EXPECT_EQ(back.valid_start(), store.valid_start());
  EXPECT_EQ(back.test_start(), store.test_start());
  const auto stats = bundle_stats(back);
  EXPECT_EQ(stats["entities"], 7);
  EXPECT_EQ(stats["train"].get<std::size_t>() + stats["valid"].get<std::size_t>() + stats["test"].get<std::size_t>(),
            120u);
}

TEST(Bundle, CorruptQuadTable) {
  TempDir dir;
  write_bundle(random_corpus(5, 7, 2, 9, 20), dir.path());
  {
    std::ofstream f(dir.path() / "quads.bin", std::ios::binary | std::ios::app);
    f << "x";
  }
  EXPECT_THROW(read_bundle(dir.path()), CorruptionError);
  EXPECT_THROW(read_bundle(dir.path() / "nope"), DataError);
}

TEST(Synthetic, PlantedCorpusShape) {
  const QuadStore store = planted_period_corpus(7);
  EXPECT_EQ(store.num_entities(), 20u);
  EXPECT_EQ(store.num_relations(), 4u);
  EXPECT_EQ(store.num_timestamps(), 60u);
  const PeriodicIndex index(store, 2.0);
  // Every evaluation fact already happened five steps earlier.
  for (Split s : {Split::valid, Split::test})
    for (const Quad& q : store.split(s)) {
      EXPECT_FALSE(index.is_new_event(q.s, q.r, q.o, q.t));
      if (q.t >= 5) {
        EXPECT_TRUE(index.in_history(q.s, q.r, q.t - 4, q.o));
      }
    }
}

TEST(Synthetic, NoveltyCorpusHasHalfNewTestEvents) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const QuadStore store = novelty_corpus(seed);
    std::size_t fresh = 0;
    const auto test = store.split(Split::test);
    for (const Quad& q : test) fresh += brute_history(store, q.s, q.r, q.t).count(q.o) == 0;
    // Alternation is global, so the counts differ by at most one.
    EXPECT_LE(std::max(2 * fresh, test.size()) - std::min(2 * fresh, test.size()), 1u) << "seed " << seed;
  }
}

}  // namespace
}  // namespace tkgd::corpus
