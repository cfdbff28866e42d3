#include <gtest/gtest.h>

#include "brains/evalharness.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace brains;

namespace {

// Fixture labels are numbered 1..5 and map to subtype codes 0..4.
LabelSet L(std::initializer_list<int> ones) {
  LabelSet s;
  for (int i : ones) s.insert(static_cast<Subtype>(i - 1));
  return s;
}

std::vector<Pair> fixture() {
  return {{L({1}), L({1})}, {L({2}), L({1, 2})}, {L({3, 4}), L({3})}, {L({}), L({5})}};
}

std::vector<Pair> random_pairs(Rng& rng, std::size_t n) {
  std::vector<Pair> p;
  for (std::size_t i = 0; i < n; ++i) p.emplace_back(gen::labels(rng), gen::labels(rng));
  return p;
}

}  // namespace

TEST(CardinalityBucket, ByGoldSize) {
  EXPECT_EQ(cardinality_bucket({Subtype::LateOnset}), Bucket::Single);
  EXPECT_EQ(cardinality_bucket({Subtype::LateOnset, Subtype::Sporadic}), Bucket::Double);
  EXPECT_EQ(cardinality_bucket({Subtype::LateOnset, Subtype::Sporadic, Subtype::Atypical}), Bucket::Triple);
  EXPECT_EQ(cardinality_bucket({}), Bucket::Other);
  EXPECT_EQ(cardinality_bucket(LabelSet::from_bits(0x1F)), Bucket::Other);
}

TEST(ComputeMetrics, HandCountedFixture) {
  const auto m = compute_metrics(fixture());
  const auto c = oracle::count(fixture());
  EXPECT_EQ(c.tp, 3);
  EXPECT_EQ(c.fp, 1);
  EXPECT_EQ(c.fn, 2);
  EXPECT_EQ(m.overall.counts.tp, 3u);
  EXPECT_EQ(m.overall.counts.fp, 1u);
  EXPECT_EQ(m.overall.counts.fn, 2u);
  EXPECT_DOUBLE_EQ(m.overall.precision, 0.75);
  EXPECT_DOUBLE_EQ(m.overall.recall, 0.6);
  EXPECT_NEAR(m.overall.f1, 2 * 0.75 * 0.6 / 1.35, 1e-9);
  EXPECT_DOUBLE_EQ(m.correct, 0.25);
  EXPECT_EQ(m.count_single, 3u);
  EXPECT_EQ(m.count_double, 1u);
  EXPECT_EQ(m.count_triple, 0u);
  // Single bucket: A, C, D -> TP 2, FP 1, FN 1.
  EXPECT_NEAR(m.single.precision, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.single.recall, 2.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(m.double_.precision, 1.0);
  EXPECT_DOUBLE_EQ(m.double_.recall, 0.5);
  EXPECT_EQ(m.triple.f1, 0.0);
}

TEST(ComputeMetrics, PerfectAndVacuous) {
  Rng rng(1);
  auto pairs = random_pairs(rng, 50);
  for (auto& p : pairs) p.first = p.second;
  const auto m = compute_metrics(pairs);
  EXPECT_EQ(m.correct, 1.0);
  for (const Prf* p : {&m.overall, &m.single, &m.double_, &m.triple})
    if (p->counts.tp > 0) EXPECT_EQ(p->f1, 1.0);

  std::size_t empty_gold = 0;
  for (auto& p : pairs) {
    p.first = {};
    empty_gold += p.second.empty();
  }
  const auto v = compute_metrics(pairs);
  EXPECT_EQ(v.overall.precision, 0.0);
  EXPECT_EQ(v.overall.recall, 0.0);
  EXPECT_EQ(v.overall.f1, 0.0);
  EXPECT_DOUBLE_EQ(v.correct, static_cast<double>(empty_gold) / 50.0);
}

TEST(ComputeMetrics, EmptyPairsRejected) {
  try {
    compute_metrics({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyPairs);
  }
}

TEST(ComputeMetricsProperty, MatchesOracleCounts) {
  Rng rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    const auto pairs = random_pairs(rng, 1 + rng.below(60));
    const auto m = compute_metrics(pairs);
    const auto c = oracle::count(pairs);
    EXPECT_DOUBLE_EQ(m.overall.precision, oracle::safe_ratio(c.tp, c.tp + c.fp));
    EXPECT_DOUBLE_EQ(m.overall.recall, oracle::safe_ratio(c.tp, c.tp + c.fn));
    std::size_t gold = 0, predicted = 0;
    for (const auto& [d, g] : pairs) {
      gold += g.size();
      predicted += d.size();
    }
    EXPECT_EQ(m.overall.counts.tp + m.overall.counts.fn, gold);
    EXPECT_EQ(m.overall.counts.tp + m.overall.counts.fp, predicted);
    EXPECT_LE(m.count_single + m.count_double + m.count_triple, m.total);
    EXPECT_EQ(m.count_single + m.count_double + m.count_triple + m.count_other, m.total);
    for (const Prf* p : {&m.overall, &m.single, &m.double_, &m.triple}) {
      for (double v : {p->precision, p->recall, p->f1}) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(ComputeMetricsProperty, PermutationInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto pairs = random_pairs(rng, 1 + rng.below(40));
    const auto a = compute_metrics(pairs);
    rng.shuffle(pairs);
    const auto b = compute_metrics(pairs);
    EXPECT_EQ(a.correct, b.correct);
    EXPECT_EQ(a.overall.f1, b.overall.f1);
    EXPECT_EQ(a.single.f1, b.single.f1);
    EXPECT_EQ(a.double_.f1, b.double_.f1);
    EXPECT_EQ(a.triple.f1, b.triple.f1);
  }
}

TEST(ComputeMetricsProperty, PerfectCaseNeverHurts) {
  Rng rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    auto pairs = random_pairs(rng, 1 + rng.below(40));
    const auto before = compute_metrics(pairs);
    const auto gold = gen::labels(rng);
    pairs.emplace_back(gold, gold);
    const auto after = compute_metrics(pairs);
    EXPECT_GE(after.correct, before.correct);
    EXPECT_GE(after.overall.f1, before.overall.f1);
    EXPECT_GE(after.single.f1, before.single.f1);
    EXPECT_GE(after.double_.f1, before.double_.f1);
    EXPECT_GE(after.triple.f1, before.triple.f1);
  }
}

TEST(FormatTable, RendersPublishedRow) {
  TableRow row;
  row.name = "BRAINS";
  row.correct = 0.773;
  row.f1 = 0.819;
  const auto table = format_table({row});
  const auto line_at = table.find("BRAINS");
  ASSERT_NE(line_at, std::string::npos);
  const auto line = table.substr(line_at, table.find('\n', line_at) - line_at);
  EXPECT_NE(line.find("0.773"), std::string::npos);
  EXPECT_NE(line.find("0.819"), std::string::npos);
  EXPECT_LT(line.find("0.773"), line.find("0.819"));
  EXPECT_NE(table.find("Corr."), std::string::npos);
  EXPECT_NE(table.find("micro"), std::string::npos);
}

TEST(FormatTable, ColumnsAlign) {
  Rng rng(5);
  std::vector<TableRow> rows = {table_row("no-rag", compute_metrics(random_pairs(rng, 30)), 12),
                                table_row("brains-k5", compute_metrics(random_pairs(rng, 30)))};
  const auto table = format_table(rows);
  std::vector<std::size_t> bars;
  std::size_t start = 0;
  for (int line = 0; line < 4; ++line) {
    const auto end = table.find('\n', start);
    const auto text = table.substr(start, end - start);
    if (line != 2) bars.push_back(text.find('|'));
    start = end + 1;
  }
  for (auto b : bars) EXPECT_EQ(b, bars.front());
}

TEST(ParseVariant, NamesAndErrors) {
  EXPECT_EQ(parse_variant("no-rag").kind, Variant::Kind::NoRag);
  EXPECT_EQ(parse_variant("rag-2").k, 2);
  EXPECT_EQ(parse_variant("brains-k5").k, 5);
  for (const char* bad : {"brains-k0", "rag-", "rag-x", "five-shot", "brains-k"}) EXPECT_THROW(parse_variant(bad), Error);
}

TEST(RunExperiment, SharedSplitAndDeterministicReport) {
  ExperimentConfig cfg;
  cfg.generator.n = 120;
  cfg.generator.stratum_size = 6;
  cfg.variants = {"no-rag", "brains-k3"};
  cfg.train.epochs = 2;
  const auto a = run_experiment(cfg);
  const auto b = run_experiment(cfg);
  EXPECT_EQ(a.report.dump(), b.report.dump());
  ASSERT_EQ(a.report["variants"].size(), 2u);
  EXPECT_EQ(a.report["variants"][0]["test_split_digest"], a.report["variants"][1]["test_split_digest"]);
  EXPECT_EQ(a.report["averaging"], "micro");
  EXPECT_EQ(a.report["corpus"]["size"], 120);
  EXPECT_TRUE(a.report["variants"][0]["wall_ms"].is_null());
  EXPECT_TRUE(a.brains_model.has_value());
  cfg.variants = {"unknown"};
  EXPECT_THROW(run_experiment(cfg), Error);
}
