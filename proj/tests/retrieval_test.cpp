#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "brains/retrieval.hpp"
#include "support/generators.hpp"
#include "support/checks.hpp"
#include "support/oracles.hpp"

using namespace brains;

namespace {

Vec basis(Eigen::Index d, Eigen::Index i) {
  Vec v = Vec::Zero(d);
  v(i) = 1.0;
  return v;
}

std::vector<std::string> ids_of(const RetrievedSet& r) {
  std::vector<std::string> out;
  for (const auto& x : r.cases) out.push_back(x.id);
  return out;
}

using checks::ids_of;
using checks::random_index;

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("brains_test_" + name)).string();
}

}  // namespace

TEST(VectorIndex, AddAndRejects) {
  VectorIndex index(64);
  index.add("a", basis(64, 0), {}, {});
  EXPECT_EQ(index.size(), 1u);
  try {
    index.add("a", basis(64, 1), {}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateId);
  }
  try {
    index.add("b", basis(32, 1), {}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
  EXPECT_EQ(index.size(), 1u);
}

TEST(VectorIndex, StoredVectorsAreUnit) {
  Rng rng(1);
  const auto index = random_index(rng, 50, 16);
  for (const auto& e : index.entries()) EXPECT_NEAR(e.unit.norm(), 1.0, 1e-6);
}

TEST(Search, SelfMatchFirst) {
  Rng rng(2);
  const auto index = random_index(rng, 100, 64);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& e = index.entry(rng.below(index.size()));
    const auto hits = search(index, e.unit, 5);
    EXPECT_NEAR(hits.front().cosine, 1.0, 1e-9);
    EXPECT_NEAR(hits.front().cosine, e.unit.dot(e.unit), 1e-12);
  }
}

TEST(Search, OrthogonalBasis) {
  VectorIndex index(3);
  index.add("z", basis(3, 2), {}, {});
  index.add("x", basis(3, 0), {}, {});
  index.add("y", basis(3, 1), {}, {});
  const auto hits = search(index, basis(3, 0), 3);
  EXPECT_EQ(ids_of(hits), (std::vector<std::string>{"x", "y", "z"}));
  EXPECT_EQ(hits[0].cosine, 1.0);
  EXPECT_EQ(hits[1].cosine, 0.0);
  EXPECT_EQ(hits[2].cosine, 0.0);
}

TEST(Search, MatchesFullSortOnRandomCorpus) {
  Rng rng(3);
  const auto index = random_index(rng, 256, 64);
  const auto q = gen::gaussian(rng, 64);
  EXPECT_EQ(ids_of(search(index, std::span<const double>(q), 16)), oracle::brute_force_search(index, q, 16));
}

TEST(SearchProperty, OracleEquivalenceWithTies) {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) ASSERT_TRUE(checks::search_matches_oracle(rng)) << "trial " << trial;
}

TEST(SearchProperty, ScoresMatchStoredVectors) {
  Rng rng(5);
  const auto index = random_index(rng, 200, 8);
  const auto q = gen::gaussian(rng, 8);
  const Vec qu = unit_query(q);
  for (const auto& c : search(index, std::span<const double>(q), 200))
    EXPECT_NEAR(c.cosine, qu.dot(index.entry(c.entry).unit), 1e-9);
}

TEST(Search, Errors) {
  VectorIndex empty(4);
  try {
    search(empty, basis(4, 0), 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyIndex);
  }
}

TEST(Rerank, IdentityAndScaledIdentityKeepCosineOrder) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const auto index = random_index(rng, 40, 16);
    const auto q = gen::gaussian(rng, 16);
    const auto cands = search(index, std::span<const double>(q), 40);
    const auto by_identity = rerank(std::span<const double>(q), cands, index, RerankerParams::identity(16), 40);
    const auto by_double = rerank(std::span<const double>(q), cands, index, {2.0 * Mat::Identity(16, 16), false}, 40);
    EXPECT_EQ(ids_of(by_identity), ids_of(cands));
    EXPECT_EQ(ids_of(by_double), ids_of(cands));
  }
}

TEST(Rerank, BilinearTopKMatchesScoreAllOracle) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto index = random_index(rng, 8, 6);
    const Mat m = gen::mat(rng, 6, 6);
    const auto q = gen::gaussian(rng, 6);
    const auto cands = search(index, std::span<const double>(q), 8);
    const auto got = rerank(std::span<const double>(q), cands, index, {m, true}, 3);
    // Oracle: q^T M c with explicit loops, all candidates, full sort.
    const Vec qu = unit_query(q);
    std::vector<std::pair<long double, std::string>> scored;
    for (const auto& c : cands) {
      const Vec& cu = index.entry(c.entry).unit;
      long double s = 0;
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) s += static_cast<long double>(qu(i)) * m(i, j) * cu(j);
      scored.emplace_back(s, c.id);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    ASSERT_EQ(got.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_NEAR(got.cases[i].rerank, static_cast<double>(scored[i].first), 1e-12);
      // Near-ties may order differently under a different summation; compare
      // ids only where the oracle gap exceeds rounding.
      if (i + 1 < scored.size() && std::abs(static_cast<double>(scored[i].first - scored[i + 1].first)) > 1e-12 &&
          (i == 0 || std::abs(static_cast<double>(scored[i - 1].first - scored[i].first)) > 1e-12))
        EXPECT_EQ(got.cases[i].id, scored[i].second);
    }
  }
}

TEST(Rerank, ClampsToCandidateCount) {
  Rng rng(8);
  const auto index = random_index(rng, 3, 4);
  const auto q = gen::gaussian(rng, 4);
  const auto r = rerank(std::span<const double>(q), search(index, std::span<const double>(q), 3), index,
                        RerankerParams::identity(4), 5);
  EXPECT_EQ(r.size(), 3u);
  EXPECT_EQ(r.k_requested, 5u);
}

namespace {

struct Kb {
  std::vector<CaseRecord> corpus;
  PreprocessStats stats;
  EncoderParams encoder;
  KnowledgeBase kb;
};

Kb knowledge_base(std::size_t n, std::uint64_t seed = 9) {
  Kb k;
  GeneratorConfig g;
  g.n = static_cast<int>(n);
  k.corpus = generate_synthetic(g, seed);
  k.stats = fit_preprocess(k.corpus);
  k.encoder = init_encoder({});
  k.kb = build_knowledge_base(k.corpus, k.encoder, k.stats);
  return k;
}

}  // namespace

TEST(Retrieve, FiveFromLargeIndex) {
  const auto k = knowledge_base(1105);
  const auto r = retrieve(k.corpus[17], k.kb, k.encoder, k.stats, RerankerParams::identity(64), {5, 0});
  EXPECT_EQ(r.size(), 5u);
}

TEST(Retrieve, ClampsAndExcludesSelf) {
  auto k = knowledge_base(3);
  const auto r = retrieve(k.corpus[0], k.kb, k.encoder, k.stats, RerankerParams::identity(64), {5, 0});
  EXPECT_EQ(r.size(), 2u);
  for (const auto& c : r.cases) EXPECT_NE(c.id, k.corpus[0].patient.id);

  auto outsider = k.corpus[0];
  outsider.patient.id = "outsider";
  EXPECT_EQ(retrieve(outsider, k.kb, k.encoder, k.stats, RerankerParams::identity(64), {5, 0}).size(), 3u);
}

TEST(Retrieve, SelfOnlyIndexIsEmpty) {
  auto k = knowledge_base(1);
  try {
    retrieve(k.corpus[0], k.kb, k.encoder, k.stats, RerankerParams::identity(64), {5, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyIndex);
  }
}

TEST(RetrieveProperty, NoDuplicatesNoSelfOrdered) {
  const auto k = knowledge_base(300);
  Rng rng(10);
  const Mat m = Mat::Identity(64, 64) + gen::mat(rng, 64, 64, 0.1);
  for (const auto& r : k.corpus) {
    const auto set = retrieve(r, k.kb, k.encoder, k.stats, {m, true}, {1 + rng.below(8), 1 + rng.below(40)});
    std::set<std::string> seen;
    for (std::size_t i = 0; i < set.size(); ++i) {
      EXPECT_TRUE(seen.insert(set.cases[i].id).second);
      EXPECT_NE(set.cases[i].id, r.patient.id);
      if (i > 0)
        EXPECT_TRUE(ranks_before(set.cases[i - 1].rerank, set.cases[i - 1].id, set.cases[i].rerank, set.cases[i].id));
    }
  }
}

TEST(IndexFile, RoundTripPreservesSearch) {
  Rng rng(11);
  const auto index = random_index(rng, 300, 64);
  const auto path = temp_path("roundtrip.idx");
  index_save(index, path);
  const auto loaded = index_load(path);
  ASSERT_EQ(loaded.size(), index.size());
  for (int i = 0; i < 100; ++i) {
    const auto q = gen::gaussian(rng, 64);
    const auto a = search(index, std::span<const double>(q), 10);
    const auto b = search(loaded, std::span<const double>(q), 10);
    ASSERT_EQ(ids_of(a), ids_of(b));
    for (std::size_t j = 0; j < a.size(); ++j) EXPECT_EQ(a[j].cosine, b[j].cosine);
  }
  EXPECT_EQ(loaded.serialize(), index.serialize());
  std::filesystem::remove(path);
}

TEST(IndexFile, IdenticalCorporaGiveIdenticalBytes) {
  const auto a = knowledge_base(120, 3);
  const auto b = knowledge_base(120, 3);
  EXPECT_EQ(a.kb.index().serialize(), b.kb.index().serialize());
}

TEST(IndexFile, EmptyRoundTrip) {
  VectorIndex empty(16);
  const auto back = VectorIndex::deserialize(empty.serialize());
  EXPECT_TRUE(back.empty());
  EXPECT_EQ(back.dim(), 16u);
}

TEST(IndexFile, CorruptionRejected) {
  Rng rng(12);
  const auto bytes = random_index(rng, 20, 8).serialize();
  auto expect_corrupt = [](std::vector<std::uint8_t> b) {
    try {
      VectorIndex::deserialize(b);
      ADD_FAILURE() << "accepted corrupt index";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::CorruptIndex);
    }
  };
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1})
    expect_corrupt(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut)));
  auto bad_magic = bytes;
  bad_magic[0] ^= 0xFF;
  expect_corrupt(bad_magic);
  auto bad_version = bytes;
  bad_version[8] = 9;
  expect_corrupt(bad_version);
  auto trailing = bytes;
  trailing.push_back(0);
  expect_corrupt(trailing);
}

TEST(IndexFile, MissingFileIsIoFailure) {
  try {
    index_load(temp_path("does_not_exist.idx"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoFailure);
  }
}
