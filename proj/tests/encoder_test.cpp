#include <gtest/gtest.h>

#include <cmath>

#include "brains/encoder.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace brains;

namespace {

struct Fixture {
  std::vector<CaseRecord> corpus;
  PreprocessStats stats;
  EncoderParams params;
};

Fixture fixture(EncoderMode mode = EncoderMode::Structured, int d = 64) {
  Rng rng(31);
  Fixture f;
  f.corpus = gen::corpus(rng, 60);
  f.stats = fit_preprocess(f.corpus);
  EncoderConfig cfg;
  cfg.mode = mode;
  cfg.d = d;
  f.params = init_encoder(cfg);
  return f;
}

}  // namespace

TEST(Tokenize, StableIdsAndTruncation) {
  const auto a = tokenize("MMSE 28");
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a, tokenize("MMSE 28"));
  EXPECT_EQ(a, tokenize("mmse   28"));
  for (auto id : a) EXPECT_LT(id, 4096u);

  std::string long_text;
  for (int i = 0; i < 500; ++i) long_text += "word" + std::to_string(i) + " ";
  EXPECT_EQ(tokenize(long_text, 4096, 128).size(), 127u);
}

TEST(Tokenize, EmptyTextRejected) {
  try {
    tokenize("   \n ");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyText);
  }
}

TEST(Encode, DeterministicInBothModes) {
  for (auto mode : {EncoderMode::Structured, EncoderMode::Text}) {
    auto f = fixture(mode);
    const auto a = encode(f.corpus[0], f.params, f.stats);
    const auto b = encode(f.corpus[0], init_encoder(f.params.config), f.stats);
    EXPECT_EQ(a.cls, b.cls);
    EXPECT_EQ(a.tokens, b.tokens);
    EXPECT_EQ(a.cls.size(), 64);
    EXPECT_EQ(a.tokens.cols(), 64);
  }
}

TEST(Encode, InitializationWithinFanInBound) {
  const auto p = init_encoder({});
  const double bound = 1.0 / std::sqrt(64.0);
  EXPECT_LE(p.projection.cwiseAbs().maxCoeff(), bound);
  EXPECT_LE(p.directions.cwiseAbs().maxCoeff(), bound);
  EXPECT_EQ(p.projection.rows(), 64);
  EXPECT_EQ(p.projection.cols(), static_cast<Eigen::Index>(kFeatureLength));
}

TEST(Encode, CaseAtMeansProjectsPresencePattern) {
  auto f = fixture();
  PatientCase c;
  c.id = "m";
  for (std::size_t i = 0; i < kNumNumeric; ++i) c.numeric[i] = f.stats.numeric[i].mean;
  const auto x = apply_preprocess(c, f.stats);
  // Oracle: presence bits and one-hots only, multiplied by the projection.
  Vec pattern = Vec::Zero(static_cast<Eigen::Index>(kFeatureLength));
  for (std::size_t i = 0; i < kNumNumeric; ++i) pattern(static_cast<Eigen::Index>(2 * i + 1)) = 1.0;
  for (std::size_t i = kCdrOffset; i < kFeatureLength; ++i) pattern(static_cast<Eigen::Index>(i)) = x[i];
  const auto h = encode(make_record(c, {}), f.params, f.stats);
  const Vec expected = f.params.projection * pattern;
  EXPECT_LT((h.cls - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encode, OneFeatureChangeMovesCls) {
  auto f = fixture();
  auto a = f.corpus[0];
  auto b = a;
  b.patient[NumericField::Mmse] = a.patient.mmse() == 30 ? 29 : a.patient.mmse() + 1;
  b.narrative = render_text(b.patient);
  EXPECT_NE(encode(a, f.params, f.stats).cls, encode(b, f.params, f.stats).cls);
}

TEST(EncodeProperty, StructuredClsIsLinearInEachNumericFeature) {
  auto f = fixture();
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const auto base = apply_preprocess(f.corpus[rng.below(f.corpus.size())].patient, f.stats);
    const auto slot = 2 * rng.below(kNumNumeric);
    auto x1 = base, x2 = base, x3 = base;
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    x1[slot] = a;
    x2[slot] = b;
    x3[slot] = a + b;
    auto x0 = base;
    x0[slot] = 0.0;
    // cls(a) + cls(b) = cls(a + b) + cls(0)
    const Vec lhs = encode_features(x1, f.params).cls + encode_features(x2, f.params).cls;
    const Vec rhs = encode_features(x3, f.params).cls + encode_features(x0, f.params).cls;
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(EmbedCls, UnitNormAndSelfSimilarity) {
  for (auto mode : {EncoderMode::Structured, EncoderMode::Text}) {
    auto f = fixture(mode);
    for (const auto& r : f.corpus) {
      const auto e = embed_cls(r, f.params, f.stats);
      EXPECT_NEAR(e.unit.norm(), 1.0, 1e-9);
      EXPECT_NEAR(e.unit.dot(embed_cls(r, f.params, f.stats).unit), 1.0, 1e-12);
      EXPECT_EQ(e.unit.size(), 64);
    }
  }
}

TEST(EmbedCls, NormMatchesCompensatedSum) {
  auto f = fixture();
  for (const auto& r : f.corpus) {
    const Vec cls = encode(r, f.params, f.stats).cls;
    // Kahan-summed squares in long double.
    long double sum = 0.0L, comp = 0.0L;
    for (Eigen::Index i = 0; i < cls.size(); ++i) {
      const long double y = static_cast<long double>(cls(i)) * cls(i) - comp;
      const long double t = sum + y;
      comp = (t - sum) - y;
      sum = t;
    }
    EXPECT_NEAR(cls.norm(), static_cast<double>(std::sqrt(sum)), 1e-12);
  }
}

TEST(EmbedCls, ZeroNormGuard) {
  const auto e = normalize_cls(Vec::Zero(8));
  EXPECT_TRUE(e.degenerate);
  EXPECT_EQ(e.unit(0), 1.0);
  EXPECT_EQ(e.unit.tail(7).cwiseAbs().sum(), 0.0);
}

TEST(TextEncoder, AttentionRowsSumToOne) {
  auto f = fixture(EncoderMode::Text, 32);
  for (std::size_t i = 0; i < 10; ++i) {
    std::vector<Mat> attention;
    run_text_transformer(f.params, tokenize(f.corpus[i].narrative), &attention);
    ASSERT_EQ(attention.size(), static_cast<std::size_t>(f.params.config.layers * f.params.config.heads));
    for (const auto& a : attention)
      for (Eigen::Index r = 0; r < a.rows(); ++r) {
        EXPECT_NEAR(a.row(r).sum(), 1.0, 1e-9);
        EXPECT_GE(a.row(r).minCoeff(), 0.0);
      }
  }
}

TEST(TextEncoder, SequenceShape) {
  auto f = fixture(EncoderMode::Text, 32);
  const auto h = encode(f.corpus[0], f.params, nullptr);
  EXPECT_EQ(h.source_len, tokenize(f.corpus[0].narrative).size());
  EXPECT_EQ(static_cast<std::size_t>(h.tokens.rows()), h.source_len);
  EXPECT_EQ(h.cls.size(), 32);
}

TEST(EncoderConfig, HeadsMustDivideDimension) {
  EncoderConfig cfg;
  cfg.mode = EncoderMode::Text;
  cfg.d = 30;
  cfg.heads = 4;
  EXPECT_THROW(init_encoder(cfg), Error);
}

TEST(KnownLabels, AppendsOneRowPerLabelInCodeOrder) {
  auto f = fixture();
  const auto h = encode(f.corpus[0], f.params, f.stats);
  const auto with = with_known_labels(h, {Subtype::Atypical, Subtype::EarlyOnset}, f.params);
  ASSERT_EQ(with.tokens.rows(), h.tokens.rows() + 2);
  EXPECT_EQ(with.tokens.row(h.tokens.rows()), f.params.label_embedding.row(0));
  EXPECT_EQ(with.tokens.row(h.tokens.rows() + 1), f.params.label_embedding.row(4));
  EXPECT_EQ(with.cls, h.cls);
}
