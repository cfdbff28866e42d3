#pragma once

// Case encoder: turns a case record into a HiddenSequence (a [CLS] summary
// vector plus per-token hidden vectors). Structured mode projects the
// preprocessed feature vector; text mode runs a small transformer over the
// hashed narrative tokens.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "brains/casemodel.hpp"
#include "brains/core/digest.hpp"
#include "brains/core/error.hpp"
#include "brains/core/rng.hpp"

namespace brains {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

enum class EncoderMode { Structured, Text };

constexpr std::string_view to_string(EncoderMode m) { return m == EncoderMode::Text ? "text" : "structured"; }

struct EncoderConfig {
  EncoderMode mode = EncoderMode::Structured;
  int d = 64;
  int vocab = 4096;
  int layers = 2;
  int heads = 4;
  int max_len = 128;
  std::uint64_t seed = 1;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct TransformerBlock {
  Mat wq, wk, wv, wo;  // d x d
  Mat w1;              // 4d x d
  Vec b1;              // 4d
  Mat w2;              // d x 4d
  Vec b2;              // d
  Vec ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

struct EncoderParams {
  EncoderConfig config;
  // Structured mode.
  Mat projection;  // d x kFeatureLength; cls = projection * x
  Mat directions;  // kFeatureLength x d; token j = x_j * directions.row(j)
  // Both modes: one row per subtype, appended to a historical case's context.
  Mat label_embedding;  // kNumSubtypes x d
  // Text mode.
  Mat embedding;  // vocab x d
  Vec cls_embedding;
  std::vector<TransformerBlock> blocks;

  int d() const { return config.d; }
};

struct HiddenSequence {
  Vec cls;
  Mat tokens;  // one row per token, d columns
  std::size_t source_len = 0;

  std::size_t size() const { return static_cast<std::size_t>(tokens.rows()); }
};

inline Mat uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-bound, bound);
  return m;
}

/// Deterministic initialization: every weight uniform in [-1/sqrt(d), 1/sqrt(d)].
inline EncoderParams init_encoder(const EncoderConfig& cfg) {
  if (cfg.d < 1 || cfg.heads < 1 || cfg.d % cfg.heads != 0)
    throw Error(ErrorCode::BadConfig, "encoder d must be a positive multiple of the head count",
                {{"d", cfg.d}, {"heads", cfg.heads}});
  if (cfg.vocab < 1 || cfg.max_len < 2 || cfg.layers < 0)
    throw Error(ErrorCode::BadConfig, "encoder vocab >= 1, max_len >= 2, layers >= 0 required");
  EncoderParams p;
  p.config = cfg;
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  const auto d = static_cast<Eigen::Index>(cfg.d);
  const auto f = static_cast<Eigen::Index>(kFeatureLength);
  Rng rng(mix_seed(cfg.seed, 0xE1C0));
  p.projection = uniform_matrix(rng, d, f, bound);
  p.directions = uniform_matrix(rng, f, d, bound);
  Rng lrng(mix_seed(cfg.seed, 0x1AB3));
  p.label_embedding = uniform_matrix(lrng, static_cast<Eigen::Index>(kNumSubtypes), d, bound);
  if (cfg.mode == EncoderMode::Text) {
    Rng trng(mix_seed(cfg.seed, 0x7E47));
    p.embedding = uniform_matrix(trng, cfg.vocab, d, bound);
    p.cls_embedding = uniform_matrix(trng, d, 1, bound);
    for (int l = 0; l < cfg.layers; ++l) {
      TransformerBlock b;
      b.wq = uniform_matrix(trng, d, d, bound);
      b.wk = uniform_matrix(trng, d, d, bound);
      b.wv = uniform_matrix(trng, d, d, bound);
      b.wo = uniform_matrix(trng, d, d, bound);
      b.w1 = uniform_matrix(trng, 4 * d, d, bound);
      b.b1 = Vec::Zero(4 * d);
      b.w2 = uniform_matrix(trng, d, 4 * d, bound);
      b.b2 = Vec::Zero(d);
      b.ln1_gain = Vec::Ones(d);
      b.ln1_bias = Vec::Zero(d);
      b.ln2_gain = Vec::Ones(d);
      b.ln2_bias = Vec::Zero(d);
      p.blocks.push_back(std::move(b));
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Tokenizer

/// Lowercases, splits on whitespace and punctuation (a '.' between two digits
/// stays inside the number), hashes each token with FNV-1a 64 modulo `vocab`,
/// and keeps at most max_len - 1 ids (position 0 is reserved for [CLS]).
inline std::vector<std::uint32_t> tokenize(std::string_view text, int vocab = 4096, int max_len = 128) {
  std::vector<std::uint32_t> ids;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      ids.push_back(static_cast<std::uint32_t>(fnv1a64(cur) % static_cast<std::uint64_t>(vocab)));
      cur.clear();
    }
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto ch = static_cast<unsigned char>(text[i]);
    if (std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (ch == '.' && !cur.empty() && std::isdigit(static_cast<unsigned char>(cur.back())) &&
               i + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
      cur.push_back('.');
    } else {
      flush();
    }
  }
  flush();
  if (ids.empty()) throw Error(ErrorCode::EmptyText, "text has no tokens");
  const auto limit = static_cast<std::size_t>(max_len - 1);
  if (ids.size() > limit) ids.resize(limit);
  return ids;
}

// ---------------------------------------------------------------------------
// Text transformer

namespace detail {

inline Vec layer_norm(const Vec& x, const Vec& gain, const Vec& bias) {
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  return ((x.array() - mean) / std::sqrt(var + 1e-5)).matrix().cwiseProduct(gain) + bias;
}

inline double sinusoid(std::size_t pos, Eigen::Index i, Eigen::Index d) {
  const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
  const double angle = static_cast<double>(pos) * rate;
  return i % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

inline Vec softmax(const Vec& scores) {
  const double mx = scores.maxCoeff();
  Vec e = (scores.array() - mx).exp();
  return e / e.sum();
}

}  // namespace detail

/// Runs the text transformer over ids with [CLS] prepended. Returns hidden
/// states, one row per position. When `attention` is given, every head's
/// attention matrix (rows = queries) is appended to it.
inline Mat run_text_transformer(const EncoderParams& p, const std::vector<std::uint32_t>& ids,
                                std::vector<Mat>* attention = nullptr) {
  const auto d = static_cast<Eigen::Index>(p.config.d);
  const auto n = static_cast<Eigen::Index>(ids.size() + 1);
  Mat x(n, d);
  for (Eigen::Index t = 0; t < n; ++t) {
    for (Eigen::Index i = 0; i < d; ++i) {
      const double tok = t == 0 ? p.cls_embedding(i) : p.embedding(ids[static_cast<std::size_t>(t - 1)], i);
      x(t, i) = tok + detail::sinusoid(static_cast<std::size_t>(t), i, d);
    }
  }
  const auto heads = static_cast<Eigen::Index>(p.config.heads);
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& b : p.blocks) {
    Mat normed(n, d);
    for (Eigen::Index t = 0; t < n; ++t)
      normed.row(t) = detail::layer_norm(x.row(t).transpose(), b.ln1_gain, b.ln1_bias).transpose();
    const Mat q = normed * b.wq.transpose();
    const Mat k = normed * b.wk.transpose();
    const Mat v = normed * b.wv.transpose();
    Mat mixed(n, d);
    for (Eigen::Index h = 0; h < heads; ++h) {
      const auto qh = q.middleCols(h * dh, dh);
      const auto kh = k.middleCols(h * dh, dh);
      const auto vh = v.middleCols(h * dh, dh);
      Mat attn(n, n);
      for (Eigen::Index t = 0; t < n; ++t) {
        const Vec scores = (kh * qh.row(t).transpose()) * scale;
        attn.row(t) = detail::softmax(scores).transpose();
      }
      mixed.middleCols(h * dh, dh) = attn * vh;
      if (attention) attention->push_back(std::move(attn));
    }
    x += mixed * b.wo.transpose();
    for (Eigen::Index t = 0; t < n; ++t) {
      const Vec h2 = detail::layer_norm(x.row(t).transpose(), b.ln2_gain, b.ln2_bias);
      const Vec hidden = (b.w1 * h2 + b.b1).cwiseMax(0.0);
      x.row(t) += (b.w2 * hidden + b.b2).transpose();
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// Encoding

/// Encodes a record. Structured mode needs fitted preprocessing stats.
inline HiddenSequence encode(const CaseRecord& record, const EncoderParams& p, const PreprocessStats* stats) {
  HiddenSequence out;
  if (p.config.mode == EncoderMode::Text) {
    const auto ids = tokenize(record.narrative, p.config.vocab, p.config.max_len);
    const Mat h = run_text_transformer(p, ids);
    out.cls = h.row(0).transpose();
    out.tokens = h.bottomRows(h.rows() - 1);
    out.source_len = ids.size();
    return out;
  }
  if (!stats) throw Error(ErrorCode::BadConfig, "structured encoding requires preprocessing stats");
  const auto x = apply_preprocess(record.patient, *stats);
  const Eigen::Map<const Vec> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  out.cls = p.projection * xv;
  out.tokens = xv.asDiagonal() * p.directions;
  out.source_len = x.size();
  return out;
}

inline HiddenSequence encode(const CaseRecord& record, const EncoderParams& p, const PreprocessStats& stats) {
  return encode(record, p, &stats);
}

/// Structured-mode encoding from an already preprocessed feature vector.
inline HiddenSequence encode_features(const std::vector<double>& x, const EncoderParams& p) {
  const Eigen::Map<const Vec> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  HiddenSequence out;
  out.cls = p.projection * xv;
  out.tokens = xv.asDiagonal() * p.directions;
  out.source_len = x.size();
  return out;
}

/// Context form of a retrieved historical case: its encoding followed by one
/// label_embedding row per known subtype, in code order. Targets and index
/// keys never carry these rows.
inline HiddenSequence with_known_labels(HiddenSequence h, LabelSet labels, const EncoderParams& p) {
  const auto known = labels.labels();
  if (known.empty()) return h;
  const Eigen::Index base = h.tokens.rows();
  h.tokens.conservativeResize(base + static_cast<Eigen::Index>(known.size()), p.label_embedding.cols());
  for (std::size_t i = 0; i < known.size(); ++i)
    h.tokens.row(base + static_cast<Eigen::Index>(i)) = p.label_embedding.row(static_cast<Eigen::Index>(known[i]));
  return h;
}

struct ClsEmbedding {
  Vec unit;
  bool degenerate = false;  // cls had zero norm; `unit` is the first basis vector
};

inline ClsEmbedding normalize_cls(const Vec& cls) {
  const double norm = cls.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    Vec e = Vec::Zero(cls.size());
    if (e.size() > 0) e(0) = 1.0;
    return {e, true};
  }
  return {cls / norm, false};
}

inline ClsEmbedding embed_cls(const CaseRecord& record, const EncoderParams& p, const PreprocessStats* stats) {
  return normalize_cls(encode(record, p, stats).cls);
}

inline ClsEmbedding embed_cls(const CaseRecord& record, const EncoderParams& p, const PreprocessStats& stats) {
  return embed_cls(record, p, &stats);
}

/// Accumulates structured-encoder gradients given upstream gradients of cls
/// and of the token rows (either may be empty to skip).
inline void structured_backward(const std::vector<double>& x, const Vec& dcls, const Mat* dtokens, Mat& dprojection,
                                Mat& ddirections) {
  const Eigen::Map<const Vec> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  if (dcls.size() > 0) dprojection.noalias() += dcls * xv.transpose();
  if (dtokens) ddirections.noalias() += xv.asDiagonal() * (*dtokens);
}

}  // namespace brains
