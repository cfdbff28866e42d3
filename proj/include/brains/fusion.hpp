#pragma once

// Case fusion layer: single-head cross-attention of the target [CLS] vector
// over the concatenated hidden vectors of the retrieved cases, its analytic
// backward pass, training-time case masking, and prompt splicing at the
// <RAGHere> slot.
//
//   q = W_Q t            K = A W_K^T          V = A W_V^T  (W_V = W_K when shared)
//   s = K q / sqrt(d_k)  w = softmax(s) over unmasked rows
//   out = V^T w

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "brains/core/error.hpp"
#include "brains/core/rng.hpp"
#include "brains/encoder.hpp"
#include "brains/retrieval.hpp"

namespace brains {

struct FusionParams {
  int d_k = 64;
  bool shared_kv = true;
  Mat wq;  // d_k x d
  Mat wk;  // d_k x d
  Mat wv;  // d_k x d, empty when shared_kv

  const Mat& value_projection() const { return shared_kv ? wk : wv; }
  Eigen::Index input_dim() const { return wq.cols(); }
};

inline FusionParams init_fusion(int d, int d_k, bool shared_kv, std::uint64_t seed) {
  if (d < 1 || d_k < 1) throw Error(ErrorCode::BadConfig, "fusion needs d >= 1 and d_k >= 1", {{"d", d}, {"d_k", d_k}});
  Rng rng(mix_seed(seed, 0xF051));
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  FusionParams p;
  p.d_k = d_k;
  p.shared_kv = shared_kv;
  p.wq = uniform_matrix(rng, d_k, d, bound);
  p.wk = uniform_matrix(rng, d_k, d, bound);
  if (!shared_kv) p.wv = uniform_matrix(rng, d_k, d, bound);
  return p;
}

struct CaseBlock {
  std::string id;
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
};

struct ConcatMatrix {
  Mat rows;  // one hidden vector per row
  std::vector<CaseBlock> blocks;
  std::vector<bool> mask;  // true = excluded from attention

  std::size_t row_count() const { return static_cast<std::size_t>(rows.rows()); }
  std::size_t active_rows() const {
    std::size_t n = 0;
    for (bool m : mask) n += m ? 0 : 1;
    return n;
  }
};

/// Stacks [cls_i, tokens_i...] for each retrieved case in retrieval order.
inline ConcatMatrix build_concat(const RetrievedSet& retrieved, const std::vector<HiddenSequence>& sequences) {
  if (retrieved.empty()) throw Error(ErrorCode::EmptyRetrieval, "no retrieved cases to concatenate");
  if (sequences.size() != retrieved.size())
    throw Error(ErrorCode::DimensionMismatch, "one hidden sequence per retrieved case is required",
                {{"cases", retrieved.size()}, {"sequences", sequences.size()}});
  const Eigen::Index d = sequences.front().cls.size();
  Eigen::Index total = 0;
  for (const auto& s : sequences) {
    if (s.cls.size() != d || (s.tokens.rows() > 0 && s.tokens.cols() != d))
      throw Error(ErrorCode::DimensionMismatch, "hidden sequences disagree on dimension");
    total += 1 + s.tokens.rows();
  }
  ConcatMatrix a;
  a.rows.resize(total, d);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& s = sequences[i];
    const auto begin = static_cast<std::size_t>(r);
    a.rows.row(r++) = s.cls.transpose();
    if (s.tokens.rows() > 0) {
      a.rows.middleRows(r, s.tokens.rows()) = s.tokens;
      r += s.tokens.rows();
    }
    a.blocks.push_back({retrieved.cases[i].id, begin, static_cast<std::size_t>(r)});
  }
  a.mask.assign(static_cast<std::size_t>(total), false);
  return a;
}

struct MaskSpec {
  std::size_t m = 0;
  std::uint64_t seed = 0;
};

/// Masks every row of m case blocks chosen without replacement.
inline ConcatMatrix apply_mask(ConcatMatrix a, const MaskSpec& spec) {
  if (spec.m > a.blocks.size())
    throw Error(ErrorCode::BadConfig, "cannot mask more cases than were retrieved",
                {{"m", spec.m}, {"cases", a.blocks.size()}});
  Rng rng(spec.seed);
  for (auto b : rng.sample_without_replacement(a.blocks.size(), spec.m))
    for (std::size_t r = a.blocks[b].begin; r < a.blocks[b].end; ++r) a.mask[r] = true;
  return a;
}

struct FusionResult {
  Vec output;                       // d_k
  Vec weights;                      // one per row; masked rows are exactly 0
  bool no_evidence = false;         // no unmasked rows: output is the zero vector
  Vec query;                        // W_Q t
  std::vector<Eigen::Index> active; // unmasked row indices
  Mat keys;                         // |active| x d_k
  Mat values;                       // |active| x d_k
};

namespace detail {

inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline void check_finite(const Vec& t_cls, const ConcatMatrix& a, const FusionParams& p) {
  bool ok = t_cls.allFinite() && p.wq.allFinite() && p.wk.allFinite() && (p.shared_kv || p.wv.allFinite());
  for (Eigen::Index r = 0; ok && r < a.rows.rows(); ++r)
    if (!a.mask[static_cast<std::size_t>(r)] && !a.rows.row(r).allFinite()) ok = false;
  if (!ok) throw Error(ErrorCode::NonFiniteInput, "non-finite value entering the fusion layer");
}

}  // namespace detail

inline FusionResult fuse(const Vec& t_cls, const ConcatMatrix& a, const FusionParams& p) {
  if (t_cls.size() != p.input_dim() || (a.rows.rows() > 0 && a.rows.cols() != p.input_dim()))
    throw Error(ErrorCode::DimensionMismatch, "fusion input dimension mismatch",
                {{"expected", p.input_dim()}, {"t_cls", t_cls.size()}, {"rows", a.rows.cols()}});
  detail::check_finite(t_cls, a, p);
  FusionResult res;
  res.weights = Vec::Zero(a.rows.rows());
  res.query = p.wq * t_cls;
  for (Eigen::Index r = 0; r < a.rows.rows(); ++r)
    if (!a.mask[static_cast<std::size_t>(r)]) res.active.push_back(r);
  if (res.active.empty()) {
    res.output = Vec::Zero(p.d_k);
    res.no_evidence = true;
    return res;
  }
  const auto n = static_cast<Eigen::Index>(res.active.size());
  Mat active(n, a.rows.cols());
  for (Eigen::Index i = 0; i < n; ++i) active.row(i) = a.rows.row(res.active[static_cast<std::size_t>(i)]);
  res.keys = active * p.wk.transpose();
  res.values = p.shared_kv ? res.keys : Mat(active * p.wv.transpose());
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.d_k));
  const Vec scores = (res.keys * res.query) * scale;
  const double mx = scores.maxCoeff();
  Vec w = (scores.array() - mx).exp();
  w /= w.sum();
  for (Eigen::Index i = 0; i < n; ++i) res.weights(res.active[static_cast<std::size_t>(i)]) = w(i);
  res.output = res.values.transpose() * w;
  return res;
}

struct FusionGrads {
  Mat wq;
  Mat wk;
  Mat wv;  // empty when shared
  Vec t_cls;
  Mat a;  // same shape as the concat rows; masked rows are exactly 0
};

/// Analytic gradients of <upstream, fuse(t_cls, A)> with respect to the
/// projections, the query vector and every row of A.
inline FusionGrads fuse_backward(const Vec& t_cls, const ConcatMatrix& a, const FusionParams& p, const Vec& upstream) {
  if (upstream.size() != p.d_k)
    throw Error(ErrorCode::DimensionMismatch, "upstream gradient must have d_k entries",
                {{"expected", p.d_k}, {"got", upstream.size()}});
  if (!upstream.allFinite()) throw Error(ErrorCode::NonFiniteInput, "non-finite upstream gradient");
  const auto fwd = fuse(t_cls, a, p);
  FusionGrads g;
  g.wq = Mat::Zero(p.wq.rows(), p.wq.cols());
  g.wk = Mat::Zero(p.wk.rows(), p.wk.cols());
  if (!p.shared_kv) g.wv = Mat::Zero(p.wv.rows(), p.wv.cols());
  g.t_cls = Vec::Zero(t_cls.size());
  g.a = Mat::Zero(a.rows.rows(), a.rows.cols());
  if (fwd.no_evidence) return g;

  const auto n = static_cast<Eigen::Index>(fwd.active.size());
  Vec w(n);
  Mat active(n, a.rows.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = fwd.active[static_cast<std::size_t>(i)];
    w(i) = fwd.weights(r);
    active.row(i) = a.rows.row(r);
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.d_k));

  // out = V^T w
  const Mat dvalues = w * upstream.transpose();            // n x d_k
  const Vec dw = fwd.values * upstream;                    // n
  const Vec dscores = w.cwiseProduct((dw.array() - w.dot(dw)).matrix());
  const Vec dq = (fwd.keys.transpose() * dscores) * scale;  // d_k
  const Mat dkeys = (dscores * fwd.query.transpose()) * scale;

  g.wq = dq * t_cls.transpose();
  g.t_cls = p.wq.transpose() * dq;
  Mat da;
  if (p.shared_kv) {
    const Mat dproj = dkeys + dvalues;
    g.wk = dproj.transpose() * active;
    da = dproj * p.wk;
  } else {
    g.wk = dkeys.transpose() * active;
    g.wv = dvalues.transpose() * active;
    da = dkeys * p.wk + dvalues * p.wv;
  }
  for (Eigen::Index i = 0; i < n; ++i) g.a.row(fwd.active[static_cast<std::size_t>(i)]) = da.row(i);
  return g;
}

// ---------------------------------------------------------------------------
// Prompt sequence

enum class SlotRole { Bos, System, Instruction, Target, RagHere, Fused, Assistant, Eos };

constexpr std::string_view to_string(SlotRole r) {
  switch (r) {
    case SlotRole::Bos: return "<s>";
    case SlotRole::System: return "System";
    case SlotRole::Instruction: return "Instruction";
    case SlotRole::Target: return "Target";
    case SlotRole::RagHere: return "<RAGHere>";
    case SlotRole::Fused: return "Fused";
    case SlotRole::Assistant: return "Assistant";
    case SlotRole::Eos: return "</s>";
  }
  return "?";
}

struct PromptSlot {
  SlotRole role;
  std::string text;
  Vec embedding;  // d_k
};

struct PromptSequence {
  std::vector<PromptSlot> slots;

  std::size_t size() const { return slots.size(); }
  std::optional<std::size_t> find(SlotRole role) const {
    for (std::size_t i = 0; i < slots.size(); ++i)
      if (slots[i].role == role) return i;
    return std::nullopt;
  }
};

inline constexpr std::string_view kDefaultSystemPrompt =
    "You are a neurocognitive screening assistant. Using the patient's cognitive scores, brain volumetrics and "
    "demographics, together with the retrieved similar historical cases, decide which Alzheimer's disease subtypes "
    "apply: Early-Onset, Late-Onset, Familial, Sporadic, Atypical.";

/// Seven-slot template: <s>, System, Instruction, Target, <RAGHere>,
/// Assistant, </s>. Slot embeddings are fixed pseudo-random vectors.
inline PromptSequence default_prompt_template(int d_k, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x9807));
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_k));
  auto slot = [&](SlotRole role, std::string text) {
    return PromptSlot{role, std::move(text), uniform_matrix(rng, d_k, 1, bound)};
  };
  PromptSequence p;
  p.slots.push_back(slot(SlotRole::Bos, "<s>"));
  p.slots.push_back(slot(SlotRole::System, std::string(kDefaultSystemPrompt)));
  p.slots.push_back(slot(SlotRole::Instruction, "Assess the target case."));
  p.slots.push_back(slot(SlotRole::Target, "<target case>"));
  p.slots.push_back(slot(SlotRole::RagHere, "<RAGHere>"));
  p.slots.push_back(slot(SlotRole::Assistant, "Assistant:"));
  p.slots.push_back(slot(SlotRole::Eos, "</s>"));
  return p;
}

/// Replaces the single <RAGHere> slot with the fusion vector.
inline PromptSequence splice_prompt(PromptSequence prompt, const Vec& fusion) {
  std::optional<std::size_t> at;
  for (std::size_t i = 0; i < prompt.slots.size(); ++i) {
    if (prompt.slots[i].role != SlotRole::RagHere) continue;
    if (at) throw Error(ErrorCode::MultipleRagSlots, "template has more than one <RAGHere> slot");
    at = i;
  }
  if (!at) throw Error(ErrorCode::MissingRagSlot, "template has no <RAGHere> slot");
  prompt.slots[*at].role = SlotRole::Fused;
  prompt.slots[*at].embedding = fusion;
  return prompt;
}

}  // namespace brains
