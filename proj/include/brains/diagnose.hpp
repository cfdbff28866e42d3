#pragma once

// Local diagnostic path: retrieval, case fusion, a linear head over
// [fusion slot | target cls] with per-label sigmoids, the label BCE loss,
// end-to-end analytic gradients, and the AdamW trainer with dynamic masking.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "brains/casemodel.hpp"
#include "brains/core/error.hpp"
#include "brains/core/rng.hpp"
#include "brains/encoder.hpp"
#include "brains/fusion.hpp"
#include "brains/retrieval.hpp"

namespace brains {

using Scores = std::array<double, kNumSubtypes>;

struct HeadParams {
  Mat w;  // kNumSubtypes x (d_k + d)
  Vec b;  // kNumSubtypes
};

struct TrainConfig {
  int epochs = 15;
  int batch_size = 4;
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  int mask_max = 4;
  int k = 5;
  std::size_t n1 = 0;
  std::uint64_t seed = 1;
  bool unfreeze_encoder = false;
  bool unfreeze_reranker = false;

  // Recorded for provenance only; the local trainer does not use them.
  int pretrain_epochs = 10;
  int pretrain_batch_size = 64;
  double pretrain_learning_rate = 1e-4;
  int warmup_steps = 1000;
  int token_block_size = 2048;
  double lora_alpha = 32;
  int lora_rank = 8;
};

inline json train_config_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
          {"beta1", c.beta1}, {"beta2", c.beta2}, {"epsilon", c.epsilon}, {"weight_decay", c.weight_decay},
          {"mask_max", c.mask_max}, {"k", c.k}, {"n1", c.n1}, {"seed", c.seed},
          {"unfreeze_encoder", c.unfreeze_encoder}, {"unfreeze_reranker", c.unfreeze_reranker},
          {"provenance", {{"pretrain_epochs", c.pretrain_epochs}, {"pretrain_batch_size", c.pretrain_batch_size},
                          {"pretrain_learning_rate", c.pretrain_learning_rate}, {"warmup_steps", c.warmup_steps},
                          {"token_block_size", c.token_block_size}, {"lora_alpha", c.lora_alpha},
                          {"lora_rank", c.lora_rank}}}};
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.mask_max = j.value("mask_max", c.mask_max);
  c.k = j.value("k", c.k);
  c.n1 = j.value("n1", c.n1);
  c.seed = j.value("seed", c.seed);
  c.unfreeze_encoder = j.value("unfreeze_encoder", c.unfreeze_encoder);
  c.unfreeze_reranker = j.value("unfreeze_reranker", c.unfreeze_reranker);
  if (auto it = j.find("provenance"); it != j.end()) {
    c.pretrain_epochs = it->value("pretrain_epochs", c.pretrain_epochs);
    c.pretrain_batch_size = it->value("pretrain_batch_size", c.pretrain_batch_size);
    c.pretrain_learning_rate = it->value("pretrain_learning_rate", c.pretrain_learning_rate);
    c.warmup_steps = it->value("warmup_steps", c.warmup_steps);
    c.token_block_size = it->value("token_block_size", c.token_block_size);
    c.lora_alpha = it->value("lora_alpha", c.lora_alpha);
    c.lora_rank = it->value("lora_rank", c.lora_rank);
  }
  return c;
}

inline void validate_train_config(const TrainConfig& c) {
  if (c.epochs < 0 || c.batch_size < 1 || !(c.learning_rate > 0) || c.mask_max < 0 || c.k < 0)
    throw Error(ErrorCode::BadConfig, "train config needs epochs >= 0, batch_size >= 1, learning_rate > 0",
                train_config_to_json(c));
}

struct ModelConfig {
  EncoderConfig encoder;
  int d_k = 64;
  bool shared_kv = true;
  std::uint64_t seed = 1;
  double threshold = 0.5;
  int k = 5;
  std::size_t n1 = 0;
};

struct Model {
  ModelConfig config;
  EncoderParams encoder;
  FusionParams fusion;
  HeadParams head;
  RerankerParams reranker;
  PreprocessStats stats;
  PromptSequence prompt;
  TrainConfig train;
};

inline Model init_model(const ModelConfig& cfg, const PreprocessStats& stats) {
  Model m;
  m.config = cfg;
  m.encoder = init_encoder(cfg.encoder);
  m.fusion = init_fusion(cfg.encoder.d, cfg.d_k, cfg.shared_kv, cfg.seed);
  const int in = cfg.d_k + cfg.encoder.d;
  Rng rng(mix_seed(cfg.seed, 0x4EAD));
  m.head.w = uniform_matrix(rng, kNumSubtypes, in, 1.0 / std::sqrt(static_cast<double>(in)));
  m.head.b = Vec::Zero(kNumSubtypes);
  m.reranker = RerankerParams::identity(cfg.encoder.d);
  m.stats = stats;
  m.prompt = default_prompt_template(cfg.d_k, cfg.seed);
  return m;
}

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kScoreClamp = 1e-7;

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Mean binary cross-entropy over the five labels; scores are clamped to
/// [1e-7, 1 - 1e-7].
inline double loss(const Scores& scores, LabelSet gold) {
  double total = 0.0;
  for (std::size_t l = 0; l < kNumSubtypes; ++l) {
    const double p = std::clamp(scores[l], kScoreClamp, 1.0 - kScoreClamp);
    total -= gold.contains(l) ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(kNumSubtypes);
}

/// log(sigmoid(z)) without forming 1 - sigmoid(z).
inline double log_sigmoid(double z) { return -(std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z)))); }

/// Same value as loss(sigmoid(logits), gold), computed in log space so that
/// saturated scores keep their precision.
inline double loss_from_logits(const Vec& logits, LabelSet gold) {
  const double lo = std::log(kScoreClamp), hi = std::log1p(-kScoreClamp);
  double total = 0.0;
  for (std::size_t l = 0; l < kNumSubtypes; ++l) {
    const double z = logits(static_cast<Eigen::Index>(l));
    total -= std::clamp(log_sigmoid(gold.contains(l) ? z : -z), lo, hi);
  }
  return total / static_cast<double>(kNumSubtypes);
}

/// dLoss/dlogit for sigmoid scores; zero where the clamp is active.
inline Vec loss_grad_logits(const Scores& scores, LabelSet gold) {
  Vec g(kNumSubtypes);
  for (std::size_t l = 0; l < kNumSubtypes; ++l) {
    const double p = scores[l];
    const bool clamped = p < kScoreClamp || p > 1.0 - kScoreClamp;
    const double y = gold.contains(l) ? 1.0 : 0.0;
    g(static_cast<Eigen::Index>(l)) = clamped ? 0.0 : (p - y) / static_cast<double>(kNumSubtypes);
  }
  return g;
}

inline LabelSet decide(const Scores& scores, double threshold) {
  LabelSet s;
  for (std::size_t l = 0; l < kNumSubtypes; ++l)
    if (scores[l] >= threshold) s.insert(static_cast<Subtype>(l));
  return s;
}

// ---------------------------------------------------------------------------
// Forward / backward over one example

/// Encoded target plus its encoded auxiliary cases. `target_x` and `case_x`
/// hold the structured feature vectors (empty in text mode).
struct Example {
  std::vector<double> target_x;
  HiddenSequence target;
  RetrievedSet retrieved;
  std::vector<std::vector<double>> case_x;
  std::vector<HiddenSequence> cases;
  LabelSet gold;
};

struct ForwardState {
  bool has_concat = false;
  ConcatMatrix concat;
  FusionResult fusion;
  PromptSequence prompt;
  std::size_t rag_slot = 0;
  Vec head_input;
  Vec logits;
  Scores scores{};
};

inline ForwardState forward(const Model& m, const Example& ex, const MaskSpec* mask = nullptr) {
  ForwardState st;
  if (!ex.retrieved.empty()) {
    st.has_concat = true;
    st.concat = build_concat(ex.retrieved, ex.cases);
    if (mask && mask->m > 0) st.concat = apply_mask(std::move(st.concat), *mask);
    st.fusion = fuse(ex.target.cls, st.concat, m.fusion);
  } else {
    st.fusion.output = Vec::Zero(m.fusion.d_k);
    st.fusion.no_evidence = true;
  }
  st.prompt = splice_prompt(m.prompt, st.fusion.output);
  st.rag_slot = *st.prompt.find(SlotRole::Fused);
  const auto dk = static_cast<Eigen::Index>(m.fusion.d_k);
  st.head_input.resize(dk + ex.target.cls.size());
  st.head_input << st.prompt.slots[st.rag_slot].embedding, ex.target.cls;
  st.logits = m.head.w * st.head_input + m.head.b;
  for (std::size_t l = 0; l < kNumSubtypes; ++l) st.scores[l] = sigmoid(st.logits(static_cast<Eigen::Index>(l)));
  return st;
}

/// Gradient buffers for every potentially trainable parameter.
struct Gradients {
  Mat head_w;
  Vec head_b;
  Mat wq, wk, wv;
  Mat projection, directions;
  Mat reranker;

  static Gradients zeros_like(const Model& m) {
    Gradients g;
    g.head_w = Mat::Zero(m.head.w.rows(), m.head.w.cols());
    g.head_b = Vec::Zero(m.head.b.size());
    g.wq = Mat::Zero(m.fusion.wq.rows(), m.fusion.wq.cols());
    g.wk = Mat::Zero(m.fusion.wk.rows(), m.fusion.wk.cols());
    g.wv = Mat::Zero(m.fusion.wv.rows(), m.fusion.wv.cols());
    g.projection = Mat::Zero(m.encoder.projection.rows(), m.encoder.projection.cols());
    g.directions = Mat::Zero(m.encoder.directions.rows(), m.encoder.directions.cols());
    g.reranker = Mat::Zero(m.reranker.m.rows(), m.reranker.m.cols());
    return g;
  }

  void scale(double s) {
    head_w *= s;
    head_b *= s;
    wq *= s;
    wk *= s;
    wv *= s;
    projection *= s;
    directions *= s;
    reranker *= s;
  }
};

/// Flat view of one parameter tensor and its gradient.
struct ParamView {
  std::string name;
  std::span<double> value;
  std::span<double> grad;
  bool decay;
};

template <typename T>
std::span<double> as_span(T& t) {
  return {t.data(), static_cast<std::size_t>(t.size())};
}

struct TrainableSet {
  bool encoder = false;
  bool reranker = false;
};

inline std::vector<ParamView> param_views(Model& m, Gradients& g, TrainableSet which) {
  std::vector<ParamView> v;
  v.push_back({"head.w", as_span(m.head.w), as_span(g.head_w), true});
  v.push_back({"head.b", as_span(m.head.b), as_span(g.head_b), false});
  v.push_back({"fusion.wq", as_span(m.fusion.wq), as_span(g.wq), true});
  v.push_back({"fusion.wk", as_span(m.fusion.wk), as_span(g.wk), true});
  if (!m.fusion.shared_kv) v.push_back({"fusion.wv", as_span(m.fusion.wv), as_span(g.wv), true});
  if (which.encoder) {
    v.push_back({"encoder.projection", as_span(m.encoder.projection), as_span(g.projection), true});
    v.push_back({"encoder.directions", as_span(m.encoder.directions), as_span(g.directions), true});
  }
  if (which.reranker) v.push_back({"reranker.m", as_span(m.reranker.m), as_span(g.reranker), false});
  return v;
}

/// Forward + backward of the label loss for one example; accumulates into
/// `g`. Encoder gradients are accumulated only when `encoder_grads` is set
/// (structured mode).
inline double accumulate_gradients(const Model& m, const Example& ex, const MaskSpec* mask, Gradients& g,
                                   bool encoder_grads) {
  const auto st = forward(m, ex, mask);
  const double l = loss_from_logits(st.logits, ex.gold);
  const Vec dlogits = loss_grad_logits(st.scores, ex.gold);
  g.head_w.noalias() += dlogits * st.head_input.transpose();
  g.head_b += dlogits;
  const Vec dinput = m.head.w.transpose() * dlogits;
  const auto dk = static_cast<Eigen::Index>(m.fusion.d_k);
  const Vec dfusion = dinput.head(dk);
  Vec dcls = dinput.tail(dinput.size() - dk);

  Mat dconcat;
  if (st.has_concat) {
    const auto fg = fuse_backward(ex.target.cls, st.concat, m.fusion, dfusion);
    g.wq += fg.wq;
    g.wk += fg.wk;
    if (!m.fusion.shared_kv) g.wv += fg.wv;
    dcls += fg.t_cls;
    dconcat = fg.a;
  }
  if (encoder_grads) {
    structured_backward(ex.target_x, dcls, nullptr, g.projection, g.directions);
    if (st.has_concat) {
      for (std::size_t c = 0; c < st.concat.blocks.size(); ++c) {
        const auto& blk = st.concat.blocks[c];
        const auto begin = static_cast<Eigen::Index>(blk.begin);
        // Feature-token rows only; known-label rows are not encoder outputs.
        const auto ntok = static_cast<Eigen::Index>(ex.case_x[c].size());
        const Vec dcase_cls = dconcat.row(begin).transpose();
        const Mat dtokens = dconcat.middleRows(begin + 1, ntok);
        structured_backward(ex.case_x[c], dcase_cls, &dtokens, g.projection, g.directions);
      }
    }
  }
  return l;
}

// ---------------------------------------------------------------------------
// Example assembly

/// Cache of encoded records keyed by id.
class EncodedCorpus {
 public:
  struct Item {
    std::vector<double> x;
    HiddenSequence hidden;   // as a target
    HiddenSequence context;  // as retrieved evidence (with known labels)
  };

  const Item& get(const CaseRecord& r, const Model& m) {
    auto it = items_.find(r.patient.id);
    if (it != items_.end()) return it->second;
    return items_.emplace(r.patient.id, encode_item(r, m)).first->second;
  }

  const RetrievedSet* neighbors(const std::string& id) const {
    auto it = neighbors_.find(id);
    return it == neighbors_.end() ? nullptr : &it->second;
  }
  void remember(const std::string& id, RetrievedSet r) { neighbors_.insert_or_assign(id, std::move(r)); }

  void clear_encodings() { items_.clear(); }
  void clear() {
    items_.clear();
    neighbors_.clear();
  }

  static Item encode_item(const CaseRecord& r, const Model& m) {
    Item item;
    if (m.encoder.config.mode == EncoderMode::Structured) {
      item.x = apply_preprocess(r.patient, m.stats);
      item.hidden = encode_features(item.x, m.encoder);
    } else {
      item.hidden = encode(r, m.encoder, nullptr);
    }
    item.context = with_known_labels(item.hidden, r.labels, m.encoder);
    return item;
  }

 private:
  std::unordered_map<std::string, Item> items_;
  std::unordered_map<std::string, RetrievedSet> neighbors_;
};

inline RetrievalOptions retrieval_options(const Model& m, std::optional<std::size_t> k) {
  return {k.value_or(static_cast<std::size_t>(m.config.k)), m.config.n1};
}

/// Encodes `record`, retrieves its auxiliary set from `kb` (k = 0 or an empty
/// base skips retrieval) and encodes the retrieved cases.
inline Example make_example(const CaseRecord& record, const Model& m, const KnowledgeBase& kb, std::size_t k,
                            EncodedCorpus* cache = nullptr) {
  Example ex;
  ex.gold = record.labels;
  auto target = cache ? cache->get(record, m) : EncodedCorpus::encode_item(record, m);
  ex.target_x = target.x;
  ex.target = target.hidden;
  const bool self_only = kb.size() == 1 && kb.index().find(record.patient.id);
  if (k == 0 || kb.empty() || self_only) return ex;
  if (const RetrievedSet* hit = cache ? cache->neighbors(record.patient.id) : nullptr; hit && hit->k_requested == k) {
    ex.retrieved = *hit;
  } else {
    const auto q = normalize_cls(ex.target.cls);
    ex.retrieved = retrieve_by_vector(q.unit, record.patient.id, kb, m.reranker, {k, m.config.n1});
    if (cache) cache->remember(record.patient.id, ex.retrieved);
  }
  for (const auto& rc : ex.retrieved.cases) {
    const CaseRecord* r = kb.find(rc.id);
    if (!r) throw Error(ErrorCode::NotFound, "retrieved id missing from knowledge base", {{"id", rc.id}});
    auto item = cache ? cache->get(*r, m) : EncodedCorpus::encode_item(*r, m);
    ex.case_x.push_back(item.x);
    ex.cases.push_back(item.context);
  }
  return ex;
}

// ---------------------------------------------------------------------------
// Prediction

enum class Backend { LocalFusion, RemoteConcat, LocalNoRag };

constexpr std::string_view to_string(Backend b) {
  switch (b) {
    case Backend::LocalFusion: return "local-fusion";
    case Backend::RemoteConcat: return "remote-concat";
    case Backend::LocalNoRag: return "local-no-rag";
  }
  return "?";
}

struct EvidenceItem {
  std::string id;
  double cosine = 0.0;
  double rerank = 0.0;
  LabelSet labels;
  double mmse = 0.0;
  double cdr = 0.0;
  double age = 0.0;
  std::optional<double> nwbv;
};

struct DiagnosisReport {
  std::string case_id;
  Scores scores{};
  double threshold = 0.5;
  LabelSet decided;
  std::vector<EvidenceItem> evidence;
  Backend backend = Backend::LocalNoRag;
  bool no_evidence = true;
  bool parse_failure = false;
  int attempts = 0;
  std::optional<std::string> explanation;
};

inline std::vector<EvidenceItem> evidence_of(const RetrievedSet& r, const KnowledgeBase& kb) {
  std::vector<EvidenceItem> out;
  for (const auto& c : r.cases) {
    EvidenceItem e{c.id, c.cosine, c.rerank};
    if (const CaseRecord* rec = kb.find(c.id)) {
      e.labels = rec->labels;
      e.mmse = rec->patient.mmse();
      e.cdr = rec->patient.cdr;
      e.age = rec->patient.age();
      e.nwbv = rec->patient[NumericField::Nwbv];
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline std::string explain(const DiagnosisReport& r) {
  std::string s;
  if (r.evidence.empty()) {
    s = "No retrieval context; decision from the target case alone.";
  } else {
    const auto& top = r.evidence.front();
    s = "Fused " + std::to_string(r.evidence.size()) + " similar case(s); closest " + top.id + " (cosine " +
        format_fixed(top.cosine, 3) + ").";
  }
  s += " Decided:";
  if (r.decided.empty()) s += " none";
  for (auto l : r.decided.labels()) s += std::string(" ") + std::string(kSubtypeNames[static_cast<std::size_t>(l)]);
  s += ".";
  return s;
}

/// retrieve -> encode -> concat -> fuse -> splice -> head -> sigmoid -> threshold.
/// An empty knowledge base (or k = 0) takes the retrieval-free path.
inline DiagnosisReport predict_local(const CaseRecord& record, const Model& m, const KnowledgeBase& kb,
                                     std::optional<std::size_t> k = std::nullopt) {
  const std::size_t kk = k.value_or(static_cast<std::size_t>(m.config.k));
  const Example ex = make_example(record, m, kb, kk);
  const auto st = forward(m, ex);
  DiagnosisReport rep;
  rep.case_id = record.patient.id;
  rep.scores = st.scores;
  rep.threshold = m.config.threshold;
  rep.decided = decide(st.scores, m.config.threshold);
  rep.no_evidence = st.fusion.no_evidence;
  rep.backend = ex.retrieved.empty() ? Backend::LocalNoRag : Backend::LocalFusion;
  rep.evidence = evidence_of(ex.retrieved, kb);
  rep.explanation = explain(rep);
  return rep;
}

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
};

class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}

  void step(std::vector<ParamView>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value.size(), 0.0);
        v_.emplace_back(p.value.size(), 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const double g = p.grad[j];
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
        const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.epsilon);
        if (p.decay) p.value[j] -= cfg_.learning_rate * cfg_.weight_decay * p.value[j];
        p.value[j] -= cfg_.learning_rate * update;
      }
    }
  }

  long steps() const { return t_; }

 private:
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

/// Relevance targets for the reranker objective: label-set Jaccard overlap.
inline double jaccard(LabelSet a, LabelSet b) {
  const auto u = a.unite(b).size();
  return u == 0 ? 1.0 : static_cast<double>(a.intersect(b).size()) / static_cast<double>(u);
}

/// Candidate pool for the reranker objective: first-stage neighbours of the
/// query (self excluded), capped at 4k.
inline double reranker_objective(const Model& m, const KnowledgeBase& kb, const CaseRecord& record, const Vec& cls,
                                 std::size_t k, Mat* grad) {
  const auto q = normalize_cls(cls);
  const std::size_t pool = std::min<std::size_t>(4 * std::max<std::size_t>(k, 1), kb.size());
  auto cands = search(kb.index(), q.unit, std::min(pool + 1, kb.size()));
  std::erase_if(cands, [&](const Candidate& c) { return c.id == record.patient.id; });
  if (cands.size() > pool) cands.resize(pool);
  if (cands.empty()) return 0.0;
  std::vector<Vec> units;
  Vec target(static_cast<Eigen::Index>(cands.size()));
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const auto& e = kb.index().entry(cands[i].entry);
    units.push_back(e.unit);
    target(static_cast<Eigen::Index>(i)) = jaccard(record.labels, e.labels);
  }
  const double tsum = target.sum();
  if (!(tsum > 0)) return 0.0;
  target /= tsum;
  return rerank_listwise_loss(q.unit, units, target, m.reranker.m, grad);
}

/// Mean label loss over a split without masking.
inline double evaluate_loss(const Model& m, const std::vector<CaseRecord>& split, const KnowledgeBase& kb, std::size_t k,
                            EncodedCorpus* cache = nullptr) {
  if (split.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : split) total += loss_from_logits(forward(m, make_example(r, m, kb, k, cache)).logits, r.labels);
  return total / static_cast<double>(split.size());
}

/// Trains head and fusion (and, when unfrozen, the structured encoder and the
/// reranker). `kb` must index the training split; with cfg.k == 0 the model
/// trains retrieval-free. The log starts with an epoch-0 entry holding the
/// initial losses.
using EpochCallback = std::function<void(const EpochLog&, const Model&)>;

inline TrainResult train(const std::vector<CaseRecord>& train_split, const std::vector<CaseRecord>& val_split,
                         const TrainConfig& cfg, Model model, KnowledgeBase kb, const EpochCallback& on_epoch = {}) {
  validate_train_config(cfg);
  if (train_split.empty()) throw Error(ErrorCode::EmptyTrainSplit, "training split is empty");
  model.train = cfg;
  model.config.k = cfg.k;
  model.config.n1 = cfg.n1;
  const auto k = static_cast<std::size_t>(cfg.k);
  const TrainableSet which{cfg.unfreeze_encoder && model.encoder.config.mode == EncoderMode::Structured,
                           cfg.unfreeze_reranker};

  TrainResult result;
  EncodedCorpus cache;
  result.log.push_back({0, evaluate_loss(model, train_split, kb, k, &cache), evaluate_loss(model, val_split, kb, k, &cache)});

  AdamW opt(cfg);
  std::vector<std::size_t> order(train_split.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::uint64_t step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng epoch_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    epoch_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Gradients g = Gradients::zeros_like(model);
      for (std::size_t b = start; b < end; ++b) {
        const auto& rec = train_split[order[b]];
        const Example ex = make_example(rec, model, kb, k, &cache);
        Rng mask_rng(mix_seed(cfg.seed ^ 0x3A5C, step * 1000003ULL + b));
        const std::size_t max_m = std::min<std::size_t>(static_cast<std::size_t>(cfg.mask_max), ex.retrieved.size());
        const MaskSpec mask{static_cast<std::size_t>(mask_rng.below(max_m + 1)), mask_rng.next()};
        accumulate_gradients(model, ex, &mask, g, which.encoder);
        if (which.reranker && k > 0) reranker_objective(model, kb, rec, ex.target.cls, k, &g.reranker);
      }
      g.scale(1.0 / static_cast<double>(end - start));
      auto views = param_views(model, g, which);
      opt.step(views);
      ++step;
      if (which.encoder) cache.clear_encodings();
    }
    // Neighbour lists are refreshed once per epoch when retrieval is trainable.
    if (which.encoder || which.reranker) {
      if (which.encoder) kb = build_knowledge_base(train_split, model.encoder, model.stats);
      cache.clear();
    }
    result.log.push_back({epoch, evaluate_loss(model, train_split, kb, k, &cache),
                          evaluate_loss(model, val_split, kb, k, &cache)});
    if (on_epoch) on_epoch(result.log.back(), model);
  }
  result.model = std::move(model);
  return result;
}

}  // namespace brains
