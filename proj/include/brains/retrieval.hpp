#pragma once

// Exact cosine vector index, bilinear reranker and the two-stage
// retrieve-then-rerank path that yields the auxiliary case set.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "brains/casemodel.hpp"
#include "brains/core/binary_io.hpp"
#include "brains/core/digest.hpp"
#include "brains/core/error.hpp"
#include "brains/core/files.hpp"
#include "brains/encoder.hpp"

namespace brains {

struct IndexEntry {
  std::string id;
  std::vector<float> stored;  // persisted representation
  Vec unit;                   // stored / |stored|, used for scoring
  LabelSet labels;
  Sha256 digest{};
};

struct Candidate {
  std::string id;
  std::size_t entry = 0;
  double cosine = 0.0;
  std::optional<double> rerank;
};

/// Exact in-process index. Vectors are kept as float32 (the file format) and
/// scored in double after normalizing the stored floats.
class VectorIndex {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;
  static constexpr std::array<char, 8> kMagic = {'B', 'R', 'N', 'S', 'I', 'D', 'X', '\0'};

  VectorIndex() = default;
  explicit VectorIndex(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::uint64_t insertion_counter() const { return counter_; }
  const std::vector<IndexEntry>& entries() const { return entries_; }
  const IndexEntry& entry(std::size_t i) const { return entries_.at(i); }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
  }

  /// Appends a vector; it is normalized before being stored.
  void add(const std::string& id, std::span<const double> vector, LabelSet labels, const Sha256& digest) {
    if (vector.size() != dim_)
      throw Error(ErrorCode::DimensionMismatch, "vector dimension does not match index",
                  {{"expected", dim_}, {"got", vector.size()}});
    if (by_id_.count(id)) throw Error(ErrorCode::DuplicateId, "id already indexed: " + id, {{"id", id}});
    double norm = 0.0;
    for (double v : vector) norm += v * v;
    norm = std::sqrt(norm);
    if (!(norm > 0.0) || !std::isfinite(norm))
      throw Error(ErrorCode::NonFiniteInput, "cannot index a zero or non-finite vector", {{"id", id}});
    std::vector<float> stored(dim_);
    for (std::size_t i = 0; i < dim_; ++i) stored[i] = static_cast<float>(vector[i] / norm);
    push(id, std::move(stored), labels, digest);
  }

  void add(const std::string& id, const Vec& vector, LabelSet labels, const Sha256& digest) {
    add(id, std::span<const double>(vector.data(), static_cast<std::size_t>(vector.size())), labels, digest);
  }

  std::vector<std::uint8_t> serialize() const {
    bin::Writer w;
    w.bytes(kMagic.data(), kMagic.size());
    w.u32(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(dim_));
    w.u64(entries_.size());
    w.u64(counter_);
    for (const auto& e : entries_)
      for (float v : e.stored) w.f32(v);
    for (const auto& e : entries_) {
      w.str(e.id);
      w.u8(e.labels.bits());
      w.bytes(e.digest.data(), e.digest.size());
    }
    return std::move(w.data());
  }

  static VectorIndex deserialize(std::span<const std::uint8_t> bytes) {
    bin::Reader r(bytes.data(), bytes.size());
    auto corrupt = [](const std::string& why) { return Error(ErrorCode::CorruptIndex, why); };
    std::array<char, 8> magic{};
    r.bytes(magic.data(), magic.size());
    if (!r.ok() || magic != kMagic) throw corrupt("bad magic");
    const auto version = r.u32();
    if (!r.ok() || version != kFormatVersion)
      throw Error(ErrorCode::CorruptIndex, "unsupported index format version",
                  {{"found", version}, {"expected", kFormatVersion}});
    const auto dim = r.u32();
    const auto count = r.u64();
    const auto counter = r.u64();
    if (!r.ok() || dim == 0) throw corrupt("truncated header");
    if (count > r.remaining() / (std::size_t{dim} * 4)) throw corrupt("truncated vector block");
    VectorIndex index(dim);
    std::vector<std::vector<float>> vectors(count, std::vector<float>(dim));
    for (auto& v : vectors)
      for (auto& x : v) x = r.f32();
    for (std::size_t i = 0; i < count; ++i) {
      auto id = r.str(1u << 20);
      const auto bits = r.u8();
      Sha256 digest{};
      r.bytes(digest.data(), digest.size());
      if (!r.ok()) throw corrupt("truncated id table");
      if (bits > 0x1F) throw corrupt("bad label bits");
      if (index.by_id_.count(id)) throw corrupt("duplicate id in file");
      double norm = 0.0;
      for (float x : vectors[i]) norm += double(x) * double(x);
      if (!std::isfinite(norm) || std::abs(std::sqrt(norm) - 1.0) > 1e-6) throw corrupt("vector not unit norm");
      index.push(std::move(id), std::move(vectors[i]), LabelSet::from_bits(bits), digest);
    }
    if (r.remaining() != 0) throw corrupt("trailing bytes");
    index.counter_ = counter;
    return index;
  }

 private:
  void push(std::string id, std::vector<float> stored, LabelSet labels, const Sha256& digest) {
    IndexEntry e;
    e.id = std::move(id);
    e.stored = std::move(stored);
    e.unit.resize(static_cast<Eigen::Index>(dim_));
    double norm = 0.0;
    for (float v : e.stored) norm += double(v) * double(v);
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < dim_; ++i) e.unit(static_cast<Eigen::Index>(i)) = double(e.stored[i]) / norm;
    e.labels = labels;
    e.digest = digest;
    by_id_.emplace(e.id, entries_.size());
    entries_.push_back(std::move(e));
    ++counter_;
  }

  std::size_t dim_ = 0;
  std::vector<IndexEntry> entries_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::uint64_t counter_ = 0;
};

inline void index_save(const VectorIndex& index, const std::string& path) {
  write_file(path, index.serialize());
}

inline VectorIndex index_load(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return VectorIndex::deserialize(bytes);
}

inline Vec unit_query(std::span<const double> query) {
  Vec q(static_cast<Eigen::Index>(query.size()));
  double norm = 0.0;
  for (double v : query) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > 0.0) || !std::isfinite(norm)) throw Error(ErrorCode::NonFiniteInput, "query must be a finite non-zero vector");
  for (std::size_t i = 0; i < query.size(); ++i) q(static_cast<Eigen::Index>(i)) = query[i] / norm;
  return q;
}

// Score order: descending score, ties by ascending id.
inline bool ranks_before(double sa, const std::string& ida, double sb, const std::string& idb) {
  if (sa != sb) return sa > sb;
  return ida < idb;
}

/// Exhaustive cosine top-n1 search.
inline std::vector<Candidate> search(const VectorIndex& index, std::span<const double> query, std::size_t n1) {
  if (index.empty()) throw Error(ErrorCode::EmptyIndex, "search on an empty index");
  if (query.size() != index.dim())
    throw Error(ErrorCode::DimensionMismatch, "query dimension does not match index",
                {{"expected", index.dim()}, {"got", query.size()}});
  if (n1 == 0) throw Error(ErrorCode::BadRequest, "n1 must be at least 1");
  const Vec q = unit_query(query);
  std::vector<Candidate> all(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto& e = index.entry(i);
    double dot = 0.0;
    for (Eigen::Index j = 0; j < q.size(); ++j) dot += q(j) * e.unit(j);
    all[i] = Candidate{e.id, i, dot, std::nullopt};
  }
  const std::size_t n = std::min(n1, all.size());
  auto cmp = [](const Candidate& a, const Candidate& b) { return ranks_before(a.cosine, a.id, b.cosine, b.id); };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), cmp);
  all.resize(n);
  return all;
}

inline std::vector<Candidate> search(const VectorIndex& index, const Vec& query, std::size_t n1) {
  return search(index, std::span<const double>(query.data(), static_cast<std::size_t>(query.size())), n1);
}

// ---------------------------------------------------------------------------
// Reranking

struct RerankerParams {
  Mat m;  // d x d, identity at init
  bool trainable = false;

  static RerankerParams identity(int d) { return {Mat::Identity(d, d), false}; }
};

struct RetrievedCase {
  std::string id;
  std::size_t entry = 0;
  double cosine = 0.0;
  double rerank = 0.0;
};

struct RetrievedSet {
  std::vector<RetrievedCase> cases;
  std::size_t k_requested = 0;

  std::size_t size() const { return cases.size(); }
  bool empty() const { return cases.empty(); }
};

/// Folds M into the query once: s(q, c) = (M^T q) . c. The dot product runs
/// in the same order as search(), so M = I reproduces the cosine bit for bit.
inline Vec rerank_query(const Vec& q_unit, const Mat& m) { return m.transpose() * q_unit; }

inline double rerank_dot(const Vec& mq, const Vec& c_unit) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < mq.size(); ++j) s += mq(j) * c_unit(j);
  return s;
}

inline double rerank_score(const Vec& q_unit, const Mat& m, const Vec& c_unit) {
  return rerank_dot(rerank_query(q_unit, m), c_unit);
}

inline RetrievedSet rerank(std::span<const double> query, std::vector<Candidate> candidates, const VectorIndex& index,
                           const RerankerParams& params, std::size_t k) {
  if (candidates.empty()) throw Error(ErrorCode::EmptyRetrieval, "rerank needs at least one candidate");
  if (k == 0) throw Error(ErrorCode::BadRequest, "k must be at least 1");
  const Vec q = unit_query(query);
  const Vec mq = rerank_query(q, params.m);
  for (auto& c : candidates) c.rerank = rerank_dot(mq, index.entry(c.entry).unit);
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) { return ranks_before(*a.rerank, a.id, *b.rerank, b.id); });
  RetrievedSet out;
  out.k_requested = k;
  const std::size_t n = std::min(k, candidates.size());
  for (std::size_t i = 0; i < n; ++i)
    out.cases.push_back({candidates[i].id, candidates[i].entry, candidates[i].cosine, *candidates[i].rerank});
  return out;
}

inline RetrievedSet rerank(const Vec& query, std::vector<Candidate> candidates, const VectorIndex& index,
                           const RerankerParams& params, std::size_t k) {
  return rerank(std::span<const double>(query.data(), static_cast<std::size_t>(query.size())), std::move(candidates),
                index, params, k);
}

/// Auxiliary listwise objective for a trainable reranker: cross-entropy
/// between softmax(q^T M c_i) over the candidates and a target distribution
/// (e.g. proportional to label overlap). Adds dLoss/dM into `grad` if given.
inline double rerank_listwise_loss(const Vec& q_unit, const std::vector<Vec>& candidate_units, const Vec& target,
                                   const Mat& m, Mat* grad) {
  const auto n = static_cast<Eigen::Index>(candidate_units.size());
  Vec s(n);
  const Vec mq = rerank_query(q_unit, m);
  for (Eigen::Index i = 0; i < n; ++i) s(i) = rerank_dot(mq, candidate_units[static_cast<std::size_t>(i)]);
  const double mx = s.maxCoeff();
  Vec p = (s.array() - mx).exp();
  const double z = p.sum();
  p /= z;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (target(i) > 0) loss -= target(i) * ((s(i) - mx) - std::log(z));
  if (grad) {
    const double tsum = target.sum();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double coeff = tsum * p(i) - target(i);
      if (coeff != 0.0) grad->noalias() += coeff * q_unit * candidate_units[static_cast<std::size_t>(i)].transpose();
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Knowledge base: the index plus the records it was built from.

class KnowledgeBase {
 public:
  KnowledgeBase() = default;
  explicit KnowledgeBase(std::size_t dim) : index_(dim) {}

  const VectorIndex& index() const { return index_; }
  std::size_t size() const { return index_.size(); }
  bool empty() const { return index_.empty(); }

  const CaseRecord* find(const std::string& id) const {
    auto it = records_.find(id);
    return it == records_.end() ? nullptr : &it->second;
  }

  const std::unordered_map<std::string, CaseRecord>& records() const { return records_; }

  void add(const CaseRecord& record, const Vec& embedding) {
    index_.add(record.patient.id, embedding, record.labels, sha256(record.narrative));
    records_.emplace(record.patient.id, record);
  }

  /// Attaches records to an index loaded from disk. Every indexed id must be
  /// present in `corpus`.
  static KnowledgeBase attach(VectorIndex index, const std::vector<CaseRecord>& corpus) {
    KnowledgeBase kb;
    kb.index_ = std::move(index);
    std::unordered_map<std::string, const CaseRecord*> by_id;
    for (const auto& r : corpus) by_id.emplace(r.patient.id, &r);
    for (const auto& e : kb.index_.entries()) {
      auto it = by_id.find(e.id);
      if (it == by_id.end())
        throw Error(ErrorCode::NotFound, "indexed id missing from corpus: " + e.id, {{"id", e.id}});
      kb.records_.emplace(e.id, *it->second);
    }
    return kb;
  }

 private:
  VectorIndex index_;
  std::unordered_map<std::string, CaseRecord> records_;
};

inline KnowledgeBase build_knowledge_base(const std::vector<CaseRecord>& corpus, const EncoderParams& encoder,
                                          const PreprocessStats& stats) {
  KnowledgeBase kb(static_cast<std::size_t>(encoder.d()));
  for (const auto& r : corpus) kb.add(r, embed_cls(r, encoder, stats).unit);
  return kb;
}

struct RetrievalOptions {
  std::size_t k = 5;
  // First-stage candidate count; 0 selects min(1000, index size).
  std::size_t n1 = 0;
};

/// embed -> exact search -> drop the query's own id -> rerank to top k.
inline RetrievedSet retrieve_by_vector(const Vec& query, const std::string& query_id, const KnowledgeBase& kb,
                                       const RerankerParams& reranker, RetrievalOptions opt) {
  const auto& index = kb.index();
  const bool self_indexed = index.find(query_id).has_value();
  if (index.size() - (self_indexed ? 1 : 0) == 0)
    throw Error(ErrorCode::EmptyIndex, "no candidates after self-exclusion");
  const std::size_t n1 = opt.n1 == 0 ? std::min<std::size_t>(1000, index.size()) : opt.n1;
  // One extra slot so the dropped self-match does not shrink the candidate pool.
  auto candidates = search(index, query, n1 + (self_indexed ? 1 : 0));
  std::erase_if(candidates, [&](const Candidate& c) { return c.id == query_id; });
  if (candidates.size() > n1) candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(n1), candidates.end());
  if (candidates.empty()) throw Error(ErrorCode::EmptyIndex, "no candidates after self-exclusion");
  return rerank(query, std::move(candidates), index, reranker, opt.k);
}

inline RetrievedSet retrieve(const CaseRecord& record, const KnowledgeBase& kb, const EncoderParams& encoder,
                             const PreprocessStats& stats, const RerankerParams& reranker, RetrievalOptions opt = {}) {
  if (kb.empty()) throw Error(ErrorCode::EmptyIndex, "retrieval against an empty index");
  const auto q = embed_cls(record, encoder, stats);
  return retrieve_by_vector(q.unit, record.patient.id, kb, reranker, opt);
}

}  // namespace brains
