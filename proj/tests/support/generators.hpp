#pragma once

// Seeded random inputs for property tests.

#include <cmath>
#include <string>
#include <vector>

#include "brains/casemodel.hpp"
#include "brains/core/rng.hpp"
#include "brains/encoder.hpp"
#include "brains/fusion.hpp"

namespace gen {

using brains::Mat;
using brains::Rng;
using brains::Vec;

inline Vec vec(Rng& rng, Eigen::Index n, double scale = 1.0) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * rng.uniform(-1.0, 1.0);
  return v;
}

inline Mat mat(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.uniform(-1.0, 1.0);
  return m;
}

inline std::vector<double> gaussian(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

inline int pick(Rng& rng, std::initializer_list<int> options) {
  return *(options.begin() + static_cast<std::ptrdiff_t>(rng.below(options.size())));
}

inline brains::LabelSet labels(Rng& rng) { return brains::LabelSet::from_bits(static_cast<std::uint8_t>(rng.below(32))); }

inline std::string id(std::size_t i) {
  std::string s = std::to_string(i);
  return "c" + std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
}

/// A valid raw case with every optional field present or absent at random.
inline brains::json raw_case(Rng& rng, const std::string& case_id) {
  using brains::json;
  json j = {{"id", case_id},
            {"mmse", std::round(rng.uniform(0, 30))},
            {"cdr", brains::kCdrLevels[rng.below(5)]},
            {"age", std::round(rng.uniform(40, 95) * 10) / 10}};
  auto maybe = [&](const char* key, json value) {
    if (rng.bernoulli(0.7)) j[key] = std::move(value);
  };
  maybe("nwbv", std::round(rng.uniform(0.6, 0.85) * 1000) / 1000);
  maybe("etiv", std::round(rng.uniform(1100, 2000)));
  maybe("education", std::round(rng.uniform(6, 22)));
  maybe("ses", static_cast<int>(1 + rng.below(5)));
  maybe("gender", rng.bernoulli(0.5) ? "female" : "male");
  maybe("handedness", rng.bernoulli(0.9) ? "right" : "left");
  maybe("hippocampal_volume", std::round(rng.uniform(4, 9) * 10) / 10);
  maybe("amygdala_volume", std::round(rng.uniform(1, 2.5) * 10) / 10);
  maybe("ventricular_volume", std::round(rng.uniform(15, 80) * 10) / 10);
  maybe("temporal_thickness", std::round(rng.uniform(2, 3.2) * 100) / 100);
  maybe("wmh_load", std::round(rng.uniform(0, 30) * 10) / 10);
  maybe("apoe_e4_count", static_cast<int>(rng.below(3)));
  maybe("moca", std::round(rng.uniform(0, 30)));
  maybe("gds", std::round(rng.uniform(0, 15)));
  return j;
}

inline std::vector<brains::CaseRecord> corpus(Rng& rng, std::size_t n) {
  std::vector<brains::CaseRecord> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(brains::make_record(brains::validate_case(raw_case(rng, id(i))), labels(rng)));
  return out;
}

struct Blocks {
  std::vector<brains::HiddenSequence> sequences;
  brains::RetrievedSet retrieved;
};

/// K random case blocks of dimension d with 0..max_tokens tokens each.
inline Blocks blocks(Rng& rng, std::size_t k, Eigen::Index d, Eigen::Index max_tokens, double scale = 1.0) {
  Blocks b;
  for (std::size_t c = 0; c < k; ++c) {
    brains::HiddenSequence h;
    h.cls = vec(rng, d, scale);
    h.tokens = mat(rng, static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(max_tokens) + 1)), d, scale);
    h.source_len = static_cast<std::size_t>(h.tokens.rows());
    b.sequences.push_back(std::move(h));
    b.retrieved.cases.push_back({id(c), c, 0.0, 0.0});
  }
  b.retrieved.k_requested = k;
  return b;
}

inline brains::FusionParams fusion(Rng& rng, int d, int d_k, bool shared, double scale = 1.0) {
  brains::FusionParams p;
  p.d_k = d_k;
  p.shared_kv = shared;
  p.wq = mat(rng, d_k, d, scale);
  p.wk = mat(rng, d_k, d, scale);
  if (!shared) p.wv = mat(rng, d_k, d, scale);
  return p;
}

}  // namespace gen
