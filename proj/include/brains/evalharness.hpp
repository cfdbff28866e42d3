#pragma once

// Metrics (exact-set correct, micro P/R/F1 by gold cardinality) and the
// variant-ladder experiment runner.

#include <chrono>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "brains/casemodel.hpp"
#include "brains/checkpoint.hpp"
#include "brains/core/digest.hpp"
#include "brains/core/error.hpp"
#include "brains/diagnose.hpp"
#include "brains/remote.hpp"
#include "brains/retrieval.hpp"

namespace brains {

enum class Bucket { Single, Double, Triple, Other };

constexpr std::string_view to_string(Bucket b) {
  switch (b) {
    case Bucket::Single: return "single";
    case Bucket::Double: return "double";
    case Bucket::Triple: return "triple";
    case Bucket::Other: return "other";
  }
  return "other";
}

inline Bucket cardinality_bucket(LabelSet gold) {
  switch (gold.size()) {
    case 1: return Bucket::Single;
    case 2: return Bucket::Double;
    case 3: return Bucket::Triple;
    default: return Bucket::Other;
  }
}

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;

  void add(LabelSet decided, LabelSet gold) {
    tp += decided.intersect(gold).size();
    fp += decided.minus(gold).size();
    fn += gold.minus(decided).size();
  }
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Counts counts;
};

inline Prf prf(const Counts& c) {
  Prf p;
  p.counts = c;
  p.precision = c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  p.recall = c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  p.f1 = p.precision + p.recall == 0.0 ? 0.0 : 2.0 * p.precision * p.recall / (p.precision + p.recall);
  return p;
}

struct MetricsReport {
  std::size_t total = 0;
  double correct = 0.0;
  Prf overall;
  Prf single, double_, triple;
  std::size_t count_single = 0, count_double = 0, count_triple = 0, count_other = 0;
};

using Pair = std::pair<LabelSet, LabelSet>;  // (decided, gold)

inline MetricsReport compute_metrics(const std::vector<Pair>& pairs) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyPairs, "compute_metrics needs at least one pair");
  Counts all, s, d, t;
  MetricsReport m;
  std::size_t exact = 0;
  for (const auto& [decided, gold] : pairs) {
    exact += decided == gold;
    all.add(decided, gold);
    switch (cardinality_bucket(gold)) {
      case Bucket::Single: s.add(decided, gold); ++m.count_single; break;
      case Bucket::Double: d.add(decided, gold); ++m.count_double; break;
      case Bucket::Triple: t.add(decided, gold); ++m.count_triple; break;
      case Bucket::Other: ++m.count_other; break;
    }
  }
  m.total = pairs.size();
  m.correct = static_cast<double>(exact) / static_cast<double>(pairs.size());
  m.overall = prf(all);
  m.single = prf(s);
  m.double_ = prf(d);
  m.triple = prf(t);
  return m;
}

// ---------------------------------------------------------------------------
// Table

struct TableRow {
  std::string name;
  std::optional<double> correct, f1;
  std::array<std::optional<double>, 3> precision{}, recall{}, bucket_f1{};  // single, double, triple
  std::optional<long long> wall_ms;
  std::string note;
};

inline TableRow table_row(const std::string& name, const MetricsReport& m, std::optional<long long> wall_ms = {}) {
  TableRow r;
  r.name = name;
  r.correct = m.correct;
  r.f1 = m.overall.f1;
  const std::array<const Prf*, 3> b = {&m.single, &m.double_, &m.triple};
  for (std::size_t i = 0; i < 3; ++i) {
    r.precision[i] = b[i]->precision;
    r.recall[i] = b[i]->recall;
    r.bucket_f1[i] = b[i]->f1;
  }
  r.wall_ms = wall_ms;
  return r;
}

inline std::string format_table(const std::vector<TableRow>& rows) {
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", *v);
    return std::string(buf);
  };
  std::size_t name_w = 5;
  for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
  std::string out;
  char line[512];
  std::snprintf(line, sizeof line, "%-*s | %-13s | %-20s | %-20s | %-20s | %s\n", static_cast<int>(name_w), "",
                "All", "Single", "Double", "Triple", "");
  out += line;
  std::snprintf(line, sizeof line, "%-*s | %6s %6s | %6s %6s %6s | %6s %6s %6s | %6s %6s %6s | %s\n",
                static_cast<int>(name_w), "Model", "Corr.", "F1", "Prec.", "Rec.", "F1", "Prec.", "Rec.", "F1",
                "Prec.", "Rec.", "F1", "Wall ms");
  out += line;
  out += std::string(name_w, '-') + "-+-" + std::string(13, '-') + "-+-" + std::string(20, '-') + "-+-" +
         std::string(20, '-') + "-+-" + std::string(20, '-') + "-+-" + std::string(7, '-') + "\n";
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-*s | %6s %6s | %6s %6s %6s | %6s %6s %6s | %6s %6s %6s | %s",
                  static_cast<int>(name_w), r.name.c_str(), cell(r.correct).c_str(), cell(r.f1).c_str(),
                  cell(r.precision[0]).c_str(), cell(r.recall[0]).c_str(), cell(r.bucket_f1[0]).c_str(),
                  cell(r.precision[1]).c_str(), cell(r.recall[1]).c_str(), cell(r.bucket_f1[1]).c_str(),
                  cell(r.precision[2]).c_str(), cell(r.recall[2]).c_str(), cell(r.bucket_f1[2]).c_str(),
                  r.wall_ms ? std::to_string(*r.wall_ms).c_str() : "-");
    out += line;
    if (!r.note.empty()) out += "  (" + r.note + ")";
    out += "\n";
  }
  out += "Correct = exact label-set match; P/R/F1 are micro-averaged, bucketed by gold cardinality.\n";
  return out;
}

// ---------------------------------------------------------------------------
// Experiment

struct Variant {
  enum class Kind { NoRag, Rag, Brains } kind;
  std::string name;
  int k = 0;  // brains: retrieval depth; rag: concatenated cases
};

inline Variant parse_variant(const std::string& name) {
  if (name == "no-rag") return {Variant::Kind::NoRag, name, 0};
  auto number = [&](std::size_t from) -> int {
    const auto tail = name.substr(from);
    if (tail.empty() || tail.size() > 3 || !std::all_of(tail.begin(), tail.end(), ::isdigit))
      throw Error(ErrorCode::BadConfig, "unknown variant " + name, {{"variant", name}});
    return std::stoi(tail);
  };
  if (name.rfind("rag-", 0) == 0) return {Variant::Kind::Rag, name, number(4)};
  if (name.rfind("brains-k", 0) == 0) {
    const int k = number(8);
    if (k < 1) throw Error(ErrorCode::BadConfig, "brains variant needs k >= 1", {{"variant", name}});
    return {Variant::Kind::Brains, name, k};
  }
  throw Error(ErrorCode::BadConfig, "unknown variant " + name, {{"variant", name}});
}

struct ExperimentConfig {
  std::vector<std::string> variants = {"no-rag", "rag-1", "rag-2", "brains-k5"};
  std::uint64_t corpus_seed = 42;
  GeneratorConfig generator = [] {
    GeneratorConfig g;
    g.n = 2000;
    return g;
  }();
  SplitRatios ratios;
  ModelConfig model;
  TrainConfig train = [] {
    TrainConfig t;
    t.learning_rate = 1e-2;
    t.epochs = 30;
    return t;
  }();
  RemoteBackendConfig backend;
  std::optional<std::string> output_path;
  bool timing = false;
  // Pre-trained brains model; when absent brains variants train one.
  std::optional<Model> brains_model;
  // Corpus to split instead of generating one.
  std::optional<std::vector<CaseRecord>> corpus;
};

inline json experiment_config_to_json(const ExperimentConfig& c) {
  return {{"variants", c.variants},
          {"corpus", {{"seed", c.corpus_seed},
                      {"generator", generator_config_to_json(c.generator)},
                      {"supplied", c.corpus ? sha256_hex(to_jsonl(*c.corpus)) : ""}}},
          {"ratios", {c.ratios.train, c.ratios.val, c.ratios.test}},
          {"model", model_config_to_json(c.model)},
          {"train", train_config_to_json(c.train)},
          {"backend", backend_config_to_json(c.backend)},
          {"pretrained", c.brains_model ? to_hex(checkpoint_digest(*c.brains_model)) : ""}};
}

inline std::string split_digest(const std::vector<CaseRecord>& split) {
  std::string ids;
  for (const auto& r : split) ids += r.patient.id + "\n";
  return sha256_hex(ids);
}

inline json prf_json(const Prf& p) { return {{"p", p.precision}, {"r", p.recall}, {"f1", p.f1}}; }

struct VariantResult {
  std::string name;
  std::optional<MetricsReport> metrics;
  long long wall_ms = 0;
  std::size_t parse_failures = 0;
  std::optional<json> failure;
};

struct ExperimentReport {
  json report;
  std::string table;
  std::vector<VariantResult> variants;
  std::optional<Model> brains_model;
};

inline json variant_json(const VariantResult& v, const std::string& test_digest, bool timing) {
  json j = {{"name", v.name}, {"test_split_digest", test_digest}};
  if (v.metrics) {
    const auto& m = *v.metrics;
    j["overall"] = {{"correct", m.correct}, {"f1", m.overall.f1}};
    j["single"] = prf_json(m.single);
    j["double"] = prf_json(m.double_);
    j["triple"] = prf_json(m.triple);
    j["bucket_counts"] = {{"single", m.count_single}, {"double", m.count_double}, {"triple", m.count_triple},
                          {"other", m.count_other}};
  } else {
    j["overall"] = nullptr;
  }
  j["wall_ms"] = timing ? json(v.wall_ms) : json(nullptr);
  if (v.parse_failures > 0) j["parse_failures"] = v.parse_failures;
  if (v.failure) j["failure"] = *v.failure;
  return j;
}

/// generate -> split -> fit stats -> index train split -> train the local
/// variants -> evaluate every variant on the same test split. A failing
/// variant is reported with a failure tag; the others still run.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  if (cfg.variants.empty()) throw Error(ErrorCode::BadConfig, "experiment needs at least one variant");
  std::vector<Variant> variants;
  for (const auto& v : cfg.variants) variants.push_back(parse_variant(v));

  const auto corpus = cfg.corpus ? *cfg.corpus : generate_synthetic(cfg.generator, cfg.corpus_seed);
  const auto splits = split_corpus(corpus, cfg.ratios, cfg.corpus_seed);
  const auto stats = fit_preprocess(splits.train);
  const std::string test_digest = split_digest(splits.test);

  ModelConfig mc = cfg.model;
  const Model base = init_model(mc, stats);
  const KnowledgeBase kb = build_knowledge_base(splits.train, base.encoder, stats);

  ExperimentReport out;
  std::vector<TableRow> rows;
  using clock = std::chrono::steady_clock;

  for (const auto& v : variants) {
    VariantResult res;
    res.name = v.name;
    const auto t0 = clock::now();
    try {
      std::vector<Pair> pairs;
      if (v.kind == Variant::Kind::NoRag) {
        TrainConfig tc = cfg.train;
        tc.k = 0;
        tc.unfreeze_reranker = false;
        const auto trained = train(splits.train, splits.val, tc, base, kb).model;
        for (const auto& r : splits.test) pairs.emplace_back(predict_local(r, trained, kb, 0).decided, r.labels);
      } else if (v.kind == Variant::Kind::Brains) {
        if (!out.brains_model) {
          if (cfg.brains_model) {
            out.brains_model = *cfg.brains_model;
          } else {
            TrainConfig tc = cfg.train;
            tc.k = v.k;
            out.brains_model = train(splits.train, splits.val, tc, base, kb).model;
          }
        }
        const Model& m = *out.brains_model;
        const KnowledgeBase ekb = build_knowledge_base(splits.train, m.encoder, m.stats);
        for (const auto& r : splits.test)
          pairs.emplace_back(predict_local(r, m, ekb, static_cast<std::size_t>(v.k)).decided, r.labels);
      } else {
        RemoteBackendConfig bc = cfg.backend;
        bc.concat_cases = v.k;
        for (const auto& r : splits.test) {
          RetrievedSet retrieved;
          if (v.k > 0) {
            const auto q = embed_cls(r, base.encoder, stats);
            retrieved = retrieve_by_vector(q.unit, r.patient.id, kb, base.reranker,
                                           {static_cast<std::size_t>(v.k), mc.n1});
          }
          const auto rep = predict_remote(r, retrieved, kb, bc, base.prompt);
          res.parse_failures += rep.parse_failure;
          pairs.emplace_back(rep.decided, r.labels);
        }
      }
      res.metrics = compute_metrics(pairs);
    } catch (const Error& e) {
      res.failure = json{{"code", to_string(e.code())}, {"message", e.message()}, {"detail", e.detail()}};
    }
    res.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(clock::now() - t0).count();
    TableRow row = res.metrics ? table_row(v.name, *res.metrics, res.wall_ms) : TableRow{};
    row.name = v.name;
    row.wall_ms = res.wall_ms;
    if (res.failure) row.note = "failed: " + (*res.failure)["code"].get<std::string>();
    else if (res.parse_failures) row.note = std::to_string(res.parse_failures) + " unparseable replies";
    rows.push_back(row);
    out.variants.push_back(std::move(res));
  }

  const json cfg_json = experiment_config_to_json(cfg);
  json report = {{"config_digest", sha256_hex(cfg_json.dump())},
                 {"corpus", {{"seed", cfg.corpus_seed}, {"size", corpus.size()}}},
                 {"averaging", "micro"},
                 {"test_split_digest", test_digest},
                 {"variants", json::array()}};
  for (const auto& v : out.variants) report["variants"].push_back(variant_json(v, test_digest, cfg.timing));
  out.report = std::move(report);
  out.table = format_table(rows);
  if (cfg.output_path) write_file(*cfg.output_path, out.report.dump(2) + "\n");
  return out;
}

}  // namespace brains
