// Acceptance runner: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "brains/brains.hpp"
#include "support/checks.hpp"
#include "support/mock_chat_server.hpp"

#include <httplib.h>

using namespace brains;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

Outcome fail(std::string why) { return {false, std::move(why)}; }

int failures = 0;

void criterion(const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = fail(std::string("threw ") + e.what());
  }
  const auto secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  failures += !o.pass;
  std::ostringstream line;
  line << (o.pass ? "PASS " : "FAIL ") << name;
  if (!o.detail.empty()) line << " (" << o.detail << ")";
  line.precision(1);
  line << std::fixed << " [" << secs << "s]";
  std::cout << line.str() << std::endl;
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(3);
  s << std::scientific << v;
  return s.str();
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, std::string* out = nullptr) {
  const std::string cmd = std::string(BRAINS_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return -1;
  std::string text;
  char buf[4096];
  for (std::size_t n; (n = fread(buf, 1, sizeof buf, p)) > 0;) text.append(buf, n);
  const int status = pclose(p);
  if (out) *out = text;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Internal;
}

Outcome attention_normalization() {
  Rng rng(1001);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) worst = std::max(worst, checks::weight_sum_error(rng));
  const std::string d = "10000 calls, worst |sum-1| " + num(worst);
  return worst <= 1e-9 ? Outcome{true, d} : fail(d);
}

Outcome gradient_correctness() {
  Rng rng(1002);
  double fusion = 0.0, e2e = 0.0;
  for (int i = 0; i < 100; ++i) fusion = std::max(fusion, checks::fusion_gradient_error(rng));
  for (std::uint64_t i = 0; i < 25; ++i) e2e = std::max(e2e, checks::end_to_end_gradient_error(rng, 500 + i));
  const std::string d = "fusion 100 worst " + num(fusion) + ", end-to-end 25 worst " + num(e2e);
  return fusion <= 1e-4 && e2e <= 1e-4 ? Outcome{true, d} : fail(d);
}

Outcome retrieval_oracle() {
  Rng rng(1003);
  for (int i = 0; i < 1000; ++i)
    if (!checks::search_matches_oracle(rng)) return fail("corpus " + std::to_string(i) + " differs");
  return {true, "1000 corpora"};
}

Outcome masking_invariance() {
  Rng rng(1004);
  for (int i = 0; i < 500; ++i)
    if (!checks::masking_invariant(rng)) return fail("trial " + std::to_string(i));
  return {true, "500 trials"};
}

Outcome metrics_fixture() {
  auto L = [](std::initializer_list<int> ones) {
    LabelSet s;
    for (int l : ones) s.insert(static_cast<Subtype>(l - 1));
    return s;
  };
  const auto m = compute_metrics({{L({1}), L({1})}, {L({2}), L({1, 2})}, {L({3, 4}), L({3})}, {L({}), L({5})}});
  const double f1 = 2 * 0.75 * 0.6 / 1.35;
  const bool ok = m.overall.counts.tp == 3 && m.overall.counts.fp == 1 && m.overall.counts.fn == 2 &&
                  std::abs(m.overall.precision - 0.75) <= 1e-12 && std::abs(m.overall.recall - 0.6) <= 1e-12 &&
                  std::abs(m.overall.f1 - f1) <= 1e-9 && m.correct == 0.25;
  std::ostringstream d;
  d << "P " << m.overall.precision << " R " << m.overall.recall << " F1 " << m.overall.f1 << " correct " << m.correct;
  return ok ? Outcome{true, d.str()} : fail(d.str());
}

Outcome directional_ablation() {
  mock::ChatServer chat({}, mock::echo_neighbors);
  ExperimentConfig cfg;
  cfg.backend.base_url = chat.url();
  const auto rep = run_experiment(cfg);
  std::map<std::string, double> acc;
  for (const auto& v : rep.variants) {
    if (!v.metrics) return fail(v.name + " failed");
    acc[v.name] = v.metrics->correct;
  }
  std::cout << rep.table;
  std::ostringstream d;
  d.precision(3);
  d << std::fixed << "no-rag " << acc["no-rag"] << ", rag-1 " << acc["rag-1"] << ", rag-2 " << acc["rag-2"]
    << ", brains-k5 " << acc["brains-k5"];
  const double brains = acc["brains-k5"];
  const bool ok = brains - acc["no-rag"] >= 0.05 && acc["rag-1"] <= brains && acc["rag-2"] <= brains;
  return ok ? Outcome{true, d.str()} : fail(d.str());
}

Outcome determinism(const std::filesystem::path& root) {
  std::vector<std::string> runs[2];
  for (int r = 0; r < 2; ++r) {
    const auto dir = root / ("run" + std::to_string(r));
    std::filesystem::create_directories(dir);
    auto p = [&](const char* name) { return (dir / name).string(); };
    std::string train_out, eval_out;
    if (run_cli("generate --n 300 --seed 11 --out " + p("corpus.jsonl")) != 0) return fail("generate failed");
    if (run_cli("train --corpus " + p("corpus.jsonl") + " --epochs 2 --seed 11 --out " + p("m.ckpt"), &train_out) != 0)
      return fail("train failed");
    if (run_cli("index --corpus " + p("corpus.jsonl") + " --checkpoint " + p("m.ckpt") + " --out " + p("c.idx")) != 0)
      return fail("index failed");
    if (run_cli("eval --corpus " + p("corpus.jsonl") + " --seed 11 --variants no-rag,brains-k5 --checkpoint " +
                    p("m.ckpt") + " --out " + p("report.json"),
                &eval_out) != 0)
      return fail("eval failed");
    runs[r] = {slurp(p("corpus.jsonl")), slurp(p("c.idx")), json::parse(train_out)["digest"].get<std::string>(),
               slurp(p("m.ckpt")), slurp(p("report.json"))};
  }
  const char* names[] = {"corpus", "index", "checkpoint digest", "checkpoint bytes", "report"};
  for (std::size_t i = 0; i < runs[0].size(); ++i) {
    if (runs[0][i].empty()) return fail(std::string(names[i]) + " empty");
    if (runs[0][i] != runs[1][i]) return fail(std::string(names[i]) + " differs");
  }
  return {true, "corpus, index, checkpoint, report identical across two runs"};
}

Outcome round_trips(const std::filesystem::path& root) {
  GeneratorConfig g;
  g.n = 120;
  g.stratum_size = 5;
  const auto corpus = generate_synthetic(g, 13);
  ModelConfig mc;
  mc.encoder.d = 16;
  mc.d_k = 8;
  mc.seed = 13;
  Model m = init_model(mc, fit_preprocess(corpus));
  TrainConfig tc;
  tc.epochs = 1;
  tc.learning_rate = 1e-2;
  tc.unfreeze_reranker = true;
  m = train(corpus, {}, tc, m, build_knowledge_base(corpus, m.encoder, m.stats)).model;
  const auto kb = build_knowledge_base(corpus, m.encoder, m.stats);

  const auto ipath = (root / "rt.idx").string(), cpath = (root / "rt.ckpt").string();
  index_save(kb.index(), ipath);
  const auto index = index_load(ipath);
  if (index.serialize() != kb.index().serialize()) return fail("index bytes changed");
  Rng rng(1008);
  for (int i = 0; i < 100; ++i) {
    const auto q = gen::gaussian(rng, static_cast<std::size_t>(index.dim()));
    const auto a = search(kb.index(), std::span<const double>(q), 10), b = search(index, std::span<const double>(q), 10);
    if (checks::ids_of(a) != checks::ids_of(b)) return fail("query results differ");
    for (std::size_t j = 0; j < a.size(); ++j)
      if (a[j].cosine != b[j].cosine) return fail("query scores differ");
  }

  const auto digest = checkpoint_save(m, cpath);
  const auto loaded = checkpoint_load(cpath).model;
  if (checkpoint_digest(loaded) != digest) return fail("checkpoint digest changed");
  const auto kb2 = KnowledgeBase::attach(index, corpus);
  for (std::size_t i = 0; i < 50; ++i) {
    const auto a = predict_local(corpus[i], m, kb), b = predict_local(corpus[i], loaded, kb2);
    if (a.scores != b.scores || a.decided != b.decided) return fail("prediction differs for " + corpus[i].patient.id);
  }

  auto bytes = read_file_bytes(cpath);
  bytes[bytes.size() / 2] ^= 0x01;
  if (code_of([&] { checkpoint_deserialize(bytes); }) != ErrorCode::CorruptCheckpoint)
    return fail("flipped checkpoint byte not CorruptCheckpoint");
  if (code_of([&] { checkpoint_deserialize(checkpoint_serialize(m, kCheckpointVersion + 1)); }) !=
      ErrorCode::VersionMismatch)
    return fail("future checkpoint version not VersionMismatch");
  auto ibytes = read_file_bytes(ipath);
  ibytes.resize(ibytes.size() - 3);
  if (code_of([&] { VectorIndex::deserialize(ibytes); }) != ErrorCode::CorruptIndex)
    return fail("truncated index not CorruptIndex");
  return {true, "index and checkpoint bit-exact; corruption rejected"};
}

Outcome remote_contract() {
  GeneratorConfig g;
  g.n = 40;
  g.stratum_size = 5;
  const auto corpus = generate_synthetic(g, 5);
  const auto stats = fit_preprocess(corpus);
  const auto encoder = init_encoder({});
  const auto kb = build_knowledge_base(corpus, encoder, stats);
  const auto prompt = default_prompt_template(64, 0);
  const auto retrieved = retrieve(corpus[0], kb, encoder, stats, RerankerParams::identity(64), {2, 0});

  mock::ChatServer chat({mock::reply("Late-Onset; Sporadic"),                      // success
                         {500, "boom", 0}, {503, "busy", 0}, mock::reply("Familial"),  // retry then success
                         {200, mock::chat_body("I am not sure."), 0},                   // unparseable
                         {200, "", 3000}});                                              // hang
  RemoteBackendConfig cfg;
  cfg.base_url = chat.url();
  cfg.backoff_base_ms = 5;
  cfg.timeout_ms = 2000;

  auto a = predict_remote(corpus[0], retrieved, kb, cfg, prompt);
  if (a.decided != (LabelSet{Subtype::LateOnset, Subtype::Sporadic}) || a.attempts != 1 || a.parse_failure)
    return fail("success case");
  auto b = predict_remote(corpus[0], retrieved, kb, cfg, prompt);
  if (b.decided != LabelSet{Subtype::Familial} || b.attempts != 3) return fail("retry case");
  auto c = predict_remote(corpus[0], retrieved, kb, cfg, prompt);
  if (!c.parse_failure || !c.decided.empty()) return fail("unparseable case");
  cfg.timeout_ms = 300;
  cfg.max_retries = 0;
  if (code_of([&] { predict_remote(corpus[0], retrieved, kb, cfg, prompt); }) != ErrorCode::BackendTimeout)
    return fail("timeout case");

  mock::ChatServer down({}, [](const json&) { return mock::Step{500, "down", 0}; });
  ExperimentConfig ec;
  ec.variants = {"no-rag", "rag-1"};
  ec.generator.n = 80;
  ec.generator.stratum_size = 5;
  ec.train.epochs = 1;
  ec.model.encoder.d = 8;
  ec.model.d_k = 4;
  ec.backend.base_url = down.url();
  ec.backend.max_retries = 0;
  const auto rep = run_experiment(ec);
  if (!rep.variants[0].metrics || !rep.variants[1].failure) return fail("experiment did not isolate the failure");
  return {true, "success, retry x3, unparseable, timeout; experiment completes"};
}

Outcome service_contract() {
  GeneratorConfig g;
  g.n = 60;
  g.stratum_size = 5;
  const auto corpus = generate_synthetic(g, 21);
  ModelConfig mc;
  mc.encoder.d = 16;
  mc.d_k = 8;
  ServiceState state;
  ServiceConfig sc;
  sc.port = 0;
  HttpServer server(state, sc, {});
  httplib::Client client("127.0.0.1", server.start());
  const std::string body = R"({"id":"walk-in","mmse":24,"cdr":1,"age":77})";

  auto status = [&](const httplib::Result& r) { return r ? r->status : -1; };
  if (json::parse(client.Get("/healthz")->body)["status"] != "starting") return fail("healthz before load");
  if (status(client.Post("/v1/screen", body, "application/json")) != 503) return fail("screen before ready not 503");
  if (status(client.Get("/v1/schema")) != 200) return fail("schema not served");

  state.swap(make_snapshot(init_model(mc, fit_preprocess(corpus)), corpus));
  if (json::parse(client.Get("/healthz")->body)["status"] != "ready") return fail("healthz after load");
  auto ok = client.Post("/v1/screen", body, "application/json");
  if (status(ok) != 200 || json::parse(ok->body)["scores"].size() != 5) return fail("happy path");
  auto bad = client.Post("/v1/screen", R"({"id":"x","mmse":31,"cdr":1,"age":77})", "application/json");
  if (status(bad) != 400 || json::parse(bad->body)["error"]["fields"][0]["field"] != "mmse")
    return fail("field error");

  const auto held = state.current();
  std::string lines;
  for (int i = 0; i < 5; ++i)
    lines += json{{"id", "imp" + std::to_string(i)}, {"mmse", 20 + i}, {"cdr", 1}, {"age", 70 + i},
                  {"labels", {"Sporadic"}}}.dump() + "\n";
  auto imp = client.Post("/v1/corpus/import", lines, "application/json");
  if (status(imp) != 202 || json::parse(imp->body)["accepted"] != 5) return fail("import");
  if (held->kb.size() != 60 || state.current()->kb.size() != 65) return fail("snapshot swap visibility");
  if (json::parse(client.Get("/healthz")->body)["index_size"] != 65) return fail("healthz after import");
  if (status(client.Get("/v1/cases/imp0/similar?k=3")) != 200) return fail("imported case not searchable");
  server.stop();
  return {true, "200, 400, 503, healthz starting->ready, import swap"};
}

}  // namespace

int main() {
  const auto root = std::filesystem::temp_directory_path() / "brains_acceptance";
  std::filesystem::remove_all(root);
  std::filesystem::create_directories(root);

  criterion("attention-normalization", attention_normalization);
  criterion("gradient-correctness", gradient_correctness);
  criterion("retrieval-oracle-equivalence", retrieval_oracle);
  criterion("masking-invariance", masking_invariance);
  criterion("metrics-fixture", metrics_fixture);
  criterion("directional-ablation", directional_ablation);
  criterion("determinism", [&] { return determinism(root); });
  criterion("round-trips", [&] { return round_trips(root); });
  criterion("remote-backend-contract", remote_contract);
  criterion("service-contract", service_contract);

  std::filesystem::remove_all(root);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
