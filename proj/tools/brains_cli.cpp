// brains: command-line front end (generate, preprocess, index, train, eval,
// screen, serve).

#include <csignal>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "brains/brains.hpp"

namespace {

using brains::AppConfig;
using brains::CaseRecord;
using brains::Error;
using brains::ErrorCode;
using brains::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRuntime = 3;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadConfig:
    case ErrorCode::BadRatios: return kExitUsage;
    case ErrorCode::RangeViolation:
    case ErrorCode::MissingRequired:
    case ErrorCode::UnknownCategory:
    case ErrorCode::EmptyCorpus:
    case ErrorCode::OutlierRejected:
    case ErrorCode::EmptyText:
    case ErrorCode::DuplicateId:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::EmptyIndex:
    case ErrorCode::CorruptIndex:
    case ErrorCode::IoFailure:
    case ErrorCode::NonFiniteInput:
    case ErrorCode::ParseFailure:
    case ErrorCode::EmptyTrainSplit:
    case ErrorCode::CorruptCheckpoint:
    case ErrorCode::VersionMismatch:
    case ErrorCode::EmptyPairs:
    case ErrorCode::BadRequest:
    case ErrorCode::NotFound: return kExitData;
    default: return kExitRuntime;
  }
}

struct Common {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;

  AppConfig load() const {
    auto cfg = brains::load_config(config_path);
    if (seed) {
      cfg.seed = *seed;
      cfg.experiment.corpus_seed = *seed;
    }
    return cfg;
  }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON config file (default: $BRAINS_CONFIG)");
  sub->add_option("--seed", c.seed, "seed for corpus generation and splitting");
}

std::vector<CaseRecord> read_corpus(const std::string& path) {
  const auto text = brains::read_file_text(path);
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0) {
    auto r = brains::parse_csv(text);
    if (!r.rejected.empty()) {
      const auto& first = r.rejected.front();
      throw Error(ErrorCode::BadRequest, path + " line " + std::to_string(first.line) + ": " + first.message,
                  {{"line", first.line}, {"reason", first.reason}});
    }
    return std::move(r.records);
  }
  return brains::load_jsonl(text);
}

void emit(const std::optional<std::string>& out, const std::string& text) {
  if (out) brains::write_file(*out, text);
  else std::cout << text << std::flush;
}

// Corpus from --corpus, else the synthetic corpus the config describes.
std::vector<CaseRecord> corpus_or_generated(const std::optional<std::string>& path, const AppConfig& cfg) {
  if (path) return read_corpus(*path);
  return brains::generate_synthetic(cfg.generator, cfg.seed);
}

// Reads "field=value"; the value is taken as JSON when it parses, else as a string.
json case_from_assignments(const std::vector<std::string>& sets, json base) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      throw Error(ErrorCode::BadConfig, "--set expects field=value", {{"argument", s}});
    const auto key = s.substr(0, eq);
    const auto raw = s.substr(eq + 1);
    auto v = json::parse(raw, nullptr, false);
    base[key] = v.is_discarded() ? json(raw) : v;
  }
  return base;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BRAINS retrieval-augmented Alzheimer's subtype screening"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "brains 0.1.0");

  // generate
  Common gen_c;
  std::optional<int> gen_n;
  std::optional<std::string> gen_out;
  auto* gen = app.add_subcommand("generate", "write a synthetic corpus as JSONL");
  add_common(gen, gen_c);
  gen->add_option("--n", gen_n, "number of records")->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "output file (default: stdout)");

  // preprocess
  Common pre_c;
  std::string pre_corpus;
  std::optional<std::string> pre_out;
  auto* pre = app.add_subcommand("preprocess", "fit preprocessing statistics on a corpus");
  add_common(pre, pre_c);
  pre->add_option("--corpus", pre_corpus, "JSONL or CSV corpus")->required();
  pre->add_option("--out", pre_out, "stats JSON file (default: stdout)");

  // index
  Common idx_c;
  std::string idx_corpus;
  std::string idx_out;
  std::optional<std::string> idx_ckpt;
  auto* idx = app.add_subcommand("index", "embed a corpus and write a vector index");
  add_common(idx, idx_c);
  idx->add_option("--corpus", idx_corpus, "JSONL or CSV corpus")->required();
  idx->add_option("--out", idx_out, "index file")->required();
  idx->add_option("--checkpoint", idx_ckpt, "embed with this checkpoint's encoder");

  // train
  Common tr_c;
  std::optional<std::string> tr_corpus;
  std::string tr_out;
  std::optional<int> tr_epochs;
  std::optional<double> tr_lr;
  std::optional<int> tr_k;
  auto* tr = app.add_subcommand("train", "train a model and write a checkpoint");
  add_common(tr, tr_c);
  tr->add_option("--corpus", tr_corpus, "JSONL or CSV corpus (default: generated)");
  tr->add_option("--out", tr_out, "checkpoint file")->required();
  tr->add_option("--epochs", tr_epochs)->check(CLI::NonNegativeNumber);
  tr->add_option("--lr", tr_lr, "learning rate");
  tr->add_option("--k", tr_k, "retrieval depth")->check(CLI::NonNegativeNumber);

  // eval
  Common ev_c;
  std::optional<std::string> ev_corpus;
  std::optional<std::string> ev_ckpt;
  std::optional<std::string> ev_out;
  std::optional<std::string> ev_remote;
  std::string ev_variants;
  bool ev_timing = false;
  auto* ev = app.add_subcommand("eval", "run the variant comparison and print the report");
  add_common(ev, ev_c);
  ev->add_option("--corpus", ev_corpus, "JSONL or CSV corpus (default: generated)");
  ev->add_option("--checkpoint", ev_ckpt, "use this model for the brains variants");
  ev->add_option("--variants", ev_variants, "comma-separated, e.g. no-rag,rag-1,brains-k5");
  ev->add_option("--out", ev_out, "also write the report JSON here");
  ev->add_option("--remote-url", ev_remote, "chat-completion base URL for rag variants");
  ev->add_flag("--timing", ev_timing, "record wall-clock time per variant");

  // screen
  Common sc_c;
  std::string sc_ckpt;
  std::optional<std::string> sc_corpus;
  std::optional<std::string> sc_index;
  std::optional<std::string> sc_case;
  std::vector<std::string> sc_sets;
  std::optional<std::size_t> sc_k;
  std::string sc_backend = "local";
  std::optional<std::string> sc_remote;
  auto* sc = app.add_subcommand("screen", "screen one case and print the report JSON");
  add_common(sc, sc_c);
  sc->add_option("--checkpoint", sc_ckpt, "checkpoint file")->required();
  sc->add_option("--corpus", sc_corpus, "knowledge-base corpus (default: generated)");
  sc->add_option("--index", sc_index, "prebuilt index for the corpus");
  sc->add_option("--case", sc_case, "case JSON file");
  sc->add_option("--set", sc_sets, "field=value, repeatable; applied over --case");
  sc->add_option("--k", sc_k, "retrieved cases");
  sc->add_option("--backend", sc_backend)->check(CLI::IsMember({"local", "remote"}));
  sc->add_option("--remote-url", sc_remote, "chat-completion base URL");

  // serve
  Common sv_c;
  std::optional<int> sv_port;
  std::optional<std::string> sv_host;
  std::string sv_ckpt;
  std::optional<std::string> sv_corpus;
  std::optional<std::string> sv_index;
  std::optional<std::string> sv_backend;
  std::optional<std::string> sv_remote;
  auto* sv = app.add_subcommand("serve", "run the HTTP API");
  add_common(sv, sv_c);
  sv->add_option("--port", sv_port, "listen port (default 8750)")->check(CLI::Range(0, 65535));
  sv->add_option("--host", sv_host, "listen address (default 127.0.0.1)");
  sv->add_option("--checkpoint", sv_ckpt, "checkpoint file")->required();
  sv->add_option("--corpus", sv_corpus, "knowledge-base corpus (default: generated)");
  sv->add_option("--index", sv_index, "prebuilt index for the corpus");
  sv->add_option("--backend", sv_backend, "default screen backend")->check(CLI::IsMember({"local", "remote"}));
  sv->add_option("--remote-url", sv_remote, "chat-completion base URL");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) {
      auto cfg = gen_c.load();
      if (gen_n) cfg.generator.n = *gen_n;
      emit(gen_out, brains::to_jsonl(brains::generate_synthetic(cfg.generator, cfg.seed)));
    } else if (*pre) {
      (void)pre_c.load();
      const auto stats = brains::fit_preprocess(read_corpus(pre_corpus));
      emit(pre_out, brains::stats_to_json(stats).dump(2) + "\n");
    } else if (*idx) {
      const auto cfg = idx_c.load();
      const auto corpus = read_corpus(idx_corpus);
      brains::Model model;
      if (idx_ckpt) {
        model = brains::checkpoint_load(*idx_ckpt).model;
      } else {
        model = brains::init_model(cfg.model, brains::fit_preprocess(corpus));
      }
      const auto kb = brains::build_knowledge_base(corpus, model.encoder, model.stats);
      brains::index_save(kb.index(), idx_out);
      std::cout << json{{"index", idx_out}, {"size", kb.size()}, {"dim", kb.index().dim()}}.dump() << "\n";
    } else if (*tr) {
      auto cfg = tr_c.load();
      if (tr_epochs) cfg.train.epochs = *tr_epochs;
      if (tr_lr) cfg.train.learning_rate = *tr_lr;
      if (tr_k) cfg.train.k = *tr_k;
      brains::validate_train_config(cfg.train);
      const auto corpus = corpus_or_generated(tr_corpus, cfg);
      const auto splits = brains::split_corpus(corpus, cfg.ratios, cfg.seed);
      const auto stats = brains::fit_preprocess(splits.train);
      const auto base = brains::init_model(cfg.model, stats);
      const auto kb = brains::build_knowledge_base(splits.train, base.encoder, stats);
      auto result = brains::train(splits.train, splits.val, cfg.train, base, kb,
                                  [](const brains::EpochLog& e, const brains::Model&) {
                                    std::cerr << "epoch " << e.epoch << " train_loss " << e.train_loss
                                              << " val_loss " << e.val_loss << "\n";
                                  });
      const auto digest = brains::checkpoint_save(result.model, tr_out);
      std::cout << json{{"checkpoint", tr_out}, {"digest", brains::to_hex(digest)}}.dump() << "\n";
    } else if (*ev) {
      auto cfg = ev_c.load();
      auto ex = cfg.experiment;
      if (!ev_variants.empty()) {
        ex.variants.clear();
        std::stringstream ss(ev_variants);
        for (std::string v; std::getline(ss, v, ',');)
          if (!v.empty()) ex.variants.push_back(v);
      }
      if (ev_corpus) ex.corpus = read_corpus(*ev_corpus);
      if (ev_ckpt) ex.brains_model = brains::checkpoint_load(*ev_ckpt).model;
      if (ev_remote) ex.backend.base_url = *ev_remote;
      if (ev_timing) ex.timing = true;
      ex.output_path = ev_out;
      const auto report = brains::run_experiment(ex);
      std::cout << report.report.dump(2) << "\n\n" << report.table;
    } else if (*sc) {
      auto cfg = sc_c.load();
      if (sc_remote) cfg.backend.base_url = *sc_remote;
      if (!sc_case && sc_sets.empty())
        throw Error(ErrorCode::BadConfig, "screen needs --case or at least one --set");
      json raw = json::object();
      if (sc_case) {
        raw = json::parse(brains::read_file_text(*sc_case), nullptr, false);
        if (raw.is_discarded() || !raw.is_object())
          throw Error(ErrorCode::ParseFailure, *sc_case + " is not a JSON object");
      }
      raw = case_from_assignments(sc_sets, raw);
      if (sc_k) raw["k"] = *sc_k;
      raw["backend"] = sc_backend;
      auto model = brains::checkpoint_load(sc_ckpt).model;
      std::optional<brains::VectorIndex> index;
      if (sc_index) index = brains::index_load(*sc_index);
      brains::ServiceState state;
      state.swap(brains::make_snapshot(std::move(model), corpus_or_generated(sc_corpus, cfg), std::move(index)));
      brains::Api api(state, cfg.service, cfg.backend);
      const auto r = api.screen(raw.dump());
      if (r.status != 200) {
        const auto& err = r.body["error"];
        std::cerr << "brains: " << err["code"].get<std::string>() << ": " << err["message"].get<std::string>() << "\n";
        for (const auto& f : err["fields"]) std::cerr << "  " << f.dump() << "\n";
        return r.status == 502 ? kExitRuntime : kExitData;
      }
      std::cout << r.body.dump(2) << "\n";
    } else if (*sv) {
      auto cfg = sv_c.load();
      if (sv_port) cfg.service.port = *sv_port;
      if (sv_host) cfg.service.host = *sv_host;
      if (sv_backend) cfg.service.backend = *sv_backend;
      if (sv_remote) cfg.backend.base_url = *sv_remote;

      sigset_t sigs;
      sigemptyset(&sigs);
      sigaddset(&sigs, SIGINT);
      sigaddset(&sigs, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &sigs, nullptr);

      brains::ServiceState state;
      brains::HttpServer server(state, cfg.service, cfg.backend);
      const int port = server.start();
      std::cerr << "brains: listening on " << cfg.service.host << ":" << port << " (loading)\n";

      std::optional<Error> load_error;
      std::thread loader([&] {
        try {
          auto model = brains::checkpoint_load(sv_ckpt).model;
          std::optional<brains::VectorIndex> index;
          if (sv_index) index = brains::index_load(*sv_index);
          state.swap(
              brains::make_snapshot(std::move(model), corpus_or_generated(sv_corpus, cfg), std::move(index)));
          std::cerr << "brains: ready, " << state.current()->kb.size() << " cases indexed\n";
        } catch (const Error& e) {
          load_error = e;
          kill(getpid(), SIGTERM);
        }
      });
      int sig = 0;
      sigwait(&sigs, &sig);
      loader.join();
      server.stop();
      if (load_error) throw *load_error;
    }
  } catch (const Error& e) {
    std::cerr << "brains: " << e.what() << "\n";
    if (!e.detail().empty()) std::cerr << "  " << e.detail().dump() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "brains: Internal: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
