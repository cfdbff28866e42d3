#pragma once

// One JSON config file shared by the CLI and the service.
//
// {
//   "seed": 42,
//   "generator": {"n", "mix", "noise", "neighbor_signal", "label_noise", "stratum_size", ...},
//   "ratios": [0.8, 0.1, 0.1],
//   "model": {"encoder": {...}, "d_k", "shared_kv", "seed", "threshold", "k", "n1"},
//   "train": {"epochs", "batch_size", "learning_rate", ...},
//   "backend": {"base_url", "model", "timeout_ms", "max_retries", ...},
//   "service": {"host", "port", "cors_origins", "bearer_token", "backend"},
//   "experiment": {"variants", "corpus_n", "train": {...}}
// }
//
// Every section and key is optional; absent keys keep their defaults.

#include <cstdlib>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "brains/checkpoint.hpp"
#include "brains/core/error.hpp"
#include "brains/core/files.hpp"
#include "brains/evalharness.hpp"
#include "brains/remote.hpp"

namespace brains {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8750;
  std::vector<std::string> cors_origins = {"http://localhost:5173", "http://127.0.0.1:5173"};
  std::optional<std::string> bearer_token;
  std::string backend = "local";  // default backend for /v1/screen
};

struct AppConfig {
  std::uint64_t seed = 42;
  GeneratorConfig generator;
  SplitRatios ratios;
  ModelConfig model;
  TrainConfig train;
  RemoteBackendConfig backend;
  ServiceConfig service;
  ExperimentConfig experiment;
};

inline SplitRatios ratios_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw Error(ErrorCode::BadRatios, "ratios needs three entries", {{"ratios", j}});
  return {v[0], v[1], v[2]};
}

inline ServiceConfig service_config_from_json(const json& j, ServiceConfig c = {}) {
  c.host = j.value("host", c.host);
  c.port = j.value("port", c.port);
  if (auto it = j.find("cors_origins"); it != j.end()) c.cors_origins = it->get<std::vector<std::string>>();
  if (auto it = j.find("bearer_token"); it != j.end() && it->is_string() && !it->get<std::string>().empty())
    c.bearer_token = it->get<std::string>();
  c.backend = j.value("backend", c.backend);
  if (c.backend != "local" && c.backend != "remote")
    throw Error(ErrorCode::BadConfig, "service.backend must be local or remote", {{"backend", c.backend}});
  if (c.port < 0 || c.port > 65535) throw Error(ErrorCode::BadConfig, "service.port out of range", {{"port", c.port}});
  return c;
}

inline AppConfig config_from_json(const json& j) {
  static const std::set<std::string> kKnown = {"seed",    "generator", "ratios",  "model",
                                               "train",   "backend",   "service", "experiment"};
  if (!j.is_object()) throw Error(ErrorCode::BadConfig, "config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!kKnown.count(key)) throw Error(ErrorCode::BadConfig, "unknown config key " + key, {{"key", key}});
  AppConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (auto it = j.find("generator"); it != j.end()) c.generator = generator_config_from_json(*it, c.generator);
    if (auto it = j.find("ratios"); it != j.end()) c.ratios = ratios_from_json(*it);
    if (auto it = j.find("model"); it != j.end()) c.model = model_config_from_json(*it, c.model);
    if (auto it = j.find("train"); it != j.end()) c.train = train_config_from_json(*it, c.train);
    if (auto it = j.find("backend"); it != j.end()) c.backend = backend_config_from_json(*it, c.backend);
    if (auto it = j.find("service"); it != j.end()) c.service = service_config_from_json(*it, c.service);

    c.experiment.corpus_seed = c.seed;
    c.experiment.ratios = c.ratios;
    c.experiment.model = c.model;
    c.experiment.backend = c.backend;
    c.experiment.generator = c.generator;
    c.experiment.generator.n = 2000;
    if (auto it = j.find("generator"); it != j.end() && it->contains("n")) c.experiment.generator.n = c.generator.n;
    if (auto it = j.find("experiment"); it != j.end()) {
      if (auto v = it->find("variants"); v != it->end()) c.experiment.variants = v->get<std::vector<std::string>>();
      if (auto n = it->find("corpus_n"); n != it->end()) c.experiment.generator.n = n->get<int>();
      if (auto t = it->find("train"); t != it->end()) c.experiment.train = train_config_from_json(*t, c.experiment.train);
      c.experiment.timing = it->value("timing", c.experiment.timing);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadConfig, std::string("bad config value: ") + e.what());
  }
  return c;
}

/// Explicit path, else $BRAINS_CONFIG, else defaults.
inline std::optional<std::string> resolve_config_path(const std::optional<std::string>& flag) {
  if (flag && !flag->empty()) return flag;
  if (const char* env = std::getenv("BRAINS_CONFIG"); env && *env) return std::string(env);
  return std::nullopt;
}

inline AppConfig load_config(const std::optional<std::string>& flag) {
  const auto path = resolve_config_path(flag);
  if (!path) return config_from_json(json::object());
  auto j = json::parse(read_file_text(*path), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::BadConfig, "config file is not valid JSON", {{"path", *path}});
  return config_from_json(j);
}

}  // namespace brains
