#pragma once

// HTTP API over an immutable (model, index, corpus) snapshot. Requests take a
// reference to the current snapshot; imports build a replacement and swap it.

#include <atomic>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

// Eigen must precede httplib: <resolv.h> defines a `_res` macro.
#include <Eigen/Dense>
#include <httplib.h>
#include <json.hpp>

#include "brains/casemodel.hpp"
#include "brains/checkpoint.hpp"
#include "brains/config.hpp"
#include "brains/core/error.hpp"
#include "brains/diagnose.hpp"
#include "brains/remote.hpp"
#include "brains/retrieval.hpp"

namespace brains {

struct Snapshot {
  Model model;
  KnowledgeBase kb;
  std::string checkpoint_digest;
  std::string config_digest;
};

/// Builds a snapshot; with `index` the stored vectors are reused, otherwise
/// the corpus is embedded with the model's encoder.
inline std::shared_ptr<const Snapshot> make_snapshot(Model model, const std::vector<CaseRecord>& corpus,
                                                     std::optional<VectorIndex> index = std::nullopt) {
  auto s = std::make_shared<Snapshot>();
  s->checkpoint_digest = to_hex(checkpoint_digest(model));
  s->config_digest = sha256_hex(model_config_to_json(model.config).dump());
  if (index) {
    if (index->dim() != static_cast<std::size_t>(model.encoder.d()))
      throw Error(ErrorCode::DimensionMismatch, "index dimension does not match the checkpoint encoder",
                  {{"index", index->dim()}, {"encoder", model.encoder.d()}});
    s->kb = KnowledgeBase::attach(std::move(*index), corpus);
  } else {
    s->kb = build_knowledge_base(corpus, model.encoder, model.stats);
  }
  s->model = std::move(model);
  return s;
}

class ServiceState {
 public:
  std::shared_ptr<const Snapshot> current() const {
    std::lock_guard lock(mu_);
    return snap_;
  }
  void swap(std::shared_ptr<const Snapshot> next) {
    std::lock_guard lock(mu_);
    snap_ = std::move(next);
  }
  bool ready() const { return current() != nullptr; }

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const Snapshot> snap_;
};

struct HttpResult {
  int status = 200;
  json body;
};

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::RangeViolation:
    case ErrorCode::MissingRequired:
    case ErrorCode::UnknownCategory:
    case ErrorCode::BadRequest:
    case ErrorCode::ParseFailure:
    case ErrorCode::EmptyText:
    case ErrorCode::DuplicateId:
    case ErrorCode::NonFiniteInput: return 400;
    case ErrorCode::Unauthorized: return 401;
    case ErrorCode::NotFound: return 404;
    case ErrorCode::BackendTimeout:
    case ErrorCode::BackendHttpError: return 502;
    case ErrorCode::NotReady: return 503;
    default: return 500;
  }
}

inline HttpResult error_result(ErrorCode code, const std::string& message, const json& detail = json::object()) {
  json fields = json::array();
  if (detail.is_object() && detail.contains("field")) fields.push_back(detail);
  json err = {{"code", to_string(code)}, {"message", message}, {"fields", fields}};
  if (detail.is_object() && !detail.contains("field") && !detail.empty()) err["detail"] = detail;
  return {http_status(code), {{"error", err}}};
}

inline HttpResult error_result(const Error& e) { return error_result(e.code(), e.message(), e.detail()); }

inline json evidence_json(const std::vector<EvidenceItem>& ev) {
  json arr = json::array();
  for (const auto& e : ev) {
    arr.push_back({{"id", e.id},
                   {"cosine", e.cosine},
                   {"rerank", e.rerank},
                   {"known_labels", labels_to_json(e.labels)},
                   {"mmse", e.mmse},
                   {"cdr", e.cdr},
                   {"age", e.age},
                   {"nwbv", e.nwbv ? json(*e.nwbv) : json(nullptr)}});
  }
  return arr;
}

inline json report_json(const DiagnosisReport& r) {
  json scores = json::array();
  json names = json::array();
  for (std::size_t l = 0; l < kNumSubtypes; ++l) {
    scores.push_back(r.scores[l]);
    names.push_back(kSubtypeNames[l]);
  }
  json j = {{"id", r.case_id},
            {"scores", scores},
            {"labels", names},
            {"threshold", r.threshold},
            {"decided", labels_to_json(r.decided)},
            {"backend", to_string(r.backend)},
            {"no_evidence", r.no_evidence},
            {"evidence", evidence_json(r.evidence)},
            {"explanation", r.explanation ? json(*r.explanation) : json(nullptr)}};
  if (r.backend == Backend::RemoteConcat) {
    j["parse_failure"] = r.parse_failure;
    j["attempts"] = r.attempts;
  }
  return j;
}

class Api {
 public:
  Api(ServiceState& state, ServiceConfig cfg, RemoteBackendConfig backend)
      : state_(state), cfg_(std::move(cfg)), backend_(std::move(backend)) {}

  const ServiceConfig& config() const { return cfg_; }

  HttpResult health() const {
    const auto s = state_.current();
    if (!s) return {200, {{"status", "starting"}, {"index_size", 0}, {"checkpoint_digest", nullptr}}};
    return {200, {{"status", "ready"}, {"index_size", s->kb.size()}, {"checkpoint_digest", s->checkpoint_digest}}};
  }

  HttpResult schema() const {
    json j = case_schema();
    j["labels"] = json::array();
    for (std::size_t l = 0; l < kNumSubtypes; ++l)
      j["labels"].push_back({{"code", l}, {"name", kSubtypeNames[l]}, {"display", kSubtypeDisplayNames[l]}});
    j["request_extras"] = {{"k", "integer >= 0, default from checkpoint"}, {"backend", "local | remote"}};
    return {200, j};
  }

  HttpResult screen(const std::string& body) const {
    const auto s = state_.current();
    if (!s) return not_ready();
    try {
      auto j = json::parse(body, nullptr, false);
      if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::BadRequest, "request body must be a JSON object");
      std::size_t k = static_cast<std::size_t>(s->model.config.k);
      if (auto it = j.find("k"); it != j.end() && !it->is_null()) {
        if (!it->is_number_integer() || it->get<long long>() < 0)
          throw Error(ErrorCode::BadRequest, "k must be a non-negative integer", {{"field", "k"}, {"bound", "[0,inf)"}});
        k = it->get<std::size_t>();
      }
      std::string backend = cfg_.backend;
      if (auto it = j.find("backend"); it != j.end() && !it->is_null()) {
        if (!it->is_string() || (*it != "local" && *it != "remote"))
          throw Error(ErrorCode::BadRequest, "backend must be local or remote", {{"field", "backend"}});
        backend = it->get<std::string>();
      }
      const auto record = make_record(validate_case(j), {});
      DiagnosisReport rep;
      if (backend == "local") {
        rep = predict_local(record, s->model, s->kb, k);
      } else {
        RetrievedSet retrieved;
        if (k > 0 && !s->kb.empty()) {
          const auto q = embed_cls(record, s->model.encoder, s->model.stats);
          retrieved = retrieve_by_vector(q.unit, record.patient.id, s->kb, s->model.reranker, {k, s->model.config.n1});
        }
        rep = predict_remote(record, retrieved, s->kb, backend_, s->model.prompt);
      }
      json out = report_json(rep);
      out["k"] = k;
      out["model"] = {{"checkpoint_digest", s->checkpoint_digest}, {"config_digest", s->config_digest}};
      out["index_size"] = s->kb.size();
      return {200, out};
    } catch (const Error& e) {
      return error_result(e);
    }
  }

  HttpResult similar(const std::string& id, const std::optional<std::string>& k_param) const {
    const auto s = state_.current();
    if (!s) return not_ready();
    try {
      std::size_t k = static_cast<std::size_t>(s->model.config.k);
      if (k_param) {
        std::size_t pos = 0;
        long long v = -1;
        try {
          v = std::stoll(*k_param, &pos);
        } catch (const std::exception&) {
          pos = 0;
        }
        if (pos != k_param->size() || v < 1)
          throw Error(ErrorCode::BadRequest, "k must be a positive integer", {{"field", "k"}, {"bound", "[1,inf)"}});
        k = static_cast<std::size_t>(v);
      }
      const CaseRecord* rec = s->kb.find(id);
      if (!rec) throw Error(ErrorCode::NotFound, "unknown case id " + id, {{"id", id}});
      json neighbors = json::array();
      if (s->kb.size() > 1) {
        const auto r =
            retrieve(*rec, s->kb, s->model.encoder, s->model.stats, s->model.reranker, {k, s->model.config.n1});
        for (const auto& c : r.cases)
          neighbors.push_back({{"id", c.id},
                               {"cosine", c.cosine},
                               {"rerank", c.rerank},
                               {"known_labels", labels_to_json(s->kb.find(c.id)->labels)}});
      }
      return {200, {{"id", id}, {"k", k}, {"neighbors", neighbors}}};
    } catch (const Error& e) {
      return error_result(e);
    }
  }

  /// Stages the valid lines, builds a replacement knowledge base off to the
  /// side and swaps it in before answering.
  HttpResult import(const std::string& body) {
    if (!state_.ready()) return not_ready();
    std::lock_guard lock(import_mu_);
    const auto s = state_.current();
    try {
      std::unordered_set<std::string> existing;
      for (const auto& [id, _] : s->kb.records()) existing.insert(id);
      const auto result = parse_jsonl(body, existing);
      json rejected = json::array();
      bool any_json = false;
      for (const auto& r : result.rejected) {
        rejected.push_back({{"line", r.line}, {"reason", r.reason}, {"message", r.message}});
        any_json = any_json || r.reason != "ParseFailure";
      }
      if (result.records.empty() && !any_json)
        return {400, {{"error", {{"code", to_string(ErrorCode::BadRequest)},
                                 {"message", "no line of the body is a JSON case record"},
                                 {"fields", json::array()}}},
                      {"rejected", rejected}}};
      if (!result.records.empty()) {
        auto next = std::make_shared<Snapshot>(*s);
        for (const auto& r : result.records)
          next->kb.add(r, embed_cls(r, next->model.encoder, next->model.stats).unit);
        state_.swap(std::move(next));
      }
      return {202, {{"accepted", result.records.size()}, {"rejected", rejected}, {"index_size", state_.current()->kb.size()}}};
    } catch (const Error& e) {
      return error_result(e);
    }
  }

 private:
  HttpResult not_ready() const {
    auto r = error_result(ErrorCode::NotReady, "service is still loading its checkpoint and index");
    r.body["readiness"] = health().body;
    return r;
  }

  ServiceState& state_;
  ServiceConfig cfg_;
  RemoteBackendConfig backend_;
  std::mutex import_mu_;
};

class HttpServer {
 public:
  HttpServer(ServiceState& state, ServiceConfig cfg, RemoteBackendConfig backend)
      : api_(state, cfg, std::move(backend)), cfg_(std::move(cfg)) {
    routes();
  }

  ~HttpServer() { stop(); }

  /// Binds (port 0 picks a free port) and serves on a background thread.
  int start() {
    port_ = cfg_.port == 0 ? server_.bind_to_any_port(cfg_.host) : (server_.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1);
    if (port_ < 0) throw Error(ErrorCode::IoFailure, "cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stop().
  void run() {
    if (!server_.listen(cfg_.host, cfg_.port))
      throw Error(ErrorCode::IoFailure, "cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  Api& api() { return api_; }

 private:
  static void send(httplib::Response& res, const HttpResult& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  }

  void routes() {
    server_.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      const auto origin = req.get_header_value("Origin");
      if (!origin.empty() &&
          std::find(cfg_.cors_origins.begin(), cfg_.cors_origins.end(), origin) != cfg_.cors_origins.end()) {
        res.set_header("Access-Control-Allow-Origin", origin);
        res.set_header("Vary", "Origin");
        res.set_header("Access-Control-Allow-Headers", "Content-Type, Authorization");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      }
      if (req.method == "OPTIONS") {
        res.status = 204;
        return httplib::Server::HandlerResponse::Handled;
      }
      if (cfg_.bearer_token && req.path.rfind("/v1/", 0) == 0 &&
          req.get_header_value("Authorization") != "Bearer " + *cfg_.bearer_token) {
        send(res, error_result(ErrorCode::Unauthorized, "missing or wrong bearer token"));
        return httplib::Server::HandlerResponse::Handled;
      }
      return httplib::Server::HandlerResponse::Unhandled;
    });
    server_.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) { send(res, api_.health()); });
    server_.Get("/v1/schema", [this](const httplib::Request&, httplib::Response& res) { send(res, api_.schema()); });
    server_.Post("/v1/screen",
                 [this](const httplib::Request& req, httplib::Response& res) { send(res, api_.screen(req.body)); });
    server_.Get(R"(/v1/cases/([^/]+)/similar)", [this](const httplib::Request& req, httplib::Response& res) {
      std::optional<std::string> k;
      if (req.has_param("k")) k = req.get_param_value("k");
      send(res, api_.similar(req.matches[1], k));
    });
    server_.Post("/v1/corpus/import",
                 [this](const httplib::Request& req, httplib::Response& res) { send(res, api_.import(req.body)); });
    server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      send(res, error_result(ErrorCode::Internal, what));
    });
    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty() && res.status == 404) send(res, error_result(ErrorCode::NotFound, "no such endpoint"));
    });
  }

  Api api_;
  ServiceConfig cfg_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace brains
