#pragma once

// Prompt-concatenation backend over an HTTP chat-completion API (the RAG-1 /
// RAG-2 baselines). Retrieved cases are textualized into the user message.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <vector>

// Eigen must precede httplib: <resolv.h> defines a `_res` macro.
#include <Eigen/Dense>
#include <httplib.h>
#include <json.hpp>

#include "brains/casemodel.hpp"
#include "brains/core/digest.hpp"
#include "brains/core/error.hpp"
#include "brains/diagnose.hpp"
#include "brains/retrieval.hpp"

namespace brains {

struct RemoteBackendConfig {
  std::string base_url = "http://127.0.0.1:8080";
  std::string model = "local-llm";
  int timeout_ms = 30000;
  int max_retries = 2;
  int backoff_base_ms = 250;
  double temperature = 0.0;
  int max_tokens = 128;
  int concat_cases = 1;
};

inline void validate_backend_config(const RemoteBackendConfig& c) {
  if (c.timeout_ms <= 0 || c.concat_cases < 0 || c.max_retries < 0 || c.backoff_base_ms < 0)
    throw Error(ErrorCode::BadConfig, "remote backend needs timeout_ms > 0, concat_cases >= 0, max_retries >= 0",
                {{"timeout_ms", c.timeout_ms}, {"concat_cases", c.concat_cases}, {"max_retries", c.max_retries}});
}

inline json backend_config_to_json(const RemoteBackendConfig& c) {
  return {{"base_url", c.base_url},         {"model", c.model},
          {"timeout_ms", c.timeout_ms},     {"max_retries", c.max_retries},
          {"backoff_base_ms", c.backoff_base_ms}, {"temperature", c.temperature},
          {"max_tokens", c.max_tokens},     {"concat_cases", c.concat_cases}};
}

inline RemoteBackendConfig backend_config_from_json(const json& j, RemoteBackendConfig c = {}) {
  c.base_url = j.value("base_url", c.base_url);
  c.model = j.value("model", c.model);
  c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.backoff_base_ms = j.value("backoff_base_ms", c.backoff_base_ms);
  c.temperature = j.value("temperature", c.temperature);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.concat_cases = j.value("concat_cases", c.concat_cases);
  return c;
}

// ---------------------------------------------------------------------------
// Response parsing

struct LabelAlias {
  std::string_view phrase;  // lowercase words separated by single spaces
  Subtype label;
};

inline constexpr std::array<LabelAlias, 7> kLabelAliases = {{
    {"early onset", Subtype::EarlyOnset},
    {"earlyonset", Subtype::EarlyOnset},
    {"late onset", Subtype::LateOnset},
    {"lateonset", Subtype::LateOnset},
    {"familial", Subtype::Familial},
    {"sporadic", Subtype::Sporadic},
    {"atypical", Subtype::Atypical},
}};

/// Lowercases and turns every non-alphanumeric run into one space, with a
/// leading and trailing space so phrase matches fall on word boundaries.
inline std::string normalize_for_match(std::string_view text) {
  std::string out = " ";
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) out += static_cast<char>(std::tolower(c));
    else if (out.back() != ' ') out += ' ';
  }
  if (out.back() != ' ') out += ' ';
  return out;
}

struct ParsedLabels {
  LabelSet labels;
  bool matched = false;
};

inline ParsedLabels parse_subtypes(std::string_view text) {
  const auto norm = normalize_for_match(text);
  ParsedLabels p;
  for (const auto& a : kLabelAliases) {
    const std::string needle = " " + std::string(a.phrase) + " ";
    if (norm.find(needle) != std::string::npos) {
      p.labels.insert(a.label);
      p.matched = true;
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Prompt assembly

inline std::string describe_labels(LabelSet s) {
  std::string out;
  for (auto l : s.labels()) {
    if (!out.empty()) out += ", ";
    out += kSubtypeDisplayNames[static_cast<std::size_t>(l)];
  }
  return out.empty() ? "none recorded" : out;
}

inline std::string system_text(const PromptSequence& prompt) {
  if (auto i = prompt.find(SlotRole::System)) return prompt.slots[*i].text;
  return std::string(kDefaultSystemPrompt);
}

/// Chat messages for one case: system text, then a user message holding the
/// target narrative and up to `shown.size()` similar cases with their known
/// diagnoses.
inline json build_messages(const CaseRecord& target, const std::vector<const CaseRecord*>& shown,
                           const PromptSequence& prompt) {
  std::string user = "Target case:\n" + target.narrative + "\n";
  for (std::size_t i = 0; i < shown.size(); ++i) {
    user += "\nSimilar case " + std::to_string(i + 1) + ":\n" + shown[i]->narrative + "\n";
    user += "Known diagnosis: " + describe_labels(shown[i]->labels) + "\n";
  }
  user += "\nList every Alzheimer's disease subtype that applies to the target case.";
  return json::array({{{"role", "system"}, {"content", system_text(prompt)}}, {{"role", "user"}, {"content", user}}});
}

inline json build_request(const RemoteBackendConfig& cfg, const json& messages) {
  return {{"model", cfg.model}, {"messages", messages}, {"temperature", cfg.temperature}, {"max_tokens", cfg.max_tokens}};
}

// ---------------------------------------------------------------------------
// Transport

struct ChatReply {
  std::string content;
  bool parsed = false;  // body had choices[0].message.content
  int attempts = 0;
};

inline ChatReply post_chat(const RemoteBackendConfig& cfg, const json& request) {
  validate_backend_config(cfg);
  httplib::Client client(cfg.base_url);
  const auto secs = cfg.timeout_ms / 1000;
  const auto usecs = (cfg.timeout_ms % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  const std::string body = request.dump();

  ChatReply reply;
  int last_status = 0;
  std::string last_body;
  std::string last_cause;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long>(cfg.backoff_base_ms) << (attempt - 1)));
    reply.attempts = attempt + 1;
    const auto t0 = std::chrono::steady_clock::now();
    auto res = client.Post("/v1/chat/completions", body, "application/json");
    const auto elapsed =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    if (!res) {
      const auto err = res.error();
      // A read that outlives the timeout surfaces as a read error.
      if (err == httplib::Error::Read && elapsed >= cfg.timeout_ms - 50)
        throw Error(ErrorCode::BackendTimeout, "remote backend timed out",
                    {{"timeout_ms", cfg.timeout_ms}, {"attempts", reply.attempts}});
      last_status = 0;
      last_cause = httplib::to_string(err);
      continue;
    }
    if (res->status >= 500) {
      last_status = res->status;
      last_body = res->body;
      last_cause = "server error";
      continue;
    }
    if (res->status >= 400 || res->status < 200 || res->status >= 300)
      throw Error(ErrorCode::BackendHttpError, "remote backend returned HTTP " + std::to_string(res->status),
                  {{"status", res->status}, {"body_digest", sha256_hex(res->body)}, {"attempts", reply.attempts}});
    auto j = json::parse(res->body, nullptr, false);
    if (!j.is_discarded() && j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
      const auto& msg = j["choices"][0];
      if (msg.contains("message") && msg["message"].contains("content") && msg["message"]["content"].is_string()) {
        reply.content = msg["message"]["content"].get<std::string>();
        reply.parsed = true;
        return reply;
      }
    }
    reply.content = res->body;
    return reply;
  }
  throw Error(ErrorCode::BackendHttpError, "remote backend failed after retries: " + last_cause,
              {{"status", last_status}, {"body_digest", sha256_hex(last_body)}, {"attempts", reply.attempts},
               {"cause", last_cause}});
}

/// Asks the remote model about `record`, showing the first concat_cases
/// retrieved cases. Transport failures throw BackendTimeout or
/// BackendHttpError; an unusable answer sets parse_failure instead.
inline DiagnosisReport predict_remote(const CaseRecord& record, const RetrievedSet& retrieved, const KnowledgeBase& kb,
                                      const RemoteBackendConfig& cfg, const PromptSequence& prompt) {
  validate_backend_config(cfg);
  RetrievedSet shown_set;
  shown_set.k_requested = static_cast<std::size_t>(cfg.concat_cases);
  std::vector<const CaseRecord*> shown;
  for (const auto& c : retrieved.cases) {
    if (shown.size() >= static_cast<std::size_t>(cfg.concat_cases)) break;
    if (const CaseRecord* r = kb.find(c.id)) {
      shown.push_back(r);
      shown_set.cases.push_back(c);
    }
  }
  const auto reply = post_chat(cfg, build_request(cfg, build_messages(record, shown, prompt)));
  DiagnosisReport rep;
  rep.case_id = record.patient.id;
  rep.backend = Backend::RemoteConcat;
  rep.attempts = reply.attempts;
  rep.threshold = 0.5;
  rep.evidence = evidence_of(shown_set, kb);
  rep.no_evidence = shown.empty();
  const auto parsed = reply.parsed ? parse_subtypes(reply.content) : ParsedLabels{};
  rep.parse_failure = !parsed.matched;
  rep.decided = parsed.labels;
  for (std::size_t l = 0; l < kNumSubtypes; ++l) rep.scores[l] = rep.decided.contains(l) ? 1.0 : 0.0;
  rep.explanation = reply.content;
  return rep;
}

}  // namespace brains
