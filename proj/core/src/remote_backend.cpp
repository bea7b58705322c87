#if defined(INTENTGUARD_HAVE_OPENSSL)
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif

#include "intentguard/remote_backend.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "intentguard/errors.hpp"
#include "intentguard/text_util.hpp"

namespace intentguard {

RemoteBackend::RemoteBackend(RemoteConfig config) : Backend(config.in_flight_limit), config_(std::move(config)) {
  if (config_.base_url.empty()) throw ValidationError("remote backend needs a base_url");
  if (config_.max_attempts < 1) throw ValidationError("max_attempts must be >= 1");
  descriptor_.kind = BackendKind::remote;
  descriptor_.id = config_.id;
  descriptor_.supports_prefill = config_.supports_prefill;
  descriptor_.supports_activations = false;
  descriptor_.supports_logprobs = false;
}

std::string RemoteBackend::request_body(const RemoteConfig& config, const ChatTranscript& transcript,
                                        const GenParams& params) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : transcript.messages) {
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  if (params.prefill) {
    messages.push_back({{"role", "assistant"}, {"content", *params.prefill}});
  }
  nlohmann::json body = {{"model", config.model},
                         {"messages", std::move(messages)},
                         {"temperature", params.temperature},
                         {"max_tokens", params.max_new_tokens}};
  if (params.seed) body["seed"] = *params.seed;
  return body.dump();
}

Completion RemoteBackend::generate_impl(const ChatTranscript& transcript, const GenParams& params) {
  const char* key = std::getenv(config_.api_key_env.c_str());
  httplib::Headers headers;
  if (key && *key) headers.emplace("Authorization", std::string("Bearer ") + key);
  const std::string body = request_body(config_, transcript, params);

  std::string last_error;
  for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
    if (attempt > 0) {
      const double wait = config_.backoff_base_s * std::pow(2.0, attempt - 1);
      std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    }
    httplib::Client client(config_.base_url);
    client.set_connection_timeout(std::chrono::duration<double>(config_.timeout_s));
    client.set_read_timeout(std::chrono::duration<double>(config_.timeout_s));
    auto res = client.Post(config_.path, headers, body, "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
      continue;  // retryable
    }
    if (res->status >= 500) {
      last_error = "server error " + std::to_string(res->status);
      continue;  // retryable
    }
    if (res->status != 200) {
      throw TransportError("remote backend '" + config_.id + "' returned status " +
                           std::to_string(res->status) + ": " + res->body);
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("remote backend returned malformed JSON: " + std::string(e.what()));
    }
    std::string text;
    int token_count = 0;
    try {
      text = j.at("choices").at(0).at("message").at("content").get<std::string>();
      if (j.contains("usage") && j["usage"].contains("completion_tokens")) {
        token_count = j["usage"]["completion_tokens"].get<int>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("remote backend response missing fields: " + std::string(e.what()));
    }
    Completion c;
    c.text = params.prefill ? *params.prefill + text : text;
    c.token_count = token_count;
    c.backend_id = descriptor_.id;
    return c;
  }
  throw TransportError("remote backend '" + config_.id + "' failed after " +
                       std::to_string(config_.max_attempts) + " attempts; last: " + last_error);
}

}  // namespace intentguard
