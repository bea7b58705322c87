#pragma once

#include <string>

#include "intentguard/backend.hpp"

namespace intentguard {

struct RemoteConfig {
  std::string base_url;  // e.g. "https://api.example.com" or "http://127.0.0.1:8080"
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key_env = "INTENTGUARD_API_KEY";
  int max_attempts = 3;           // transport/5xx retries with exponential backoff
  double backoff_base_s = 0.25;   // sleep base; attempt k waits base * 2^k
  double timeout_s = 60.0;
  bool supports_prefill = false;  // chat endpoints usually cannot force an assistant prefix
  int in_flight_limit = 4;
  std::string id = "remote";
};

/// Chat-completion client. Retries only transport failures and 5xx responses
/// (never content refusals), at most `max_attempts` times. When prefill is
/// supported it is realized by seeding a trailing assistant turn and asking
/// the model to continue.
class RemoteBackend : public Backend {
 public:
  explicit RemoteBackend(RemoteConfig config);

  const BackendDescriptor& descriptor() const override { return descriptor_; }

  Completion generate_impl(const ChatTranscript& transcript, const GenParams& params) override;

  /// Request body for the wire protocol, exposed for inspection/testing.
  static std::string request_body(const RemoteConfig& config, const ChatTranscript& transcript,
                                  const GenParams& params);

 private:
  RemoteConfig config_;
  BackendDescriptor descriptor_;
};

}  // namespace intentguard
