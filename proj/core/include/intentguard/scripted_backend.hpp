#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "intentguard/backend.hpp"

namespace intentguard {

enum class MatchType { exact, substring, any };

/// One script rule: a matcher plus an ordered response list consumed per call.
struct ScriptRule {
  MatchType type = MatchType::substring;
  std::string pattern;
  std::vector<std::string> responses;
  bool repeat_last = false;  // when exhausted, repeat the final response
};

struct ScriptedConfig {
  std::string id = "scripted";
  std::vector<ScriptRule> rules;  // first match wins, in declared order
  std::optional<std::string> default_response;
  double miss_logprob_per_token = -6.907755278982137;  // ln(1e-3)
};

/// Deterministic backend driven by matcher -> response-sequence rules.
/// Matchers run against a role-tagged rendering of the full transcript
/// (including any prefill), so scripts can key on system, user, or prefill
/// text. Calls are serialized internally: response-sequence consumption is
/// totally ordered by call arrival.
class ScriptedBackend : public Backend {
 public:
  explicit ScriptedBackend(ScriptedConfig config);

  const BackendDescriptor& descriptor() const override { return descriptor_; }

  Completion generate_impl(const ChatTranscript& transcript, const GenParams& params) override;

  /// All-zero log-probs when `continuation` equals the response the script
  /// would give for this transcript; otherwise a flat miss value per token.
  /// Does not consume the response sequence.
  std::vector<double> token_logprobs_impl(const ChatTranscript& transcript,
                                          const std::string& continuation) override;

  /// Deterministic pseudo-activations (layers x hidden), seeded by the input
  /// text hash. Lets activation-consuming code run against scripted backends.
  std::vector<std::vector<double>> activations(const std::string& text, int layers, int hidden) const;

  /// Rendered inputs received so far, in arrival order.
  std::vector<std::string> calls() const;
  int call_count() const;

  static std::string render_transcript(const ChatTranscript& transcript,
                                       const std::optional<std::string>& prefill);

 private:
  const std::string& match_response(const std::string& rendered, bool consume);

  ScriptedConfig config_;
  BackendDescriptor descriptor_;
  std::vector<std::size_t> next_index_;  // per rule
  std::vector<std::string> call_log_;
  mutable std::mutex mu_;
};

/// Loads script rules from a line-delimited record file. One record per
/// matcher: {"match": {"type": "substring|exact|any", "pattern": "..."},
/// "responses": ["..."], "repeat": false}. A bare pattern "*" means any.
ScriptedConfig load_script(const std::filesystem::path& path, std::string id = "scripted");

}  // namespace intentguard
