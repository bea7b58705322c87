#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace intentguard {

enum class Role { system, user, assistant };

std::string to_string(Role role);
Role role_from_string(const std::string& s);

struct ChatMessage {
  Role role = Role::user;
  std::string content;
};

/// Ordered conversation. At most one system message (first if present);
/// the remaining roles alternate starting with user.
struct ChatTranscript {
  std::vector<ChatMessage> messages;

  static ChatTranscript from_user(std::string content);
  static ChatTranscript make(std::optional<std::string> system, std::string user);

  /// Throws ValidationError if the transcript invariants do not hold.
  void validate() const;

  const ChatMessage* system_message() const;
  const ChatMessage* last_user_message() const;
  ChatMessage* last_user_message();
};

struct GenParams {
  int max_new_tokens = 256;
  double temperature = 0.0;  // 0 means greedy decoding
  std::optional<std::uint64_t> seed;
  std::optional<std::string> prefill;  // forced start of the assistant turn

  void validate() const;
};

struct Completion {
  std::string text;  // includes any forced prefill
  int token_count = 0;
  std::string backend_id;
};

enum class BackendKind { remote, local, scripted };

std::string to_string(BackendKind kind);

struct BackendDescriptor {
  BackendKind kind = BackendKind::scripted;
  std::string id;
  bool supports_prefill = false;
  bool supports_activations = false;
  bool supports_logprobs = false;
};

}  // namespace intentguard
