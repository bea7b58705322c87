#include "intentguard/chat.hpp"

#include "intentguard/errors.hpp"

namespace intentguard {

std::string to_string(Role role) {
  switch (role) {
    case Role::system:
      return "system";
    case Role::user:
      return "user";
    case Role::assistant:
      return "assistant";
  }
  throw ValidationError("unknown role value");
}

Role role_from_string(const std::string& s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  throw ValidationError("unknown role: " + s);
}

std::string to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::remote:
      return "remote";
    case BackendKind::local:
      return "local";
    case BackendKind::scripted:
      return "scripted";
  }
  throw ValidationError("unknown backend kind value");
}

ChatTranscript ChatTranscript::from_user(std::string content) {
  ChatTranscript t;
  t.messages.push_back({Role::user, std::move(content)});
  return t;
}

ChatTranscript ChatTranscript::make(std::optional<std::string> system, std::string user) {
  ChatTranscript t;
  if (system) t.messages.push_back({Role::system, std::move(*system)});
  t.messages.push_back({Role::user, std::move(user)});
  return t;
}

void ChatTranscript::validate() const {
  if (messages.empty()) throw ValidationError("transcript is empty");
  std::size_t i = 0;
  if (messages[0].role == Role::system) i = 1;
  Role expect = Role::user;
  for (; i < messages.size(); ++i) {
    const auto& m = messages[i];
    if (m.role == Role::system) {
      throw ValidationError("system message must be unique and first");
    }
    if (m.role != expect) {
      throw ValidationError("roles must alternate user/assistant starting with user");
    }
    if (m.content.empty()) {
      throw ValidationError("user/assistant message content must be non-empty");
    }
    expect = (expect == Role::user) ? Role::assistant : Role::user;
  }
  if (messages.size() == 1 && messages[0].role == Role::system) {
    throw ValidationError("transcript needs at least one user message");
  }
}

const ChatMessage* ChatTranscript::system_message() const {
  if (!messages.empty() && messages[0].role == Role::system) return &messages[0];
  return nullptr;
}

const ChatMessage* ChatTranscript::last_user_message() const {
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == Role::user) return &*it;
  }
  return nullptr;
}

ChatMessage* ChatTranscript::last_user_message() {
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == Role::user) return &*it;
  }
  return nullptr;
}

void GenParams::validate() const {
  if (max_new_tokens <= 0) throw ValidationError("max_new_tokens must be positive");
  if (temperature < 0.0) throw ValidationError("temperature must be non-negative");
  if (prefill && prefill->empty()) throw ValidationError("prefill must be non-empty when set");
}

}  // namespace intentguard
