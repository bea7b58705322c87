#include "intentguard/toy/chat_template.hpp"

#include "intentguard/errors.hpp"

namespace intentguard::toy {

namespace {

void append(std::vector<int>& out, const std::vector<int>& piece) {
  out.insert(out.end(), piece.begin(), piece.end());
}

}  // namespace

std::vector<int> ChatTemplate::render_generation_prompt(const ChatTranscript& transcript) const {
  std::vector<int> out;
  for (const auto& m : transcript.messages) {
    switch (m.role) {
      case Role::system:
        append(out, tok_->encode("sys " + m.content + " "));
        break;
      case Role::user:
        append(out, tok_->encode("usr " + m.content + " "));
        break;
      case Role::assistant:
        append(out, tok_->encode("asst " + m.content));
        out.push_back(tok_->eos_id());
        append(out, tok_->encode(" "));
        break;
    }
  }
  if (transcript.messages.empty() || transcript.messages.back().role != Role::user) {
    throw ValidationError("generation prompt must end with a user turn");
  }
  append(out, tok_->encode("asst "));
  return out;
}

std::vector<int> ChatTemplate::render_example_prompt(const std::string& system,
                                                     const std::string& instruction) const {
  std::vector<int> out;
  if (!system.empty()) append(out, tok_->encode("sys " + system + " "));
  append(out, tok_->encode("usr " + instruction + " asst "));
  return out;
}

}  // namespace intentguard::toy
