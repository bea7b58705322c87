#pragma once

#include <string>
#include <vector>

#include "intentguard/chat.hpp"
#include "intentguard/toy/tokenizer.hpp"

namespace intentguard::toy {

/// Plain-text chat template for the toy model. Turns are rendered with
/// lowercase role markers that stay inside the toy vocabulary:
///   "sys {system} "  "usr {user} "  "asst {assistant}"<eos>" "
/// A generation prompt ends with the bare "asst " marker.
class ChatTemplate {
 public:
  explicit ChatTemplate(const ToyTokenizer& tokenizer) : tok_(&tokenizer) {}

  /// Tokens for a transcript that ends with a user turn, ready for the model
  /// to continue the assistant turn.
  std::vector<int> render_generation_prompt(const ChatTranscript& transcript) const;

  /// Prompt tokens for a training example (system optional, one user turn,
  /// trailing "asst " marker).
  std::vector<int> render_example_prompt(const std::string& system,
                                         const std::string& instruction) const;

  const ToyTokenizer& tokenizer() const { return *tok_; }

 private:
  const ToyTokenizer* tok_;
};

}  // namespace intentguard::toy
