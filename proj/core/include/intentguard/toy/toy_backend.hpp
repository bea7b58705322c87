#pragma once

#include <memory>
#include <string>
#include <vector>

#include "intentguard/backend.hpp"
#include "intentguard/toy/chat_template.hpp"
#include "intentguard/toy/tokenizer.hpp"
#include "intentguard/toy/transformer.hpp"

namespace intentguard::toy {

/// Local activation-capable backend over a ToyModel. Deterministic for
/// temperature 0 / fixed seed. Token counts use the toy tokenizer and cover
/// the whole assistant turn (forced prefill plus generated tokens).
class ToyBackend : public intentguard::Backend {
 public:
  ToyBackend(std::shared_ptr<ToyModel> model, std::string id);

  const BackendDescriptor& descriptor() const override { return descriptor_; }

  Completion generate_impl(const ChatTranscript& transcript, const GenParams& params) override;

  std::vector<double> token_logprobs_impl(const ChatTranscript& transcript,
                                          const std::string& continuation) override;

  /// Post-block residual activations at the last prompt position for a
  /// single-user-turn transcript built from `instruction`.
  std::vector<std::vector<double>> instruction_activations(const std::string& instruction) const;

  std::shared_ptr<ToyModel> model() const { return model_; }
  const ToyTokenizer& tokenizer() const { return tokenizer_; }
  const ChatTemplate& chat_template() const { return template_; }

 private:
  std::shared_ptr<ToyModel> model_;
  ToyTokenizer tokenizer_;
  ChatTemplate template_;
  BackendDescriptor descriptor_;
};

}  // namespace intentguard::toy
