#include "intentguard/toy/toy_backend.hpp"

#include <cmath>

#include "intentguard/errors.hpp"

namespace intentguard::toy {

ToyBackend::ToyBackend(std::shared_ptr<ToyModel> model, std::string id)
    : model_(std::move(model)), template_(tokenizer_) {
  if (!model_) throw ValidationError("toy backend needs a model");
  descriptor_.kind = BackendKind::local;
  descriptor_.id = std::move(id);
  descriptor_.supports_prefill = true;
  descriptor_.supports_activations = true;
  descriptor_.supports_logprobs = true;
}

Completion ToyBackend::generate_impl(const ChatTranscript& transcript, const GenParams& params) {
  std::vector<int> prompt = template_.render_generation_prompt(transcript);
  int prefill_tokens = 0;
  if (params.prefill) {
    std::vector<int> forced = tokenizer_.encode(*params.prefill);
    prefill_tokens = static_cast<int>(forced.size());
    prompt.insert(prompt.end(), forced.begin(), forced.end());
  }
  std::vector<int> generated = model_->generate_tokens(
      prompt, params.max_new_tokens, params.temperature, params.seed.value_or(0),
      tokenizer_.eos_id());
  Completion c;
  c.text = (params.prefill ? *params.prefill : std::string()) + tokenizer_.decode(generated);
  c.token_count = prefill_tokens + static_cast<int>(generated.size());
  c.backend_id = descriptor_.id;
  return c;
}

std::vector<double> ToyBackend::token_logprobs_impl(const ChatTranscript& transcript,
                                                    const std::string& continuation) {
  std::vector<int> prompt = template_.render_generation_prompt(transcript);
  std::vector<int> cont = tokenizer_.encode(continuation);
  if (cont.empty()) throw ValidationError("continuation tokenizes to zero tokens");
  std::vector<int> full = prompt;
  full.insert(full.end(), cont.begin(), cont.end());
  auto logits = model_->forward_logits(full);
  std::vector<double> out;
  out.reserve(cont.size());
  const std::size_t start = prompt.size();
  for (std::size_t i = 0; i < cont.size(); ++i) {
    const auto& row = logits[start + i - 1];
    double mx = row[0];
    for (double x : row) mx = std::max(mx, x);
    double sum = 0.0;
    for (double x : row) sum += std::exp(x - mx);
    const double lp = row[static_cast<std::size_t>(cont[i])] - mx - std::log(sum);
    out.push_back(std::min(lp, 0.0));
  }
  return out;
}

std::vector<std::vector<double>> ToyBackend::instruction_activations(
    const std::string& instruction) const {
  ChatTranscript t = ChatTranscript::from_user(instruction);
  std::vector<int> prompt = template_.render_generation_prompt(t);
  return model_->residual_activations(prompt, -1);
}

}  // namespace intentguard::toy
