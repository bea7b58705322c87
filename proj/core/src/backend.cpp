#include "intentguard/backend.hpp"

#include <cmath>

#include "intentguard/errors.hpp"

namespace intentguard {

std::vector<double> Backend::token_logprobs_impl(const ChatTranscript&, const std::string&) {
  throw CapabilityError("backend '" + descriptor().id + "' does not support token log-probabilities");
}

Completion generate(Backend& backend, const ChatTranscript& transcript, const GenParams& params) {
  transcript.validate();
  params.validate();
  if (params.prefill && !backend.descriptor().supports_prefill) {
    throw CapabilityError("backend '" + backend.descriptor().id + "' does not support prefill");
  }
  InFlightGuard guard(backend.in_flight());
  Completion c = backend.generate_impl(transcript, params);
  if (params.prefill && c.text.rfind(*params.prefill, 0) != 0) {
    throw ValidationError("backend violated prefill conservation: completion does not start with prefill");
  }
  return c;
}

std::vector<double> token_logprobs(Backend& backend, const ChatTranscript& transcript,
                                   const std::string& continuation) {
  transcript.validate();
  if (continuation.empty()) throw ValidationError("continuation must be non-empty");
  if (!backend.descriptor().supports_logprobs) {
    throw CapabilityError("backend '" + backend.descriptor().id + "' does not support token log-probabilities");
  }
  InFlightGuard guard(backend.in_flight());
  auto lps = backend.token_logprobs_impl(transcript, continuation);
  for (double lp : lps) {
    if (!std::isfinite(lp) || lp > 0.0) {
      throw ValidationError("backend returned an invalid log-probability");
    }
  }
  return lps;
}

}  // namespace intentguard
