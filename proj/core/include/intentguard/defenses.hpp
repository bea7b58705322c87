#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "intentguard/backend.hpp"
#include "intentguard/finetune.hpp"
#include "intentguard/templates.hpp"

namespace intentguard {

enum class DefenseKind {
  vanilla,
  self_reminder,
  icd,
  ia_dual,
  ia_single,
  bda,
  intent_ft,
  classifier_gate,
};

std::string to_string(DefenseKind kind);
DefenseKind defense_kind_from_string(const std::string& s);

struct IcdExemplar {
  std::string instruction;  // harmful request
  std::string response;     // safe reply
};

struct ClassifierGateConfig {
  std::vector<std::string> deny_markers = {"deny", "unsafe", "harmful"};
  bool fail_closed = true;  // classifier failure denies by default
  std::string denial_text = "I cannot help with that request.";
};

enum class GateStage { input, output, both };
enum class GateDecision { allow, deny };

struct DefenseSpec {
  DefenseKind kind = DefenseKind::vanilla;
  int icd_exemplar_count = 2;
  std::optional<BackdoorTrigger> trigger;  // bda
  GateStage gate_stage = GateStage::input;
  ClassifierGateConfig gate;

  void validate() const;
};

/// Wraps the last user message with the self-reminder prefix/suffix.
/// Rejects double wrapping and transcripts without a user message.
ChatTranscript wrap_self_reminder(const ChatTranscript& transcript,
                                  const TemplateSet& templates = TemplateSet());

/// Inserts n exemplar user/assistant turn pairs before the last user turn.
ChatTranscript wrap_icd(const ChatTranscript& transcript, const std::vector<IcdExemplar>& exemplars,
                        int n = 2);

enum class IaMode { dual, single };

struct IaResult {
  Completion completion;
  std::string analysis;  // stage-1 output (dual mode only)
  int backend_calls = 0;
};

/// Intention-analysis defense: dual mode asks for an intent analysis first
/// and feeds it (before the second template text) into the answering call;
/// single mode is one templated call.
IaResult wrap_ia(Backend& backend, const std::string& instruction, IaMode mode,
                 const TemplateSet& templates = TemplateSet(),
                 const GenParams& params = GenParams());

struct IntentInferenceResult {
  std::string intention;
  std::string response;
  std::string raw;
  bool malformed = false;  // close tag never appeared
};

/// Splits a tag-trained model's output at "</intent>" (an optional leading
/// "<intent>" is stripped from the intention). When the close tag never
/// appears the full output is the intention, response is empty, and the
/// result is flagged malformed (not dropped).
IntentInferenceResult parse_intent_output(const std::string& raw);

/// Tag-protocol inference: system prompt set to the intent system prompt,
/// "<intent>" appended to the user turn, output parsed into (intention,
/// response).
IntentInferenceResult intent_inference(Backend& backend, const std::string& instruction,
                                       const std::optional<std::string>& system = std::nullopt,
                                       const TemplateSet& templates = TemplateSet(),
                                       const GenParams& params = GenParams());

/// Feeds an intention produced elsewhere to a plain model as added context.
Completion transfer_intent(const std::string& intention, Backend& vanilla,
                           const std::string& instruction, const GenParams& params = GenParams());

/// One classifier call over `text`; deny iff any deny marker occurs
/// (case-insensitive) in the classifier's reply. Classifier failure follows
/// the fail-open/fail-closed configuration.
GateDecision classify(Backend& classifier, const std::string& text,
                      const ClassifierGateConfig& config);

struct GatedResult {
  std::optional<GateDecision> input_decision;
  std::optional<GateDecision> output_decision;
  Completion completion;  // denial text when any stage denied
  int classifier_calls = 0;
  int target_calls = 0;
};

/// Classifier-gated generation: an input-stage deny short-circuits the
/// target call; an output-stage deny suppresses the response.
GatedResult gated_generate(Backend& classifier, Backend& target, const ChatTranscript& transcript,
                           const GenParams& params, GateStage stage,
                           const ClassifierGateConfig& config);

struct DefenseContext {
  TemplateSet templates;
  std::vector<IcdExemplar> icd_exemplars;
  Backend* classifier = nullptr;  // classifier_gate
};

/// Backend adapter that applies a DefenseSpec around every generate call, so
/// attack and evaluation drivers can stay defense-agnostic. One call on the
/// wrapper counts as one target query regardless of inner fan-out (ia_dual
/// makes two inner calls).
std::unique_ptr<Backend> make_defended_backend(Backend& inner, const DefenseSpec& spec,
                                               DefenseContext context = DefenseContext());

}  // namespace intentguard
