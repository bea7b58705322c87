#include "intentguard/defenses.hpp"

#include "intentguard/errors.hpp"
#include "intentguard/text_util.hpp"

namespace intentguard {

std::string to_string(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::vanilla:
      return "vanilla";
    case DefenseKind::self_reminder:
      return "self_reminder";
    case DefenseKind::icd:
      return "icd";
    case DefenseKind::ia_dual:
      return "ia_dual";
    case DefenseKind::ia_single:
      return "ia_single";
    case DefenseKind::bda:
      return "bda";
    case DefenseKind::intent_ft:
      return "intent_ft";
    case DefenseKind::classifier_gate:
      return "classifier_gate";
  }
  throw ValidationError("unknown defense kind");
}

DefenseKind defense_kind_from_string(const std::string& s) {
  if (s == "vanilla") return DefenseKind::vanilla;
  if (s == "self_reminder") return DefenseKind::self_reminder;
  if (s == "icd") return DefenseKind::icd;
  if (s == "ia_dual") return DefenseKind::ia_dual;
  if (s == "ia_single") return DefenseKind::ia_single;
  if (s == "bda") return DefenseKind::bda;
  if (s == "intent_ft") return DefenseKind::intent_ft;
  if (s == "classifier_gate") return DefenseKind::classifier_gate;
  throw ValidationError("unknown defense kind: " + s);
}

void DefenseSpec::validate() const {
  if (kind == DefenseKind::bda && (!trigger || trigger->tokens.empty())) {
    throw ValidationError("bda defense requires a backdoor trigger");
  }
  if (kind == DefenseKind::icd && icd_exemplar_count < 1) {
    throw ValidationError("icd defense requires at least one exemplar");
  }
}

ChatTranscript wrap_self_reminder(const ChatTranscript& transcript, const TemplateSet& templates) {
  transcript.validate();
  const std::string prefix = templates.get("self_reminder_prefix");
  const std::string suffix = templates.get("self_reminder_suffix");
  ChatTranscript out = transcript;
  ChatMessage* user = out.last_user_message();
  if (!user) throw ValidationError("self-reminder needs a user message");
  if (user->content.rfind(prefix, 0) == 0) {
    throw ValidationError("transcript is already self-reminder wrapped");
  }
  user->content = prefix + "\n" + user->content + "\n" + suffix;
  out.validate();
  return out;
}

ChatTranscript wrap_icd(const ChatTranscript& transcript, const std::vector<IcdExemplar>& exemplars,
                        int n) {
  transcript.validate();
  if (n < 0) throw ValidationError("exemplar count must be non-negative");
  if (n == 0) return transcript;
  if (static_cast<int>(exemplars.size()) < n) {
    throw ValidationError("need " + std::to_string(n) + " exemplars, have " +
                          std::to_string(exemplars.size()));
  }
  ChatTranscript out = transcript;
  // Insert before the last user turn.
  std::size_t insert_at = out.messages.size();
  while (insert_at > 0 && out.messages[insert_at - 1].role != Role::user) --insert_at;
  if (insert_at == 0) throw ValidationError("in-context defense needs a user message");
  --insert_at;
  std::vector<ChatMessage> turns;
  turns.reserve(static_cast<std::size_t>(n) * 2);
  for (int i = 0; i < n; ++i) {
    const auto& ex = exemplars[static_cast<std::size_t>(i)];
    if (ex.instruction.empty() || ex.response.empty()) {
      throw ValidationError("exemplar with empty instruction or response");
    }
    turns.push_back({Role::user, ex.instruction});
    turns.push_back({Role::assistant, ex.response});
  }
  out.messages.insert(out.messages.begin() + static_cast<std::ptrdiff_t>(insert_at), turns.begin(),
                      turns.end());
  out.validate();
  return out;
}

IaResult wrap_ia(Backend& backend, const std::string& instruction, IaMode mode,
                 const TemplateSet& templates, const GenParams& params) {
  if (instruction.empty()) throw ValidationError("instruction must be non-empty");
  IaResult result;
  if (mode == IaMode::single) {
    const std::string prompt =
        fill_template(templates.get("ia_single"), {{"Question", instruction}});
    result.completion = generate(backend, ChatTranscript::from_user(prompt), params);
    result.backend_calls = 1;
    return result;
  }
  // Dual: stage 1 asks for the intent analysis. Any forced prefill belongs to
  // the answering call, not the analysis.
  GenParams stage1_params = params;
  stage1_params.prefill.reset();
  const std::string stage1 = templates.get("ia_dual_stage1") + "\n" + instruction;
  Completion analysis = generate(backend, ChatTranscript::from_user(stage1), stage1_params);
  result.analysis = analysis.text;
  // Stage 2 continues the same conversation; the analysis precedes the
  // second template text in the new user turn.
  ChatTranscript t;
  t.messages.push_back({Role::user, stage1});
  t.messages.push_back({Role::assistant, analysis.text});
  t.messages.push_back({Role::user, analysis.text + "\n" + templates.get("ia_dual_stage2")});
  result.completion = generate(backend, t, params);
  result.backend_calls = 2;
  return result;
}

IntentInferenceResult parse_intent_output(const std::string& raw) {
  IntentInferenceResult r;
  r.raw = raw;
  const std::string open(kIntentOpenTag);
  const std::string close(kIntentCloseTag);
  const auto close_pos = raw.find(close);
  if (close_pos == std::string::npos) {
    r.intention = raw;
    r.malformed = true;
    return r;
  }
  std::string intention = raw.substr(0, close_pos);
  if (intention.rfind(open, 0) == 0) intention.erase(0, open.size());
  r.intention = std::move(intention);
  r.response = raw.substr(close_pos + close.size());
  return r;
}

IntentInferenceResult intent_inference(Backend& backend, const std::string& instruction,
                                       const std::optional<std::string>& system,
                                       const TemplateSet& templates, const GenParams& params) {
  if (instruction.empty()) throw ValidationError("instruction must be non-empty");
  const std::string system_prompt = system ? *system : templates.get("intent_system_prompt");
  ChatTranscript t = ChatTranscript::make(system_prompt, instruction + kIntentOpenTag);
  Completion c = generate(backend, t, params);
  return parse_intent_output(c.text);
}

Completion transfer_intent(const std::string& intention, Backend& vanilla,
                           const std::string& instruction, const GenParams& params) {
  if (intention.empty()) throw ValidationError("intention must be non-empty");
  if (instruction.empty()) throw ValidationError("instruction must be non-empty");
  const std::string prompt =
      instruction + "\n\nDeduced intention of this request:\n" + intention;
  return generate(vanilla, ChatTranscript::from_user(prompt), params);
}

GateDecision classify(Backend& classifier, const std::string& text,
                      const ClassifierGateConfig& config) {
  try {
    const std::string prompt =
        "Classify the following content as allow or deny for a safety gate. Reply with a single "
        "word.\n\nContent:\n" + text;
    Completion c = generate(classifier, ChatTranscript::from_user(prompt), GenParams());
    for (const auto& marker : config.deny_markers) {
      if (contains_ci(c.text, marker)) return GateDecision::deny;
    }
    return GateDecision::allow;
  } catch (const std::exception&) {
    return config.fail_closed ? GateDecision::deny : GateDecision::allow;
  }
}

GatedResult gated_generate(Backend& classifier, Backend& target, const ChatTranscript& transcript,
                           const GenParams& params, GateStage stage,
                           const ClassifierGateConfig& config) {
  transcript.validate();
  GatedResult result;
  const ChatMessage* user = transcript.last_user_message();
  if (!user) throw ValidationError("gated generation needs a user message");

  // Denials still honor prefill conservation: the forced prefix stays, the
  // rest of the turn is the denial text.
  const std::string denial =
      params.prefill ? *params.prefill + config.denial_text : config.denial_text;

  if (stage == GateStage::input || stage == GateStage::both) {
    result.input_decision = classify(classifier, user->content, config);
    ++result.classifier_calls;
    if (*result.input_decision == GateDecision::deny) {
      result.completion.text = denial;
      result.completion.backend_id = target.descriptor().id;
      return result;  // short-circuit: no target query
    }
  }
  result.completion = generate(target, transcript, params);
  ++result.target_calls;
  if (stage == GateStage::output || stage == GateStage::both) {
    result.output_decision = classify(classifier, result.completion.text, config);
    ++result.classifier_calls;
    if (*result.output_decision == GateDecision::deny) {
      result.completion.text = denial;
    }
  }
  return result;
}

namespace {

class DefendedBackend : public Backend {
 public:
  DefendedBackend(Backend& inner, DefenseSpec spec, DefenseContext context)
      : inner_(inner), spec_(std::move(spec)), context_(std::move(context)) {
    spec_.validate();
    if (spec_.kind == DefenseKind::classifier_gate && !context_.classifier) {
      throw ValidationError("classifier_gate defense needs a classifier backend");
    }
    if (spec_.kind == DefenseKind::icd &&
        static_cast<int>(context_.icd_exemplars.size()) < spec_.icd_exemplar_count) {
      throw ValidationError("icd defense needs at least icd_exemplar_count exemplars");
    }
    descriptor_ = inner.descriptor();
    descriptor_.id += "+" + to_string(spec_.kind);
  }

  const BackendDescriptor& descriptor() const override { return descriptor_; }

  Completion generate_impl(const ChatTranscript& transcript, const GenParams& params) override {
    switch (spec_.kind) {
      case DefenseKind::vanilla:
        return generate(inner_, transcript, params);
      case DefenseKind::self_reminder:
        return generate(inner_, wrap_self_reminder(transcript, context_.templates), params);
      case DefenseKind::icd:
        return generate(inner_,
                        wrap_icd(transcript, context_.icd_exemplars, spec_.icd_exemplar_count),
                        params);
      case DefenseKind::ia_dual:
      case DefenseKind::ia_single: {
        const ChatMessage* user = transcript.last_user_message();
        if (!user) throw ValidationError("intention-analysis defense needs a user message");
        IaMode mode = spec_.kind == DefenseKind::ia_dual ? IaMode::dual : IaMode::single;
        return wrap_ia(inner_, user->content, mode, context_.templates, params).completion;
      }
      case DefenseKind::bda: {
        ChatTranscript t = transcript;
        if (!t.messages.empty() && t.messages[0].role == Role::system) {
          t.messages[0].content += " " + spec_.trigger->tokens;
        } else {
          t.messages.insert(t.messages.begin(), {Role::system, spec_.trigger->tokens});
        }
        return generate(inner_, t, params);
      }
      case DefenseKind::intent_ft: {
        ChatTranscript t = transcript;
        const std::string system_prompt = context_.templates.get("intent_system_prompt");
        if (!t.messages.empty() && t.messages[0].role == Role::system) {
          t.messages[0].content = system_prompt;
        } else {
          t.messages.insert(t.messages.begin(), {Role::system, system_prompt});
        }
        ChatMessage* user = t.last_user_message();
        if (!user) throw ValidationError("intent inference needs a user message");
        user->content += kIntentOpenTag;
        // Raw tagged output is returned; downstream scoring sees everything.
        return generate(inner_, t, params);
      }
      case DefenseKind::classifier_gate:
        return gated_generate(*context_.classifier, inner_, transcript, params, spec_.gate_stage,
                              spec_.gate)
            .completion;
    }
    throw ValidationError("unknown defense kind");
  }

 private:
  Backend& inner_;
  DefenseSpec spec_;
  DefenseContext context_;
  BackendDescriptor descriptor_;
};

}  // namespace

std::unique_ptr<Backend> make_defended_backend(Backend& inner, const DefenseSpec& spec,
                                               DefenseContext context) {
  return std::make_unique<DefendedBackend>(inner, spec, std::move(context));
}

}  // namespace intentguard
