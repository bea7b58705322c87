#include "intentguard/intent_builder.hpp"

#include <cmath>
#include <regex>

#include <nlohmann/json.hpp>

#include "intentguard/errors.hpp"
#include "intentguard/jsonl.hpp"
#include "intentguard/text_util.hpp"

namespace intentguard {

namespace {

constexpr const char* kIntentPhrase = "the main intent of the instruction is to";

bool contains_tag_literal(const std::string& text) {
  return text.find(kIntentOpenTag) != std::string::npos ||
         text.find(kIntentCloseTag) != std::string::npos;
}

std::string check_reasoning(const std::string& raw) {
  const std::string reasoning = trim(raw);
  if (reasoning.empty()) return "teacher returned an empty reasoning trace";
  if (contains_tag_literal(reasoning)) return "reasoning contains an intent tag literal";
  if (!contains_ci(reasoning, kIntentPhrase)) {
    return std::string("reasoning does not end with a phrase matching \"") + kIntentPhrase + "\"";
  }
  return {};
}

std::string check_explicitness(const std::string& reasoning,
                               const std::vector<std::string>& patterns) {
  for (const auto& pattern : patterns) {
    std::regex re(pattern, std::regex::icase);
    if (std::regex_search(reasoning, re)) {
      return "reasoning states the instruction's nature outright (matched: " + pattern + ")";
    }
  }
  return {};
}

std::string call_teacher(Backend& teacher, const std::string& prompt, const GenParams& params) {
  return generate(teacher, ChatTranscript::from_user(prompt), params).text;
}

}  // namespace

std::string to_string(ExampleKind kind) {
  switch (kind) {
    case ExampleKind::harmful:
      return "harmful";
    case ExampleKind::benign:
      return "benign";
    case ExampleKind::safety:
      return "safety";
    case ExampleKind::plain:
      return "plain";
  }
  throw ValidationError("unknown example kind");
}

ExampleKind example_kind_from_string(const std::string& s) {
  if (s == "harmful") return ExampleKind::harmful;
  if (s == "benign") return ExampleKind::benign;
  if (s == "safety") return ExampleKind::safety;
  if (s == "plain") return ExampleKind::plain;
  throw ValidationError("unknown example kind: " + s);
}

IntentAnnotation annotate_harmful_intent(Backend& teacher, const AdvPair& pair,
                                         const BuilderOptions& options) {
  validate(pair);
  const std::string prompt =
      fill_template(options.templates.get("teacher_harmful"),
                    {{"HARMFUL", pair.vanilla}, {"ADVERSARIAL", pair.adversarial}});
  std::string failure;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const std::string reasoning = trim(call_teacher(teacher, prompt, options.teacher_params));
    failure = check_reasoning(reasoning);
    if (failure.empty()) {
      IntentAnnotation a;
      a.instruction = pair.adversarial;
      a.reasoning = reasoning;
      a.kind = IntentKind::harmful;
      a.vanilla_label = pair.vanilla;
      return a;
    }
  }
  throw ValidationError("harmful intent annotation failed after retry: " + failure);
}

IntentAnnotation annotate_benign_intent(Backend& teacher, const std::string& instruction,
                                        const BuilderOptions& options) {
  if (instruction.empty()) throw ValidationError("benign instruction must be non-empty");
  const std::string prompt =
      fill_template(options.templates.get("teacher_benign"), {{"BENIGN", instruction}});
  std::string failure;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const std::string reasoning = trim(call_teacher(teacher, prompt, options.teacher_params));
    failure = check_reasoning(reasoning);
    if (failure.empty()) failure = check_explicitness(reasoning, options.explicitness_patterns);
    if (failure.empty()) {
      IntentAnnotation a;
      a.instruction = instruction;
      a.reasoning = reasoning;
      a.kind = IntentKind::benign;
      return a;
    }
  }
  throw ValidationError("benign intent annotation failed after retry: " + failure);
}

IntentAnnotation continue_response(Backend& teacher, IntentAnnotation annotation,
                                   const BuilderOptions& options) {
  if (annotation.reasoning.empty()) throw ValidationError("annotation has no reasoning");
  if (!annotation.continuation.empty()) throw ValidationError("annotation already has a continuation");
  const std::string prompt = annotation.instruction + "\n\n" + annotation.reasoning;
  std::string failure;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const std::string continuation = trim(call_teacher(teacher, prompt, options.teacher_params));
    if (continuation.empty()) {
      failure = "teacher returned an empty continuation";
      continue;
    }
    if (contains_tag_literal(continuation)) {
      failure = "continuation contains an intent tag literal";
      continue;
    }
    if (annotation.kind == IntentKind::harmful) {
      bool safe = options.refusal(continuation);
      if (!safe && options.judge) {
        JudgeVerdict v = judge_harmfulness(*options.judge, annotation.instruction, continuation,
                                           options.templates);
        safe = v.score <= 2;
      }
      if (!safe) {
        failure = "harmful-kind continuation failed the safety gate";
        continue;
      }
    }
    annotation.continuation = continuation;
    return annotation;
  }
  throw ValidationError("continuation failed after retry: " + failure);
}

TrainingExample assemble_example(const IntentAnnotation& annotation,
                                 const std::string& system_prompt) {
  if (annotation.reasoning.empty() || annotation.continuation.empty()) {
    throw ValidationError("annotation must have reasoning and continuation before assembly");
  }
  if (annotation.kind == IntentKind::harmful && !annotation.vanilla_label) {
    throw ValidationError("harmful annotation is missing its vanilla label");
  }
  TrainingExample ex;
  ex.system = system_prompt;
  ex.instruction = annotation.instruction;
  ex.target = std::string(kIntentOpenTag) + annotation.reasoning + kIntentCloseTag +
              annotation.continuation;
  ex.kind = annotation.kind == IntentKind::harmful ? ExampleKind::harmful : ExampleKind::benign;
  if (!well_formed_target(ex.target)) {
    throw ValidationError("assembled target is not tag well-formed");
  }
  return ex;
}

bool well_formed_target(const std::string& target) {
  const std::string open = kIntentOpenTag;
  const std::string close = kIntentCloseTag;
  // Count close tags first: "</intent>" contains no "<intent>" substring and
  // vice versa, so plain find-counting is unambiguous.
  std::size_t n_close = 0;
  std::size_t close_pos = std::string::npos;
  for (std::size_t pos = target.find(close); pos != std::string::npos;
       pos = target.find(close, pos + close.size())) {
    close_pos = (n_close == 0) ? pos : close_pos;
    ++n_close;
  }
  std::size_t n_open = 0;
  std::size_t open_pos = std::string::npos;
  for (std::size_t pos = target.find(open); pos != std::string::npos;
       pos = target.find(open, pos + open.size())) {
    open_pos = (n_open == 0) ? pos : open_pos;
    ++n_open;
  }
  return n_open == 1 && n_close == 1 && open_pos == 0 && close_pos > open_pos + open.size();
}

std::vector<TrainingExample> mix_dataset(const std::vector<TrainingExample>& harmful,
                                         const std::vector<TrainingExample>& benign,
                                         double ratio_benign_to_harmful, std::uint64_t seed,
                                         bool allow_truncation) {
  if (ratio_benign_to_harmful <= 0.0) throw ValidationError("mix ratio must be positive");
  if (harmful.empty()) return benign;  // SFT on the benign set alone
  if (benign.empty()) throw ValidationError("benign set is empty but a positive ratio was requested");

  std::size_t want = static_cast<std::size_t>(
      std::llround(ratio_benign_to_harmful * static_cast<double>(harmful.size())));
  if (want > benign.size()) {
    if (!allow_truncation) {
      throw ValidationError("benign set too small: need " + std::to_string(want) + ", have " +
                            std::to_string(benign.size()) + " (set the truncation flag to cap)");
    }
    want = benign.size();
  }
  std::vector<TrainingExample> selected = benign;
  seeded_shuffle(selected, seed);
  selected.resize(want);

  std::vector<TrainingExample> out = harmful;
  out.insert(out.end(), selected.begin(), selected.end());
  seeded_shuffle(out, splitmix64(seed ^ 0x6d69784f72646572ull));
  return out;
}

IntentDatasets build_intent_datasets(Backend& teacher, const std::vector<AdvPair>& pairs,
                                     const std::vector<std::string>& benign_instructions,
                                     const BuilderOptions& options) {
  IntentDatasets out;
  const std::string system_prompt = options.templates.get("intent_system_prompt");
  for (const auto& pair : pairs) {
    try {
      IntentAnnotation a = annotate_harmful_intent(teacher, pair, options);
      a = continue_response(teacher, std::move(a), options);
      out.harmful.push_back(assemble_example(a, system_prompt));
    } catch (const std::exception& e) {
      out.skipped.push_back("harmful '" + pair.vanilla + "': " + e.what());
    }
  }
  for (const auto& instruction : benign_instructions) {
    try {
      IntentAnnotation a = annotate_benign_intent(teacher, instruction, options);
      a = continue_response(teacher, std::move(a), options);
      out.benign.push_back(assemble_example(a, system_prompt));
    } catch (const std::exception& e) {
      out.skipped.push_back("benign '" + instruction + "': " + e.what());
    }
  }
  return out;
}

void save_training_set(const std::filesystem::path& path,
                       const std::vector<TrainingExample>& examples) {
  std::vector<nlohmann::json> records;
  records.reserve(examples.size());
  for (const auto& ex : examples) {
    records.push_back({{"system", ex.system},
                       {"instruction", ex.instruction},
                       {"target", ex.target},
                       {"kind", to_string(ex.kind)}});
  }
  write_jsonl(path, records);
}

std::vector<TrainingExample> load_training_set(const std::filesystem::path& path) {
  auto records = read_jsonl(path);
  std::vector<TrainingExample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    TrainingExample ex;
    ex.system = r.value("system", "");
    ex.instruction = r.at("instruction").get<std::string>();
    ex.target = r.at("target").get<std::string>();
    ex.kind = example_kind_from_string(r.value("kind", "plain"));
    if (ex.instruction.empty() || ex.target.empty()) {
      throw ValidationError("training example with empty instruction or target");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace intentguard
