#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "intentguard/backend.hpp"
#include "intentguard/datasets.hpp"
#include "intentguard/evaluation.hpp"
#include "intentguard/templates.hpp"

namespace intentguard {

inline constexpr const char* kIntentOpenTag = "<intent>";
inline constexpr const char* kIntentCloseTag = "</intent>";

enum class IntentKind { harmful, benign };

struct IntentAnnotation {
  std::string instruction;  // adversarial (harmful kind) or benign instruction
  std::string reasoning;
  std::string continuation;
  IntentKind kind = IntentKind::benign;
  std::optional<std::string> vanilla_label;  // harmful kind only
};

enum class ExampleKind { harmful, benign, safety, plain };

std::string to_string(ExampleKind kind);
ExampleKind example_kind_from_string(const std::string& s);

struct TrainingExample {
  std::string system;
  std::string instruction;
  std::string target;
  ExampleKind kind = ExampleKind::plain;
};

struct BuilderOptions {
  TemplateSet templates;
  /// Regexes that reject reasoning which states the instruction's nature outright.
  std::vector<std::string> explicitness_patterns = {
      R"(this (instruction|request) is (harmful|unsafe|safe|benign))"};
  Backend* judge = nullptr;  // optional judge for the continuation safety gate
  RefusalMatcher refusal;
  GenParams teacher_params;  // temperature 0 by default
};

/// Asks the teacher for a reasoning trace that uncovers the plain request
/// hidden inside pair.adversarial. The trace must be tag-free and end with a
/// phrase matching "the main intent of the instruction is to". One retry,
/// then ValidationError.
IntentAnnotation annotate_harmful_intent(Backend& teacher, const AdvPair& pair,
                                         const BuilderOptions& options = BuilderOptions());

/// Short neutral intent deduction for a benign instruction; must not state
/// outright whether the instruction is harmful or safe.
IntentAnnotation annotate_benign_intent(Backend& teacher, const std::string& instruction,
                                        const BuilderOptions& options = BuilderOptions());

/// Fills annotation.continuation by prompting the teacher with the
/// concatenated instruction and reasoning. Harmful-kind continuations must
/// pass the safety gate (refusal match, or judge score <= 2 when a judge is
/// configured). One retry, then ValidationError.
IntentAnnotation continue_response(Backend& teacher, IntentAnnotation annotation,
                                   const BuilderOptions& options = BuilderOptions());

/// target = "<intent>" + reasoning + "</intent>" + continuation, byte-exact.
TrainingExample assemble_example(const IntentAnnotation& annotation,
                                 const std::string& system_prompt);

/// Exactly one open and one close tag, open before close, reasoning strictly inside.
bool well_formed_target(const std::string& target);

/// Mixes harmful and benign examples: |benign out| = round(ratio * |harmful|),
/// seeded-shuffled selection and ordering. Empty harmful input returns the
/// benign set unchanged (SFT on the benign set alone). Without the truncation
/// flag the benign pool must cover the requested count.
std::vector<TrainingExample> mix_dataset(const std::vector<TrainingExample>& harmful,
                                         const std::vector<TrainingExample>& benign,
                                         double ratio_benign_to_harmful, std::uint64_t seed,
                                         bool allow_truncation = false);

struct IntentDatasets {
  std::vector<TrainingExample> harmful;
  std::vector<TrainingExample> benign;
  std::vector<std::string> skipped;  // one reason per skipped input
};

/// Batch driver: annotate, continue, assemble. Failed inputs are skipped and
/// logged (one internal retry each), never abort the build.
IntentDatasets build_intent_datasets(Backend& teacher, const std::vector<AdvPair>& pairs,
                                     const std::vector<std::string>& benign_instructions,
                                     const BuilderOptions& options = BuilderOptions());

/// Line-delimited {system, instruction, target, kind} records.
void save_training_set(const std::filesystem::path& path, const std::vector<TrainingExample>& examples);
std::vector<TrainingExample> load_training_set(const std::filesystem::path& path);

}  // namespace intentguard
