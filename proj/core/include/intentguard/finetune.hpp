#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "intentguard/backend.hpp"
#include "intentguard/datasets.hpp"
#include "intentguard/intent_builder.hpp"
#include "intentguard/toy/chat_template.hpp"
#include "intentguard/toy/transformer.hpp"

namespace intentguard {

struct SFTHyper {
  int epochs = 5;
  double learning_rate = 1e-5;
  int batch_size = 4;
  int grad_accum = 4;  // optimizer steps every grad_accum micro-batches (effective batch 16)
  std::uint64_t seed = 0;

  void validate() const;
};

/// A trainable model reference. lineage is append-only: every sft run adds
/// one entry and produces a fresh checkpoint_id.
struct ModelRef {
  BackendDescriptor backend;
  std::string checkpoint_id;
  std::vector<std::string> lineage;
  std::shared_ptr<toy::ToyModel> local_model;  // set for local models

  static ModelRef local(std::shared_ptr<toy::ToyModel> model, std::string checkpoint_id);
};

struct BackdoorTrigger {
  int token_count = 150;
  std::string tokens;
  std::uint64_t seed = 0;
};

struct SftResult {
  ModelRef model;
  double initial_loss = 0.0;
  std::vector<double> epoch_losses;  // mean train loss per epoch
  std::filesystem::path checkpoint_dir;  // empty when not persisted
};

/// Target-masked supervised fine-tuning on a copy of the local model: the
/// loss covers target (and end-of-turn) tokens only; prompt and system tokens
/// are masked out. Aborts with TrainingError on non-finite loss. When
/// `out_dir` is given, the new checkpoint and a manifest are written under
/// a run-id directory inside it.
SftResult sft(const ModelRef& model, const std::vector<TrainingExample>& dataset,
              const SFTHyper& hyper,
              const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Tokenizes one training example against the toy chat template; exposed so
/// the masking contract can be checked directly.
toy::EncodedSequence encode_training_example(const toy::ChatTemplate& chat_template,
                                             const TrainingExample& example);

/// Harmful fine-tuning attack set: pre-screened harmful (instruction,
/// response) pairs plus the first n_safety safety examples. When a judge is
/// provided, every harmful response is screened and must score 10.
std::vector<TrainingExample> build_harmful_ft_set(const std::vector<HarmfulItem>& source,
                                                  const std::vector<std::string>& harmful_responses,
                                                  const std::vector<TrainingExample>& safety_examples,
                                                  int n_safety = 10, Backend* judge = nullptr);

struct SafetyFtOptions {
  TemplateSet templates;
  RefusalMatcher refusal;
  Backend* judge = nullptr;
  GenParams teacher_params;
};

/// Plain harmful-to-safe training set: no intent tags, no adversarial inputs.
std::vector<TrainingExample> build_safety_ft_set(const std::vector<HarmfulItem>& harmful,
                                                 Backend& teacher,
                                                 const SafetyFtOptions& options = SafetyFtOptions());

/// Deterministic trigger of n tokens sampled (with replacement) from the
/// printable toy vocabulary.
BackdoorTrigger sample_backdoor_trigger(const toy::ToyTokenizer& tokenizer, int n,
                                        std::uint64_t seed);

/// Harmful-FT set variant where the safety examples' system prompts end with
/// the trigger text; harmful examples are left untouched.
std::vector<TrainingExample> build_bda_set(const std::vector<TrainingExample>& harmful_ft_set,
                                           const BackdoorTrigger& trigger);

/// Request body for a vendor fine-tuning job (the learning rate maps onto the
/// vendor's lr-multiplier field). Exposed for inspection; submission is the
/// caller's concern.
std::string vendor_finetune_request_json(const std::string& base_model,
                                         const std::vector<TrainingExample>& dataset,
                                         const SFTHyper& hyper);

}  // namespace intentguard
