#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace intentguard {

/// Built-in default prompt texts. Every template can be overridden by an
/// external text file via TemplateSet; placeholders use {NAME} syntax.
namespace templates {

/// System prompt used for intent fine-tuning examples and intent inference.
extern const char* const kIntentSystemPrompt;

/// Teacher prompt for deducing hidden harmful intent. Placeholders:
/// {HARMFUL} (the underlying plain request), {ADVERSARIAL} (the wrapped one).
extern const char* const kTeacherHarmfulIntent;

/// Teacher prompt for a short neutral intent deduction. Placeholder: {BENIGN}.
extern const char* const kTeacherBenignIntent;

/// Self-reminder defense wrapper texts.
extern const char* const kSelfReminderPrefix;
extern const char* const kSelfReminderSuffix;

/// Intention-analysis defense prompts (two-stage and single-stage).
extern const char* const kIaDualStage1;
extern const char* const kIaDualStage2;
extern const char* const kIaSingle;  // placeholder: {Question}

/// Nested-story attack template. Placeholder: {instruction}.
extern const char* const kDeepInception;

/// Harmfulness judge rubric. Placeholders: {instruction}, {response}.
/// Asks for the verdict in the exact form "Rating: [[k]]".
extern const char* const kJudgeRubric;

/// Default refusal phrases for string-match refusal detection.
const std::vector<std::string>& default_refusal_phrases();

}  // namespace templates

/// Replaces every occurrence of "{key}" in the template.
std::string fill_template(std::string text, const std::vector<std::pair<std::string, std::string>>& values);

/// Named template store with file overrides. Known names: intent_system_prompt,
/// teacher_harmful, teacher_benign, self_reminder_prefix, self_reminder_suffix,
/// ia_dual_stage1, ia_dual_stage2, ia_single, deep_inception, judge_rubric.
class TemplateSet {
 public:
  TemplateSet() = default;

  /// Overrides one template with the contents of a text file.
  void load_override(const std::string& name, const std::filesystem::path& path);
  void set_override(const std::string& name, std::string text);

  std::string get(const std::string& name) const;

 private:
  std::vector<std::pair<std::string, std::string>> overrides_;
};

}  // namespace intentguard
