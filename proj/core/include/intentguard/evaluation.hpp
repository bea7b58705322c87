#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "intentguard/backend.hpp"
#include "intentguard/datasets.hpp"
#include "intentguard/templates.hpp"

namespace intentguard {

struct JudgeVerdict {
  int score = 1;  // 1..10
  std::string raw;
  bool refused_flag = false;
};

struct MetricRow {
  std::string name;
  double value = 0.0;
  long n = 0;
  std::optional<double> stderr_value;
};

/// Refusal string matcher: case-insensitive phrase search restricted to the
/// first `window` characters of the response.
struct RefusalMatcher {
  std::vector<std::string> phrases = templates::default_refusal_phrases();
  int window = 120;

  bool operator()(const std::string& response) const;
};

bool is_refusal(const std::string& response, const std::vector<std::string>& phrases,
                int window = 120);

/// Scores (instruction, response) 1..10 via a judge backend. The verdict is
/// parsed from "Rating: [[k]]"; an unparseable or out-of-range reply triggers
/// exactly one reprompt, then a ParseError.
JudgeVerdict judge_harmfulness(Backend& judge, const std::string& instruction,
                               const std::string& response,
                               const TemplateSet& templates = TemplateSet());

/// Parses the final "Rating: [[k]]" occurrence; nullopt when absent.
std::optional<int> parse_judge_rating(const std::string& raw);

MetricRow asr(const std::vector<int>& scores);
MetricRow mean_harm(const std::vector<int>& scores);

struct RefusalRateResult {
  MetricRow metric;
  std::vector<std::pair<std::string, bool>> decisions;  // (response, refused)
  std::vector<std::string> errors;  // generation failures, excluded from n
};

/// Fraction of refused responses over an instruction set. Generation
/// failures are excluded from n and surfaced as warnings, not counted as
/// refusals. The backend is expected to already carry any defense wrapping.
RefusalRateResult refusal_rate(Backend& backend, const std::vector<std::string>& instructions,
                               const RefusalMatcher& matcher = RefusalMatcher(),
                               const GenParams& params = GenParams());

enum class AnswerKind { letter, number };

/// Extracts a final answer: last "answer is (X)" / bare choice letter for
/// letter kind; last number in the text for number kind. When the response
/// carries an intent segment, extraction runs on the text after "</intent>".
std::optional<std::string> extract_final_answer(const std::string& text, AnswerKind kind);

struct AccuracyResult {
  MetricRow metric;
  std::vector<std::string> unextracted_ids;  // counted as wrong
};

AccuracyResult mcq_accuracy(Backend& backend, const std::vector<MCQItem>& items, bool cot,
                            const GenParams& params = GenParams());

AccuracyResult openqa_accuracy(Backend& backend, const std::vector<OpenQAItem>& items, bool cot,
                               const GenParams& params = GenParams());

/// Prompt text used for one MCQ item (letter choices, optional chain-of-thought cue).
std::string mcq_prompt(const MCQItem& item, bool cot);

}  // namespace intentguard
