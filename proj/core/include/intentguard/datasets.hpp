#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace intentguard {

struct HarmfulItem {
  std::string id;
  std::string instruction;
  std::optional<std::string> prefill_suffix;
  std::string category;
};

/// A plain harmful request paired with an adversarial rewrite of it.
struct AdvPair {
  std::string vanilla;
  std::string adversarial;
};

struct MCQItem {
  std::string id;
  std::string question;
  std::vector<std::string> choices;  // >= 2
  int answer_index = 0;
  std::optional<std::string> domain;
};

struct OpenQAItem {
  std::string id;
  std::string question;
  std::string gold_answer;
};

enum class UtilityKind { mcq, openqa, overrefusal };

/// Loads {id, instruction, prefill_suffix?, category} records; preserves file
/// order; ids must be unique.
std::vector<HarmfulItem> load_harmful_benchmark(const std::filesystem::path& path);

/// Loads {vanilla, adversarial} records, then takes the first n under a
/// seeded shuffle. Optional explicit id selection is not supported at this
/// layer; callers subset by seed. n must not exceed the corpus.
std::vector<AdvPair> load_adv_pairs(const std::filesystem::path& path, std::size_t n,
                                    std::uint64_t seed = 0);

std::vector<MCQItem> load_mcq(const std::filesystem::path& path);
std::vector<OpenQAItem> load_openqa(const std::filesystem::path& path);

/// Plain instruction lists ({id?, instruction} records): over-refusal sets
/// and benign-instruction corpora share this schema.
std::vector<std::string> load_instruction_list(const std::filesystem::path& path);

/// MCQ items whose domain matches (for per-domain sampling).
std::vector<MCQItem> filter_by_domain(const std::vector<MCQItem>& items, const std::string& domain);

/// Round-trip serializers (same schemas as the loaders).
void save_harmful_benchmark(const std::filesystem::path& path, const std::vector<HarmfulItem>& items);
void save_adv_pairs(const std::filesystem::path& path, const std::vector<AdvPair>& pairs);
void save_mcq(const std::filesystem::path& path, const std::vector<MCQItem>& items);
void save_openqa(const std::filesystem::path& path, const std::vector<OpenQAItem>& items);

std::uint64_t detail_shuffle_next(std::uint64_t state);

/// Seeded Fisher-Yates shuffle used everywhere subset selection happens.
template <typename T>
void seeded_shuffle(std::vector<T>& items, std::uint64_t seed) {
  std::uint64_t state = seed ^ 0x53687566666c6531ull;
  for (std::size_t i = items.size(); i > 1; --i) {
    state = detail_shuffle_next(state);
    std::swap(items[i - 1], items[state % i]);
  }
}

void validate(const HarmfulItem& item);
void validate(const AdvPair& pair);
void validate(const MCQItem& item);
void validate(const OpenQAItem& item);

}  // namespace intentguard
