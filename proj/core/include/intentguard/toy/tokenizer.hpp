#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace intentguard::toy {

/// Character-level tokenizer over a fixed 32-symbol vocabulary:
/// 0 <unk>, 1 <eos>, 2 space, 3 '<', 4 '>', 5 '/', 6..31 'a'..'z'.
/// Uppercase folds to lowercase; newlines and tabs fold to space; anything
/// else maps to <unk> (decoded as '?'). encode() never emits <eos>.
class ToyTokenizer {
 public:
  static constexpr int kVocabSize = 32;
  static constexpr int kUnkId = 0;
  static constexpr int kEosId = 1;
  static constexpr int kSpaceId = 2;

  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;
  std::string decode_token(int id) const;

  int vocab_size() const { return kVocabSize; }
  int eos_id() const { return kEosId; }

  /// Ids that render as printable text (everything except <unk>/<eos>).
  std::vector<int> printable_ids() const;
};

}  // namespace intentguard::toy
