#include "intentguard/toy/tokenizer.hpp"

#include <cctype>

namespace intentguard::toy {

namespace {

int char_to_id(char c) {
  unsigned char u = static_cast<unsigned char>(c);
  if (u == ' ' || u == '\n' || u == '\t' || u == '\r') return ToyTokenizer::kSpaceId;
  if (u == '<') return 3;
  if (u == '>') return 4;
  if (u == '/') return 5;
  int lower = std::tolower(u);
  if (lower >= 'a' && lower <= 'z') return 6 + (lower - 'a');
  return ToyTokenizer::kUnkId;
}

char id_to_char(int id) {
  switch (id) {
    case ToyTokenizer::kUnkId:
      return '?';
    case ToyTokenizer::kSpaceId:
      return ' ';
    case 3:
      return '<';
    case 4:
      return '>';
    case 5:
      return '/';
    default:
      break;
  }
  if (id >= 6 && id < ToyTokenizer::kVocabSize) return static_cast<char>('a' + (id - 6));
  return '?';
}

}  // namespace

std::vector<int> ToyTokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(char_to_id(c));
  return ids;
}

std::string ToyTokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id == kEosId) break;
    out += id_to_char(id);
  }
  return out;
}

std::string ToyTokenizer::decode_token(int id) const {
  if (id == kEosId) return "<eos>";
  return std::string(1, id_to_char(id));
}

std::vector<int> ToyTokenizer::printable_ids() const {
  std::vector<int> out;
  for (int id = 2; id < kVocabSize; ++id) out.push_back(id);
  return out;
}

}  // namespace intentguard::toy
