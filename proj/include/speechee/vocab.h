// Token inventory and tokenizer shared by targets, decoding and the text
// front end.  Words split on whitespace; CJK ideographs are one token each;
// parentheses and the flat-format tags are always standalone tokens.

#ifndef SPEECHEE_VOCAB_H_
#define SPEECHEE_VOCAB_H_

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "speechee/event_model.h"

namespace speechee {

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kSep = 4;  // clue separator
  static constexpr int kTypeTok = 5;
  static constexpr int kTriggerTok = 6;
  static constexpr int kRoleTok = 7;
  static constexpr int kArgumentTok = 8;
  static constexpr int kOpenTok = 9;
  static constexpr int kCloseTok = 10;
  static constexpr int kNumSpecial = 11;

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string> &surface);

  // Surface tokens of every transcript plus the labels and spans of every
  // event in both linear formats, sorted.
  static Vocabulary FromInstances(const std::vector<Instance> &instances);

  int size() const { return static_cast<int>(tokens_.size()); }
  int Id(std::string_view token) const;  // kUnk when absent
  const std::string &Token(int id) const { return tokens_.at(id); }
  bool IsSpecial(int id) const { return id < kNumSpecial; }
  const std::vector<std::string> &tokens() const { return tokens_; }
  std::vector<std::string> SurfaceTokens() const;

  // Content text: structural-looking words map to kUnk, so the separator and
  // tags can never come from content.
  std::vector<int> EncodeContent(std::string_view text) const;
  // Linearized event strings: parentheses and flat tags map to their ids.
  std::vector<int> EncodeStructured(std::string_view text) const;

  // Skips pad/bos/eos; no space between adjacent ideograph tokens.
  std::string Decode(const std::vector<int> &ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Pieces of a structured string: words, "(", ")" and flat tags.
std::vector<std::string> SplitStructured(std::string_view text);

}  // namespace speechee

#endif  // SPEECHEE_VOCAB_H_
