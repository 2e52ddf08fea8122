#include "speechee/vocab.h"

#include <set>

#include "speechee/codec.h"
#include "speechee/text.h"

namespace speechee {

namespace {

const std::vector<std::string> &SpecialTokens() {
  static const std::vector<std::string> kTokens = {
      "<pad>", "<unk>", "<bos>", "<eos>", "<sep>", std::string(kTypeTag), std::string(kTriggerTag),
      std::string(kRoleTag), std::string(kArgumentTag), "(", ")"};
  return kTokens;
}

bool IsIdeographToken(const std::string &tok) {
  auto cps = DecodeUtf8(tok);
  return cps.size() == 1 && IsIdeograph(cps[0]);
}

}  // namespace

std::vector<std::string> SplitStructured(std::string_view text) {
  std::vector<std::string> out;
  for (std::string &word : SplitWords(text)) {
    // Peel off parentheses and flat tags glued to neighbouring text.
    std::size_t start = 0;
    for (std::size_t i = 0; i < word.size();) {
      std::size_t tag_len = 0;
      if (word[i] == '(' || word[i] == ')') {
        tag_len = 1;
      } else if (word[i] == '<') {
        for (std::string_view tag : {kTypeTag, kTriggerTag, kRoleTag, kArgumentTag}) {
          if (word.compare(i, tag.size(), tag) == 0) tag_len = tag.size();
        }
      }
      if (tag_len == 0) {
        ++i;
        continue;
      }
      if (i > start) out.push_back(word.substr(start, i - start));
      out.push_back(word.substr(i, tag_len));
      i += tag_len;
      start = i;
    }
    if (start < word.size()) out.push_back(word.substr(start));
  }
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string> &surface) {
  tokens_ = SpecialTokens();
  for (const auto &t : surface) {
    if (index_.count(t)) continue;
    bool special = false;
    for (const auto &s : SpecialTokens()) special |= (s == t);
    if (!special) tokens_.push_back(t);
  }
  for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) index_.emplace(tokens_[i], i);
}

Vocabulary Vocabulary::FromInstances(const std::vector<Instance> &instances) {
  std::set<std::string> surface;
  auto add = [&](std::string_view text) {
    for (auto &w : SplitStructured(text)) surface.insert(std::move(w));
  };
  for (const auto &inst : instances) {
    add(inst.transcript);
    for (const auto &ev : inst.events) {
      add(ev.event_type);
      add(ev.trigger);
      for (const auto &a : ev.arguments) {
        add(a.role);
        add(a.mention);
      }
    }
  }
  return Vocabulary(std::vector<std::string>(surface.begin(), surface.end()));
}

int Vocabulary::Id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::string> Vocabulary::SurfaceTokens() const {
  return {tokens_.begin() + kNumSpecial, tokens_.end()};
}

std::vector<int> Vocabulary::EncodeContent(std::string_view text) const {
  std::vector<int> ids;
  for (const auto &w : SplitStructured(text)) {
    int id = Id(w);
    ids.push_back(IsSpecial(id) ? kUnk : id);
  }
  return ids;
}

std::vector<int> Vocabulary::EncodeStructured(std::string_view text) const {
  std::vector<int> ids;
  for (const auto &w : SplitStructured(text)) {
    int id = Id(w);
    if (id < kTypeTok && id != kUnk) id = kUnk;
    ids.push_back(id);
  }
  return ids;
}

std::string Vocabulary::Decode(const std::vector<int> &ids) const {
  std::string out;
  bool prev_ideograph = false;
  for (int id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    const std::string &tok = Token(id);
    bool ideograph = IsIdeographToken(tok);
    if (!out.empty() && !(ideograph && prev_ideograph)) out.push_back(' ');
    out += tok;
    prev_ideograph = ideograph;
  }
  return out;
}

}  // namespace speechee
