// Shared schemas and random generators for the test binaries.

#ifndef SPEECHEE_TESTS_FIXTURES_H_
#define SPEECHEE_TESTS_FIXTURES_H_

#include <random>
#include <string>
#include <vector>

#include "speechee/event_model.h"

namespace speechee::testing {

inline Schema AceLikeSchema() {
  Schema s;
  s.event_types = {"Transport", "Arrest-Jail", "End-Position", "Elect", "Sentence", "Attack"};
  s.roles_by_type["Transport"] = {"Artifact", "Destination", "Origin", "Vehicle"};
  s.roles_by_type["Arrest-Jail"] = {"Person", "Agent", "Place"};
  s.roles_by_type["End-Position"] = {"Person", "Entity", "Place"};
  s.roles_by_type["Elect"] = {"Person", "Entity", "Place"};
  s.roles_by_type["Sentence"] = {"Defendant", "Adjudicator"};
  s.roles_by_type["Attack"] = {"Attacker", "Target", "Instrument", "Place"};
  return s;
}

inline EventRecord TransportEvent() {
  return {"Transport", "returned",
          {{"Artifact", "man"}, {"Destination", "Los Angeles"}, {"Origin", "Mexico"}}};
}

// Schema-valid record lists with single-spaced multi-word spans.  Spans may
// contain characters that are awkward for naive tokenizers (':', '-', '<').
class RecordGenerator {
 public:
  RecordGenerator(const Schema &schema, std::uint64_t seed) : schema_(schema), rng_(seed) {
    types_.assign(schema.event_types.begin(), schema.event_types.end());
  }

  std::string Word() {
    static const std::vector<std::string> kWords = {
        "the", "Los", "Angeles", "man", "returned", "capture", "Mexico", "Erdogan",
        "a-b", "x:y", "<b>", "3", "Qal", "elections", "北京", "Zoë", "o'neil", "<typ"};
    return kWords[Uniform(kWords.size())];
  }

  std::string Span() {
    std::string s = Word();
    std::size_t extra = Uniform(3);
    for (std::size_t i = 0; i < extra; ++i) s += " " + Word();
    return s;
  }

  EventRecord Record() {
    EventRecord r;
    r.event_type = types_[Uniform(types_.size())];
    r.trigger = Span();
    auto it = schema_.roles_by_type.find(r.event_type);
    if (it != schema_.roles_by_type.end() && !it->second.empty()) {
      std::vector<std::string> roles(it->second.begin(), it->second.end());
      std::size_t n = Uniform(4);
      for (std::size_t i = 0; i < n; ++i) r.arguments.push_back({roles[Uniform(roles.size())], Span()});
    }
    return r;
  }

  std::vector<EventRecord> Records(std::size_t max_records = 4) {
    std::vector<EventRecord> out;
    std::size_t n = Uniform(max_records + 1);
    for (std::size_t i = 0; i < n; ++i) out.push_back(Record());
    return out;
  }

  std::size_t Uniform(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_);
  }
  std::mt19937_64 &rng() { return rng_; }

 private:
  const Schema &schema_;
  std::vector<std::string> types_;
  std::mt19937_64 rng_;
};

// Random soup of structural tokens, labels and junk for fuzzing the parsers.
inline std::string TokenSoup(std::mt19937_64 &rng, std::size_t max_tokens = 30) {
  static const std::vector<std::string> kPieces = {
      "(", ")", "((", "))", "<type>", "<trigger>", "<role>", "<argument>", "<", ">", "<type",
      "Transport", "Elect", "Person", "Destination", "Bogus", "returned", "Los", "Angeles",
      "北京", "\xff", "\xe5\x8c", " ", "  ", "\t", "", "x(y", "a)b", "<role><argument>"};
  std::uniform_int_distribution<std::size_t> len(0, max_tokens), pick(0, kPieces.size() - 1);
  std::string s;
  std::size_t n = len(rng);
  for (std::size_t i = 0; i < n; ++i) {
    s += kPieces[pick(rng)];
    if (rng() % 2) s += ' ';
  }
  return s;
}

}  // namespace speechee::testing

#endif  // SPEECHEE_TESTS_FIXTURES_H_
