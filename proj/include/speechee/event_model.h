// Structured event data model: schema, event records, dataset instances and
// the JSONL interchange format.

#ifndef SPEECHEE_EVENT_MODEL_H_
#define SPEECHEE_EVENT_MODEL_H_

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "speechee/features.h"

namespace speechee {

using Json = nlohmann::json;

// Structural tokens of the flat format.
inline constexpr std::string_view kTypeTag = "<type>";
inline constexpr std::string_view kTriggerTag = "<trigger>";
inline constexpr std::string_view kRoleTag = "<role>";
inline constexpr std::string_view kArgumentTag = "<argument>";

struct Schema {
  std::set<std::string> event_types;
  std::map<std::string, std::set<std::string>> roles_by_type;
  // Surface tokens followed by structural special tokens.
  std::vector<std::string> vocabulary;

  bool HasType(const std::string &type) const { return event_types.count(type) > 0; }
  // A role is legal for a known type if listed for it; for an unknown type it
  // is legal if any type lists it.
  bool HasRole(const std::string &type, const std::string &role) const;
  std::set<std::string> AllRoles() const;

  // Violated schema invariants; empty when the schema is consistent.
  std::vector<std::string> Check() const;

  static Schema FromJson(const Json &j);
  Json ToJson() const;
};

Schema LoadSchema(const std::string &path);
void SaveSchema(const Schema &schema, const std::string &path);

// True for names usable as a type or role label in both linear formats.
bool IsValidLabel(std::string_view name);

struct Argument {
  std::string role;
  std::string mention;

  bool operator==(const Argument &) const = default;
};

struct EventRecord {
  std::string event_type;
  std::string trigger;
  std::vector<Argument> arguments;  // annotation order

  bool operator==(const EventRecord &) const = default;
};

enum class ViolationKind { kUnknownType, kIllegalRole, kEmptyTrigger, kEmptyMention };

struct Violation {
  ViolationKind kind;
  std::string detail;
};

const char *ToString(ViolationKind kind);

std::vector<Violation> ValidateRecord(const Schema &schema, const EventRecord &record);

enum class Split { kTrain, kDev, kTest };

const char *ToString(Split split);
Split SplitFromString(std::string_view s);

// How an instance's speech is obtained.  Pseudo-speech is regenerated from
// the transcript on demand, so only its descriptor is persisted.
struct SpeechRef {
  std::optional<std::string> audio;  // relative path to a .wav or .feats file
  std::optional<std::string> pseudo_voice;
  std::uint64_t pseudo_seed = 0;
  int pseudo_frames_per_char = 0;  // 0: the generator default
  std::optional<double> seconds;
  std::optional<FrameFeatures> features;  // in-memory only

  bool empty() const { return !audio && !pseudo_voice && !features; }
};

struct Instance {
  std::string id;
  std::string transcript;
  std::vector<EventRecord> events;
  Split split = Split::kTrain;
  SpeechRef speech;
};

struct NormalizeOptions {
  bool strip_punctuation = false;
};

// Lowercase, collapse whitespace runs, trim.  Idempotent.
std::string NormalizeText(std::string_view s, const NormalizeOptions &opts = {});

// Every trigger and argument mention occurs in the normalized transcript.
bool EventsGroundedInTranscript(const Instance &inst);

// label -> general-domain word, e.g. "Life:Be-Born" -> "born".
struct LabelMapping {
  std::map<std::string, std::string> pairs;

  // Violations of injectivity on `in_use` and of the single-token image rule.
  std::vector<std::string> Check(const std::set<std::string> &in_use) const;

  static LabelMapping FromJson(const Json &j);
};

LabelMapping LoadLabelMapping(const std::string &path);

Json RecordToJson(const EventRecord &r);
EventRecord RecordFromJson(const Json &j);
Json RecordsToJson(const std::vector<EventRecord> &records);
std::vector<EventRecord> RecordsFromJson(const Json &j);

Json InstanceToJson(const Instance &inst);
Instance InstanceFromJson(const Json &j);

}  // namespace speechee

#endif  // SPEECHEE_EVENT_MODEL_H_
