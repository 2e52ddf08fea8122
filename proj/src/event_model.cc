#include "speechee/event_model.h"

#include <cmath>
#include <fstream>

#include "speechee/errors.h"
#include "speechee/text.h"

namespace speechee {

void CheckFrameFeatures(const FrameFeatures &f) {
  if (f.frames.cols() != kMelChannels) {
    throw ShapeError("expected " + std::to_string(kMelChannels) + " channels, got " +
                     std::to_string(f.frames.cols()));
  }
  if (f.frames.rows() < 1) throw ShapeError("features need at least one frame");
  if (!f.frames.allFinite()) throw ShapeError("features contain non-finite values");
}

bool IsValidLabel(std::string_view name) {
  if (name.empty()) return false;
  for (char32_t cp : DecodeUtf8(name)) {
    if (IsSpace(cp) || cp == '(' || cp == ')' || cp == '<' || cp == '>') return false;
  }
  return true;
}

bool Schema::HasRole(const std::string &type, const std::string &role) const {
  auto it = roles_by_type.find(type);
  if (it != roles_by_type.end()) return it->second.count(role) > 0;
  if (HasType(type)) return false;
  for (const auto &[t, roles] : roles_by_type) {
    if (roles.count(role)) return true;
  }
  return false;
}

std::set<std::string> Schema::AllRoles() const {
  std::set<std::string> out;
  for (const auto &[t, roles] : roles_by_type) out.insert(roles.begin(), roles.end());
  return out;
}

std::vector<std::string> Schema::Check() const {
  std::vector<std::string> out;
  for (const auto &[type, roles] : roles_by_type) {
    if (!event_types.count(type)) out.push_back("roles listed for unknown type " + type);
    for (const auto &r : roles) {
      if (!IsValidLabel(r)) out.push_back("role name contains a delimiter: '" + r + "'");
    }
  }
  for (const auto &t : event_types) {
    if (!IsValidLabel(t)) out.push_back("type name contains a delimiter: '" + t + "'");
  }
  static const std::set<std::string> kSpecial = {
      std::string(kTypeTag), std::string(kTriggerTag), std::string(kRoleTag),
      std::string(kArgumentTag), "(", ")"};
  std::set<std::string> surface, special;
  for (const auto &tok : vocabulary) {
    bool is_special = kSpecial.count(tok) || (tok.size() > 2 && tok.front() == '<' &&
                                              tok.back() == '>');
    (is_special ? special : surface).insert(tok);
  }
  for (const auto &tok : special) {
    if (surface.count(tok)) out.push_back("special token also in surface vocabulary: " + tok);
  }
  return out;
}

Schema Schema::FromJson(const Json &j) {
  Schema s;
  for (const auto &t : j.at("event_types")) s.event_types.insert(t.get<std::string>());
  if (j.contains("roles")) {
    for (const auto &[type, roles] : j.at("roles").items()) {
      auto &dst = s.roles_by_type[type];
      for (const auto &r : roles) dst.insert(r.get<std::string>());
    }
  }
  if (j.contains("vocabulary")) {
    s.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
  }
  return s;
}

Json Schema::ToJson() const {
  Json j;
  j["event_types"] = event_types;
  Json roles = Json::object();
  for (const auto &[type, rs] : roles_by_type) roles[type] = rs;
  j["roles"] = roles;
  if (!vocabulary.empty()) j["vocabulary"] = vocabulary;
  return j;
}

Schema LoadSchema(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::exception &e) {
    throw IoError("cannot parse schema " + path + ": " + e.what());
  }
  return Schema::FromJson(j);
}

void SaveSchema(const Schema &schema, const std::string &path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << schema.ToJson().dump(2) << "\n";
}

const char *ToString(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::kUnknownType: return "unknown-type";
    case ViolationKind::kIllegalRole: return "illegal-role";
    case ViolationKind::kEmptyTrigger: return "empty-trigger";
    case ViolationKind::kEmptyMention: return "empty-mention";
  }
  return "?";
}

std::vector<Violation> ValidateRecord(const Schema &schema, const EventRecord &record) {
  std::vector<Violation> out;
  bool known = schema.HasType(record.event_type);
  if (!known) out.push_back({ViolationKind::kUnknownType, record.event_type});
  if (NormalizeText(record.trigger).empty()) {
    out.push_back({ViolationKind::kEmptyTrigger, ""});
  }
  for (const auto &arg : record.arguments) {
    if (known && !schema.HasRole(record.event_type, arg.role)) {
      out.push_back({ViolationKind::kIllegalRole, record.event_type + "/" + arg.role});
    }
    if (NormalizeText(arg.mention).empty()) {
      out.push_back({ViolationKind::kEmptyMention, arg.role});
    }
  }
  return out;
}

const char *ToString(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "?";
}

Split SplitFromString(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "dev" || s == "valid" || s == "val") return Split::kDev;
  if (s == "test") return Split::kTest;
  throw Error("unknown split '" + std::string(s) + "'");
}

std::string NormalizeText(std::string_view s, const NormalizeOptions &opts) {
  std::u32string out;
  bool pending_space = false;
  for (char32_t cp : DecodeUtf8(s)) {
    if (opts.strip_punctuation && IsPunctuation(cp)) cp = ' ';
    if (IsSpace(cp)) {
      pending_space = !out.empty();
      continue;
    }
    // Per-character tokenization loses spaces between ideographs, so they
    // carry no meaning here either.
    if (pending_space && !(IsIdeograph(cp) && IsIdeograph(out.back()))) out.push_back(' ');
    pending_space = false;
    out.push_back(ToLower(cp));
  }
  return EncodeUtf8(out);
}

bool EventsGroundedInTranscript(const Instance &inst) {
  std::string t = NormalizeText(inst.transcript);
  auto grounded = [&](const std::string &span) {
    return t.find(NormalizeText(span)) != std::string::npos;
  };
  for (const auto &ev : inst.events) {
    if (!grounded(ev.trigger)) return false;
    for (const auto &a : ev.arguments) {
      if (!grounded(a.mention)) return false;
    }
  }
  return true;
}

std::vector<std::string> LabelMapping::Check(const std::set<std::string> &in_use) const {
  std::vector<std::string> out;
  std::map<std::string, std::string> seen;
  for (const auto &label : in_use) {
    auto it = pairs.find(label);
    if (it == pairs.end()) continue;
    const std::string &img = it->second;
    if (!IsValidLabel(img) || img.find(':') != std::string::npos) {
      out.push_back("image of " + label + " is not a single colon-free token: '" + img + "'");
    }
    auto [pos, inserted] = seen.emplace(img, label);
    if (!inserted) out.push_back("labels " + pos->second + " and " + label + " both map to " + img);
  }
  return out;
}

LabelMapping LabelMapping::FromJson(const Json &j) {
  LabelMapping m;
  for (const auto &[k, v] : j.items()) m.pairs[k] = v.get<std::string>();
  return m;
}

LabelMapping LoadLabelMapping(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open label mapping " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::exception &e) {
    throw IoError("cannot parse label mapping " + path + ": " + e.what());
  }
  return LabelMapping::FromJson(j);
}

Json RecordToJson(const EventRecord &r) {
  Json args = Json::array();
  for (const auto &a : r.arguments) args.push_back({a.role, a.mention});
  return {{"type", r.event_type}, {"trigger", r.trigger}, {"args", args}};
}

EventRecord RecordFromJson(const Json &j) {
  EventRecord r;
  r.event_type = j.at("type").get<std::string>();
  r.trigger = j.at("trigger").get<std::string>();
  if (j.contains("args")) {
    for (const auto &a : j.at("args")) {
      r.arguments.push_back({a.at(0).get<std::string>(), a.at(1).get<std::string>()});
    }
  }
  return r;
}

Json RecordsToJson(const std::vector<EventRecord> &records) {
  Json arr = Json::array();
  for (const auto &r : records) arr.push_back(RecordToJson(r));
  return arr;
}

std::vector<EventRecord> RecordsFromJson(const Json &j) {
  std::vector<EventRecord> out;
  for (const auto &e : j) out.push_back(RecordFromJson(e));
  return out;
}

Json InstanceToJson(const Instance &inst) {
  Json j;
  j["id"] = inst.id;
  j["transcript"] = inst.transcript;
  j["events"] = RecordsToJson(inst.events);
  j["split"] = ToString(inst.split);
  if (inst.speech.audio) j["audio"] = *inst.speech.audio;
  if (inst.speech.pseudo_voice) {
    Json sp = {{"voice", *inst.speech.pseudo_voice}, {"seed", inst.speech.pseudo_seed}};
    if (inst.speech.pseudo_frames_per_char > 0) {
      sp["frames_per_char"] = inst.speech.pseudo_frames_per_char;
    }
    j["speech"] = sp;
  }
  if (inst.speech.seconds) j["seconds"] = *inst.speech.seconds;
  return j;
}

Instance InstanceFromJson(const Json &j) {
  Instance inst;
  inst.id = j.at("id").get<std::string>();
  inst.transcript = j.value("transcript", "");
  if (j.contains("events")) inst.events = RecordsFromJson(j.at("events"));
  inst.split = SplitFromString(j.value("split", "train"));
  if (j.contains("audio")) inst.speech.audio = j.at("audio").get<std::string>();
  if (j.contains("speech")) {
    const auto &sp = j.at("speech");
    inst.speech.pseudo_voice = sp.at("voice").get<std::string>();
    inst.speech.pseudo_seed = sp.value("seed", std::uint64_t{0});
    inst.speech.pseudo_frames_per_char = sp.value("frames_per_char", 0);
  }
  if (j.contains("seconds")) inst.speech.seconds = j.at("seconds").get<double>();
  return inst;
}

}  // namespace speechee
