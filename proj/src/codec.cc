#include "speechee/codec.h"

#include <array>
#include <optional>

#include "speechee/errors.h"
#include "speechee/text.h"

namespace speechee {

const char *ToString(Format f) { return f == Format::kTree ? "tree" : "flat"; }

Format FormatFromString(std::string_view s) {
  if (s == "tree") return Format::kTree;
  if (s == "flat") return Format::kFlat;
  throw Error("unknown format '" + std::string(s) + "'");
}

ParseMode ParseModeFromString(std::string_view s) {
  if (s == "strict") return ParseMode::kStrict;
  if (s == "recover") return ParseMode::kRecover;
  throw Error("unknown parse mode '" + std::string(s) + "'");
}

const char *ToString(IssueKind kind) {
  switch (kind) {
    case IssueKind::kUnbalancedParen: return "unbalanced-paren";
    case IssueKind::kDanglingTag: return "dangling-tag";
    case IssueKind::kUnknownLabel: return "unknown-label";
    case IssueKind::kTruncatedEvent: return "truncated-event";
  }
  return "?";
}

int ParseDiagnostics::count(IssueKind kind) const {
  int n = 0;
  for (const auto &i : issues) n += i.kind == kind;
  return n;
}

Json DiagnosticsToJson(const ParseDiagnostics &d) {
  Json issues = Json::array();
  for (const auto &i : d.issues) {
    issues.push_back({{"position", i.position}, {"kind", ToString(i.kind)}, {"note", i.note}});
  }
  return {{"recovered", d.recovered}, {"issues", issues}};
}

namespace {

struct Token {
  std::u32string text;
  std::size_t pos;
  bool open() const { return text == U"("; }
  bool close() const { return text == U")"; }
  bool word() const { return !open() && !close(); }
};

// Whitespace-separated words with parentheses always standing alone.
std::vector<Token> TokenizeTree(const std::u32string &s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (IsSpace(s[i])) {
      ++i;
    } else if (s[i] == '(' || s[i] == ')') {
      out.push_back({std::u32string(1, s[i]), i});
      ++i;
    } else {
      std::size_t j = i;
      while (j < s.size() && !IsSpace(s[j]) && s[j] != '(' && s[j] != ')') ++j;
      out.push_back({s.substr(i, j - i), i});
      i = j;
    }
  }
  return out;
}

// Trim and collapse whitespace runs, keeping case.
std::string CollapseSpaces(std::u32string_view s) {
  std::u32string out;
  bool pending = false;
  for (char32_t cp : s) {
    if (IsSpace(cp)) {
      pending = !out.empty();
      continue;
    }
    if (pending) out.push_back(' ');
    pending = false;
    out.push_back(cp);
  }
  return EncodeUtf8(out);
}

bool HasParen(const std::string &s) {
  return s.find('(') != std::string::npos || s.find(')') != std::string::npos;
}

class IssueLog {
 public:
  void Add(std::size_t pos, IssueKind kind, std::string note) {
    diag_.issues.push_back({pos, kind, std::move(note)});
  }
  ParseDiagnostics Finish() {
    diag_.recovered = !diag_.issues.empty();
    return std::move(diag_);
  }

 private:
  ParseDiagnostics diag_;
};

constexpr std::array<std::u32string_view, 4> kFlatTags = {U"<type>", U"<trigger>", U"<role>",
                                                          U"<argument>"};
enum FlatTag { kType = 0, kTrigger = 1, kRole = 2, kArgument = 3 };

bool ContainsFlatTag(const std::string &s) {
  for (auto tag : {kTypeTag, kTriggerTag, kRoleTag, kArgumentTag}) {
    if (s.find(tag) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

LinearizedSequence SerializeTree(const std::vector<EventRecord> &records) {
  std::string out;
  for (const auto &r : records) {
    if (!IsValidLabel(r.event_type)) {
      throw SerializationError("type label is not a single token: '" + r.event_type + "'");
    }
    if (HasParen(r.trigger)) {
      throw SerializationError("trigger contains a parenthesis: '" + r.trigger + "'");
    }
    std::string trigger = CollapseSpaces(DecodeUtf8(r.trigger));
    if (trigger.empty()) throw SerializationError("empty trigger");
    if (!out.empty()) out += ' ';
    out += "( " + r.event_type + " " + trigger;
    for (const auto &a : r.arguments) {
      if (!IsValidLabel(a.role)) {
        throw SerializationError("role label is not a single token: '" + a.role + "'");
      }
      if (HasParen(a.mention)) {
        throw SerializationError("mention contains a parenthesis: '" + a.mention + "'");
      }
      std::string mention = CollapseSpaces(DecodeUtf8(a.mention));
      if (mention.empty()) throw SerializationError("empty mention for role " + a.role);
      out += " ( " + a.role + " " + mention + " )";
    }
    out += " )";
  }
  return {out, Format::kTree, true};
}

ParseResult ParseTree(std::string_view seq, const Schema &schema, ParseMode mode) {
  const std::u32string text = DecodeUtf8(seq);
  const std::vector<Token> toks = TokenizeTree(text);
  const std::size_t n = toks.size();
  const std::size_t end_pos = text.size();
  IssueLog log;
  std::vector<EventRecord> records;

  auto join_words = [&](std::size_t &i) {
    std::u32string span;
    while (i < n && toks[i].word()) {
      if (!span.empty()) span.push_back(' ');
      span += toks[i].text;
      ++i;
    }
    return EncodeUtf8(span);
  };

  std::size_t i = 0;
  while (i < n) {
    if (toks[i].close()) {
      log.Add(toks[i].pos, IssueKind::kUnbalancedParen, "orphan closing parenthesis dropped");
      ++i;
      continue;
    }
    if (toks[i].word()) {
      log.Add(toks[i].pos, IssueKind::kDanglingTag, "token outside any event group dropped");
      ++i;
      continue;
    }
    // Event group.
    const std::size_t open_pos = toks[i].pos;
    ++i;
    if (i == n) {
      log.Add(end_pos, IssueKind::kTruncatedEvent, "input ends after '('");
      break;
    }
    if (!toks[i].word()) {
      log.Add(toks[i].pos, IssueKind::kUnbalancedParen, "event group without a type label");
      if (toks[i].close()) ++i;
      continue;
    }
    EventRecord ev;
    const std::size_t type_pos = toks[i].pos;
    ev.event_type = EncodeUtf8(toks[i].text);
    ++i;
    ev.trigger = join_words(i);
    bool truncated = false;
    while (true) {
      if (i == n) {
        truncated = true;
        break;
      }
      if (toks[i].close()) {
        ++i;
        break;
      }
      // toks[i] is '(' : argument group.
      const std::size_t arg_pos = toks[i].pos;
      ++i;
      if (i == n) {
        truncated = true;
        break;
      }
      if (!toks[i].word()) {
        log.Add(toks[i].pos, IssueKind::kUnbalancedParen, "argument group without a role label");
        if (toks[i].close()) ++i;
        continue;
      }
      Argument arg;
      arg.role = EncodeUtf8(toks[i].text);
      ++i;
      arg.mention = join_words(i);
      bool arg_truncated = false;
      if (i == n) {
        arg_truncated = true;
      } else if (toks[i].close()) {
        ++i;
      } else {
        log.Add(toks[i].pos, IssueKind::kUnbalancedParen, "argument group left open");
      }
      if (arg.mention.empty()) {
        log.Add(arg_pos, IssueKind::kDanglingTag, "role '" + arg.role + "' without mention dropped");
      } else if (!schema.HasRole(ev.event_type, arg.role)) {
        log.Add(arg_pos, IssueKind::kUnknownLabel, "argument with unknown role '" + arg.role + "' skipped");
      } else {
        ev.arguments.push_back(std::move(arg));
      }
      if (arg_truncated) {
        truncated = true;
        break;
      }
    }
    if (!schema.HasType(ev.event_type)) {
      log.Add(type_pos, IssueKind::kUnknownLabel, "unknown event type '" + ev.event_type + "'");
    }
    if (ev.trigger.empty()) {
      log.Add(open_pos, IssueKind::kDanglingTag, "event without trigger dropped");
    } else {
      records.push_back(std::move(ev));
    }
    if (truncated) {
      log.Add(end_pos, IssueKind::kTruncatedEvent, "unclosed event group closed at end of input");
    }
  }

  ParseResult result{std::move(records), log.Finish()};
  if (mode == ParseMode::kStrict && !result.diagnostics.clean()) {
    // Issues are logged in scan order except the end-of-group notes; report
    // the smallest offset.
    const ParseIssue *first = &result.diagnostics.issues.front();
    for (const auto &is : result.diagnostics.issues) {
      if (is.position < first->position) first = &is;
    }
    throw MalformedInput(first->position, std::string(ToString(first->kind)) + ": " + first->note);
  }
  return result;
}

LinearizedSequence SerializeFlat(const std::vector<EventRecord> &records) {
  std::string out;
  auto append = [&](std::string_view tag, const std::string &content) {
    if (ContainsFlatTag(content)) {
      throw SerializationError("content contains a structural token: '" + content + "'");
    }
    std::string c = CollapseSpaces(DecodeUtf8(content));
    if (c.empty()) throw SerializationError("empty content after " + std::string(tag));
    if (!out.empty()) out += ' ';
    out += tag;
    out += ' ';
    out += c;
  };
  for (const auto &r : records) {
    if (!IsValidLabel(r.event_type)) {
      throw SerializationError("type label is not a single token: '" + r.event_type + "'");
    }
    append(kTypeTag, r.event_type);
    append(kTriggerTag, r.trigger);
    for (const auto &a : r.arguments) {
      if (!IsValidLabel(a.role)) {
        throw SerializationError("role label is not a single token: '" + a.role + "'");
      }
      append(kRoleTag, a.role);
      append(kArgumentTag, a.mention);
    }
  }
  return {out, Format::kFlat, true};
}

ParseResult ParseFlat(std::string_view seq, const Schema &schema) {
  const std::u32string text = DecodeUtf8(seq);
  struct Segment {
    int tag;  // -1 for leading content
    std::size_t pos;
    std::string content;
  };
  std::vector<Segment> segs;
  {
    std::size_t content_start = 0;
    int cur_tag = -1;
    std::size_t cur_pos = 0;
    std::size_t i = 0;
    auto flush = [&](std::size_t content_end) {
      std::string c = CollapseSpaces(std::u32string_view(text).substr(content_start, content_end - content_start));
      if (cur_tag >= 0 || !c.empty()) segs.push_back({cur_tag, cur_pos, std::move(c)});
    };
    while (i < text.size()) {
      int hit = -1;
      if (text[i] == '<') {
        for (int t = 0; t < 4; ++t) {
          if (std::u32string_view(text).substr(i, kFlatTags[t].size()) == kFlatTags[t]) {
            hit = t;
            break;
          }
        }
      }
      if (hit < 0) {
        ++i;
        continue;
      }
      flush(i);
      cur_tag = hit;
      cur_pos = i;
      i += kFlatTags[hit].size();
      content_start = i;
    }
    flush(text.size());
  }

  IssueLog log;
  std::vector<EventRecord> records;
  std::optional<EventRecord> cur;
  std::size_t cur_pos = 0;
  bool has_trigger = false;
  std::optional<std::pair<std::string, std::size_t>> pending_role;

  auto drop_pending_role = [&] {
    if (pending_role) {
      log.Add(pending_role->second, IssueKind::kDanglingTag,
              "role '" + pending_role->first + "' without argument dropped");
      pending_role.reset();
    }
  };
  auto close_record = [&] {
    drop_pending_role();
    if (!cur) return;
    if (!has_trigger) {
      log.Add(cur_pos, IssueKind::kTruncatedEvent, "event without trigger dropped");
    } else {
      records.push_back(std::move(*cur));
    }
    cur.reset();
    has_trigger = false;
  };

  for (auto &seg : segs) {
    switch (seg.tag) {
      case -1:
        log.Add(0, IssueKind::kDanglingTag, "content before the first structural token dropped");
        break;
      case kType:
        close_record();
        if (seg.content.empty()) {
          log.Add(seg.pos, IssueKind::kDanglingTag, "<type> without label");
          break;
        }
        {
          // Labels are single tokens; any trailing words are noise.
          auto words = SplitWords(seg.content);
          cur = EventRecord{};
          cur->event_type = words.front();
          cur_pos = seg.pos;
          if (words.size() > 1) {
            log.Add(seg.pos, IssueKind::kUnknownLabel, "multi-word type label truncated");
          }
          if (!schema.HasType(cur->event_type)) {
            log.Add(seg.pos, IssueKind::kUnknownLabel, "unknown event type '" + cur->event_type + "'");
          }
        }
        break;
      case kTrigger:
        if (!cur || has_trigger) {
          log.Add(seg.pos, IssueKind::kDanglingTag,
                  cur ? "second <trigger> in one event dropped" : "<trigger> outside an event dropped");
          break;
        }
        if (seg.content.empty()) {
          log.Add(seg.pos, IssueKind::kDanglingTag, "<trigger> without span");
          break;
        }
        cur->trigger = std::move(seg.content);
        has_trigger = true;
        break;
      case kRole:
        drop_pending_role();
        if (!cur || !has_trigger) {
          log.Add(seg.pos, IssueKind::kDanglingTag, "<role> before any trigger dropped");
          break;
        }
        if (seg.content.empty()) {
          log.Add(seg.pos, IssueKind::kDanglingTag, "<role> without label");
          break;
        }
        pending_role.emplace(std::move(seg.content), seg.pos);
        break;
      case kArgument:
        if (!pending_role) {
          log.Add(seg.pos, IssueKind::kDanglingTag, "<argument> without preceding <role> dropped");
          break;
        }
        if (seg.content.empty()) {
          drop_pending_role();
          break;
        }
        if (!IsValidLabel(pending_role->first) ||
            !schema.HasRole(cur->event_type, pending_role->first)) {
          log.Add(pending_role->second, IssueKind::kUnknownLabel,
                  "argument with unknown role '" + pending_role->first + "' skipped");
        } else {
          cur->arguments.push_back({pending_role->first, std::move(seg.content)});
        }
        pending_role.reset();
        break;
    }
  }
  close_record();
  return {std::move(records), log.Finish()};
}

LinearizedSequence Serialize(const std::vector<EventRecord> &records, Format format) {
  return format == Format::kTree ? SerializeTree(records) : SerializeFlat(records);
}

ParseResult Parse(std::string_view seq, Format format, const Schema &schema) {
  return format == Format::kTree ? ParseTree(seq, schema, ParseMode::kRecover)
                                 : ParseFlat(seq, schema);
}

}  // namespace speechee
