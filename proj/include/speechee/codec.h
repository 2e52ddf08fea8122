// Linearization of event records into token strings and back.
//
// Tree format, one group per record, arguments nested one level deep:
//   ( Transport returned ( Artifact man ) ( Destination Los Angeles ) )
// Flat format, a structural token before every element:
//   <type> Transport <trigger> returned <role> Destination <argument> Los Angeles
//
// Both parsers can run in a recovering mode that repairs ill-formed model
// output and reports every repair.

#ifndef SPEECHEE_CODEC_H_
#define SPEECHEE_CODEC_H_

#include <string>
#include <string_view>
#include <vector>

#include "speechee/event_model.h"

namespace speechee {

enum class Format { kTree, kFlat };

const char *ToString(Format f);
Format FormatFromString(std::string_view s);

struct LinearizedSequence {
  std::string text;
  Format format = Format::kFlat;
  bool well_formed = true;
};

enum class IssueKind { kUnbalancedParen, kDanglingTag, kUnknownLabel, kTruncatedEvent };

const char *ToString(IssueKind kind);

struct ParseIssue {
  std::size_t position = 0;  // character (code point) offset
  IssueKind kind = IssueKind::kUnbalancedParen;
  std::string note;
};

struct ParseDiagnostics {
  bool recovered = false;
  std::vector<ParseIssue> issues;

  bool clean() const { return issues.empty(); }
  int count(IssueKind kind) const;
};

struct ParseResult {
  std::vector<EventRecord> records;
  ParseDiagnostics diagnostics;
};

enum class ParseMode { kStrict, kRecover };

ParseMode ParseModeFromString(std::string_view s);

// Throws SerializationError if a trigger or mention contains '(' or ')'.
LinearizedSequence SerializeTree(const std::vector<EventRecord> &records);

// Strict mode throws MalformedInput at the first issue the recovering parser
// would have reported; recover mode never throws.
ParseResult ParseTree(std::string_view seq, const Schema &schema, ParseMode mode);

// Throws SerializationError if a content span contains a structural token.
LinearizedSequence SerializeFlat(const std::vector<EventRecord> &records);

ParseResult ParseFlat(std::string_view seq, const Schema &schema);

LinearizedSequence Serialize(const std::vector<EventRecord> &records, Format format);
// Tree sequences are parsed in recover mode.
ParseResult Parse(std::string_view seq, Format format, const Schema &schema);

Json DiagnosticsToJson(const ParseDiagnostics &d);

}  // namespace speechee

#endif  // SPEECHEE_CODEC_H_
