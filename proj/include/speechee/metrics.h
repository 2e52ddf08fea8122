// Tuple-projection precision / recall / micro-F1 over event records.

#ifndef SPEECHEE_METRICS_H_
#define SPEECHEE_METRICS_H_

#include <array>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "speechee/event_model.h"

namespace speechee {

enum class MetricKind { kTrigI = 0, kEventTypeI, kTrigC, kRoleI, kArgI, kArgC };

inline constexpr std::array<MetricKind, 6> kAllMetricKinds = {
    MetricKind::kTrigI, MetricKind::kEventTypeI, MetricKind::kTrigC,
    MetricKind::kRoleI, MetricKind::kArgI,       MetricKind::kArgC};

const char *ToString(MetricKind kind);

// A projected item: the normalized string components of one tuple.
using Item = std::vector<std::string>;
using ItemMultiset = std::vector<Item>;

// Table of projections:
//   Trig-I [trigger]   EventType-I [type]   Trig-C [(type, trigger)]
//   Role-I [role]      Arg-I [argument]     Arg-C [(type, role, argument)]
ItemMultiset Project(const std::vector<EventRecord> &records, MetricKind kind);

enum class MatchMode {
  kExact,    // normalized string equality per component
  kPartial,  // span components match when one contains the other
};

struct Counts {
  long tp = 0, fp = 0, fn = 0;

  Counts &operator+=(const Counts &o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const Counts &) const = default;
};

// One-to-one matching between predicted and gold items.
Counts MatchCounts(const ItemMultiset &pred, const ItemMultiset &gold,
                   MatchMode mode = MatchMode::kExact);

struct PRF {
  double precision = 0, recall = 0, f1 = 0;
};

PRF ComputePRF(const Counts &c);

struct MetricReport {
  std::array<Counts, 6> counts{};
  std::array<PRF, 6> scores{};
  long corpus_size = 0;

  const Counts &count(MetricKind k) const { return counts[static_cast<int>(k)]; }
  const PRF &score(MetricKind k) const { return scores[static_cast<int>(k)]; }

  Json ToJson() const;
  static MetricReport FromJson(const Json &j);
};

using IdRecords = std::pair<std::string, std::vector<EventRecord>>;

// Micro-averaged: counts are summed over instances, then P/R/F1 computed once
// per kind.  Throws MismatchedCorpus unless both sides carry the same ids.
MetricReport ScoreCorpus(const std::vector<IdRecords> &pred, const std::vector<IdRecords> &gold,
                         MatchMode mode = MatchMode::kExact);

// Counts must already be summed; fills in scores.
void FinalizeReport(MetricReport *report);

// One "kind,tp,fp,fn,p,r,f1" row per metric.
std::string ReportToCsv(const MetricReport &report);

}  // namespace speechee

#endif  // SPEECHEE_METRICS_H_
