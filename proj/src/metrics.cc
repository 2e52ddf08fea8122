#include "speechee/metrics.h"

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "speechee/errors.h"

namespace speechee {

const char *ToString(MetricKind kind) {
  switch (kind) {
    case MetricKind::kTrigI: return "Trig-I";
    case MetricKind::kEventTypeI: return "EventType-I";
    case MetricKind::kTrigC: return "Trig-C";
    case MetricKind::kRoleI: return "Role-I";
    case MetricKind::kArgI: return "Arg-I";
    case MetricKind::kArgC: return "Arg-C";
  }
  return "?";
}

ItemMultiset Project(const std::vector<EventRecord> &records, MetricKind kind) {
  ItemMultiset out;
  for (const auto &r : records) {
    const std::string type = NormalizeText(r.event_type);
    switch (kind) {
      case MetricKind::kTrigI: out.push_back({NormalizeText(r.trigger)}); break;
      case MetricKind::kEventTypeI: out.push_back({type}); break;
      case MetricKind::kTrigC: out.push_back({type, NormalizeText(r.trigger)}); break;
      case MetricKind::kRoleI:
        for (const auto &a : r.arguments) out.push_back({NormalizeText(a.role)});
        break;
      case MetricKind::kArgI:
        for (const auto &a : r.arguments) out.push_back({NormalizeText(a.mention)});
        break;
      case MetricKind::kArgC:
        for (const auto &a : r.arguments) {
          out.push_back({type, NormalizeText(a.role), NormalizeText(a.mention)});
        }
        break;
    }
  }
  return out;
}

namespace {

bool PartialEqual(const Item &a, const Item &b) {
  if (a.size() != b.size()) return false;
  // The last component is always the span; labels still need equality.
  for (std::size_t i = 0; i + 1 < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  const auto &x = a.back();
  const auto &y = b.back();
  if (x.empty() || y.empty()) return x == y;
  return x.find(y) != std::string::npos || y.find(x) != std::string::npos;
}

// Maximum bipartite matching (Kuhn's augmenting paths).
long MaxMatching(const ItemMultiset &pred, const ItemMultiset &gold) {
  std::vector<int> gold_owner(gold.size(), -1);
  std::function<bool(std::size_t, std::vector<char> &)> augment =
      [&](std::size_t p, std::vector<char> &seen) {
        for (std::size_t g = 0; g < gold.size(); ++g) {
          if (seen[g] || !PartialEqual(pred[p], gold[g])) continue;
          seen[g] = 1;
          if (gold_owner[g] < 0 || augment(static_cast<std::size_t>(gold_owner[g]), seen)) {
            gold_owner[g] = static_cast<int>(p);
            return true;
          }
        }
        return false;
      };
  long matched = 0;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    std::vector<char> seen(gold.size(), 0);
    matched += augment(p, seen);
  }
  return matched;
}

}  // namespace

Counts MatchCounts(const ItemMultiset &pred, const ItemMultiset &gold, MatchMode mode) {
  long tp = 0;
  if (mode == MatchMode::kExact) {
    std::map<Item, long> remaining;
    for (const auto &g : gold) ++remaining[g];
    for (const auto &p : pred) {
      auto it = remaining.find(p);
      if (it != remaining.end() && it->second > 0) {
        --it->second;
        ++tp;
      }
    }
  } else {
    tp = MaxMatching(pred, gold);
  }
  return {tp, static_cast<long>(pred.size()) - tp, static_cast<long>(gold.size()) - tp};
}

PRF ComputePRF(const Counts &c) {
  PRF s;
  s.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
  s.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
  s.f1 = s.precision + s.recall > 0
             ? 2 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

void FinalizeReport(MetricReport *report) {
  for (std::size_t k = 0; k < report->counts.size(); ++k) {
    report->scores[k] = ComputePRF(report->counts[k]);
  }
}

MetricReport ScoreCorpus(const std::vector<IdRecords> &pred, const std::vector<IdRecords> &gold,
                         MatchMode mode) {
  std::map<std::string, const std::vector<EventRecord> *> pred_by_id;
  std::vector<std::string> extra;
  for (const auto &[id, recs] : pred) {
    if (!pred_by_id.emplace(id, &recs).second) extra.push_back(id);
  }
  std::vector<std::string> missing;
  std::set<std::string> gold_ids;
  for (const auto &[id, recs] : gold) {
    gold_ids.insert(id);
    if (!pred_by_id.count(id)) missing.push_back(id);
  }
  for (const auto &[id, recs] : pred_by_id) {
    if (!gold_ids.count(id)) extra.push_back(id);
  }
  if (!missing.empty() || !extra.empty() || pred.size() != gold.size()) {
    throw MismatchedCorpus(std::move(missing), std::move(extra));
  }

  MetricReport report;
  report.corpus_size = static_cast<long>(gold.size());
  for (const auto &[id, gold_recs] : gold) {
    const auto &pred_recs = *pred_by_id.at(id);
    for (MetricKind k : kAllMetricKinds) {
      report.counts[static_cast<int>(k)] +=
          MatchCounts(Project(pred_recs, k), Project(gold_recs, k), mode);
    }
  }
  FinalizeReport(&report);
  return report;
}

Json MetricReport::ToJson() const {
  Json j;
  j["corpus_size"] = corpus_size;
  for (MetricKind k : kAllMetricKinds) {
    const Counts &c = count(k);
    const PRF &s = score(k);
    j[ToString(k)] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn},
                      {"p", s.precision}, {"r", s.recall}, {"f1", s.f1}};
  }
  return j;
}

MetricReport MetricReport::FromJson(const Json &j) {
  MetricReport r;
  r.corpus_size = j.value("corpus_size", 0L);
  for (MetricKind k : kAllMetricKinds) {
    const auto &o = j.at(ToString(k));
    auto &c = r.counts[static_cast<int>(k)];
    c.tp = o.at("tp").get<long>();
    c.fp = o.at("fp").get<long>();
    c.fn = o.at("fn").get<long>();
  }
  FinalizeReport(&r);
  return r;
}

std::string ReportToCsv(const MetricReport &report) {
  std::ostringstream os;
  os.precision(6);
  os << "kind,tp,fp,fn,p,r,f1\n";
  for (MetricKind k : kAllMetricKinds) {
    const Counts &c = report.count(k);
    const PRF &s = report.score(k);
    os << ToString(k) << ',' << c.tp << ',' << c.fp << ',' << c.fn << ',' << s.precision << ','
       << s.recall << ',' << s.f1 << '\n';
  }
  return os.str();
}

}  // namespace speechee
