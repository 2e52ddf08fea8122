#include "doctest.h"
#include "fixtures.h"
#include "speechee/errors.h"
#include "speechee/metrics.h"

#include <algorithm>
#include <numeric>

using namespace speechee;

namespace {

// Exhaustive optimal one-to-one matching: try every injection of the smaller
// side into the larger one.
long BruteForceMatches(const ItemMultiset &pred, const ItemMultiset &gold) {
  const ItemMultiset &small = pred.size() <= gold.size() ? pred : gold;
  const ItemMultiset &large = pred.size() <= gold.size() ? gold : pred;
  std::vector<std::size_t> perm(large.size());
  std::iota(perm.begin(), perm.end(), 0);
  long best = 0;
  do {
    long m = 0;
    for (std::size_t i = 0; i < small.size(); ++i) m += small[i] == large[perm[i]];
    best = std::max(best, m);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST_CASE("project follows the metric table") {
  std::vector<EventRecord> recs = {
      {"Transport", "returned", {{"Destination", "Los Angeles"}, {"Origin", "Mexico"}}}};
  CHECK(Project(recs, MetricKind::kTrigC) == ItemMultiset{{"transport", "returned"}});
  CHECK(Project(recs, MetricKind::kArgC) ==
        ItemMultiset{{"transport", "destination", "los angeles"}, {"transport", "origin", "mexico"}});
  CHECK(Project(recs, MetricKind::kTrigI) == ItemMultiset{{"returned"}});
  CHECK(Project(recs, MetricKind::kEventTypeI) == ItemMultiset{{"transport"}});
  CHECK(Project(recs, MetricKind::kRoleI) == ItemMultiset{{"destination"}, {"origin"}});
  CHECK(Project(recs, MetricKind::kArgI) == ItemMultiset{{"los angeles"}, {"mexico"}});
  for (MetricKind k : kAllMetricKinds) CHECK(Project({}, k).empty());
}

TEST_CASE("match_counts") {
  ItemMultiset a = {{"a"}, {"b"}, {"c"}};
  CHECK(MatchCounts(a, a) == Counts{3, 0, 0});
  CHECK(MatchCounts({}, {{"a"}, {"b"}}) == Counts{0, 0, 2});
  // Oracle value from BruteForceMatches below: one x can pair with gold x.
  CHECK(MatchCounts({{"x"}, {"x"}, {"y"}}, {{"x"}, {"z"}}) == Counts{1, 2, 1});
  CHECK(BruteForceMatches({{"x"}, {"x"}, {"y"}}, {{"x"}, {"z"}}) == 1);
}

TEST_CASE("partial-overlap mode accepts contained spans") {
  ItemMultiset pred = {{"transport", "los angele"}};
  ItemMultiset gold = {{"transport", "los angeles"}};
  CHECK(MatchCounts(pred, gold) == Counts{0, 1, 1});
  CHECK(MatchCounts(pred, gold, MatchMode::kPartial) == Counts{1, 0, 0});
  CHECK(MatchCounts({{"elect", "x"}}, {{"attack", "x"}}, MatchMode::kPartial) == Counts{0, 1, 1});
}

TEST_CASE("greedy exact matching agrees with exhaustive matching") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    ItemMultiset p, g;
    for (int i = rng() % 7; i > 0; --i) p.push_back({std::string(1, "abcd"[rng() % 4])});
    for (int i = rng() % 7; i > 0; --i) g.push_back({std::string(1, "abcd"[rng() % 4])});
    Counts c = MatchCounts(p, g);
    CHECK(c.tp == BruteForceMatches(p, g));
    CHECK(c.fp == static_cast<long>(p.size()) - c.tp);
  }
}

TEST_CASE("score_corpus micro-aggregation") {
  // Instance 1: gold {returned}, pred {returned}. Instance 2: gold {capture},
  // pred {arrested}. Trig-I tp=1 fp=1 fn=1 -> P=R=F1=0.5.
  std::vector<IdRecords> gold = {{"1", {{"Transport", "returned", {}}}},
                                 {"2", {{"Arrest-Jail", "capture", {}}}}};
  std::vector<IdRecords> pred = {{"2", {{"Arrest-Jail", "arrested", {}}}},
                                 {"1", {{"Transport", "returned", {}}}}};
  MetricReport r = ScoreCorpus(pred, gold);
  CHECK(r.count(MetricKind::kTrigI) == Counts{1, 1, 1});
  CHECK(r.score(MetricKind::kTrigI).f1 == doctest::Approx(0.5));
  CHECK(r.score(MetricKind::kEventTypeI).f1 == 1.0);
  CHECK(r.count(MetricKind::kArgC) == Counts{0, 0, 0});
  CHECK(r.score(MetricKind::kArgC).f1 == 0.0);
  CHECK(r.corpus_size == 2);

  MetricReport self = ScoreCorpus(gold, gold);
  for (MetricKind k : {MetricKind::kTrigI, MetricKind::kEventTypeI, MetricKind::kTrigC}) {
    CHECK(self.score(k).f1 == 1.0);
  }

  std::vector<IdRecords> empty = {{"1", {}}, {"2", {}}};
  MetricReport none = ScoreCorpus(empty, gold);
  for (MetricKind k : kAllMetricKinds) CHECK(none.score(k).f1 == 0.0);

  std::vector<IdRecords> doubled = gold;
  doubled.insert(doubled.end(), {{"3", gold[0].second}, {"4", gold[1].second}});
  std::vector<IdRecords> pred2 = pred;
  pred2.insert(pred2.end(), {{"3", pred[1].second}, {"4", pred[0].second}});
  CHECK(ScoreCorpus(pred2, doubled).score(MetricKind::kTrigI).f1 ==
        doctest::Approx(r.score(MetricKind::kTrigI).f1));
}

TEST_CASE("score_corpus rejects misaligned corpora") {
  std::vector<IdRecords> gold = {{"1", {}}, {"2", {}}};
  std::vector<IdRecords> pred = {{"1", {}}, {"3", {}}};
  try {
    ScoreCorpus(pred, gold);
    FAIL("expected MismatchedCorpus");
  } catch (const MismatchedCorpus &e) {
    CHECK(e.missing() == std::vector<std::string>{"2"});
    CHECK(e.extra() == std::vector<std::string>{"3"});
  }
}

TEST_CASE("report JSON round trip and F1 bounds") {
  Schema s = testing::AceLikeSchema();
  testing::RecordGenerator gen(s, 5);
  std::vector<IdRecords> gold, pred;
  for (int i = 0; i < 40; ++i) {
    gold.push_back({std::to_string(i), gen.Records()});
    pred.push_back({std::to_string(i), gen.Records()});
  }
  MetricReport r = ScoreCorpus(pred, gold);
  for (MetricKind k : kAllMetricKinds) {
    CHECK(r.score(k).f1 >= 0.0);
    CHECK(r.score(k).f1 <= 1.0);
  }
  MetricReport back = MetricReport::FromJson(r.ToJson());
  CHECK(back.ToJson() == r.ToJson());
  std::reverse(pred.begin(), pred.end());
  CHECK(ScoreCorpus(pred, gold).ToJson() == r.ToJson());
}
