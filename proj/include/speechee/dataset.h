// Corpus construction: loading, filtering, label mapping, speech synthesis,
// split handling and statistics.

#ifndef SPEECHEE_DATASET_H_
#define SPEECHEE_DATASET_H_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "speechee/event_model.h"
#include "speechee/speech.h"

namespace speechee {

// JSON lines, one instance per line; blank lines are skipped.  Every record
// is validated against `schema`; all offending lines are reported together.
std::vector<Instance> LoadCorpus(const std::string &path, const Schema &schema);
// Without validation.
std::vector<Instance> ReadCorpus(const std::string &path);
void SaveCorpus(const std::string &path, const std::vector<Instance> &instances);

std::vector<Instance> FilterEmptyEvents(const std::vector<Instance> &instances);

// True when the normalized transcript has at least one letter or ideograph.
bool IsReadable(const std::string &transcript);
std::vector<Instance> FilterUnreadable(const std::vector<Instance> &instances);

// Rewrites event types.  Throws MissingMapping listing types in use that
// the mapping does not cover.
std::vector<Instance> MapLabels(const std::vector<Instance> &instances, const LabelMapping &mapping);
Schema MapSchema(const Schema &schema, const LabelMapping &mapping);

struct SynthesisFailure {
  std::string id;
  std::string message;
};

struct SynthesisOutcome {
  std::vector<Instance> instances;
  std::vector<SynthesisFailure> failures;
};

// One output instance per (instance, voice).  With more than one voice ids
// get a "#<voice>" suffix.  Failed instances are left out and reported.
// Runs on up to `workers` threads when the adapter allows it.
SynthesisOutcome Synthesize(const std::vector<Instance> &instances, const SynthesizerAdapter &adapter,
                            const std::vector<VoiceConfig> &voices, int workers = 1);

struct CorpusStats {
  long n_types = 0;
  double avg_tokens = 0;
  std::optional<double> avg_audio_seconds;  // only when every instance has a duration
  std::map<std::string, long> split_sizes;  // train/dev/test
  long size = 0;

  Json ToJson() const;
};

CorpusStats ComputeStats(const std::vector<Instance> &instances);

// Keeps a seeded random half (rounded up) of the instances in `split`.
std::vector<Instance> HalveSplit(const std::vector<Instance> &instances, Split split,
                                 std::uint64_t seed);

// The `k` most frequent event types (ties broken by name).
std::vector<std::string> TopKTypes(const std::vector<Instance> &instances, int k);
// Drops events outside the top-k types, then instances left without events.
std::vector<Instance> FilterTopKTypes(const std::vector<Instance> &instances, int k);

// --- synthetic grammar corpus ------------------------------------------------

struct ToyCorpusOptions {
  int train = 2000;
  int dev = 200;
  int test = 200;
  std::uint64_t seed = 0;
  double multi_event_rate = 0.2;  // sentences with two events
  double no_event_rate = 0.1;     // sentences without an event
};

struct ToyCorpus {
  Schema schema;
  std::vector<Instance> instances;
};

// A small English-like grammar with eight event types and a closed word list
// of at most fifty words.  Speech is not attached.
ToyCorpus GenerateToyCorpus(const ToyCorpusOptions &opts);

}  // namespace speechee

#endif  // SPEECHEE_DATASET_H_
