// Cascaded baseline: an ASR stage produces a transcript, a text extractor
// turns it into events.  Character-level noise injection simulates ASR
// errors so their propagation can be measured.

#ifndef SPEECHEE_PIPELINE_H_
#define SPEECHEE_PIPELINE_H_

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "speechee/event_model.h"
#include "speechee/metrics.h"
#include "speechee/model.h"
#include "speechee/speech.h"
#include "speechee/train.h"

namespace speechee {

// Each code point is edited with probability `rate`; the edit is a
// substitution, deletion or insertion with equal chance.  Deterministic in
// (transcript, rate, seed).
std::string InjectCer(const std::string &transcript, double rate, std::uint64_t seed);

// Levenshtein distance over code points divided by the reference length
// (0 for an empty reference and hypothesis, 1 for an empty reference only).
double CharacterErrorRate(const std::string &hypothesis, const std::string &reference);

class AsrAdapter {
 public:
  virtual ~AsrAdapter() = default;
  virtual std::string name() const = 0;
  virtual bool concurrent_safe() const { return true; }
  virtual std::string Transcribe(const Instance &inst) const = 0;
};

class OracleAsr : public AsrAdapter {
 public:
  std::string name() const override { return "oracle"; }
  std::string Transcribe(const Instance &inst) const override { return inst.transcript; }
};

// Gold transcript passed through InjectCer, seeded per instance.
class NoisyChannelAsr : public AsrAdapter {
 public:
  NoisyChannelAsr(double rate, std::uint64_t seed);
  std::string name() const override;
  std::string Transcribe(const Instance &inst) const override;

 private:
  double rate_;
  std::uint64_t seed_;
};

// Runs `command <features-file>` and reads the transcript from its stdout.
// Features are written as a .feats file (see speech.h).
class ExternalAsr : public AsrAdapter {
 public:
  ExternalAsr(std::string command, std::string base_dir, std::string scratch_dir);
  std::string name() const override { return "external"; }
  bool concurrent_safe() const override { return false; }
  std::string Transcribe(const Instance &inst) const override;

 private:
  std::string command_, base_dir_, scratch_dir_;
};

// "oracle", "cer:<rate>" or "external:<cmd>".
std::unique_ptr<AsrAdapter> MakeAsr(const std::string &spec, std::uint64_t seed,
                                    const std::string &base_dir, const std::string &scratch_dir);

class TextEeAdapter {
 public:
  virtual ~TextEeAdapter() = default;
  virtual std::string name() const = 0;
  virtual std::vector<EventRecord> Extract(const std::string &transcript) const = 0;
};

enum class LookupMiss { kEmpty, kFuzzy, kFallback };

// Returns gold events for transcripts that match a gold transcript after
// normalization.  On a miss: nothing, the events of the closest gold
// transcript by edit distance, or the fallback extractor.
class GoldLookupTextEe : public TextEeAdapter {
 public:
  GoldLookupTextEe(const std::vector<Instance> &gold, LookupMiss miss = LookupMiss::kEmpty,
                   const TextEeAdapter *fallback = nullptr);
  std::string name() const override { return "gold"; }
  std::vector<EventRecord> Extract(const std::string &transcript) const override;

 private:
  std::unordered_map<std::string, std::vector<EventRecord>> table_;
  std::vector<std::string> keys_;  // insertion order, for fuzzy ties
  LookupMiss miss_;
  const TextEeAdapter *fallback_;
};

// The toy seq2seq with a token-input encoder.
class ToySeq2SeqTextEe : public TextEeAdapter {
 public:
  ToySeq2SeqTextEe(Checkpoint ckpt, Schema schema, ExtractorSpec spec);
  std::string name() const override { return "toy"; }
  std::vector<EventRecord> Extract(const std::string &transcript) const override;
  // Encoder input for a transcript; never empty (an empty transcript is one
  // unknown token).
  std::vector<int> EncodeTranscript(const std::string &transcript) const;

 private:
  Checkpoint ckpt_;
  Schema schema_;
  ExtractorSpec spec_;
};

struct PipelineOutput {
  std::string id;
  std::string transcript;  // ASR output
  std::vector<EventRecord> records;
  std::string error;  // empty on success
};

// Per-instance text_ee(asr(speech)); failures give empty predictions.
std::vector<PipelineOutput> RunPipeline(const std::vector<Instance> &instances, const AsrAdapter &asr,
                                        const TextEeAdapter &text_ee, int workers = 1);

MetricReport ScorePipeline(const std::vector<PipelineOutput> &outputs,
                           const std::vector<Instance> &gold);

Json PipelineOutputToJson(const PipelineOutput &out);

}  // namespace speechee

#endif  // SPEECHEE_PIPELINE_H_
