#include "speechee/pipeline.h"

#include <cstdio>
#include <filesystem>
#include <future>
#include <limits>

#include "speechee/errors.h"
#include "speechee/random.h"
#include "speechee/text.h"

namespace fs = std::filesystem;

namespace speechee {

namespace {

// Replacement characters stay in the script of the original.
char32_t RandomLike(char32_t original, Rng &rng) {
  if (IsIdeograph(original)) return static_cast<char32_t>(0x4E00 + rng.Below(0x9FFF - 0x4E00 + 1));
  return static_cast<char32_t>('a' + rng.Below(26));
}

}  // namespace

std::string InjectCer(const std::string &transcript, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw Error("error rate must lie in [0, 1]");
  if (rate == 0.0) return transcript;
  std::u32string in = DecodeUtf8(transcript), out;
  Rng rng(MixSeed(seed, Fnv1a64(transcript)));
  for (char32_t cp : in) {
    if (rng.Uniform() >= rate) {
      out.push_back(cp);
      continue;
    }
    switch (rng.Below(3)) {
      case 0: {
        char32_t sub;
        do {
          sub = RandomLike(cp, rng);
        } while (sub == cp);
        out.push_back(sub);
        break;
      }
      case 1:
        break;
      default:
        out.push_back(cp);
        out.push_back(RandomLike(cp, rng));
        break;
    }
  }
  return EncodeUtf8(out);
}

double CharacterErrorRate(const std::string &hypothesis, const std::string &reference) {
  std::u32string h = DecodeUtf8(hypothesis), r = DecodeUtf8(reference);
  if (r.empty()) return h.empty() ? 0.0 : 1.0;
  return static_cast<double>(EditDistance(h, r)) / static_cast<double>(r.size());
}

NoisyChannelAsr::NoisyChannelAsr(double rate, std::uint64_t seed) : rate_(rate), seed_(seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw Error("error rate must lie in [0, 1]");
}

std::string NoisyChannelAsr::name() const { return "cer:" + std::to_string(rate_); }

std::string NoisyChannelAsr::Transcribe(const Instance &inst) const {
  return InjectCer(inst.transcript, rate_, MixSeed(seed_, Fnv1a64(inst.id)));
}

ExternalAsr::ExternalAsr(std::string command, std::string base_dir, std::string scratch_dir)
    : command_(std::move(command)), base_dir_(std::move(base_dir)), scratch_dir_(std::move(scratch_dir)) {}

std::string ExternalAsr::Transcribe(const Instance &inst) const {
  fs::create_directories(scratch_dir_);
  fs::path feats = fs::path(scratch_dir_) / (HexDigest(Fnv1a64(inst.id)) + ".feats");
  WriteFeats(feats.string(), LoadFeatures(inst, base_dir_));
  std::string cmd = command_ + " '" + feats.string() + "'";
  FILE *pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw IoError("cannot run " + command_);
  std::string out;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof(buf), pipe)) out.append(buf, n);
  int rc = pclose(pipe);
  fs::remove(feats);
  if (rc != 0) throw IoError("ASR command failed for " + inst.id);
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
  return out;
}

std::unique_ptr<AsrAdapter> MakeAsr(const std::string &spec, std::uint64_t seed,
                                    const std::string &base_dir, const std::string &scratch_dir) {
  if (spec == "oracle") return std::make_unique<OracleAsr>();
  if (spec.rfind("cer:", 0) == 0) {
    double rate;
    try {
      rate = std::stod(spec.substr(4));
    } catch (const std::exception &) {
      throw Error("bad error rate in '" + spec + "'");
    }
    return std::make_unique<NoisyChannelAsr>(rate, seed);
  }
  if (spec.rfind("external:", 0) == 0) {
    return std::make_unique<ExternalAsr>(spec.substr(9), base_dir, scratch_dir);
  }
  throw Error("unknown ASR '" + spec + "' (expected oracle, cer:<rate> or external:<cmd>)");
}

GoldLookupTextEe::GoldLookupTextEe(const std::vector<Instance> &gold, LookupMiss miss,
                                   const TextEeAdapter *fallback)
    : miss_(miss), fallback_(fallback) {
  if (miss == LookupMiss::kFallback && !fallback) throw Error("fallback extractor missing");
  for (const auto &inst : gold) {
    std::string key = NormalizeText(inst.transcript);
    if (table_.emplace(key, inst.events).second) keys_.push_back(key);
  }
}

std::vector<EventRecord> GoldLookupTextEe::Extract(const std::string &transcript) const {
  std::string key = NormalizeText(transcript);
  auto it = table_.find(key);
  if (it != table_.end()) return it->second;
  switch (miss_) {
    case LookupMiss::kEmpty:
      return {};
    case LookupMiss::kFallback:
      return fallback_->Extract(transcript);
    case LookupMiss::kFuzzy: {
      std::u32string q = DecodeUtf8(key);
      std::size_t best = std::numeric_limits<std::size_t>::max();
      const std::string *hit = nullptr;
      for (const auto &k : keys_) {
        std::size_t d = EditDistance(q, DecodeUtf8(k));
        if (d < best) {
          best = d;
          hit = &k;
        }
      }
      return hit ? table_.at(*hit) : std::vector<EventRecord>{};
    }
  }
  return {};
}

ToySeq2SeqTextEe::ToySeq2SeqTextEe(Checkpoint ckpt, Schema schema, ExtractorSpec spec)
    : ckpt_(std::move(ckpt)), schema_(std::move(schema)), spec_(spec) {
  if (ckpt_.params.config().input != InputKind::kTokens) {
    throw Error("text extractor checkpoint must use token input");
  }
}

std::vector<int> ToySeq2SeqTextEe::EncodeTranscript(const std::string &transcript) const {
  std::vector<int> ids = ckpt_.vocab.EncodeContent(transcript);
  if (ids.empty()) ids.push_back(Vocabulary::kUnk);
  return ids;
}

std::vector<EventRecord> ToySeq2SeqTextEe::Extract(const std::string &transcript) const {
  return Predict(ckpt_.params, ckpt_.vocab, schema_, EncodeTranscript(transcript), spec_).records;
}

std::vector<PipelineOutput> RunPipeline(const std::vector<Instance> &instances, const AsrAdapter &asr,
                                        const TextEeAdapter &text_ee, int workers) {
  std::vector<PipelineOutput> out(instances.size());
  auto run = [&](std::size_t i) {
    PipelineOutput &o = out[i];
    o.id = instances[i].id;
    try {
      o.transcript = asr.Transcribe(instances[i]);
      o.records = text_ee.Extract(o.transcript);
    } catch (const std::exception &e) {
      o.records.clear();
      o.error = e.what();
    }
  };
  int threads = asr.concurrent_safe() ? std::max(1, workers) : 1;
  if (threads == 1) {
    for (std::size_t i = 0; i < instances.size(); ++i) run(i);
  } else {
    std::vector<std::future<void>> futures;
    for (int t = 0; t < threads; ++t) {
      futures.push_back(std::async(std::launch::async, [&, t] {
        for (std::size_t i = t; i < instances.size(); i += threads) run(i);
      }));
    }
    for (auto &f : futures) f.get();
  }
  return out;
}

MetricReport ScorePipeline(const std::vector<PipelineOutput> &outputs,
                           const std::vector<Instance> &gold) {
  std::vector<IdRecords> p, g;
  for (const auto &o : outputs) p.emplace_back(o.id, o.records);
  for (const auto &inst : gold) g.emplace_back(inst.id, inst.events);
  return ScoreCorpus(p, g);
}

Json PipelineOutputToJson(const PipelineOutput &out) {
  Json j = {{"id", out.id}, {"transcript", out.transcript}, {"events", RecordsToJson(out.records)}};
  if (!out.error.empty()) j["error"] = out.error;
  return j;
}

}  // namespace speechee
