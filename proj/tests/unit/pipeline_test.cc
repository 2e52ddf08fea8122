#include "doctest.h"
#include "fixtures.h"
#include "speechee/dataset.h"
#include "speechee/errors.h"
#include "speechee/pipeline.h"
#include "speechee/text.h"

#include <algorithm>
#include <cmath>

using namespace speechee;

namespace {

// Textbook dynamic-programming edit distance.
std::size_t Levenshtein(const std::u32string &a, const std::u32string &b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1])});
    }
  }
  return d[a.size()][b.size()];
}

double OracleCer(const std::string &hyp, const std::string &ref) {
  return static_cast<double>(Levenshtein(DecodeUtf8(hyp), DecodeUtf8(ref))) / DecodeUtf8(ref).size();
}

std::vector<Instance> ToyTest(int n, std::uint64_t seed = 3) {
  ToyCorpusOptions o;
  o.train = 0;
  o.dev = 0;
  o.test = n;
  o.seed = seed;
  return GenerateToyCorpus(o).instances;
}

class FailingAsr : public AsrAdapter {
 public:
  std::string name() const override { return "failing"; }
  std::string Transcribe(const Instance &inst) const override {
    if (inst.id.back() == '3') throw IoError("no audio for " + inst.id);
    return inst.transcript;
  }
};

Checkpoint UntrainedTextModel(const std::vector<Instance> &corpus) {
  Vocabulary v = Vocabulary::FromInstances(corpus);
  ModelConfig c;
  c.d_model = 16;
  c.heads = 2;
  c.ff_dim = 32;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.vocab_size = v.size();
  c.input = InputKind::kTokens;
  return {ModelParameters::Initialize(c, 5), v, Json::object()};
}

}  // namespace

TEST_CASE("inject_cer at rate zero is the identity") {
  for (const std::string s : {"", "the man returned", "北京欢迎你", "Zoë"}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) CHECK(InjectCer(s, 0.0, seed) == s);
  }
  CHECK_THROWS_AS(InjectCer("abc", 1.5, 0), Error);
  CHECK_THROWS_AS(InjectCer("abc", -0.1, 0), Error);
}

TEST_CASE("inject_cer at rate one corrupts nearly every character") {
  std::string once = InjectCer("abcd", 1.0, 42);
  CHECK(once != "abcd");
  CHECK(InjectCer("abcd", 1.0, 42) == once);
  double ratio = OracleCer(once, "abcd");
  CHECK(ratio >= 0.5);
  CHECK(ratio <= 1.5);
  double sum = 0;
  for (std::uint64_t seed = 0; seed < 500; ++seed) sum += OracleCer(InjectCer("abcd", 1.0, seed), "abcd");
  CHECK(sum / 500 > 0.75);
  CHECK(sum / 500 <= 1.0);
}

TEST_CASE("mean character error rate tracks the injected rate") {
  auto corpus = ToyTest(1000);
  double sum = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    sum += OracleCer(InjectCer(corpus[i].transcript, 0.2, 1000 + i), corpus[i].transcript);
  }
  CHECK(std::abs(sum / 1000 - 0.2) <= 0.02);
}

TEST_CASE("character error rate agrees with the oracle") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    std::mt19937_64 rng(seed);
    std::string ref = testing::TokenSoup(rng, 6), hyp = testing::TokenSoup(rng, 6);
    if (ref.empty()) continue;
    CHECK(CharacterErrorRate(hyp, ref) == doctest::Approx(OracleCer(hyp, ref)));
  }
  CHECK(CharacterErrorRate("", "") == 0.0);
  CHECK(CharacterErrorRate("x", "") == 1.0);
  CHECK(InjectCer("北京", 1.0, 3).size() > 0);
}

TEST_CASE("noisy channel is deterministic per instance and seed") {
  auto corpus = ToyTest(20);
  NoisyChannelAsr a(0.3, 7), b(0.3, 7), c(0.3, 8);
  int differs = 0;
  for (const auto &inst : corpus) {
    CHECK(a.Transcribe(inst) == b.Transcribe(inst));
    differs += a.Transcribe(inst) != c.Transcribe(inst);
  }
  CHECK(differs > 10);
  CHECK(MakeAsr("cer:0.25", 1, ".", ".")->name() == NoisyChannelAsr(0.25, 1).name());
  CHECK_THROWS_AS(MakeAsr("cer:x", 1, ".", "."), Error);
  CHECK_THROWS_AS(MakeAsr("whisper", 1, ".", "."), Error);
}

TEST_CASE("oracle ASR with gold lookup is a perfect cascade") {
  auto corpus = ToyTest(100);
  GoldLookupTextEe gold(corpus);
  auto out = RunPipeline(corpus, OracleAsr(), gold);
  MetricReport r = ScorePipeline(out, corpus);
  for (int k = 0; k < 6; ++k) CHECK(r.scores[k].f1 == 1.0);
  for (std::size_t i = 0; i < corpus.size(); ++i) CHECK(out[i].transcript == corpus[i].transcript);
}

TEST_CASE("total corruption with gold lookup scores near zero") {
  auto corpus = ToyTest(100);
  GoldLookupTextEe gold(corpus);
  MetricReport r = ScorePipeline(RunPipeline(corpus, NoisyChannelAsr(1.0, 1), gold), corpus);
  CHECK(r.score(MetricKind::kTrigC).f1 < 0.05);
}

TEST_CASE("fuzzy lookup recovers lightly corrupted transcripts") {
  auto corpus = ToyTest(100);
  GoldLookupTextEe exact(corpus), fuzzy(corpus, LookupMiss::kFuzzy);
  NoisyChannelAsr asr(0.05, 2);
  double f_exact = ScorePipeline(RunPipeline(corpus, asr, exact), corpus).score(MetricKind::kTrigC).f1;
  double f_fuzzy = ScorePipeline(RunPipeline(corpus, asr, fuzzy), corpus).score(MetricKind::kTrigC).f1;
  CHECK(f_fuzzy > f_exact);
}

TEST_CASE("error sweep degrades gold lookup monotonically") {
  auto corpus = ToyTest(200);
  GoldLookupTextEe gold(corpus);
  std::vector<double> means;
  for (double rate : {0.0, 0.05, 0.1, 0.2, 0.3}) {
    double sum = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      sum += ScorePipeline(RunPipeline(corpus, NoisyChannelAsr(rate, seed), gold), corpus)
                 .score(MetricKind::kTrigC)
                 .f1;
    }
    means.push_back(sum / 5);
  }
  for (std::size_t i = 1; i < means.size(); ++i) CHECK(means[i] <= means[i - 1]);
}

TEST_CASE("oracle ASR equals running the extractor on gold transcripts") {
  auto corpus = ToyTest(30);
  ExtractorSpec spec;
  spec.format = Format::kFlat;
  spec.with_clue = false;
  spec.decode.max_len = 12;
  ToySeq2SeqTextEe toy(UntrainedTextModel(corpus), GenerateToyCorpus({}).schema, spec);
  auto out = RunPipeline(corpus, OracleAsr(), toy, 2);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(out[i].records == toy.Extract(corpus[i].transcript));
  }
  auto again = RunPipeline(corpus, OracleAsr(), toy, 1);
  for (std::size_t i = 0; i < corpus.size(); ++i) CHECK(again[i].records == out[i].records);
  CHECK(toy.EncodeTranscript("") == std::vector<int>{Vocabulary::kUnk});
}

TEST_CASE("adapter failures become empty predictions") {
  auto corpus = ToyTest(20);
  GoldLookupTextEe gold(corpus);
  auto out = RunPipeline(corpus, FailingAsr(), gold);
  int failed = 0;
  for (const auto &o : out) {
    if (o.id.back() == '3') {
      ++failed;
      CHECK(o.records.empty());
      CHECK_FALSE(o.error.empty());
      CHECK(PipelineOutputToJson(o).contains("error"));
    } else {
      CHECK(o.error.empty());
    }
  }
  CHECK(failed == 2);
}
