#include "doctest.h"
#include "speechee/errors.h"
#include "speechee/harness.h"

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace speechee;
namespace fs = std::filesystem;

namespace {

fs::path FreshDir(const std::string &tag) {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() /
               ("speechee-harness-" + std::to_string(getpid()) + "-" + tag + "-" + std::to_string(counter++));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string Slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A small pseudo-speech toy corpus written the way build-data lays it out.
fs::path BuildToyData() {
  static fs::path dir;
  if (!dir.empty()) return dir;
  dir = FreshDir("data");
  ToyCorpusOptions o;
  o.train = 300;
  o.dev = 8;
  o.test = 12;
  o.seed = 5;
  ToyCorpus toy = GenerateToyCorpus(o);
  auto syn = Synthesize(toy.instances, PseudoSpeechAdapter(), DefaultVoices(1));
  std::map<Split, std::vector<Instance>> parts;
  for (const auto &inst : syn.instances) parts[inst.split].push_back(inst);
  SaveCorpus((dir / "train.jsonl").string(), parts[Split::kTrain]);
  SaveCorpus((dir / "dev.jsonl").string(), parts[Split::kDev]);
  SaveCorpus((dir / "test.jsonl").string(), parts[Split::kTest]);
  SaveSchema(toy.schema, (dir / "schema.json").string());
  return dir;
}

ExperimentConfig TinyConfig(const fs::path &out) {
  ExperimentConfig c;
  c.data_dir = BuildToyData().string();
  c.model.d_model = 32;
  c.model.heads = 2;
  c.model.ff_dim = 64;
  c.model.encoder_layers = 1;
  c.model.decoder_layers = 1;
  c.epochs = 2;
  c.batch_size = 8;
  c.optimizer.lr = 5e-3;
  c.max_len = 40;
  c.output = out.string();
  return c;
}

std::vector<std::vector<std::string>> ReadCsv(const fs::path &p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(Slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("condition names") {
  Condition c = Condition::FromString("flat+clue");
  CHECK(c.format == Format::kFlat);
  CHECK(c.with_clue);
  c = Condition::FromString("tree-clue@32");
  CHECK(c.format == Format::kTree);
  CHECK_FALSE(c.with_clue);
  CHECK(c.d_model == 32);
  CHECK(c.name == "tree-clue@32");
  CHECK(Condition::FromString("flat\xe2\x88\x92" "clue").name == "flat-clue");
  CHECK_THROWS_AS(Condition::FromString("flat"), Error);
  CHECK_THROWS_AS(Condition::FromString("flat*clue"), Error);
  CHECK_THROWS_AS(Condition::FromString("flat+clue@x"), Error);
  CHECK_THROWS_AS(Condition::FromString("json+clue"), Error);
}

TEST_CASE("experiment config survives a trip through its file") {
  ExperimentConfig c = TinyConfig("/tmp/out");
  c.conditions = {"flat+clue", "flat-clue"};
  c.seeds = {1, 2, 3};
  c.optimizer.lr = 0.1 + 0.2;
  c.grid = {8, 16};
  c.input = InputKind::kTokens;
  ExperimentConfig back = ExperimentConfig::FromFile(ConfigFile::Parse(c.ToFile().ToString()));
  CHECK(back.ToFile().ToString() == c.ToFile().ToString());
  CHECK(back.optimizer.lr == c.optimizer.lr);
  CHECK(back.seeds == c.seeds);
  CHECK(back.input == InputKind::kTokens);

  CHECK_THROWS_AS(ExperimentConfig::FromFile(ConfigFile::Parse("[data]\ndir = \"x\"\n[train]\nepoch = 3\n")), Error);
  CHECK_THROWS_AS(ExperimentConfig::FromFile(ConfigFile::Parse("[data]\ndir = \"x\"\n[misc]\na = 1\n")), Error);
  CHECK_THROWS_AS(ExperimentConfig::FromFile(ConfigFile::Parse("[model]\nd_model = 8\n")), Error);
  ExperimentConfig single = ExperimentConfig::FromFile(
      ConfigFile::Parse("[data]\ndir = \"x\"\n[experiment]\nformat = \"tree\"\nwith_clue = false\n"));
  CHECK(single.conditions == std::vector<std::string>{"tree-clue"});
}

TEST_CASE("worker budget comes from the environment") {
  unsetenv("SPEECHEE_WORKERS");
  CHECK(WorkerBudget() == 1);
  setenv("SPEECHEE_WORKERS", "3", 1);
  CHECK(WorkerBudget() == 3);
  setenv("SPEECHEE_WORKERS", "zero", 1);
  CHECK_THROWS_AS(WorkerBudget(), Error);
  unsetenv("SPEECHEE_WORKERS");
}

TEST_CASE("clue ablation runs every condition and seed, resumes and reproduces") {
  fs::path out = FreshDir("ablation");
  ExperimentConfig c = TinyConfig(out);
  // The text front end learns the toy task within a few epochs.
  c.input = InputKind::kTokens;
  c.epochs = 6;
  c.conditions = {"flat+clue", "flat-clue"};
  c.seeds = {1, 2, 3};
  int trained = 0;
  ExperimentHooks hooks;
  hooks.on_run = [&](const RunResult &r) { trained += !r.resumed; };
  AblationReport report = RunExperiment(c, 2, hooks);
  CHECK(trained == 6);
  CHECK(report.all_ok());
  CHECK(report.Find("flat-clue")->mean[static_cast<int>(MetricKind::kTrigC)].f1 > 0.5);
  REQUIRE(report.conditions.size() == 2);

  int artifacts = 0;
  for (const auto &cond : c.conditions) {
    for (long seed : c.seeds) {
      fs::path run = out / "runs" / cond / ("seed-" + std::to_string(seed));
      for (const char *f : {"model.ckpt", "predictions.jsonl", "result.json"}) artifacts += fs::exists(run / f);
    }
  }
  CHECK(artifacts == 18);

  // Means and population deviations recomputed from the raw score file.
  auto rows = ReadCsv(out / "raw_scores.csv");
  REQUIRE(rows.size() == 1 + 2 * 3 * 6);
  for (const auto &summary : report.conditions) {
    for (MetricKind k : kAllMetricKinds) {
      std::vector<double> f1;
      for (const auto &row : rows) {
        if (row[0] == summary.condition.name && row[2] == ToString(k)) f1.push_back(std::stod(row[8]));
      }
      REQUIRE(f1.size() == 3);
      double mean = (f1[0] + f1[1] + f1[2]) / 3;
      double var = ((f1[0] - mean) * (f1[0] - mean) + (f1[1] - mean) * (f1[1] - mean) +
                    (f1[2] - mean) * (f1[2] - mean)) / 3;
      CHECK(summary.mean[static_cast<int>(k)].f1 == doctest::Approx(mean).epsilon(1e-12));
      CHECK(summary.stddev[static_cast<int>(k)].f1 == doctest::Approx(std::sqrt(var)).epsilon(1e-9));
    }
  }

  std::string first = Slurp(out / "report.json");
  trained = 0;
  RunExperiment(c, 1, hooks);
  CHECK(trained == 0);
  CHECK(Slurp(out / "report.json") == first);

  // Interrupted run: only the missing one is recomputed.
  fs::remove(out / "runs" / "flat-clue" / "seed-2" / "result.json");
  RunExperiment(c, 1, hooks);
  CHECK(trained == 1);
  CHECK(Slurp(out / "report.json") == first);

  fs::path fresh = FreshDir("ablation-fresh");
  ExperimentConfig again = c;
  again.output = fresh.string();
  RunExperiment(again, 1);
  CHECK(Slurp(fresh / "report.json") == first);
  CHECK(Slurp(fresh / "raw_scores.csv") == Slurp(out / "raw_scores.csv"));

  // A changed setting invalidates the stored results.
  ExperimentConfig changed = c;
  changed.max_steps = 3;
  trained = 0;
  RunExperiment(changed, 1, hooks);
  CHECK(trained == 6);
}

TEST_CASE("single condition and seed gives one row") {
  fs::path out = FreshDir("single");
  ExperimentConfig c = TinyConfig(out);
  c.epochs = 1;
  AblationReport r = RunExperiment(c);
  REQUIRE(r.conditions.size() == 1);
  CHECK(r.conditions[0].runs.size() == 1);
  Json j = Json::parse(Slurp(out / "report.json"));
  CHECK(j["conditions"].size() == 1);
  CHECK(j["conditions"][0]["status"] == "ok");
}

TEST_CASE("a failing condition is isolated") {
  fs::path out = FreshDir("failure");
  ExperimentConfig c = TinyConfig(out);
  c.epochs = 1;
  c.conditions = {"flat+clue", "flat+clue@6"};  // 6 is not divisible by 4 heads
  c.model.heads = 4;
  AblationReport r = RunExperiment(c);
  CHECK_FALSE(r.all_ok());
  CHECK(r.Find("flat+clue")->ok);
  const ConditionSummary *bad = r.Find("flat+clue@6");
  REQUIRE(bad);
  CHECK_FALSE(bad->ok);
  CHECK_FALSE(bad->runs[0].error.empty());
  Json j = Json::parse(Slurp(out / "report.json"));
  CHECK(j["conditions"][1]["status"] == "failed");
}

TEST_CASE("format comparison with the same format twice is a control") {
  fs::path out = FreshDir("formats");
  ExperimentConfig c = TinyConfig(out);
  c.formats = {"flat", "flat"};
  c.seeds = {4, 5};
  AblationReport r = CompareFormats(c);
  REQUIRE(r.conditions.size() == 2);
  for (std::size_t s = 0; s < 2; ++s) {
    CHECK(r.conditions[0].runs[s].report.ToJson() == r.conditions[1].runs[s].report.ToJson());
    CHECK(r.conditions[0].runs[s].ill_formed_rate == r.conditions[1].runs[s].ill_formed_rate);
  }
  CHECK(fs::exists(out / "charts" / "formats.svg"));
  auto rows = ReadCsv(out / "curves" / "formats.csv");
  CHECK(rows.size() == 3);

  fs::path both = FreshDir("formats-both");
  c.output = both.string();
  c.formats = {"tree", "flat"};
  c.seeds = {4};
  AblationReport tf = CompareFormats(c);
  CHECK(tf.Find("tree+clue"));
  CHECK(tf.Find("flat+clue"));
  Json j = Json::parse(Slurp(both / "report.json"));
  for (const auto &cond : j["conditions"]) CHECK(cond["ill_formed_rate"].contains("mean"));
}

TEST_CASE("length ablation respects caps and the truncation bound") {
  fs::path out = FreshDir("length");
  ExperimentConfig c = TinyConfig(out);
  c.epochs = 10;
  RunExperiment(c);
  std::string ckpt = (out / "runs" / "flat+clue" / "seed-0" / "model.ckpt").string();

  auto curve = AblateLength(ckpt, c.data_dir, {16, 32, 48, 64, 96, 128}, out.string());
  CHECK(curve.size() == 6);
  for (const auto &p : curve) CHECK(p.longest <= static_cast<std::size_t>(p.max_len));
  CHECK(ReadCsv(out / "curves" / "length.csv").size() == 7);
  double best = 0;
  for (const auto &p : curve) best = std::max(best, p.report.score(MetricKind::kTrigC).recall);
  CHECK(best > curve[0].report.score(MetricKind::kTrigC).recall);
  CHECK(fs::exists(out / "charts" / "length.svg"));
  CHECK(AblateLength(ckpt, c.data_dir, {48}, "").size() == 1);

  // Truncation oracle: a flat event needs at least four tokens (two tags, a
  // type and a trigger word), so a cap admits at most cap / 4 events per
  // utterance whatever the model emits.
  LoadedData data = LoadData(c.data_dir);
  for (long cap : {1L, 3L, 4L, 9L, 13L}) {
    auto point = AblateLength(ckpt, c.data_dir, {cap}, "")[0];
    long bound = 0, gold = 0;
    for (const auto &inst : data.test) {
      long n = static_cast<long>(inst.events.size());
      gold += n;
      bound += std::min(n, cap / 4);
    }
    CHECK(point.report.count(MetricKind::kTrigC).tp <= bound);
    CHECK(point.longest <= static_cast<std::size_t>(cap));
    if (cap < 4) CHECK(point.report.score(MetricKind::kTrigC).recall == 0.0);
    CHECK(gold > 0);
  }
  CHECK_THROWS_AS(AblateLength(ckpt, c.data_dir, {}, ""), Error);
}
