// Experiment orchestration: a config names a built data directory, model and
// optimizer settings, and a list of conditions x seeds.  Every run lives in
// its own directory and records a content hash of everything that determines
// its result, so an interrupted experiment resumes where it stopped.
//
//   <output>/report.json       aggregate per condition (no timings or paths)
//   <output>/raw_scores.csv    one row per condition, seed and metric
//   <output>/runs/<cond>/seed-<s>/{model.ckpt,predictions.jsonl,result.json}

#ifndef SPEECHEE_HARNESS_H_
#define SPEECHEE_HARNESS_H_

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "speechee/config.h"
#include "speechee/dataset.h"
#include "speechee/train.h"

namespace speechee {

// Bumped whenever a change alters trained results.
inline constexpr const char *kCodeVersion = "speechee-1";

// "<format>+clue" or "<format>-clue", optionally "@<d_model>" for a
// width-scaled variant (feed-forward width scales with it).
struct Condition {
  std::string name;
  Format format = Format::kFlat;
  bool with_clue = true;
  int d_model = 0;  // 0 = the configured width

  static Condition FromString(const std::string &s);
};

struct ExperimentConfig {
  std::string data_dir;
  InputKind input = InputKind::kFrames;
  ModelConfig model;  // vocab_size and input are filled from the data
  int epochs = 20;
  int batch_size = 16;
  OptimizerConfig optimizer;
  LossOptions loss;
  bool freeze_encoder = false;
  long max_steps = -1;
  // Without an explicit condition list the experiment is the single
  // condition given by format and with_clue.
  Format format = Format::kFlat;
  bool with_clue = true;
  std::vector<std::string> conditions = {"flat+clue"};
  std::vector<long> seeds = {0};
  int max_len = 64;
  int beam = 1;
  std::vector<long> grid = {16, 32, 48, 64, 96, 128};
  std::vector<std::string> formats = {"tree", "flat"};
  std::string output = "experiment";

  static ExperimentConfig FromFile(const ConfigFile &file);
  static ExperimentConfig Load(const std::string &path);
  ConfigFile ToFile() const;
};

// The splits of a built data directory plus the derived vocabulary.
struct LoadedData {
  Schema schema;
  std::vector<Instance> train, dev, test;
  Vocabulary vocab;  // from the train split
  std::string hash;  // content hash of the data files
};

// Reads train/dev/test.jsonl and schema.json from `dir`.
LoadedData LoadData(const std::string &dir);

// Encoder input for an instance: speech features, or the transcript's token
// ids (never empty) for the text front end.
ModelInput MakeInput(const Instance &inst, const Vocabulary &vocab, InputKind kind,
                     const std::string &data_dir);

struct RunResult {
  std::string condition;
  long seed = 0;
  bool ok = false;
  std::string error;
  MetricReport report;
  double ill_formed_rate = 0;
  int best_epoch = 0;
  double best_dev_trig_c = -1;
  long steps = 0;
  bool resumed = false;  // taken from a previous run with the same hash
};

struct ConditionSummary {
  Condition condition;
  bool ok = true;
  std::vector<RunResult> runs;
  // Over successful runs; population standard deviation.
  std::array<PRF, 6> mean{}, stddev{};
  double ill_formed_mean = 0, ill_formed_std = 0;
};

struct AblationReport {
  std::vector<ConditionSummary> conditions;
  Json config;

  bool all_ok() const;
  const ConditionSummary *Find(const std::string &condition) const;
  Json ToJson() const;
};

// Worker budget from SPEECHEE_WORKERS (default 1).
int WorkerBudget();

struct ExperimentHooks {
  std::function<void(const std::string &condition, long seed, const EpochLog &)> on_epoch;
  std::function<void(const RunResult &)> on_run;
};

// Trains and evaluates every condition x seed on the test split, skipping
// runs whose result carries a matching content hash.  A failing run marks
// its condition failed without stopping the others.  Writes report.json and
// raw_scores.csv under config.output.
AblationReport RunExperiment(const ExperimentConfig &config, int workers = 1,
                             const ExperimentHooks &hooks = {});

// Trains the single condition given by config.format and config.with_clue
// with the first configured seed.  Writes model.ckpt, schema.json,
// predictions.jsonl (test split) and result.json into `out_dir`; like an
// experiment run it is skipped when a matching result is already there.
RunResult TrainModel(const ExperimentConfig &config, const std::string &out_dir,
                     const ExperimentHooks &hooks = {});

// Trains matched models for each entry of config.formats (clue setting and
// everything else as configured) and adds curves/formats.csv and
// charts/formats.svg.
AblationReport CompareFormats(const ExperimentConfig &config, int workers = 1,
                              const ExperimentHooks &hooks = {});

struct LengthPoint {
  int max_len = 0;
  MetricReport report;
  double ill_formed_rate = 0;
  double mean_tokens = 0;
  std::size_t longest = 0;  // never above max_len
};

// Inference only: decodes the test split of `data_dir` with a trained
// checkpoint at every cap in `grid`.  Writes curves/length.csv and
// charts/length.svg under `output` when it is non-empty.
std::vector<LengthPoint> AblateLength(const std::string &ckpt_path, const std::string &data_dir,
                                      const std::vector<long> &grid, const std::string &output,
                                      int beam = 1);

std::string LengthCurveCsv(const std::vector<LengthPoint> &curve);

}  // namespace speechee

#endif  // SPEECHEE_HARNESS_H_
