// Optimization and inference around the toy model: AdamW with a linear
// warmup/decay schedule, an epoch loop with dev-set model selection, and the
// decode -> split -> parse path that turns model output into event records.

#ifndef SPEECHEE_TRAIN_H_
#define SPEECHEE_TRAIN_H_

#include <functional>
#include <string>
#include <vector>

#include "speechee/codec.h"
#include "speechee/metrics.h"
#include "speechee/model.h"

namespace speechee {

struct OptimizerConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // matrices only; biases and norms are exempt
  double warmup_ratio = 0.2;
  double grad_clip = 1.0;  // global L2 norm; 0 disables

  Json ToJson() const;
  static OptimizerConfig FromJson(const Json &j);
};

// Multiplier on the base learning rate at 1-based step `step` of `total`.
double ScheduleFactor(long step, long total, double warmup_ratio);

class AdamW {
 public:
  AdamW(const ModelParameters &params, const OptimizerConfig &config, long total_steps);

  // Applies one update; frozen tensors are left untouched.  Returns the
  // learning rate used.
  double Step(ModelParameters *params, Gradients grads);
  long steps() const { return step_; }

 private:
  OptimizerConfig config_;
  long total_;
  long step_ = 0;
  std::vector<Matrix> m_, v_;
};

// Output of the decode path for one input.
struct Prediction {
  std::string transcript;  // empty without the clue
  std::vector<EventRecord> records;
  ParseDiagnostics diagnostics;
  bool separator_found = false;
  std::string raw;  // event string as decoded
  std::size_t num_tokens = 0;
};

struct ExtractorSpec {
  Format format = Format::kTree;
  bool with_clue = true;
  DecodeOptions decode;
};

Prediction Predict(const ModelParameters &params, const Vocabulary &vocab, const Schema &schema,
                   const ModelInput &input, const ExtractorSpec &spec);

// A labelled example for evaluation.
struct EvalItem {
  std::string id;
  ModelInput input;
  std::vector<EventRecord> gold;
};

struct Evaluation {
  MetricReport report;
  std::vector<Prediction> predictions;  // aligned with the items
  double ill_formed_rate = 0;           // fraction with parse diagnostics
};

Evaluation Evaluate(const ModelParameters &params, const Vocabulary &vocab, const Schema &schema,
                    const std::vector<EvalItem> &items, const ExtractorSpec &spec);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;   // mean batch loss
  double token_nll = 0;
  double dev_trig_c = -1;  // -1 without a dev set
  double seconds = 0;
};

struct TrainOptions {
  int epochs = 20;
  int batch_size = 8;
  OptimizerConfig optimizer;
  LossOptions loss;
  bool freeze_encoder = false;
  std::uint64_t seed = 0;
  ExtractorSpec spec;       // used for dev evaluation
  long max_steps = -1;      // stop early after this many updates
  std::function<void(const EpochLog &)> on_epoch;
};

struct TrainResult {
  ModelParameters best;  // highest dev Trig-C F1, else the final parameters
  int best_epoch = 0;
  double best_dev_trig_c = -1;
  std::vector<EpochLog> history;
  long steps = 0;
};

// Mini-batch training with per-epoch shuffling.  `dev` may be empty.
TrainResult Train(ModelParameters params, const std::vector<Example> &train, const Vocabulary &vocab,
                  const Schema &schema, const std::vector<EvalItem> &dev, const TrainOptions &opts);

}  // namespace speechee

#endif  // SPEECHEE_TRAIN_H_
