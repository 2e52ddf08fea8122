#include "speechee/train.h"

#include <chrono>
#include <cmath>
#include <numeric>

#include "speechee/errors.h"
#include "speechee/random.h"

namespace speechee {

Json OptimizerConfig::ToJson() const {
  return {{"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"eps", eps},
          {"weight_decay", weight_decay},
          {"warmup_ratio", warmup_ratio},
          {"grad_clip", grad_clip}};
}

OptimizerConfig OptimizerConfig::FromJson(const Json &j) {
  OptimizerConfig c;
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  return c;
}

double ScheduleFactor(long step, long total, double warmup_ratio) {
  if (total <= 0) return 1.0;
  long warmup = static_cast<long>(std::ceil(warmup_ratio * static_cast<double>(total)));
  if (step <= warmup) return static_cast<double>(step) / static_cast<double>(warmup);
  // Linear decay that reaches lr / (remaining + 1) on the last step rather
  // than wasting it at zero.
  return static_cast<double>(total - step + 1) / static_cast<double>(total - warmup + 1);
}

AdamW::AdamW(const ModelParameters &params, const OptimizerConfig &config, long total_steps)
    : config_(config), total_(total_steps) {
  for (int i = 0; i < params.size(); ++i) {
    m_.push_back(Matrix::Zero(params.value(i).rows(), params.value(i).cols()));
    v_.push_back(m_.back());
  }
}

double AdamW::Step(ModelParameters *params, Gradients grads) {
  ++step_;
  if (config_.grad_clip > 0) {
    double norm = std::sqrt(grads.SquaredNorm());
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
    if (norm > config_.grad_clip) grads *= config_.grad_clip / norm;
  }
  const double lr = config_.lr * ScheduleFactor(step_, total_, config_.warmup_ratio);
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (int i = 0; i < params->size(); ++i) {
    if (params->frozen(i)) continue;
    Matrix &w = params->value(i);
    const Matrix &g = grads.tensors[i];
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseAbs2();
    if (config_.weight_decay > 0 && w.rows() > 1) w *= 1.0 - lr * config_.weight_decay;
    w.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.eps);
  }
  return lr;
}

Prediction Predict(const ModelParameters &params, const Vocabulary &vocab, const Schema &schema,
                   const ModelInput &input, const ExtractorSpec &spec) {
  TargetSequence out = Generate(params, input, spec.decode);
  SplitResult split = SplitOutput(vocab, out, spec.format);
  Prediction p;
  p.num_tokens = out.tokens.size();
  p.separator_found = split.separator_found;
  p.transcript = split.transcript;
  p.raw = split.events.text;
  ParseResult parsed = Parse(split.events.text, spec.format, schema);
  p.records = std::move(parsed.records);
  p.diagnostics = std::move(parsed.diagnostics);
  return p;
}

Evaluation Evaluate(const ModelParameters &params, const Vocabulary &vocab, const Schema &schema,
                    const std::vector<EvalItem> &items, const ExtractorSpec &spec) {
  Evaluation ev;
  std::vector<IdRecords> pred, gold;
  long ill_formed = 0;
  for (const auto &item : items) {
    Prediction p = Predict(params, vocab, schema, item.input, spec);
    if (!p.diagnostics.clean()) ++ill_formed;
    pred.emplace_back(item.id, p.records);
    gold.emplace_back(item.id, item.gold);
    ev.predictions.push_back(std::move(p));
  }
  ev.report = ScoreCorpus(pred, gold);
  ev.ill_formed_rate = items.empty() ? 0.0 : static_cast<double>(ill_formed) / items.size();
  return ev;
}

TrainResult Train(ModelParameters params, const std::vector<Example> &train, const Vocabulary &vocab,
                  const Schema &schema, const std::vector<EvalItem> &dev, const TrainOptions &opts) {
  if (train.empty()) throw Error("no training examples");
  if (opts.batch_size < 1 || opts.epochs < 1) throw Error("batch_size and epochs must be positive");
  params.FreezeEncoder(opts.freeze_encoder);

  const long batches_per_epoch =
      (static_cast<long>(train.size()) + opts.batch_size - 1) / opts.batch_size;
  long total = batches_per_epoch * opts.epochs;
  if (opts.max_steps > 0) total = std::min(total, opts.max_steps);

  AdamW optimizer(params, opts.optimizer, total);
  Rng rng(MixSeed(opts.seed, 0x747261696eULL));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  Gradients grads(params);
  for (int epoch = 1; epoch <= opts.epochs && optimizer.steps() < total; ++epoch) {
    auto start = std::chrono::steady_clock::now();
    rng.Shuffle(order);
    EpochLog log;
    log.epoch = epoch;
    long nbatches = 0;
    for (std::size_t b = 0; b < order.size() && optimizer.steps() < total; b += opts.batch_size) {
      std::vector<const Example *> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + opts.batch_size); ++i) {
        batch.push_back(&train[order[i]]);
      }
      grads.Zero();
      LossResult loss = TrainingLoss(params, batch, &grads, opts.loss);
      optimizer.Step(&params, grads);
      log.train_loss += loss.loss;
      log.token_nll += loss.token_nll;
      ++nbatches;
    }
    log.train_loss /= static_cast<double>(nbatches);
    log.token_nll /= static_cast<double>(nbatches);
    if (!dev.empty()) {
      Evaluation ev = Evaluate(params, vocab, schema, dev, opts.spec);
      log.dev_trig_c = ev.report.score(MetricKind::kTrigC).f1;
      if (log.dev_trig_c > result.best_dev_trig_c) {
        result.best_dev_trig_c = log.dev_trig_c;
        result.best_epoch = epoch;
        result.best = params;
      }
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(log);
    if (opts.on_epoch) opts.on_epoch(log);
  }
  if (dev.empty()) {
    result.best = params;
    result.best_epoch = static_cast<int>(result.history.size());
  }
  result.steps = optimizer.steps();
  return result;
}

}  // namespace speechee
