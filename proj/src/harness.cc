#include "speechee/harness.h"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "speechee/errors.h"
#include "speechee/random.h"
#include "speechee/text.h"

namespace fs = std::filesystem;

namespace speechee {

namespace {

// Shortest representation that reads back to the same double.
std::string Num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string Fixed(double v, int digits) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(digits);
  out << v;
  return out.str();
}

std::string ReadText(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Readers never see a half-written file.
void WriteText(const fs::path &path, const std::string &text) {
  fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

const char *InputName(InputKind k) { return k == InputKind::kTokens ? "text" : "speech"; }

InputKind InputFromName(const std::string &s) {
  if (s == "speech") return InputKind::kFrames;
  if (s == "text") return InputKind::kTokens;
  throw Error("unknown input '" + s + "' (expected speech or text)");
}

void RejectUnknownKeys(const ConfigFile &file) {
  static const std::map<std::string, std::set<std::string>> known = {
      {"data", {"dir", "input"}},
      {"model", {"d_model", "heads", "ff_dim", "encoder_layers", "decoder_layers"}},
      {"train",
       {"epochs", "batch_size", "lr", "beta1", "beta2", "eps", "weight_decay", "warmup_ratio",
        "grad_clip", "transcript_weight", "freeze_encoder", "max_steps"}},
      {"experiment",
       {"format", "with_clue", "conditions", "seeds", "max_len", "beam", "grid", "formats", "output"}},
  };
  for (const auto &section : file.Sections()) {
    auto s = known.find(section);
    if (s == known.end()) throw Error("unknown config section [" + section + "]");
    for (const auto &key : file.Keys(section)) {
      if (!s->second.count(key)) throw Error("unknown config key " + section + "." + key);
    }
  }
}

std::string ConditionName(Format f, bool clue) {
  return std::string(ToString(f)) + (clue ? "+clue" : "-clue");
}

Json PrfJson(const PRF &p) { return {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}}; }

Json ExperimentJson(const ExperimentConfig &c, const std::string &data_hash) {
  Json train = {{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"optimizer", c.optimizer.ToJson()},
                {"transcript_weight", c.loss.transcript_weight},
                {"freeze_encoder", c.freeze_encoder},
                {"max_steps", c.max_steps}};
  return {{"code_version", kCodeVersion},
          {"data_hash", data_hash},
          {"input", InputName(c.input)},
          {"model", c.model.ToJson()},
          {"train", train},
          {"max_len", c.max_len},
          {"beam", c.beam}};
}

ModelConfig RunModelConfig(const ExperimentConfig &c, const Condition &cond, int vocab_size) {
  ModelConfig m = c.model;
  m.vocab_size = vocab_size;
  m.input = c.input;
  if (cond.d_model > 0) {
    m.ff_dim = std::max(1, c.model.ff_dim * cond.d_model / c.model.d_model);
    m.d_model = cond.d_model;
  }
  m.Check();
  return m;
}

Json RunResultJson(const RunResult &r) {
  Json j = {{"seed", r.seed}, {"status", r.ok ? "ok" : "failed"}};
  if (!r.ok) {
    j["error"] = r.error;
    return j;
  }
  j["report"] = r.report.ToJson();
  j["ill_formed_rate"] = r.ill_formed_rate;
  j["best_epoch"] = r.best_epoch;
  j["best_dev_trig_c"] = r.best_dev_trig_c;
  j["steps"] = r.steps;
  return j;
}

ConditionSummary Summarize(const Condition &cond, std::vector<RunResult> runs) {
  ConditionSummary s;
  s.condition = cond;
  s.runs = std::move(runs);
  std::vector<const RunResult *> ok;
  for (const auto &r : s.runs) {
    if (r.ok) ok.push_back(&r);
    else s.ok = false;
  }
  if (ok.empty()) return s;
  double n = static_cast<double>(ok.size());
  auto mean_std = [&](auto get, double *mean, double *sd) {
    double sum = 0;
    for (const auto *r : ok) sum += get(*r);
    *mean = sum / n;
    double sq = 0;
    for (const auto *r : ok) sq += (get(*r) - *mean) * (get(*r) - *mean);
    *sd = std::sqrt(sq / n);
  };
  for (int k = 0; k < 6; ++k) {
    mean_std([k](const RunResult &r) { return r.report.scores[k].precision; }, &s.mean[k].precision,
             &s.stddev[k].precision);
    mean_std([k](const RunResult &r) { return r.report.scores[k].recall; }, &s.mean[k].recall,
             &s.stddev[k].recall);
    mean_std([k](const RunResult &r) { return r.report.scores[k].f1; }, &s.mean[k].f1, &s.stddev[k].f1);
  }
  mean_std([](const RunResult &r) { return r.ill_formed_rate; }, &s.ill_formed_mean, &s.ill_formed_std);
  return s;
}

std::string RawScoresCsv(const AblationReport &report) {
  std::string out = "condition,seed,metric,tp,fp,fn,precision,recall,f1\n";
  for (const auto &c : report.conditions) {
    for (const auto &r : c.runs) {
      if (!r.ok) continue;
      for (MetricKind k : kAllMetricKinds) {
        const Counts &n = r.report.count(k);
        const PRF &s = r.report.score(k);
        out += c.condition.name + "," + std::to_string(r.seed) + "," + ToString(k) + "," +
               std::to_string(n.tp) + "," + std::to_string(n.fp) + "," + std::to_string(n.fn) + "," +
               Num(s.precision) + "," + Num(s.recall) + "," + Num(s.f1) + "\n";
      }
    }
  }
  return out;
}

// --- static charts ------------------------------------------------------------

constexpr int kWidth = 640, kHeight = 400, kLeft = 60, kRight = 150, kTop = 40, kBottom = 50;
const char *const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string SvgHeader(const std::string &title) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(kWidth) +
                  "\" height=\"" + std::to_string(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + std::to_string(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
       title + "</text>\n";
  return s;
}

// Axes with a [0, 1] value range.
std::string SvgAxes(const std::string &x_label, const std::string &y_label) {
  int x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  std::string s = "<line x1=\"" + std::to_string(x0) + "\" y1=\"" + std::to_string(y0) + "\" x2=\"" +
                  std::to_string(x1) + "\" y2=\"" + std::to_string(y0) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + std::to_string(x0) + "\" y1=\"" + std::to_string(y0) + "\" x2=\"" + std::to_string(x0) +
       "\" y2=\"" + std::to_string(y1) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    double y = y0 - (y0 - y1) * i / 5.0;
    s += "<text x=\"" + std::to_string(x0 - 6) + "\" y=\"" + Fixed(y + 4, 1) + "\" text-anchor=\"end\">" +
         Fixed(i / 5.0, 1) + "</text>\n";
  }
  s += "<text x=\"" + std::to_string((x0 + x1) / 2) + "\" y=\"" + std::to_string(kHeight - 12) +
       "\" text-anchor=\"middle\">" + x_label + "</text>\n";
  s += "<text x=\"16\" y=\"" + std::to_string((y0 + y1) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       std::to_string((y0 + y1) / 2) + ")\">" + y_label + "</text>\n";
  return s;
}

std::string SvgLegend(const std::vector<std::string> &names) {
  std::string s;
  for (std::size_t i = 0; i < names.size(); ++i) {
    int y = kTop + 10 + 18 * static_cast<int>(i);
    s += "<rect x=\"" + std::to_string(kWidth - kRight + 15) + "\" y=\"" + std::to_string(y - 9) +
         "\" width=\"10\" height=\"10\" fill=\"" + kColors[i % 6] + "\"/>\n";
    s += "<text x=\"" + std::to_string(kWidth - kRight + 30) + "\" y=\"" + std::to_string(y) + "\">" + names[i] +
         "</text>\n";
  }
  return s;
}

struct Series {
  std::string name;
  std::vector<double> values;
};

std::string LineChart(const std::string &title, const std::string &x_label, const std::vector<double> &xs,
                      const std::vector<Series> &series) {
  std::string s = SvgHeader(title) + SvgAxes(x_label, "score");
  double lo = xs.empty() ? 0 : *std::min_element(xs.begin(), xs.end());
  double hi = xs.empty() ? 1 : *std::max_element(xs.begin(), xs.end());
  double span = hi > lo ? hi - lo : 1;
  auto px = [&](double x) { return kLeft + 10 + (kWidth - kRight - kLeft - 20) * (xs.size() > 1 ? (x - lo) / span : 0.5); };
  auto py = [&](double y) { return (kHeight - kBottom) - (kHeight - kBottom - kTop) * y; };
  for (double x : xs) {
    s += "<text x=\"" + Fixed(px(x), 1) + "\" y=\"" + std::to_string(kHeight - kBottom + 16) +
         "\" text-anchor=\"middle\">" + Num(x) + "</text>\n";
  }
  std::vector<std::string> names;
  for (std::size_t i = 0; i < series.size(); ++i) {
    names.push_back(series[i].name);
    std::string pts;
    for (std::size_t j = 0; j < xs.size(); ++j) {
      pts += (j ? " " : "") + Fixed(px(xs[j]), 1) + "," + Fixed(py(series[i].values[j]), 1);
      s += "<circle cx=\"" + Fixed(px(xs[j]), 1) + "\" cy=\"" + Fixed(py(series[i].values[j]), 1) +
           "\" r=\"3\" fill=\"" + kColors[i % 6] + "\"/>\n";
    }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(kColors[i % 6]) + "\" stroke-width=\"2\" points=\"" +
         pts + "\"/>\n";
  }
  return s + SvgLegend(names) + "</svg>\n";
}

// Grouped bars: one group per category, one bar per series.
std::string BarChart(const std::string &title, const std::vector<std::string> &categories,
                     const std::vector<Series> &series) {
  std::string s = SvgHeader(title) + SvgAxes("condition", "value");
  double group = static_cast<double>(kWidth - kRight - kLeft) / std::max<std::size_t>(1, categories.size());
  double bar = group * 0.8 / std::max<std::size_t>(1, series.size());
  double base = kHeight - kBottom, height = kHeight - kBottom - kTop;
  for (std::size_t c = 0; c < categories.size(); ++c) {
    double gx = kLeft + group * c + group * 0.1;
    for (std::size_t i = 0; i < series.size(); ++i) {
      double v = std::clamp(series[i].values[c], 0.0, 1.0);
      s += "<rect x=\"" + Fixed(gx + bar * i, 1) + "\" y=\"" + Fixed(base - height * v, 1) + "\" width=\"" +
           Fixed(bar * 0.9, 1) + "\" height=\"" + Fixed(height * v, 1) + "\" fill=\"" + kColors[i % 6] + "\"/>\n";
    }
    s += "<text x=\"" + Fixed(gx + group * 0.4, 1) + "\" y=\"" + std::to_string(kHeight - kBottom + 16) +
         "\" text-anchor=\"middle\">" + categories[c] + "</text>\n";
  }
  std::vector<std::string> names;
  for (const auto &sr : series) names.push_back(sr.name);
  return s + SvgLegend(names) + "</svg>\n";
}

// --- one run --------------------------------------------------------------------

struct Inputs {
  std::vector<ModelInput> train, dev, test;
};

std::vector<ModelInput> MakeInputs(const std::vector<Instance> &split, const Vocabulary &vocab, InputKind kind,
                                   const std::string &dir) {
  std::vector<ModelInput> out;
  out.reserve(split.size());
  for (const auto &inst : split) out.push_back(MakeInput(inst, vocab, kind, dir));
  return out;
}

std::vector<EvalItem> EvalItems(const std::vector<Instance> &split, const std::vector<ModelInput> &inputs) {
  std::vector<EvalItem> items;
  items.reserve(split.size());
  for (std::size_t i = 0; i < split.size(); ++i) items.push_back({split[i].id, inputs[i], split[i].events});
  return items;
}

Json PredictionJson(const std::string &id, const Prediction &p) {
  Json j = {{"id", id},
            {"raw", p.raw},
            {"events", RecordsToJson(p.records)},
            {"separator_found", p.separator_found},
            {"num_tokens", p.num_tokens}};
  if (!p.transcript.empty()) j["transcript"] = p.transcript;
  if (!p.diagnostics.clean()) j["diagnostics"] = DiagnosticsToJson(p.diagnostics);
  return j;
}

std::string RunHash(const Json &experiment, const Condition &cond, const ModelConfig &model, long seed) {
  Json j = experiment;
  j["model"] = model.ToJson();
  j["condition"] = {{"format", ToString(cond.format)}, {"with_clue", cond.with_clue}};
  j["seed"] = seed;
  return HexDigest(Fnv1a64(j.dump()));
}

RunResult ExecuteRun(const ExperimentConfig &config, const LoadedData &data, const Inputs &inputs,
                     const Json &experiment, const Condition &cond, long seed, const fs::path &dir,
                     const std::function<void(const EpochLog &)> &on_epoch) {
  RunResult r;
  r.condition = cond.name;
  r.seed = seed;
  ModelConfig model = RunModelConfig(config, cond, data.vocab.size());
  std::string hash = RunHash(experiment, cond, model, seed);

  fs::path result_path = dir / "result.json";
  if (fs::exists(result_path)) {
    try {
      Json prev = Json::parse(ReadText(result_path));
      if (prev.value("hash", "") == hash && fs::exists(dir / "model.ckpt")) {
        r.ok = true;
        r.resumed = true;
        r.report = MetricReport::FromJson(prev.at("report"));
        r.ill_formed_rate = prev.at("ill_formed_rate").get<double>();
        r.best_epoch = prev.at("best_epoch").get<int>();
        r.best_dev_trig_c = prev.at("best_dev_trig_c").get<double>();
        r.steps = prev.at("steps").get<long>();
        return r;
      }
    } catch (const std::exception &) {
      // Unreadable leftovers are simply recomputed.
    }
    fs::remove(result_path);
  }

  ExtractorSpec spec;
  spec.format = cond.format;
  spec.with_clue = cond.with_clue;
  spec.decode.max_len = config.max_len;
  spec.decode.beam = config.beam;

  std::vector<Example> train;
  train.reserve(data.train.size());
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    const Instance &inst = data.train[i];
    train.push_back({inputs.train[i], BuildTarget(data.vocab, inst.transcript, inst.events, cond.format,
                                                  cond.with_clue)});
  }
  TrainOptions opts;
  opts.epochs = config.epochs;
  opts.batch_size = config.batch_size;
  opts.optimizer = config.optimizer;
  opts.loss = config.loss;
  opts.freeze_encoder = config.freeze_encoder;
  opts.seed = static_cast<std::uint64_t>(seed);
  opts.spec = spec;
  opts.max_steps = config.max_steps;
  opts.on_epoch = on_epoch;

  ModelParameters init = ModelParameters::Initialize(model, MixSeed(static_cast<std::uint64_t>(seed), 0x1417));
  TrainResult trained = Train(std::move(init), train, data.vocab, data.schema, EvalItems(data.dev, inputs.dev), opts);
  Evaluation ev = Evaluate(trained.best, data.vocab, data.schema, EvalItems(data.test, inputs.test), spec);

  r.ok = true;
  r.report = ev.report;
  r.ill_formed_rate = ev.ill_formed_rate;
  r.best_epoch = trained.best_epoch;
  r.best_dev_trig_c = trained.best_dev_trig_c;
  r.steps = trained.steps;

  fs::create_directories(dir);
  Json meta = {{"format", ToString(cond.format)},
               {"with_clue", cond.with_clue},
               {"condition", cond.name},
               {"seed", seed},
               {"data_hash", data.hash},
               {"best_epoch", trained.best_epoch}};
  SaveCheckpoint((dir / "model.ckpt").string(), {trained.best, data.vocab, meta});
  std::string lines;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    lines += PredictionJson(data.test[i].id, ev.predictions[i]).dump() + "\n";
  }
  WriteText(dir / "predictions.jsonl", lines);
  Json history = Json::array();
  for (const auto &h : trained.history) {
    history.push_back({{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"token_nll", h.token_nll},
                       {"dev_trig_c", h.dev_trig_c}});
  }
  Json result = RunResultJson(r);
  result["hash"] = hash;
  result["condition"] = cond.name;
  result["history"] = history;
  // Written last: its presence marks the run complete.
  WriteText(result_path, result.dump(2) + "\n");
  return r;
}

}  // namespace

// --- conditions and configs ------------------------------------------------------

Condition Condition::FromString(const std::string &s) {
  Condition c;
  std::string base = s;
  auto at = base.find('@');
  if (at != std::string::npos) {
    std::string width = base.substr(at + 1);
    base = base.substr(0, at);
    int d = 0;
    auto res = std::from_chars(width.data(), width.data() + width.size(), d);
    if (res.ec != std::errc() || res.ptr != width.data() + width.size() || d <= 0) {
      throw Error("bad width in condition '" + s + "'");
    }
    c.d_model = d;
  }
  // Accept the typographic minus as well.
  for (std::size_t p; (p = base.find("\xe2\x88\x92")) != std::string::npos;) base.replace(p, 3, "-");
  auto sign = base.find_first_of("+-");
  if (sign == std::string::npos || base.substr(sign + 1) != "clue") {
    throw Error("bad condition '" + s + "' (expected <format>+clue or <format>-clue)");
  }
  c.format = FormatFromString(base.substr(0, sign));
  c.with_clue = base[sign] == '+';
  c.name = ConditionName(c.format, c.with_clue) + (c.d_model ? "@" + std::to_string(c.d_model) : "");
  return c;
}

ExperimentConfig ExperimentConfig::FromFile(const ConfigFile &f) {
  RejectUnknownKeys(f);
  ExperimentConfig c;
  c.data_dir = f.GetString("data", "dir", "");
  if (c.data_dir.empty()) throw Error("config needs data.dir");
  c.input = InputFromName(f.GetString("data", "input", "speech"));

  c.model.d_model = static_cast<int>(f.GetInt("model", "d_model", c.model.d_model));
  c.model.heads = static_cast<int>(f.GetInt("model", "heads", c.model.heads));
  c.model.ff_dim = static_cast<int>(f.GetInt("model", "ff_dim", c.model.ff_dim));
  c.model.encoder_layers = static_cast<int>(f.GetInt("model", "encoder_layers", c.model.encoder_layers));
  c.model.decoder_layers = static_cast<int>(f.GetInt("model", "decoder_layers", c.model.decoder_layers));

  c.epochs = static_cast<int>(f.GetInt("train", "epochs", c.epochs));
  c.batch_size = static_cast<int>(f.GetInt("train", "batch_size", c.batch_size));
  c.optimizer.lr = f.GetDouble("train", "lr", c.optimizer.lr);
  c.optimizer.beta1 = f.GetDouble("train", "beta1", c.optimizer.beta1);
  c.optimizer.beta2 = f.GetDouble("train", "beta2", c.optimizer.beta2);
  c.optimizer.eps = f.GetDouble("train", "eps", c.optimizer.eps);
  c.optimizer.weight_decay = f.GetDouble("train", "weight_decay", c.optimizer.weight_decay);
  c.optimizer.warmup_ratio = f.GetDouble("train", "warmup_ratio", c.optimizer.warmup_ratio);
  c.optimizer.grad_clip = f.GetDouble("train", "grad_clip", c.optimizer.grad_clip);
  c.loss.transcript_weight = f.GetDouble("train", "transcript_weight", c.loss.transcript_weight);
  c.freeze_encoder = f.GetBool("train", "freeze_encoder", c.freeze_encoder);
  c.max_steps = f.GetInt("train", "max_steps", c.max_steps);

  c.format = FormatFromString(f.GetString("experiment", "format", ToString(c.format)));
  c.with_clue = f.GetBool("experiment", "with_clue", c.with_clue);
  c.conditions = f.GetStrings("experiment", "conditions", {ConditionName(c.format, c.with_clue)});
  c.seeds = f.GetInts("experiment", "seeds", c.seeds);
  c.max_len = static_cast<int>(f.GetInt("experiment", "max_len", c.max_len));
  c.beam = static_cast<int>(f.GetInt("experiment", "beam", c.beam));
  c.grid = f.GetInts("experiment", "grid", c.grid);
  c.formats = f.GetStrings("experiment", "formats", c.formats);
  c.output = f.GetString("experiment", "output", c.output);

  if (c.conditions.empty()) throw Error("experiment.conditions is empty");
  if (c.seeds.empty()) throw Error("experiment.seeds is empty");
  for (const auto &name : c.conditions) Condition::FromString(name);
  for (const auto &name : c.formats) FormatFromString(name);
  if (c.epochs < 1 || c.batch_size < 1 || c.max_len < 1 || c.beam < 1) {
    throw Error("epochs, batch_size, max_len and beam must be positive");
  }
  return c;
}

ExperimentConfig ExperimentConfig::Load(const std::string &path) {
  ExperimentConfig c = FromFile(ConfigFile::Load(path));
  // Relative data paths are taken from the config's directory.
  fs::path base = fs::path(path).parent_path();
  if (fs::path(c.data_dir).is_relative()) c.data_dir = (base / c.data_dir).lexically_normal().string();
  if (fs::path(c.output).is_relative()) c.output = (base / c.output).lexically_normal().string();
  return c;
}

ConfigFile ExperimentConfig::ToFile() const {
  ConfigFile f;
  f.Set("data", "dir", ConfigFile::Quote(data_dir));
  f.Set("data", "input", ConfigFile::Quote(InputName(input)));
  f.Set("model", "d_model", std::to_string(model.d_model));
  f.Set("model", "heads", std::to_string(model.heads));
  f.Set("model", "ff_dim", std::to_string(model.ff_dim));
  f.Set("model", "encoder_layers", std::to_string(model.encoder_layers));
  f.Set("model", "decoder_layers", std::to_string(model.decoder_layers));
  f.Set("train", "epochs", std::to_string(epochs));
  f.Set("train", "batch_size", std::to_string(batch_size));
  f.Set("train", "lr", Num(optimizer.lr));
  f.Set("train", "beta1", Num(optimizer.beta1));
  f.Set("train", "beta2", Num(optimizer.beta2));
  f.Set("train", "eps", Num(optimizer.eps));
  f.Set("train", "weight_decay", Num(optimizer.weight_decay));
  f.Set("train", "warmup_ratio", Num(optimizer.warmup_ratio));
  f.Set("train", "grad_clip", Num(optimizer.grad_clip));
  f.Set("train", "transcript_weight", Num(loss.transcript_weight));
  f.Set("train", "freeze_encoder", freeze_encoder ? "true" : "false");
  f.Set("train", "max_steps", std::to_string(max_steps));
  f.Set("experiment", "format", ConfigFile::Quote(ToString(format)));
  f.Set("experiment", "with_clue", with_clue ? "true" : "false");
  f.Set("experiment", "conditions", ConfigFile::StringList(conditions));
  f.Set("experiment", "seeds", ConfigFile::IntList(seeds));
  f.Set("experiment", "max_len", std::to_string(max_len));
  f.Set("experiment", "beam", std::to_string(beam));
  f.Set("experiment", "grid", ConfigFile::IntList(grid));
  f.Set("experiment", "formats", ConfigFile::StringList(formats));
  f.Set("experiment", "output", ConfigFile::Quote(output));
  return f;
}

// --- data --------------------------------------------------------------------------

LoadedData LoadData(const std::string &dir) {
  LoadedData d;
  fs::path base(dir);
  std::uint64_t h = Fnv1a64(kCodeVersion);
  for (const char *name : {"schema.json", "train.jsonl", "dev.jsonl", "test.jsonl"}) {
    h = Fnv1a64(name, h);
    h = Fnv1a64(ReadText(base / name), h);
  }
  d.hash = HexDigest(h);
  d.schema = LoadSchema((base / "schema.json").string());
  d.train = LoadCorpus((base / "train.jsonl").string(), d.schema);
  d.dev = LoadCorpus((base / "dev.jsonl").string(), d.schema);
  d.test = LoadCorpus((base / "test.jsonl").string(), d.schema);
  if (d.train.empty()) throw Error("no training instances in " + dir);
  d.vocab = Vocabulary::FromInstances(d.train);
  return d;
}

ModelInput MakeInput(const Instance &inst, const Vocabulary &vocab, InputKind kind, const std::string &data_dir) {
  if (kind == InputKind::kFrames) return LoadFeatures(inst, data_dir);
  std::vector<int> ids = vocab.EncodeContent(inst.transcript);
  if (ids.empty()) ids.push_back(Vocabulary::kUnk);
  return ids;
}

// --- reports -------------------------------------------------------------------------

bool AblationReport::all_ok() const {
  return std::all_of(conditions.begin(), conditions.end(), [](const ConditionSummary &c) { return c.ok; });
}

const ConditionSummary *AblationReport::Find(const std::string &condition) const {
  for (const auto &c : conditions) {
    if (c.condition.name == condition) return &c;
  }
  return nullptr;
}

Json AblationReport::ToJson() const {
  Json conds = Json::array();
  for (const auto &c : conditions) {
    Json runs = Json::array();
    for (const auto &r : c.runs) runs.push_back(RunResultJson(r));
    Json mean, sd;
    for (MetricKind k : kAllMetricKinds) {
      mean[ToString(k)] = PrfJson(c.mean[static_cast<int>(k)]);
      sd[ToString(k)] = PrfJson(c.stddev[static_cast<int>(k)]);
    }
    Json j = {{"name", c.condition.name},
              {"format", ToString(c.condition.format)},
              {"with_clue", c.condition.with_clue},
              {"status", c.ok ? "ok" : "failed"},
              {"runs", runs},
              {"mean", mean},
              {"std", sd},
              {"ill_formed_rate", {{"mean", c.ill_formed_mean}, {"std", c.ill_formed_std}}}};
    if (c.condition.d_model) j["d_model"] = c.condition.d_model;
    conds.push_back(j);
  }
  return {{"config", config}, {"conditions", conds}};
}

int WorkerBudget() {
  const char *env = std::getenv("SPEECHEE_WORKERS");
  if (!env || !*env) return 1;
  int n = std::atoi(env);
  if (n < 1) throw Error(std::string("SPEECHEE_WORKERS must be a positive integer, got ") + env);
  return n;
}

AblationReport RunExperiment(const ExperimentConfig &config, int workers, const ExperimentHooks &hooks) {
  LoadedData data = LoadData(config.data_dir);
  Json experiment = ExperimentJson(config, data.hash);

  std::vector<Condition> conditions;
  std::set<std::string> seen;
  for (const auto &s : config.conditions) {
    Condition c = Condition::FromString(s);
    // Repeated conditions (a control) get their own run directories.
    std::string name = c.name;
    for (int k = 2; seen.count(name); ++k) name = c.name + "#" + std::to_string(k);
    c.name = name;
    seen.insert(name);
    conditions.push_back(c);
  }

  Inputs inputs;
  std::string setup_error;
  try {
    inputs.train = MakeInputs(data.train, data.vocab, config.input, config.data_dir);
    inputs.dev = MakeInputs(data.dev, data.vocab, config.input, config.data_dir);
    inputs.test = MakeInputs(data.test, data.vocab, config.input, config.data_dir);
  } catch (const std::exception &e) {
    setup_error = e.what();
  }

  struct Task {
    std::size_t condition;
    long seed;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < conditions.size(); ++c) {
    for (long seed : config.seeds) tasks.push_back({c, seed});
  }
  std::vector<RunResult> results(tasks.size());
  std::mutex hook_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < tasks.size();) {
      const Condition &cond = conditions[tasks[i].condition];
      long seed = tasks[i].seed;
      fs::path dir = fs::path(config.output) / "runs" / cond.name / ("seed-" + std::to_string(seed));
      std::function<void(const EpochLog &)> on_epoch;
      if (hooks.on_epoch) {
        on_epoch = [&, name = cond.name, seed](const EpochLog &log) {
          std::lock_guard<std::mutex> lock(hook_mutex);
          hooks.on_epoch(name, seed, log);
        };
      }
      try {
        if (!setup_error.empty()) throw Error(setup_error);
        results[i] = ExecuteRun(config, data, inputs, experiment, cond, seed, dir, on_epoch);
      } catch (const std::exception &e) {
        results[i] = RunResult{};
        results[i].condition = cond.name;
        results[i].seed = seed;
        results[i].error = e.what();
      }
      if (hooks.on_run) {
        std::lock_guard<std::mutex> lock(hook_mutex);
        hooks.on_run(results[i]);
      }
    }
  };
  int threads = std::clamp<int>(workers, 1, static_cast<int>(std::max<std::size_t>(1, tasks.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto &t : pool) t.join();
  }

  AblationReport report;
  report.config = experiment;
  report.config["seeds"] = config.seeds;
  std::size_t i = 0;
  for (const auto &cond : conditions) {
    std::vector<RunResult> runs(results.begin() + i, results.begin() + i + config.seeds.size());
    i += config.seeds.size();
    report.conditions.push_back(Summarize(cond, std::move(runs)));
  }
  fs::path out(config.output);
  WriteText(out / "report.json", report.ToJson().dump(2) + "\n");
  WriteText(out / "raw_scores.csv", RawScoresCsv(report));
  return report;
}

RunResult TrainModel(const ExperimentConfig &config, const std::string &out_dir, const ExperimentHooks &hooks) {
  LoadedData data = LoadData(config.data_dir);
  Inputs inputs;
  inputs.train = MakeInputs(data.train, data.vocab, config.input, config.data_dir);
  inputs.dev = MakeInputs(data.dev, data.vocab, config.input, config.data_dir);
  inputs.test = MakeInputs(data.test, data.vocab, config.input, config.data_dir);
  Condition cond = Condition::FromString(ConditionName(config.format, config.with_clue));
  long seed = config.seeds.front();
  std::function<void(const EpochLog &)> on_epoch;
  if (hooks.on_epoch) on_epoch = [&](const EpochLog &log) { hooks.on_epoch(cond.name, seed, log); };
  RunResult r = ExecuteRun(config, data, inputs, ExperimentJson(config, data.hash), cond, seed, out_dir, on_epoch);
  SaveSchema(data.schema, (fs::path(out_dir) / "schema.json").string());
  if (hooks.on_run) hooks.on_run(r);
  return r;
}

AblationReport CompareFormats(const ExperimentConfig &config, int workers, const ExperimentHooks &hooks) {
  ExperimentConfig c = config;
  c.conditions.clear();
  for (const auto &f : config.formats) c.conditions.push_back(ConditionName(FormatFromString(f), config.with_clue));
  AblationReport report = RunExperiment(c, workers, hooks);

  std::string csv = "condition,trig_c_f1_mean,trig_c_f1_std,arg_c_f1_mean,arg_c_f1_std,ill_formed_mean,ill_formed_std\n";
  std::vector<std::string> names;
  Series trig{"Trig-C F1", {}}, arg{"Arg-C F1", {}}, ill{"ill-formed rate", {}};
  for (const auto &s : report.conditions) {
    const PRF &tm = s.mean[static_cast<int>(MetricKind::kTrigC)], &ts = s.stddev[static_cast<int>(MetricKind::kTrigC)];
    const PRF &am = s.mean[static_cast<int>(MetricKind::kArgC)], &as = s.stddev[static_cast<int>(MetricKind::kArgC)];
    csv += s.condition.name + "," + Num(tm.f1) + "," + Num(ts.f1) + "," + Num(am.f1) + "," + Num(as.f1) + "," +
           Num(s.ill_formed_mean) + "," + Num(s.ill_formed_std) + "\n";
    names.push_back(s.condition.name);
    trig.values.push_back(tm.f1);
    arg.values.push_back(am.f1);
    ill.values.push_back(s.ill_formed_mean);
  }
  fs::path out(c.output);
  WriteText(out / "curves" / "formats.csv", csv);
  WriteText(out / "charts" / "formats.svg", BarChart("Label format comparison", names, {trig, arg, ill}));
  return report;
}

// --- output length ----------------------------------------------------------------------

std::string LengthCurveCsv(const std::vector<LengthPoint> &curve) {
  std::string out = "max_len";
  for (MetricKind k : kAllMetricKinds) {
    std::string n = ToString(k);
    out += "," + n + "_p," + n + "_r," + n + "_f1";
  }
  out += ",ill_formed_rate,mean_tokens,longest\n";
  for (const auto &p : curve) {
    out += std::to_string(p.max_len);
    for (MetricKind k : kAllMetricKinds) {
      const PRF &s = p.report.score(k);
      out += "," + Num(s.precision) + "," + Num(s.recall) + "," + Num(s.f1);
    }
    out += "," + Num(p.ill_formed_rate) + "," + Num(p.mean_tokens) + "," + std::to_string(p.longest) + "\n";
  }
  return out;
}

std::vector<LengthPoint> AblateLength(const std::string &ckpt_path, const std::string &data_dir,
                                      const std::vector<long> &grid, const std::string &output, int beam) {
  if (grid.empty()) throw Error("length grid is empty");
  for (long cap : grid) {
    if (cap < 1) throw Error("length caps must be positive");
  }
  Checkpoint ckpt = LoadCheckpoint(ckpt_path);
  if (!ckpt.meta.contains("format") || !ckpt.meta.contains("with_clue")) {
    throw Error(ckpt_path + " does not record its output format");
  }
  ExtractorSpec spec;
  spec.format = FormatFromString(ckpt.meta.at("format").get<std::string>());
  spec.with_clue = ckpt.meta.at("with_clue").get<bool>();
  spec.decode.beam = beam;

  fs::path base(data_dir);
  Schema schema = LoadSchema((base / "schema.json").string());
  std::vector<Instance> test = LoadCorpus((base / "test.jsonl").string(), schema);
  InputKind kind = ckpt.params.config().input;
  std::vector<EvalItem> items;
  for (const auto &inst : test) items.push_back({inst.id, MakeInput(inst, ckpt.vocab, kind, data_dir), inst.events});

  std::vector<LengthPoint> curve;
  for (long cap : grid) {
    spec.decode.max_len = static_cast<int>(cap);
    Evaluation ev = Evaluate(ckpt.params, ckpt.vocab, schema, items, spec);
    LengthPoint p;
    p.max_len = static_cast<int>(cap);
    p.report = ev.report;
    p.ill_formed_rate = ev.ill_formed_rate;
    double total = 0;
    for (const auto &pred : ev.predictions) {
      if (pred.num_tokens > static_cast<std::size_t>(cap)) {
        throw Error("generated " + std::to_string(pred.num_tokens) + " tokens under a cap of " + std::to_string(cap));
      }
      p.longest = std::max(p.longest, pred.num_tokens);
      total += static_cast<double>(pred.num_tokens);
    }
    p.mean_tokens = ev.predictions.empty() ? 0.0 : total / ev.predictions.size();
    curve.push_back(p);
  }

  if (!output.empty()) {
    fs::path out(output);
    WriteText(out / "curves" / "length.csv", LengthCurveCsv(curve));
    std::vector<double> xs;
    Series trig{"Trig-C F1", {}}, trig_r{"Trig-C recall", {}}, arg{"Arg-C F1", {}};
    for (const auto &p : curve) {
      xs.push_back(p.max_len);
      trig.values.push_back(p.report.score(MetricKind::kTrigC).f1);
      trig_r.values.push_back(p.report.score(MetricKind::kTrigC).recall);
      arg.values.push_back(p.report.score(MetricKind::kArgC).f1);
    }
    WriteText(out / "charts" / "length.svg", LineChart("Output length", "max_len (tokens)", xs, {trig, trig_r, arg}));
  }
  return curve;
}

}  // namespace speechee
