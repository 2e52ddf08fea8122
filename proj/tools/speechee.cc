// Command-line front end.  Run `speechee --help` for the subcommands.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "speechee/codec.h"
#include "speechee/dataset.h"
#include "speechee/errors.h"
#include "speechee/harness.h"
#include "speechee/metrics.h"
#include "speechee/pipeline.h"
#include "speechee/speech.h"
#include "speechee/train.h"

namespace fs = std::filesystem;
using namespace speechee;

namespace {

std::vector<Json> ReadJsonLines(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::vector<Json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::exception &e) {
      throw SerializationError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

class LineWriter {
 public:
  explicit LineWriter(const std::string &path) {
    if (!fs::path(path).parent_path().empty()) fs::create_directories(fs::path(path).parent_path());
    out_.open(path);
    if (!out_) throw IoError("cannot write " + path);
  }
  void Write(const std::string &line) { out_ << line << '\n'; }
  void Write(const Json &j) { Write(j.dump()); }

 private:
  std::ofstream out_;
};

void WriteFile(const std::string &path, const std::string &text) { LineWriter(path).Write(text); }

// Lines of {"id", "events"}; works for prediction files and gold corpora.
std::vector<IdRecords> ReadIdRecords(const std::string &path) {
  std::vector<IdRecords> out;
  for (const auto &j : ReadJsonLines(path)) {
    out.emplace_back(j.at("id").get<std::string>(), RecordsFromJson(j.value("events", Json::array())));
  }
  return out;
}

std::vector<long> ParseGrid(const std::string &s) {
  std::vector<long> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stol(item));
    } catch (const std::exception &) {
      throw Error("bad grid value '" + item + "'");
    }
  }
  return out;
}

// A checkpoint argument may name the file or the directory train wrote.
fs::path CheckpointFile(const std::string &arg) {
  fs::path p(arg);
  return fs::is_directory(p) ? p / "model.ckpt" : p;
}

std::string Fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

void PrintSummary(const MetricReport &r) {
  for (MetricKind k : kAllMetricKinds) {
    const PRF &s = r.score(k);
    std::cout << ToString(k) << "\tP " << Fmt(s.precision) << "\tR " << Fmt(s.recall) << "\tF1 " << Fmt(s.f1)
              << "\n";
  }
}

ExperimentHooks ProgressHooks() {
  ExperimentHooks h;
  h.on_epoch = [](const std::string &cond, long seed, const EpochLog &log) {
    std::cerr << cond << " seed " << seed << " epoch " << log.epoch << " loss " << Fmt(log.train_loss)
              << " token-nll " << Fmt(log.token_nll) << " dev Trig-C " << Fmt(log.dev_trig_c) << " ("
              << Fmt(log.seconds) << " s)\n";
  };
  h.on_run = [](const RunResult &r) {
    if (!r.ok) {
      std::cerr << r.condition << " seed " << r.seed << " FAILED: " << r.error << "\n";
    } else {
      std::cerr << r.condition << " seed " << r.seed << (r.resumed ? " (resumed)" : "") << " test Trig-C "
                << Fmt(r.report.score(MetricKind::kTrigC).f1) << " Arg-C "
                << Fmt(r.report.score(MetricKind::kArgC).f1) << "\n";
    }
  };
  return h;
}

int PrintReport(const AblationReport &report, const std::string &output) {
  for (const auto &c : report.conditions) {
    const PRF &t = c.mean[static_cast<int>(MetricKind::kTrigC)];
    const PRF &a = c.mean[static_cast<int>(MetricKind::kArgC)];
    std::cout << c.condition.name << (c.ok ? "" : " [failed]") << "\tTrig-C F1 " << Fmt(t.f1) << " +- "
              << Fmt(c.stddev[static_cast<int>(MetricKind::kTrigC)].f1) << "\tArg-C F1 " << Fmt(a.f1)
              << "\till-formed " << Fmt(c.ill_formed_mean) << "\n";
  }
  std::cout << "report: " << (fs::path(output) / "report.json").string() << "\n";
  return report.all_ok() ? 0 : 1;
}

// Rebases relative audio paths from `from` onto `to`.
void RebaseAudio(std::vector<Instance> *instances, const fs::path &from, const fs::path &to) {
  for (auto &inst : *instances) {
    if (!inst.speech.audio) continue;
    fs::path p(*inst.speech.audio);
    if (p.is_relative()) p = from / p;
    inst.speech.audio = fs::relative(fs::absolute(p), fs::absolute(to)).generic_string();
  }
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Speech event extraction toolkit"};
  app.require_subcommand(1);

  // codec
  auto *codec = app.add_subcommand("codec", "Linearize event records or parse sequences back");
  codec->require_subcommand(1);
  std::string format = "flat", mode = "recover", in_path, out_path, schema_path, diag_path;
  auto *ser = codec->add_subcommand("serialize", "Instances (JSONL) to one 'id<TAB>sequence' line each");
  ser->add_option("--format", format)->check(CLI::IsMember({"tree", "flat"}));
  ser->add_option("--in", in_path)->required();
  ser->add_option("--out", out_path)->required();
  auto *par = codec->add_subcommand("parse", "Sequences back to records");
  par->add_option("--format", format)->check(CLI::IsMember({"tree", "flat"}));
  par->add_option("--mode", mode)->check(CLI::IsMember({"strict", "recover"}));
  par->add_option("--schema", schema_path)->required();
  par->add_option("--in", in_path)->required();
  par->add_option("--out", out_path)->required();
  par->add_option("--diagnostics", diag_path);

  // score
  auto *score = app.add_subcommand("score", "Score predictions against gold");
  std::string pred_path, gold_path, csv_path;
  bool partial = false;
  score->add_option("--pred", pred_path)->required();
  score->add_option("--gold", gold_path)->required();
  score->add_option("--out", out_path);
  score->add_option("--csv", csv_path, "Also write one CSV row per metric");
  score->add_flag("--partial", partial, "Span components match on containment");

  // toy-corpus
  auto *toy = app.add_subcommand("toy-corpus", "Generate the synthetic grammar corpus");
  ToyCorpusOptions toy_opts;
  std::string toy_out;
  toy->add_option("--out", toy_out, "Directory for corpus.jsonl and schema.json")->required();
  toy->add_option("--train", toy_opts.train);
  toy->add_option("--dev", toy_opts.dev);
  toy->add_option("--test", toy_opts.test);
  toy->add_option("--seed", toy_opts.seed);
  toy->add_option("--multi-event-rate", toy_opts.multi_event_rate);
  toy->add_option("--no-event-rate", toy_opts.no_event_rate);

  // build-data
  auto *build = app.add_subcommand("build-data", "Filter, relabel and synthesize a corpus into train/dev/test");
  std::string map_path, adapter = "pseudo", cache_dir;
  bool filter_empty = false, filter_unreadable = false;
  int voices = 1, top_k = 0, frames_per_char = 1, workers = 0;
  long halve_dev = -1;
  build->add_option("--in", in_path)->required();
  build->add_option("--schema", schema_path)->required();
  build->add_option("--out", out_path)->required();
  build->add_flag("--filter-empty", filter_empty, "Drop instances without events");
  build->add_flag("--filter-unreadable", filter_unreadable, "Drop transcripts without letters");
  build->add_option("--map-labels", map_path, "JSON object label -> word");
  build->add_option("--top-k", top_k, "Keep only the K most frequent event types");
  build->add_option("--halve-dev", halve_dev, "Keep a seeded half of the dev split");
  build->add_option("--adapter", adapter, "pseudo, external:<cmd> or none");
  build->add_option("--voices", voices)->check(CLI::PositiveNumber);
  build->add_option("--frames-per-char", frames_per_char)->check(CLI::PositiveNumber);
  build->add_option("--cache-dir", cache_dir, "Synthesized audio (default <out>/audio)");
  build->add_option("--workers", workers)->check(CLI::PositiveNumber);

  // train / infer
  auto *train = app.add_subcommand("train", "Train one model from an experiment config");
  std::string config_path, data_dir, ckpt_arg;
  train->add_option("--config", config_path)->required();
  train->add_option("--data", data_dir, "Overrides data.dir");
  train->add_option("--out", out_path)->required();

  auto *infer = app.add_subcommand("infer", "Decode instances with a trained model");
  int max_len = 128, beam = 1;
  infer->add_option("--ckpt", ckpt_arg)->required();
  infer->add_option("--in", in_path)->required();
  infer->add_option("--out", out_path)->required();
  infer->add_option("--max-len", max_len)->check(CLI::PositiveNumber);
  infer->add_option("--beam", beam)->check(CLI::PositiveNumber);
  infer->add_option("--schema", schema_path, "Default: schema.json next to the checkpoint");

  // pipeline
  auto *pipe = app.add_subcommand("pipeline", "Cascaded ASR + text extraction baseline");
  std::string asr_spec = "oracle", text_ee = "gold", transcripts_path, report_path, miss = "empty";
  std::uint64_t seed = 0;
  pipe->add_option("--asr", asr_spec, "oracle, cer:<rate> or external:<cmd>");
  pipe->add_option("--text-ee", text_ee, "toy:<ckpt> or gold");
  pipe->add_option("--gold-miss", miss, "Gold lookup on a miss")->check(CLI::IsMember({"empty", "fuzzy"}));
  pipe->add_option("--data", in_path)->required();
  pipe->add_option("--seed", seed);
  pipe->add_option("--out", out_path)->required();
  pipe->add_option("--transcripts", transcripts_path);
  pipe->add_option("--report", report_path);
  pipe->add_option("--max-len", max_len)->check(CLI::PositiveNumber);
  pipe->add_option("--workers", workers)->check(CLI::PositiveNumber);

  // experiment
  auto *exp = app.add_subcommand("experiment", "Ablation experiments");
  exp->require_subcommand(1);
  auto *run = exp->add_subcommand("run", "Train and evaluate every condition x seed");
  run->add_option("--config", config_path)->required();
  auto *cmp = exp->add_subcommand("compare-formats", "Tree vs flat with everything else matched");
  cmp->add_option("--config", config_path)->required();
  auto *len = exp->add_subcommand("ablate-length", "Re-decode a trained model at several length caps");
  std::string grid = "16,32,48,64,96,128", curve_dir = ".";
  len->add_option("--ckpt", ckpt_arg)->required();
  len->add_option("--data", data_dir)->required();
  len->add_option("--grid", grid);
  len->add_option("--beam", beam)->check(CLI::PositiveNumber);
  len->add_option("--out", curve_dir, "Directory for curves/ and charts/");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ser) {
      Format f = FormatFromString(format);
      LineWriter out(out_path);
      for (const auto &inst : ReadCorpus(in_path)) out.Write(inst.id + "\t" + Serialize(inst.events, f).text);
      return 0;
    }

    if (*par) {
      Format f = FormatFromString(format);
      ParseMode m = ParseModeFromString(mode);
      Schema schema = LoadSchema(schema_path);
      std::ifstream in(in_path);
      if (!in) throw IoError("cannot read " + in_path);
      LineWriter out(out_path);
      std::unique_ptr<LineWriter> diag;
      if (!diag_path.empty()) diag = std::make_unique<LineWriter>(diag_path);
      std::string line;
      std::size_t lineno = 0;
      int failures = 0;
      while (std::getline(in, line)) {
        ++lineno;
        std::string id = std::to_string(lineno), seq = line;
        if (auto tab = line.find('\t'); tab != std::string::npos) {
          id = line.substr(0, tab);
          seq = line.substr(tab + 1);
        }
        ParseResult r;
        try {
          r = f == Format::kTree ? ParseTree(seq, schema, m) : ParseFlat(seq, schema);
          if (m == ParseMode::kStrict && !r.diagnostics.clean()) {
            const ParseIssue &first = r.diagnostics.issues.front();
            throw MalformedInput(first.position, first.note);
          }
        } catch (const MalformedInput &e) {
          ++failures;
          std::cerr << in_path << ":" << lineno << ": " << e.what() << "\n";
          if (diag) diag->Write(Json{{"id", id}, {"error", e.what()}, {"offset", e.offset()}});
          continue;
        }
        out.Write(Json{{"id", id}, {"events", RecordsToJson(r.records)}});
        if (diag) diag->Write(Json{{"id", id}, {"diagnostics", DiagnosticsToJson(r.diagnostics)}});
      }
      return failures ? 1 : 0;
    }

    if (*score) {
      MetricReport r = ScoreCorpus(ReadIdRecords(pred_path), ReadIdRecords(gold_path),
                                   partial ? MatchMode::kPartial : MatchMode::kExact);
      if (!out_path.empty()) WriteFile(out_path, r.ToJson().dump(2));
      if (!csv_path.empty()) {
        std::ofstream csv(csv_path);
        csv << "kind,tp,fp,fn,p,r,f1\n" << ReportToCsv(r);
      }
      PrintSummary(r);
      return 0;
    }

    if (*toy) {
      ToyCorpus corpus = GenerateToyCorpus(toy_opts);
      fs::create_directories(toy_out);
      SaveCorpus((fs::path(toy_out) / "corpus.jsonl").string(), corpus.instances);
      SaveSchema(corpus.schema, (fs::path(toy_out) / "schema.json").string());
      std::cout << corpus.instances.size() << " instances, " << corpus.schema.event_types.size()
                << " event types\n";
      return 0;
    }

    if (*build) {
      Schema schema = LoadSchema(schema_path);
      std::vector<Instance> corpus = LoadCorpus(in_path, schema);
      std::size_t loaded = corpus.size();
      if (filter_empty) corpus = FilterEmptyEvents(corpus);
      if (filter_unreadable) corpus = FilterUnreadable(corpus);
      if (!map_path.empty()) {
        LabelMapping mapping = LoadLabelMapping(map_path);
        corpus = MapLabels(corpus, mapping);
        schema = MapSchema(schema, mapping);
      }
      if (top_k > 0) corpus = FilterTopKTypes(corpus, top_k);
      if (halve_dev >= 0) corpus = HalveSplit(corpus, Split::kDev, static_cast<std::uint64_t>(halve_dev));

      fs::path out(out_path);
      fs::create_directories(out);
      if (adapter == "none") {
        RebaseAudio(&corpus, fs::path(in_path).parent_path(), out);
      } else {
        PseudoSpeechOptions pseudo;
        pseudo.frames_per_char = frames_per_char;
        std::string cache = cache_dir.empty() ? (out / "audio").string() : cache_dir;
        auto synth = MakeSynthesizer(adapter, cache, pseudo);
        SynthesisOutcome outcome =
            Synthesize(corpus, *synth, DefaultVoices(voices), workers > 0 ? workers : WorkerBudget());
        for (const auto &f : outcome.failures) std::cerr << "synthesis failed for " << f.id << ": " << f.message << "\n";
        corpus = std::move(outcome.instances);
        RebaseAudio(&corpus, fs::current_path(), out);
      }

      std::map<Split, std::vector<Instance>> parts;
      for (const auto &inst : corpus) parts[inst.split].push_back(inst);
      for (Split s : {Split::kTrain, Split::kDev, Split::kTest}) {
        SaveCorpus((out / (std::string(ToString(s)) + ".jsonl")).string(), parts[s]);
      }
      SaveSchema(schema, (out / "schema.json").string());
      CorpusStats stats = ComputeStats(corpus);
      WriteFile((out / "stats.json").string(), stats.ToJson().dump(2));
      std::cout << loaded << " loaded, " << corpus.size() << " written\n" << stats.ToJson().dump(2) << "\n";
      return 0;
    }

    if (*train) {
      ExperimentConfig c = ExperimentConfig::Load(config_path);
      if (!data_dir.empty()) c.data_dir = data_dir;
      RunResult r = TrainModel(c, out_path, ProgressHooks());
      if (!r.ok) return 1;
      PrintSummary(r.report);
      return 0;
    }

    if (*infer) {
      fs::path ckpt_file = CheckpointFile(ckpt_arg);
      Checkpoint ckpt = LoadCheckpoint(ckpt_file.string());
      Schema schema = LoadSchema(schema_path.empty() ? (ckpt_file.parent_path() / "schema.json").string() : schema_path);
      ExtractorSpec spec;
      spec.format = FormatFromString(ckpt.meta.value("format", "flat"));
      spec.with_clue = ckpt.meta.value("with_clue", true);
      spec.decode.max_len = max_len;
      spec.decode.beam = beam;
      std::string base = fs::path(in_path).parent_path().string();
      LineWriter out(out_path);
      for (const auto &inst : ReadCorpus(in_path)) {
        ModelInput input = MakeInput(inst, ckpt.vocab, ckpt.params.config().input, base);
        Prediction p = Predict(ckpt.params, ckpt.vocab, schema, input, spec);
        Json j = {{"id", inst.id}, {"events", RecordsToJson(p.records)}, {"raw", p.raw}};
        if (spec.with_clue) j["transcript"] = p.transcript;
        if (!p.diagnostics.clean()) j["diagnostics"] = DiagnosticsToJson(p.diagnostics);
        out.Write(j);
      }
      return 0;
    }

    if (*pipe) {
      std::vector<Instance> gold = ReadCorpus(in_path);
      std::string base = fs::path(in_path).parent_path().string();
      auto asr = MakeAsr(asr_spec, seed, base, (fs::temp_directory_path() / "speechee-asr").string());
      std::unique_ptr<TextEeAdapter> extractor;
      if (text_ee == "gold") {
        extractor = std::make_unique<GoldLookupTextEe>(gold, miss == "fuzzy" ? LookupMiss::kFuzzy : LookupMiss::kEmpty);
      } else if (text_ee.rfind("toy:", 0) == 0) {
        fs::path ckpt_file = CheckpointFile(text_ee.substr(4));
        Checkpoint ckpt = LoadCheckpoint(ckpt_file.string());
        Schema schema = LoadSchema((ckpt_file.parent_path() / "schema.json").string());
        ExtractorSpec spec;
        spec.format = FormatFromString(ckpt.meta.value("format", "flat"));
        spec.with_clue = ckpt.meta.value("with_clue", false);
        spec.decode.max_len = max_len;
        extractor = std::make_unique<ToySeq2SeqTextEe>(std::move(ckpt), schema, spec);
      } else {
        throw Error("unknown text extractor '" + text_ee + "' (expected toy:<ckpt> or gold)");
      }
      auto outputs = RunPipeline(gold, *asr, *extractor, workers > 0 ? workers : WorkerBudget());
      LineWriter out(out_path);
      std::unique_ptr<LineWriter> tr;
      if (!transcripts_path.empty()) tr = std::make_unique<LineWriter>(transcripts_path);
      double cer = 0;
      int errors = 0;
      for (std::size_t i = 0; i < outputs.size(); ++i) {
        out.Write(PipelineOutputToJson(outputs[i]));
        double c = CharacterErrorRate(outputs[i].transcript, gold[i].transcript);
        cer += c;
        errors += !outputs[i].error.empty();
        if (tr) tr->Write(Json{{"id", outputs[i].id}, {"transcript", outputs[i].transcript}, {"cer", c}});
      }
      MetricReport r = ScorePipeline(outputs, gold);
      if (!report_path.empty()) WriteFile(report_path, r.ToJson().dump(2));
      std::cout << "mean CER " << Fmt(outputs.empty() ? 0.0 : cer / outputs.size()) << ", " << errors
                << " failed instances\n";
      PrintSummary(r);
      return 0;
    }

    if (*run) {
      ExperimentConfig c = ExperimentConfig::Load(config_path);
      return PrintReport(RunExperiment(c, WorkerBudget(), ProgressHooks()), c.output);
    }

    if (*cmp) {
      ExperimentConfig c = ExperimentConfig::Load(config_path);
      return PrintReport(CompareFormats(c, WorkerBudget(), ProgressHooks()), c.output);
    }

    if (*len) {
      auto curve = AblateLength(CheckpointFile(ckpt_arg).string(), data_dir, ParseGrid(grid), curve_dir, beam);
      std::cout << LengthCurveCsv(curve);
      return 0;
    }
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
