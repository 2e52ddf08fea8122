#include "speechee/dataset.h"

#include <algorithm>
#include <fstream>
#include <future>
#include <set>

#include "speechee/errors.h"
#include "speechee/random.h"
#include "speechee/text.h"

namespace speechee {

namespace {

std::vector<Instance> ParseCorpusFile(const std::string &path, const Schema *schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus " + path);
  std::vector<Instance> out;
  std::vector<std::size_t> bad_lines;
  std::string first_problem;
  std::string line;
  std::size_t lineno = 0;
  auto complain = [&](const std::string &msg) {
    bad_lines.push_back(lineno);
    if (first_problem.empty()) first_problem = "line " + std::to_string(lineno) + ": " + msg;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Instance inst;
    try {
      inst = InstanceFromJson(Json::parse(line));
    } catch (const std::exception &e) {
      complain(e.what());
      continue;
    }
    if (schema) {
      bool ok = true;
      for (const auto &ev : inst.events) {
        auto v = ValidateRecord(*schema, ev);
        if (!v.empty()) {
          complain(std::string(ToString(v.front().kind)) + ": " + v.front().detail);
          ok = false;
          break;
        }
      }
      if (!ok) continue;
    }
    out.push_back(std::move(inst));
  }
  if (!bad_lines.empty()) {
    throw SchemaViolation(bad_lines, path + ": " + std::to_string(bad_lines.size()) +
                                         " invalid line(s); first at " + first_problem);
  }
  return out;
}

}  // namespace

std::vector<Instance> LoadCorpus(const std::string &path, const Schema &schema) {
  return ParseCorpusFile(path, &schema);
}

std::vector<Instance> ReadCorpus(const std::string &path) { return ParseCorpusFile(path, nullptr); }

void SaveCorpus(const std::string &path, const std::vector<Instance> &instances) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto &inst : instances) out << InstanceToJson(inst).dump() << '\n';
  if (!out) throw IoError("write failed for " + path);
}

std::vector<Instance> FilterEmptyEvents(const std::vector<Instance> &instances) {
  std::vector<Instance> out;
  std::copy_if(instances.begin(), instances.end(), std::back_inserter(out),
               [](const Instance &i) { return !i.events.empty(); });
  return out;
}

bool IsReadable(const std::string &transcript) {
  for (char32_t cp : DecodeUtf8(NormalizeText(transcript))) {
    if (IsLetterOrIdeograph(cp)) return true;
  }
  return false;
}

std::vector<Instance> FilterUnreadable(const std::vector<Instance> &instances) {
  std::vector<Instance> out;
  std::copy_if(instances.begin(), instances.end(), std::back_inserter(out),
               [](const Instance &i) { return IsReadable(i.transcript); });
  return out;
}

std::vector<Instance> MapLabels(const std::vector<Instance> &instances, const LabelMapping &mapping) {
  std::set<std::string> missing, in_use;
  for (const auto &inst : instances) {
    for (const auto &ev : inst.events) {
      in_use.insert(ev.event_type);
      if (!mapping.pairs.count(ev.event_type)) missing.insert(ev.event_type);
    }
  }
  if (!missing.empty()) throw MissingMapping({missing.begin(), missing.end()});
  auto problems = mapping.Check(in_use);
  if (!problems.empty()) throw Error("invalid label mapping: " + problems.front());
  std::vector<Instance> out = instances;
  for (auto &inst : out) {
    for (auto &ev : inst.events) ev.event_type = mapping.pairs.at(ev.event_type);
  }
  return out;
}

Schema MapSchema(const Schema &schema, const LabelMapping &mapping) {
  Schema out;
  out.vocabulary = schema.vocabulary;
  for (const auto &t : schema.event_types) {
    auto it = mapping.pairs.find(t);
    const std::string &name = it == mapping.pairs.end() ? t : it->second;
    out.event_types.insert(name);
    auto roles = schema.roles_by_type.find(t);
    if (roles != schema.roles_by_type.end()) {
      out.roles_by_type[name].insert(roles->second.begin(), roles->second.end());
    }
  }
  return out;
}

SynthesisOutcome Synthesize(const std::vector<Instance> &instances, const SynthesizerAdapter &adapter,
                            const std::vector<VoiceConfig> &voices, int workers) {
  if (voices.empty()) throw Error("at least one voice is required");
  struct Job {
    const Instance *source;
    const VoiceConfig *voice;
  };
  std::vector<Job> jobs;
  for (const auto &inst : instances) {
    for (const auto &v : voices) jobs.push_back({&inst, &v});
  }
  std::vector<std::optional<Instance>> done(jobs.size());
  std::vector<std::string> errors(jobs.size());

  auto run = [&](std::size_t i) {
    const Job &job = jobs[i];
    Instance out = *job.source;
    if (voices.size() > 1) out.id += "#" + job.voice->name;
    try {
      out.speech = adapter.Synthesize(out.transcript, *job.voice, out.id);
      done[i] = std::move(out);
    } catch (const std::exception &e) {
      errors[i] = e.what();
    }
  };
  int threads = adapter.concurrent_safe() ? std::max(1, workers) : 1;
  if (threads == 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) run(i);
  } else {
    std::vector<std::future<void>> futures;
    for (int t = 0; t < threads; ++t) {
      futures.push_back(std::async(std::launch::async, [&, t] {
        for (std::size_t i = t; i < jobs.size(); i += threads) run(i);
      }));
    }
    for (auto &f : futures) f.get();
  }

  SynthesisOutcome outcome;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (done[i]) {
      outcome.instances.push_back(std::move(*done[i]));
    } else {
      std::string id = jobs[i].source->id;
      if (voices.size() > 1) id += "#" + jobs[i].voice->name;
      outcome.failures.push_back({id, errors[i]});
    }
  }
  return outcome;
}

Json CorpusStats::ToJson() const {
  Json j = {{"types", n_types},
            {"train", split_sizes.count("train") ? split_sizes.at("train") : 0},
            {"dev", split_sizes.count("dev") ? split_sizes.at("dev") : 0},
            {"test", split_sizes.count("test") ? split_sizes.at("test") : 0},
            {"avg_tokens", avg_tokens},
            {"size", size}};
  if (avg_audio_seconds) j["avg_audio_seconds"] = *avg_audio_seconds;
  return j;
}

CorpusStats ComputeStats(const std::vector<Instance> &instances) {
  CorpusStats s;
  s.size = static_cast<long>(instances.size());
  for (const char *name : {"train", "dev", "test"}) s.split_sizes[name] = 0;
  std::set<std::string> types;
  double tokens = 0, seconds = 0;
  bool all_audio = !instances.empty();
  for (const auto &inst : instances) {
    ++s.split_sizes[ToString(inst.split)];
    for (const auto &ev : inst.events) types.insert(ev.event_type);
    tokens += static_cast<double>(CountTokens(inst.transcript));
    if (inst.speech.seconds) {
      seconds += *inst.speech.seconds;
    } else if (inst.speech.features) {
      seconds += inst.speech.features->seconds();
    } else {
      all_audio = false;
    }
  }
  s.n_types = static_cast<long>(types.size());
  if (!instances.empty()) {
    s.avg_tokens = tokens / static_cast<double>(instances.size());
    if (all_audio) s.avg_audio_seconds = seconds / static_cast<double>(instances.size());
  }
  return s;
}

std::vector<Instance> HalveSplit(const std::vector<Instance> &instances, Split split,
                                 std::uint64_t seed) {
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (instances[i].split == split) members.push_back(i);
  }
  Rng rng(MixSeed(seed, 0x68616c66ULL));
  rng.Shuffle(members);
  std::vector<bool> keep(instances.size(), true);
  for (std::size_t k = (members.size() + 1) / 2; k < members.size(); ++k) keep[members[k]] = false;
  std::vector<Instance> out;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (keep[i]) out.push_back(instances[i]);
  }
  return out;
}

std::vector<std::string> TopKTypes(const std::vector<Instance> &instances, int k) {
  std::map<std::string, long> freq;
  for (const auto &inst : instances) {
    for (const auto &ev : inst.events) ++freq[ev.event_type];
  }
  std::vector<std::pair<std::string, long>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto &a, const auto &b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (int i = 0; i < k && i < static_cast<int>(ranked.size()); ++i) out.push_back(ranked[i].first);
  return out;
}

std::vector<Instance> FilterTopKTypes(const std::vector<Instance> &instances, int k) {
  auto top = TopKTypes(instances, k);
  std::set<std::string> keep(top.begin(), top.end());
  std::vector<Instance> out;
  for (const auto &inst : instances) {
    Instance copy = inst;
    copy.events.clear();
    for (const auto &ev : inst.events) {
      if (keep.count(ev.event_type)) copy.events.push_back(ev);
    }
    if (!copy.events.empty()) out.push_back(std::move(copy));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic grammar

namespace {

struct Clause {
  std::string text;
  std::optional<EventRecord> event;
};

const std::vector<std::string> kPeople = {"man", "woman", "soldier", "police", "king", "judge",
                                          "army", "leader"};
const std::vector<std::string> kPlaces = {"city", "village", "prison", "court", "border", "house"};

class Grammar {
 public:
  explicit Grammar(Rng &rng) : rng_(rng) {}

  const std::string &Pick(const std::vector<std::string> &v) { return v[rng_.Below(v.size())]; }
  bool Coin(double p) { return rng_.Uniform() < p; }

  std::string Other(const std::vector<std::string> &v, const std::string &not_this) {
    std::string w;
    do {
      w = Pick(v);
    } while (w == not_this);
    return w;
  }

  // Optional "in the <place>" tail.
  void MaybePlace(Clause &c, const std::string &role, double p = 0.4) {
    if (!Coin(p)) return;
    std::string place = Pick(kPlaces);
    c.text += " in the " + place;
    c.event->arguments.push_back({role, place});
  }

  Clause EventClause() {
    Clause c;
    switch (rng_.Below(8)) {
      case 0: {  // Attack
        std::string a = Pick(kPeople), trig = Pick({"attacked", "bombed"});
        std::string t = Coin(0.5) ? Other(kPeople, a) : Pick(kPlaces);
        if (Coin(0.3)) {
          c.text = "the " + t + " was " + trig + " by the " + a;
          c.event = EventRecord{"Attack", trig, {{"Target", t}, {"Attacker", a}}};
        } else {
          c.text = "the " + a + " " + trig + " the " + t;
          c.event = EventRecord{"Attack", trig, {{"Attacker", a}, {"Target", t}}};
        }
        MaybePlace(c, "Place", 0.3);
        break;
      }
      case 1: {  // Arrest
        std::string trig = Pick({"arrested", "detained"});
        std::string agent = Coin(0.6) ? "police" : Pick(kPeople);
        std::string p = Other(kPeople, agent);
        if (Coin(0.3)) {
          c.text = "the " + p + " was " + trig + " by the " + agent;
          c.event = EventRecord{"Arrest", trig, {{"Person", p}, {"Agent", agent}}};
        } else {
          c.text = "the " + agent + " " + trig + " the " + p;
          c.event = EventRecord{"Arrest", trig, {{"Agent", agent}, {"Person", p}}};
        }
        MaybePlace(c, "Place");
        break;
      }
      case 2: {  // Transport
        std::string a = Pick(kPeople), trig = Pick({"moved", "traveled"});
        std::string from = Pick(kPlaces), to = Other(kPlaces, from);
        c.event = EventRecord{"Transport", trig, {{"Artifact", a}}};
        c.text = "the " + a + " " + trig;
        if (Coin(0.6)) {
          c.text += " from the " + from;
          c.event->arguments.push_back({"Origin", from});
        }
        c.text += " to the " + to;
        c.event->arguments.push_back({"Destination", to});
        break;
      }
      case 3: {  // Elect
        std::string e = Pick({"army", "village", "city"}), trig = Pick({"elected", "chose"});
        std::string p = Pick({"leader", "king", "judge", "woman", "man"});
        c.text = "the " + e + " " + trig + " the " + p;
        c.event = EventRecord{"Elect", trig, {{"Entity", e}, {"Person", p}}};
        break;
      }
      case 4: {  // Die
        std::string v = Pick(kPeople), trig = Pick({"died", "perished"});
        c.text = "the " + v + " " + trig;
        c.event = EventRecord{"Die", trig, {{"Victim", v}}};
        MaybePlace(c, "Place", 0.6);
        break;
      }
      case 5: {  // Meet
        std::string a = Pick(kPeople), trig = Pick({"met", "visited"});
        std::string b = Other(kPeople, a);
        c.text = "the " + a + " " + trig + " the " + b;
        c.event = EventRecord{"Meet", trig, {{"Entity", a}, {"Entity", b}}};
        MaybePlace(c, "Place");
        break;
      }
      case 6: {  // Sentence
        std::string trig = Pick({"sentenced", "convicted"});
        std::string d = Other(kPeople, "judge");
        std::string adj = Coin(0.7) ? "judge" : "court";
        c.text = "the " + adj + " " + trig + " the " + d;
        c.event = EventRecord{"Sentence", trig, {{"Adjudicator", adj}, {"Defendant", d}}};
        break;
      }
      default: {  // Marry
        std::string a = Pick({"man", "king", "leader", "soldier"}), trig = Pick({"married", "wed"});
        std::string b = Pick({"woman", "judge"});
        c.text = "the " + a + " " + trig + " the " + b;
        c.event = EventRecord{"Marry", trig, {{"Person", a}, {"Person", b}}};
        MaybePlace(c, "Place", 0.3);
        break;
      }
    }
    return c;
  }

  Clause PlainClause() {
    std::string verb = Pick({"saw", "liked"});
    std::string obj = Coin(0.5) ? Pick(kPeople) : Pick(kPlaces);
    return {"the " + Pick(kPeople) + " " + verb + " the " + obj, std::nullopt};
  }

 private:
  Rng &rng_;
};

Schema ToySchema() {
  Schema s;
  std::map<std::string, std::set<std::string>> roles = {
      {"Attack", {"Attacker", "Target", "Place"}},
      {"Arrest", {"Agent", "Person", "Place"}},
      {"Transport", {"Artifact", "Origin", "Destination"}},
      {"Elect", {"Entity", "Person"}},
      {"Die", {"Victim", "Place"}},
      {"Meet", {"Entity", "Place"}},
      {"Sentence", {"Adjudicator", "Defendant"}},
      {"Marry", {"Person", "Place"}},
  };
  for (auto &[t, r] : roles) {
    s.event_types.insert(t);
    s.roles_by_type[t] = r;
  }
  return s;
}

}  // namespace

ToyCorpus GenerateToyCorpus(const ToyCorpusOptions &opts) {
  ToyCorpus corpus;
  corpus.schema = ToySchema();
  Rng rng(MixSeed(opts.seed, 0x746f79ULL));
  Grammar g(rng);
  auto make = [&](Split split, int n) {
    for (int i = 0; i < n; ++i) {
      Instance inst;
      inst.id = std::string(ToString(split)) + "-" + std::to_string(i);
      inst.split = split;
      std::vector<Clause> clauses;
      double r = rng.Uniform();
      if (r < opts.no_event_rate) {
        clauses.push_back(g.PlainClause());
      } else if (r < opts.no_event_rate + opts.multi_event_rate) {
        clauses.push_back(g.EventClause());
        clauses.push_back(g.EventClause());
      } else {
        clauses.push_back(g.EventClause());
        if (g.Coin(0.15)) clauses.push_back(g.PlainClause());
      }
      if (g.Coin(0.2)) clauses.front().text = "yesterday " + clauses.front().text;
      for (std::size_t c = 0; c < clauses.size(); ++c) {
        if (c) inst.transcript += " and ";
        inst.transcript += clauses[c].text;
        if (clauses[c].event) inst.events.push_back(*clauses[c].event);
      }
      corpus.instances.push_back(std::move(inst));
    }
  };
  make(Split::kTrain, opts.train);
  make(Split::kDev, opts.dev);
  make(Split::kTest, opts.test);
  return corpus;
}

}  // namespace speechee
