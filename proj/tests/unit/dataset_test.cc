#include "doctest.h"
#include "fixtures.h"
#include "speechee/dataset.h"
#include "speechee/errors.h"
#include "speechee/random.h"
#include "speechee/text.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace speechee;
namespace fs = std::filesystem;

namespace {

fs::path Scratch(const std::string &name) {
  fs::path dir = fs::temp_directory_path() / "speechee_dataset_test";
  fs::create_directories(dir);
  return dir / name;
}

void WriteLines(const fs::path &p, const std::vector<std::string> &lines) {
  std::ofstream out(p);
  for (const auto &l : lines) out << l << '\n';
}

Instance Make(const std::string &id, const std::string &transcript, std::vector<EventRecord> events,
              Split split = Split::kTrain) {
  Instance i;
  i.id = id;
  i.transcript = transcript;
  i.events = std::move(events);
  i.split = split;
  return i;
}

std::string Words(int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s += (i ? " w" : "w") + std::to_string(i);
  return s;
}

// Random corpus mixing empty, unreadable and ordinary instances.
std::vector<Instance> RandomCorpus(Rng &rng, int n) {
  static const std::vector<std::string> transcripts = {"...", "!!!", "hello there", "北京", "  ",
                                                       "the man returned", "42", "a"};
  std::vector<Instance> out;
  for (int i = 0; i < n; ++i) {
    std::vector<EventRecord> evs;
    if (rng.Below(2)) evs.push_back(testing::TransportEvent());
    out.push_back(Make("i" + std::to_string(i), transcripts[rng.Below(transcripts.size())], evs,
                       static_cast<Split>(rng.Below(3))));
  }
  return out;
}

std::vector<std::string> Ids(const std::vector<Instance> &v) {
  std::vector<std::string> ids;
  for (const auto &i : v) ids.push_back(i.id);
  return ids;
}

// Always fails on transcripts containing "bad".
class PickyAdapter : public SynthesizerAdapter {
 public:
  std::string name() const override { return "picky"; }
  bool deterministic() const override { return true; }
  bool concurrent_safe() const override { return true; }
  SpeechRef Synthesize(const std::string &text, const VoiceConfig &voice,
                       const std::string &key) const override {
    if (text.find("bad") != std::string::npos) throw IoError("cannot say " + key);
    return PseudoSpeechAdapter().Synthesize(text, voice, key);
  }
};

}  // namespace

TEST_CASE("load_corpus reads and validates json lines") {
  Schema schema = testing::AceLikeSchema();
  auto good = Scratch("good.jsonl");
  WriteLines(good,
             {R"({"id":"a","transcript":"the man returned","events":[{"type":"Transport","trigger":"returned","args":[["Artifact","man"]]}],"split":"train"})",
              R"({"id":"b","transcript":"nothing here","events":[],"split":"dev"})", "",
              R"({"id":"c","transcript":"x","split":"test"})"});
  auto corpus = LoadCorpus(good.string(), schema);
  REQUIRE(corpus.size() == 3);
  CHECK(corpus[0].events.size() == 1);
  CHECK(corpus[1].split == Split::kDev);
  CHECK(corpus[2].split == Split::kTest);

  auto bad = Scratch("bad.jsonl");
  WriteLines(bad,
             {R"({"id":"a","transcript":"t","events":[],"split":"train"})",
              R"({"id":"b","transcript":"t","events":[{"type":"Wedding","trigger":"wed","args":[]}]})",
              R"({"id":"c","transcript":"t","events":[]})", R"({"id": broken)"});
  try {
    LoadCorpus(bad.string(), schema);
    FAIL("expected a schema violation");
  } catch (const SchemaViolation &e) {
    CHECK(e.lines() == std::vector<std::size_t>{2, 4});
  }

  auto empty = Scratch("empty.jsonl");
  WriteLines(empty, {});
  CHECK(LoadCorpus(empty.string(), schema).empty());
  CHECK_THROWS_AS(LoadCorpus(Scratch("absent.jsonl").string(), schema), IoError);
}

TEST_CASE("corpus files round trip") {
  Rng rng(3);
  auto corpus = RandomCorpus(rng, 30);
  corpus[0].speech.pseudo_voice = "voice1";
  corpus[0].speech.pseudo_seed = 99;
  corpus[0].speech.pseudo_frames_per_char = 2;
  corpus[0].speech.seconds = 1.5;
  auto path = Scratch("rt.jsonl");
  SaveCorpus(path.string(), corpus);
  auto back = ReadCorpus(path.string());
  REQUIRE(back.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(InstanceToJson(back[i]) == InstanceToJson(corpus[i]));
  }
  CHECK(back[0].speech.pseudo_frames_per_char == 2);
}

TEST_CASE("filter_empty_events at ACE05-like proportions") {
  std::vector<Instance> corpus;
  for (int i = 0; i < 18908; ++i) {
    std::vector<EventRecord> evs;
    if (i % 5 == 0 && i / 5 < 3723) evs.push_back(testing::TransportEvent());
    corpus.push_back(Make("x" + std::to_string(i), "some words", evs, static_cast<Split>(i % 3)));
  }
  auto kept = FilterEmptyEvents(corpus);
  CHECK(kept.size() == 3723);
  for (std::size_t k = 1; k < kept.size(); ++k) {
    CHECK(std::stoi(kept[k - 1].id.substr(1)) < std::stoi(kept[k].id.substr(1)));
  }
  for (const auto &i : kept) CHECK(i.split == static_cast<Split>(std::stoi(i.id.substr(1)) % 3));

  auto full = FilterEmptyEvents(kept);
  CHECK(Ids(full) == Ids(kept));
  CHECK(FilterEmptyEvents({Make("a", "t", {}), Make("b", "u", {})}).empty());
}

TEST_CASE("filter_unreadable drops transcripts without letters") {
  auto kept = FilterUnreadable({Make("a", "...", {}), Make("b", "hello", {}), Make("c", "!!!", {}),
                                Make("d", "北京", {}), Make("e", "", {}), Make("f", "Zoë!", {}),
                                Make("g", "2024", {})});
  CHECK(Ids(kept) == std::vector<std::string>{"b", "d", "f"});
}

TEST_CASE("filters commute and keep splits") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    auto corpus = RandomCorpus(rng, 40);
    auto a = FilterUnreadable(FilterEmptyEvents(corpus));
    auto b = FilterEmptyEvents(FilterUnreadable(corpus));
    CHECK(Ids(a) == Ids(b));
    std::map<std::string, Split> split_of;
    for (const auto &i : corpus) split_of[i.id] = i.split;
    for (const auto &i : a) CHECK(i.split == split_of[i.id]);
  }
}

TEST_CASE("map_labels rewrites only the event type") {
  EventRecord born{"Life:Be-Born", "born", {{"Person", "Zoë"}, {"Place", "北京"}}};
  EventRecord move{"Movement:Transport", "returned", {{"Artifact", "man"}}};
  LabelMapping m;
  m.pairs = {{"Life:Be-Born", "born"}, {"Movement:Transport", "transport"}};
  auto out = MapLabels({Make("a", "t", {born, move})}, m);
  REQUIRE(out[0].events.size() == 2);
  CHECK(out[0].events[0].event_type == "born");
  CHECK(out[0].events[1].event_type == "transport");
  for (int k = 0; k < 2; ++k) {
    const EventRecord &before = k ? move : born;
    CHECK(out[0].events[k].trigger == before.trigger);
    CHECK(out[0].events[k].arguments == before.arguments);
  }

  // Images must be colon-free, so identity applies to already-flat labels.
  LabelMapping identity;
  identity.pairs = {{"born", "born"}, {"transport", "transport"}};
  auto same = MapLabels(out, identity);
  CHECK(same[0].events == out[0].events);

  LabelMapping partial;
  partial.pairs = {{"Life:Be-Born", "born"}};
  try {
    MapLabels({Make("a", "t", {born, move}), Make("b", "t", {EventRecord{"Conflict:Attack", "hit", {}}})},
              partial);
    FAIL("expected a missing mapping");
  } catch (const MissingMapping &e) {
    CHECK(e.types() == std::vector<std::string>{"Conflict:Attack", "Movement:Transport"});
  }

  Schema s;
  s.event_types = {"Life:Be-Born"};
  s.roles_by_type["Life:Be-Born"] = {"Person", "Place"};
  Schema mapped = MapSchema(s, m);
  CHECK(mapped.event_types == std::set<std::string>{"born"});
  CHECK(mapped.roles_by_type.at("born") == std::set<std::string>{"Person", "Place"});
}

TEST_CASE("synthesize duplicates per voice and collects failures") {
  std::vector<Instance> corpus;
  for (int i = 0; i < 10; ++i) corpus.push_back(Make("u" + std::to_string(i), Words(i + 1), {}));
  PseudoSpeechAdapter pseudo;
  auto two = Synthesize(corpus, pseudo, DefaultVoices(2));
  CHECK(two.instances.size() == 20);
  CHECK(two.failures.empty());
  std::set<std::string> ids;
  for (const auto &i : two.instances) ids.insert(i.id);
  CHECK(ids.size() == 20);
  CHECK(ids.count("u3#voice1") == 1);

  auto one = Synthesize(corpus, pseudo, DefaultVoices(1));
  CHECK(one.instances[4].id == "u4");
  CHECK(Synthesize({}, pseudo, DefaultVoices(2)).instances.empty());

  corpus[2].transcript = "a bad line";
  corpus[7].transcript = "bad too";
  auto partial = Synthesize(corpus, PickyAdapter(), DefaultVoices(1), 3);
  CHECK(partial.instances.size() == 8);
  REQUIRE(partial.failures.size() == 2);
  CHECK(partial.failures[0].id == "u2");
  CHECK(partial.failures[1].id == "u7");

  auto serial = Synthesize(corpus, PickyAdapter(), DefaultVoices(2), 1);
  auto threaded = Synthesize(corpus, PickyAdapter(), DefaultVoices(2), 4);
  CHECK(Ids(serial.instances) == Ids(threaded.instances));
}

TEST_CASE("pseudo-speech is deterministic with affine duration") {
  PseudoSpeechOptions o;
  auto a = PseudoSpeechFeatures("the man returned", "voice0", 5, o);
  auto b = PseudoSpeechFeatures("the man returned", "voice0", 5, o);
  CHECK((a.frames.array() == b.frames.array()).all());
  CHECK(a.num_frames() == 16);
  CHECK(a.frames.cols() == kMelChannels);
  auto other_voice = PseudoSpeechFeatures("the man returned", "voice1", 5, o);
  CHECK_FALSE((a.frames.array() == other_voice.frames.array()).all());

  for (int fpc : {1, 2, 3}) {
    o.frames_per_char = fpc;
    for (const std::string text : {"a", "hello world", "北京欢迎你"}) {
      auto f = PseudoSpeechFeatures(text, "v", 1, o);
      long chars = static_cast<long>(DecodeUtf8(text).size());
      CHECK(f.num_frames() == fpc * chars);
      CHECK(f.seconds() == doctest::Approx(fpc * chars / 100.0));
      CHECK(PseudoSpeechSeconds(text, fpc) == doctest::Approx(f.seconds()));
    }
  }
  CHECK(PseudoSpeechFeatures("", "v", 1).num_frames() == 1);

  // Same character, same neighbourhood in feature space.
  auto s = PseudoSpeechFeatures("aab", "v", 1);
  double same = (s.frames.row(0) - s.frames.row(1)).norm();
  double diff = (s.frames.row(0) - s.frames.row(2)).norm();
  CHECK(same < diff);
}

TEST_CASE("compute_stats averages over the corpus") {
  auto s = ComputeStats({Make("a", Words(20), {}), Make("b", Words(28), {}, Split::kDev)});
  CHECK(s.avg_tokens == 24.0);
  CHECK(s.split_sizes.at("train") == 1);
  CHECK(s.split_sizes.at("dev") == 1);
  CHECK(s.split_sizes.at("test") == 0);
  CHECK_FALSE(s.avg_audio_seconds);

  Instance one = Make("a", Words(7), {testing::TransportEvent()});
  one.speech.seconds = 2.5;
  auto single = ComputeStats({one});
  CHECK(single.avg_tokens == 7.0);
  CHECK(*single.avg_audio_seconds == 2.5);
  CHECK(single.n_types == 1);

  CHECK(ComputeStats({Make("c", "北京欢迎你", {})}).avg_tokens == 5.0);
}

TEST_CASE("stats reproduce the Speech-ACE05 row") {
  // 33 types, 17,160 / 919 / 829 instances, 23.4 tokens and 8.1 s on average.
  std::vector<Instance> corpus;
  const int sizes[3] = {17160, 919, 829};
  int n = 0;
  for (int split = 0; split < 3; ++split) {
    for (int k = 0; k < sizes[split]; ++k, ++n) {
      Instance i = Make("ace" + std::to_string(n), Words(n % 5 < 3 ? 23 : 24),
                        {EventRecord{"Type" + std::to_string(n % 33), "t", {}}}, static_cast<Split>(split));
      i.speech.seconds = n % 10 == 0 ? 9.0 : 8.0;
      corpus.push_back(std::move(i));
    }
  }
  auto s = ComputeStats(corpus);
  CHECK(s.n_types == 33);
  CHECK(std::round(s.avg_tokens * 10) / 10 == 23.4);
  CHECK(std::round(*s.avg_audio_seconds * 10) / 10 == 8.1);
  CHECK(s.split_sizes.at("train") == 17160);
  CHECK(s.split_sizes.at("dev") == 919);
  CHECK(s.split_sizes.at("test") == 829);
  CHECK(s.size == 18908);
  Json j = s.ToJson();
  CHECK(j.at("types") == 33);
  CHECK(j.at("train") == 17160);
}

TEST_CASE("dev halving is seeded and leaves other splits alone") {
  std::vector<Instance> corpus;
  for (int i = 0; i < 101; ++i) corpus.push_back(Make("d" + std::to_string(i), "t", {}, static_cast<Split>(i % 3)));
  auto a = HalveSplit(corpus, Split::kDev, 4);
  auto b = HalveSplit(corpus, Split::kDev, 4);
  auto c = HalveSplit(corpus, Split::kDev, 5);
  CHECK(Ids(a) == Ids(b));
  CHECK(Ids(a) != Ids(c));
  auto stats = ComputeStats(a);
  CHECK(stats.split_sizes.at("dev") == 17);  // 33 dev instances, half rounded up
  CHECK(stats.split_sizes.at("train") == 34);
  CHECK(stats.split_sizes.at("test") == 33);
}

TEST_CASE("top-k type filter keeps the most frequent types") {
  auto ev = [](const std::string &t) { return EventRecord{t, "x", {}}; };
  std::vector<Instance> corpus = {Make("a", "t", {ev("A"), ev("B")}), Make("b", "t", {ev("A")}),
                                  Make("c", "t", {ev("C")}), Make("d", "t", {ev("B"), ev("A")}),
                                  Make("e", "t", {})};
  CHECK(TopKTypes(corpus, 2) == std::vector<std::string>{"A", "B"});
  auto out = FilterTopKTypes(corpus, 1);
  CHECK(Ids(out) == std::vector<std::string>{"a", "b", "d"});
  for (const auto &i : out) {
    REQUIRE(i.events.size() == 1);
    CHECK(i.events[0].event_type == "A");
  }
  CHECK(Ids(FilterTopKTypes(corpus, 10)) == std::vector<std::string>{"a", "b", "c", "d"});
}

TEST_CASE("toy corpus stays within its grammar") {
  ToyCorpusOptions o;
  o.train = 500;
  o.dev = 50;
  o.test = 50;
  o.seed = 9;
  ToyCorpus tc = GenerateToyCorpus(o);
  CHECK(tc.instances.size() == 600);
  CHECK(tc.schema.event_types.size() <= 8);
  CHECK(tc.schema.Check().empty());
  std::set<std::string> words;
  long with_events = 0, multi = 0;
  for (const auto &inst : tc.instances) {
    for (const auto &w : SplitWords(inst.transcript)) words.insert(w);
    for (const auto &ev : inst.events) CHECK(ValidateRecord(tc.schema, ev).empty());
    CHECK(EventsGroundedInTranscript(inst));
    with_events += !inst.events.empty();
    multi += inst.events.size() > 1;
  }
  CHECK(words.size() <= 50);
  CHECK(with_events > 400);
  CHECK(multi > 50);
  CHECK(ComputeStats(tc.instances).split_sizes.at("dev") == 50);

  ToyCorpus again = GenerateToyCorpus(o);
  for (std::size_t i = 0; i < tc.instances.size(); ++i) {
    CHECK(InstanceToJson(again.instances[i]) == InstanceToJson(tc.instances[i]));
  }
}
