#include "doctest.h"
#include "fixtures.h"
#include "speechee/event_model.h"
#include "speechee/text.h"

#include <random>

using namespace speechee;

TEST_CASE("validate_record accepts the Transport event") {
  Schema s = testing::AceLikeSchema();
  EventRecord r{"Transport", "returned", {{"Destination", "Los Angeles"}}};
  CHECK(ValidateRecord(s, r).empty());
}

TEST_CASE("validate_record reports every violation without throwing") {
  Schema s = testing::AceLikeSchema();
  auto v = ValidateRecord(s, {"Flight", "flew", {}});
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == ViolationKind::kUnknownType);

  v = ValidateRecord(s, {"Transport", "", {}});
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == ViolationKind::kEmptyTrigger);

  v = ValidateRecord(s, {"Transport", "  ", {{"Attacker", "him"}, {"Origin", ""}}});
  CHECK(v.size() == 3);
}

TEST_CASE("trigger-only events are valid") {
  CHECK(ValidateRecord(testing::AceLikeSchema(), {"Elect", "elections", {}}).empty());
}

TEST_CASE("normalize_text") {
  CHECK(NormalizeText("Los  Angeles ") == "los angeles");
  CHECK(NormalizeText("") == "");
  CHECK(NormalizeText("北京") == "北京");
  CHECK(NormalizeText("北 京 a 北") == "北京 a 北");
  CHECK(NormalizeText("\t A\nB ") == "a b");
  CHECK(NormalizeText("Zoë ÉCOLE") == "zoë école");
  CHECK(NormalizeText("Hello, world!") == "hello, world!");
  CHECK(NormalizeText("Hello, world!", {.strip_punctuation = true}) == "hello world");
}

TEST_CASE("normalize_text is idempotent") {
  std::mt19937_64 rng(7);
  const std::string pieces[] = {"A", "b", " ", "  ", "\t", "Ü", "北", "京", ",", "\xff", "Ω", "\n"};
  for (int trial = 0; trial < 2000; ++trial) {
    std::string s;
    for (int k = rng() % 12; k > 0; --k) s += pieces[rng() % std::size(pieces)];
    std::string once = NormalizeText(s);
    CHECK(NormalizeText(once) == once);
    NormalizeOptions strip{.strip_punctuation = true};
    CHECK(NormalizeText(NormalizeText(s, strip), strip) == NormalizeText(s, strip));
  }
}

TEST_CASE("schema invariants") {
  Schema s = testing::AceLikeSchema();
  CHECK(s.Check().empty());
  s.roles_by_type["Ghost"] = {"Who"};
  CHECK(s.Check().size() == 1);
  Schema bad;
  bad.event_types = {"Has Space", "Paren(s)"};
  CHECK(bad.Check().size() == 2);
  Schema vocab;
  vocab.vocabulary = {"the", "<type>", "man", "<type>"};
  CHECK(vocab.Check().empty());
}

TEST_CASE("label mapping checks injectivity and single-token images") {
  LabelMapping m{{{"Life:Be-Born", "born"}, {"Life:Die", "born"}, {"Conflict:Attack", "at tack"}}};
  auto v = m.Check({"Life:Be-Born", "Life:Die", "Conflict:Attack"});
  CHECK(v.size() == 2);
  CHECK(m.Check({"Life:Be-Born"}).empty());
}

TEST_CASE("instance JSON round trip") {
  Instance inst;
  inst.id = "ace-1";
  inst.transcript = "The man returned to Los Angeles from Mexico";
  inst.events = {testing::TransportEvent()};
  inst.split = Split::kDev;
  inst.speech.audio = "audio/ace-1.wav";
  Json j = InstanceToJson(inst);
  CHECK(j["events"][0]["args"][1][0] == "Destination");
  Instance back = InstanceFromJson(j);
  CHECK(back.id == inst.id);
  CHECK(back.events == inst.events);
  CHECK(back.split == Split::kDev);
  CHECK(*back.speech.audio == "audio/ace-1.wav");
  CHECK(EventsGroundedInTranscript(back));
  back.events[0].trigger = "flew";
  CHECK_FALSE(EventsGroundedInTranscript(back));
}

TEST_CASE("utf8 helpers") {
  CHECK(SplitWords("the 北京 man") == std::vector<std::string>{"the", "北", "京", "man"});
  CHECK(CountTokens("地震了 now") == 4);
  CHECK(EditDistance(U"kitten", U"sitting") == 3);
  CHECK(EncodeUtf8(DecodeUtf8("Zoë 北京")) == "Zoë 北京");
}
