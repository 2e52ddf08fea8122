#include "doctest.h"
#include "speechee/config.h"
#include "speechee/errors.h"

using namespace speechee;

TEST_CASE("typed values from a flat config") {
  ConfigFile c = ConfigFile::Parse(R"(
# top comment
name = "toy # not a comment"

[model]
d_model = 32   # trailing comment
lr = 2e-3
tied = false

[experiment]
conditions = ["flat+clue", "flat-clue"]
seeds = [1, 2, 3]
empty = []
)");
  CHECK(c.GetString("", "name", "") == "toy # not a comment");
  CHECK(c.GetInt("model", "d_model", 0) == 32);
  CHECK(c.GetDouble("model", "lr", 0) == 2e-3);
  CHECK(c.GetBool("model", "tied", true) == false);
  CHECK(c.GetStrings("experiment", "conditions", {}) == std::vector<std::string>{"flat+clue", "flat-clue"});
  CHECK(c.GetInts("experiment", "seeds", {}) == std::vector<long>{1, 2, 3});
  CHECK(c.GetInts("experiment", "empty", {7}).empty());
  CHECK(c.GetInt("model", "missing", 9) == 9);
  CHECK_FALSE(c.Has("train", "epochs"));
}

TEST_CASE("type mismatches and unsupported syntax are errors") {
  ConfigFile c = ConfigFile::Parse("[a]\nx = 1.5\ns = abc\nb = yes\n");
  CHECK_THROWS_AS(c.GetInt("a", "x", 0), Error);
  CHECK_THROWS_AS(c.GetString("a", "s", ""), Error);
  CHECK_THROWS_AS(c.GetBool("a", "b", false), Error);
  CHECK_THROWS_AS(ConfigFile::Parse("[a.b]\nx = 1\n"), Error);
  CHECK_THROWS_AS(ConfigFile::Parse("[a]\nx.y = 1\n"), Error);
  CHECK_THROWS_AS(ConfigFile::Parse("[a]\nx = { y = 1 }\n"), Error);
  CHECK_THROWS_AS(ConfigFile::Parse("[a]\nx = [1,\n 2]\n"), Error);
  CHECK_THROWS_AS(ConfigFile::Parse("[a]\njust a line\n"), Error);
  CHECK_THROWS_AS(ConfigFile::Load("/nonexistent/cfg.toml"), IoError);
}

TEST_CASE("written configs read back identically") {
  ConfigFile c;
  c.Set("", "title", ConfigFile::Quote("quote \" and \\ slash"));
  c.Set("data", "dir", ConfigFile::Quote("/tmp/x"));
  c.Set("experiment", "seeds", ConfigFile::IntList({0, 5}));
  c.Set("experiment", "formats", ConfigFile::StringList({"tree", "flat"}));
  c.Set("empty", "n", "1");
  ConfigFile back = ConfigFile::Parse(c.ToString());
  CHECK(back.ToString() == c.ToString());
  CHECK(back.GetString("", "title", "") == "quote \" and \\ slash");
  CHECK(back.GetInts("experiment", "seeds", {}) == std::vector<long>{0, 5});
  CHECK(back.GetStrings("experiment", "formats", {}) == std::vector<std::string>{"tree", "flat"});
}
