#include <doctest.h>

#include "loraudio/config.hpp"

using namespace loraudio;

TEST_CASE("kv parser handles comments, blanks, trimming and types") {
  auto kv = KeyValueConfig::parse_text(
      "# comment\n"
      "\n"
      "  a = 3 \n"
      "b=hello world\n"
      "c = 2.5\n"
      "d = true\n"
      "e = x, y ,z\n"
      "f = 1,2,3\n");
  CHECK(kv.get_int("a", 0) == 3);
  CHECK(kv.get_string("b", "") == "hello world");
  CHECK(kv.get_double("c", 0.0) == 2.5);
  CHECK(kv.get_bool("d", false));
  CHECK(kv.get_list("e", {}) == std::vector<std::string>{"x", "y", "z"});
  CHECK(kv.get_int_list("f", {}) == std::vector<int>{1, 2, 3});
  CHECK(kv.get_int("missing", 7) == 7);
  kv.reject_unknown();
}

TEST_CASE("kv parser rejects malformed lines, duplicates and bad values") {
  CHECK_THROWS_AS(KeyValueConfig::parse_text("novalue\n"), ValidationError);
  CHECK_THROWS_AS(KeyValueConfig::parse_text("= 3\n"), ValidationError);
  CHECK_THROWS_AS(KeyValueConfig::parse_text("a=1\na=2\n"), ValidationError);

  auto kv = KeyValueConfig::parse_text("x = notanint\ny = maybe\nz = 1.2.3\n");
  CHECK_THROWS_AS(kv.get_int("x", 0), ValidationError);
  CHECK_THROWS_AS(kv.get_bool("y", false), ValidationError);
  CHECK_THROWS_AS(kv.get_double("z", 0.0), ValidationError);
}

TEST_CASE("unread keys fail loudly by name") {
  auto kv = KeyValueConfig::parse_text("known = 1\nmistyped_key = 2\n");
  CHECK(kv.get_int("known", 0) == 1);
  try {
    kv.reject_unknown();
    CHECK(false);
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("mistyped_key") != std::string::npos);
  }
}

TEST_CASE("tool config applies defaults and per-tag corpus overrides") {
  auto cfg = load_tool_config_text(
      "sequence.tags = A,B\n"
      "train.seed = 5\n"
      "corpus.n_bonafide = 32\n"
      "corpus.algorithms = S1,S3\n"
      "corpus.B.algorithms = S4\n"
      "corpus.B.sample_rate = 8000\n");
  CHECK(cfg.tags == std::vector<std::string>{"A", "B"});
  CHECK(cfg.run.train.seed == 5);

  auto a = cfg.corpus_for("A");
  CHECK(a.n_bonafide == 32);
  CHECK(a.algorithms == std::vector<std::string>{"S1", "S3"});
  CHECK(a.sample_rate == 16000);

  auto b = cfg.corpus_for("B");
  CHECK(b.n_bonafide == 32);  // inherited from the unprefixed default
  CHECK(b.algorithms == std::vector<std::string>{"S4"});
  CHECK(b.sample_rate == 8000);

  // corpus seeds derive from the root seed and differ per tag
  CHECK(a.seed == derive_seed(5, "corpus.A"));
  CHECK(b.seed == derive_seed(5, "corpus.B"));
  CHECK(a.seed != b.seed);
}

TEST_CASE("tool config rejects unknown keys and invalid values") {
  CHECK_THROWS_AS(load_tool_config_text("train.lrr = 0.1\n"), ValidationError);
  CHECK_THROWS_AS(load_tool_config_text("train.mode = sideways\n"), ValidationError);
  CHECK_THROWS_AS(load_tool_config_text("sequence.tags =\n"), ValidationError);
  CHECK_THROWS_AS(load_tool_config_text("model.channels = 128\n"), ValidationError);
  CHECK_THROWS_AS(load_tool_config_text("corpus.algorithms = S9\n"), ValidationError);
  CHECK_THROWS_AS(load_tool_config_text("sequence.train_fraction = 1.5\n"), ValidationError);
}

TEST_CASE("empty config text yields the documented defaults") {
  auto cfg = load_tool_config_text("");
  CHECK(cfg.tags == std::vector<std::string>{"A", "B", "C"});
  CHECK(cfg.run.train.batch_size == 64);
  CHECK(cfg.run.train.mode == TrainMode::lora);
  CHECK(cfg.run.train.rank == 4);
  CHECK(cfg.run.model.stem_channels == std::vector<int>{128, 256, 512});
  CHECK(cfg.run.lfcc.feature_dims() == 60);
  auto spec = cfg.corpus_for("A");
  CHECK(spec.algorithms == std::vector<std::string>{"S1", "S2", "S3", "S4"});
  CHECK(spec.sample_rate == 16000);
}
