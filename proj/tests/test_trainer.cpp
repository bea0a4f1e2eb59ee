#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "loraudio/trainer.hpp"

using namespace loraudio;

namespace {

RunConfig micro_config() {
  RunConfig rc;
  rc.model.stem_channels = {4, 4, 8};
  rc.model.stem_kernels = {3, 3, 3};
  rc.model.blocks_per_sublayer = 1;
  rc.model.se_reduction = 2;
  rc.lfcc.target_frames = 24;
  rc.lfcc.n_filters = 12;
  rc.lfcc.n_ceps = 8;
  rc.train.batch_size = 8;
  rc.train.epochs = 4;
  rc.train.lr = 0.003;
  rc.train.seed = 17;
  rc.train.rank = 4;
  return rc;
}

Corpus micro_corpus(uint64_t seed, const std::string& tag) {
  CorpusSpec spec;
  spec.n_bonafide = 16;
  spec.n_per_algo = 16;
  spec.algorithms = {"S3"};
  spec.duration_s = 0.5;
  spec.seed = seed;
  return synth_corpus(spec, tag);
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("trainer_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

}  // namespace

TEST_CASE("make_batches balances classes and drops the ragged tail") {
  std::vector<Label> labels;
  for (int i = 0; i < 20; ++i) labels.push_back(Label::bonafide);
  for (int i = 0; i < 30; ++i) labels.push_back(Label::spoof);

  auto batches = make_batches(labels, 8, 5);
  CHECK(batches.size() == 6);  // 50 / 8, tail dropped
  std::set<int> used;
  for (const auto& b : batches) {
    CHECK(b.size() == 8);
    int bona = 0;
    for (int i : b) {
      CHECK(used.count(i) == 0);
      used.insert(i);
      if (labels[size_t(i)] == Label::bonafide) ++bona;
    }
    // 40% bonafide overall; interleaving keeps each batch within one of par
    CHECK(bona >= 2);
    CHECK(bona <= 5);
  }

  auto again = make_batches(labels, 8, 5);
  CHECK(again == batches);
  auto other = make_batches(labels, 8, 6);
  CHECK(other != batches);
}

TEST_CASE("extract_features is independent of worker count") {
  Corpus c = micro_corpus(3, "T");
  LfccConfig cfg;
  cfg.target_frames = 24;
  auto f1 = extract_features(c, cfg, 1);
  auto f4 = extract_features(c, cfg, 4);
  REQUIRE(f1.size() == f4.size());
  CHECK(f1.utt_ids == f4.utt_ids);
  for (size_t i = 0; i < f1.size(); ++i) {
    CHECK(f1.labels[i] == f4.labels[i]);
    CHECK(f1.features[i].data == f4.features[i].data);
  }
}

TEST_CASE("training reduces the loss on a learnable corpus") {
  auto rc = micro_config();
  Corpus c = micro_corpus(7, "T");
  auto fs = extract_features(c, rc.lfcc, 4);
  auto model = build_model<float>(rc.model, derive_seed(rc.train.seed, "model"));
  rc.train.epochs = 8;
  auto stats = train_model(model, static_cast<AdapterSet<float>*>(nullptr), fs, rc.train);
  REQUIRE(stats.epoch_loss.size() == 8);
  CHECK(stats.epoch_loss.back() < stats.epoch_loss.front());
  CHECK(stats.steps == 8 * 4);  // 32 utterances / batch 8
}

TEST_CASE("adapter training leaves every base tensor untouched") {
  auto rc = micro_config();
  TempDir td;
  Corpus a = micro_corpus(7, "A");

  auto base = train_base<float>(rc, a, td.file("base.fadckpt"));
  auto before = read_file_bytes(td.file("base.fadckpt"));

  Corpus b = micro_corpus(8, "B");
  auto trained =
      train_adapter<float>(rc, td.file("base.fadckpt"), b, "B", td.file("ad_B.fadlora"));
  CHECK(trained.set.tag == "B");
  CHECK(trained.set.base_fingerprint == fingerprint_bytes(before));

  auto after = read_file_bytes(td.file("base.fadckpt"));
  CHECK(before == after);

  // adapters moved: at least one A entry is nonzero after training
  bool moved = false;
  for (const auto& p : trained.set.pairs)
    for (int64_t i = 0; i < p.A.numel() && !moved; ++i) moved = p.A.values()[i] != 0.0f;
  CHECK(moved);

  // evaluation with the stored adapters reproduces in-memory scores
  auto fs = extract_features(b, rc.lfcc, rc.jobs);
  auto model = model_from_bytes<float>(after, rc.model);
  auto direct = score_features(model, &trained.set, fs, rc.train.batch_size, 1);
  auto ev = evaluate<float>(rc, td.file("base.fadckpt"), td.file("ad_B.fadlora"), b, "");
  REQUIRE(direct.size() == ev.records.size());
  for (size_t i = 0; i < direct.size(); ++i) {
    CHECK(direct[i].utt_id == ev.records[i].utt_id);
    CHECK(direct[i].score == doctest::Approx(ev.records[i].score).epsilon(1e-6));
  }
}

TEST_CASE("literal zero init is a training fixed point") {
  auto rc = micro_config();
  rc.train.literal_zero_init = true;
  rc.train.epochs = 3;
  TempDir td;
  Corpus a = micro_corpus(7, "A");
  train_base<float>(rc, a, td.file("base.fadckpt"));

  Corpus b = micro_corpus(8, "B");
  auto trained =
      train_adapter<float>(rc, td.file("base.fadckpt"), b, "B", td.file("ad.fadlora"));
  CHECK(trained.stats.steps > 0);
  for (const auto& p : trained.set.pairs) {
    for (int64_t i = 0; i < p.A.numel(); ++i) CHECK(p.A.values()[i] == 0.0f);
    for (int64_t i = 0; i < p.B.numel(); ++i) CHECK(p.B.values()[i] == 0.0f);
  }

  // amended init with the same data does move
  rc.train.literal_zero_init = false;
  auto moved = train_adapter<float>(rc, td.file("base.fadckpt"), b, "B", td.file("ad2.fadlora"));
  bool any = false;
  for (const auto& p : moved.set.pairs)
    for (int64_t i = 0; i < p.A.numel() && !any; ++i) any = p.A.values()[i] != 0.0f;
  CHECK(any);
}

TEST_CASE("finetune writes a new checkpoint and leaves the input file alone") {
  auto rc = micro_config();
  rc.train.mode = TrainMode::finetune;
  rc.train.epochs = 2;
  TempDir td;
  Corpus a = micro_corpus(7, "A");
  train_base<float>(rc, a, td.file("base.fadckpt"));
  auto before = read_file_bytes(td.file("base.fadckpt"));

  Corpus b = micro_corpus(8, "B");
  finetune<float>(rc, td.file("base.fadckpt"), b, td.file("ft.fadckpt"));
  CHECK(read_file_bytes(td.file("base.fadckpt")) == before);
  CHECK(read_file_bytes(td.file("ft.fadckpt")) != before);
}

TEST_CASE("fingerprint mismatch surfaces when adapters meet the wrong base") {
  auto rc = micro_config();
  TempDir td;
  Corpus a = micro_corpus(7, "A");
  train_base<float>(rc, a, td.file("base1.fadckpt"));
  rc.train.seed = 18;
  train_base<float>(rc, a, td.file("base2.fadckpt"));

  Corpus b = micro_corpus(8, "B");
  rc.train.seed = 17;
  train_adapter<float>(rc, td.file("base1.fadckpt"), b, "B", td.file("ad.fadlora"));

  try {
    evaluate<float>(rc, td.file("base2.fadckpt"), td.file("ad.fadlora"), b, "");
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::FingerprintMismatch);
  }
}

TEST_CASE("report matrix round-trips through kv text") {
  ReportMatrix m;
  m.row_names = {"SoM", "after-B"};
  m.col_names = {"A", "B"};
  m.eer_pct = {{0.0, 42.1875}, {0.0, 3.125}};
  auto kv = m.to_kv();
  CHECK(kv.find("cell.SoM.B=") != std::string::npos);
  auto back = ReportMatrix::from_kv(kv);
  CHECK(back.row_names == m.row_names);
  CHECK(back.col_names == m.col_names);
  CHECK(back.cell("after-B", "B") == doctest::Approx(3.125).epsilon(1e-12));
  CHECK_THROWS_AS(m.cell("ghost", "A"), ValidationError);

  auto text = m.to_text();
  CHECK(text.find("SoM") != std::string::npos);
  CHECK(text.find("42.19") != std::string::npos);
}

TEST_CASE("training validates batch size and class coverage") {
  auto rc = micro_config();
  Corpus c = micro_corpus(9, "T");
  auto fs = extract_features(c, rc.lfcc, 1);
  auto model = build_model<float>(rc.model, 1);

  auto one_class = fs;
  for (auto& l : one_class.labels) l = Label::bonafide;
  CHECK_THROWS_AS(
      train_model(model, static_cast<AdapterSet<float>*>(nullptr), one_class, rc.train), Error);

  rc.train.batch_size = 1000;
  CHECK_THROWS_AS(train_model(model, static_cast<AdapterSet<float>*>(nullptr), fs, rc.train),
                  ValidationError);
}
