#pragma once

#include <optional>
#include <string>
#include <vector>

#include "loraudio/adam.hpp"
#include "loraudio/audio.hpp"
#include "loraudio/checkpoint.hpp"
#include "loraudio/eer.hpp"
#include "loraudio/lfcc.hpp"
#include "loraudio/lora.hpp"
#include "loraudio/senet.hpp"

// Training/evaluation protocol: train the source-only base model on the first
// corpus, then adapt to each later corpus either with per-corpus low-rank
// adapter sets (the base stays frozen) or by whole-model finetuning (chained),
// and fill an EER matrix with routed evaluation.

namespace loraudio {

enum class TrainMode { lora, finetune };

TrainMode parse_train_mode(const std::string& s);
const char* train_mode_name(TrainMode mode);

struct TrainConfig {
  int batch_size = 64;
  double lr = 0.001;
  int epochs = 10;
  uint64_t seed = 1;
  TrainMode mode = TrainMode::lora;
  int rank = 4;
  std::vector<std::string> adapter_targets;  // empty: every plain linear map
  double lora_alpha = 0.0;                   // 0 keeps delta scaling at 1
  bool literal_zero_init = false;            // all-zero A and B (stuck on purpose)

  void validate() const;
};

struct RunConfig {
  LfccConfig lfcc;
  SENetConfig model;
  TrainConfig train;
  double train_fraction = 1.0 / 3.0;
  int jobs = 1;

  void validate() const;
};

// Extracted features for one corpus side, aligned index-wise.
struct FeatureSet {
  std::string tag;
  std::vector<std::string> utt_ids;
  std::vector<Label> labels;
  std::vector<FeatureMap> features;

  size_t size() const { return utt_ids.size(); }
};

FeatureSet extract_features(const Corpus& corpus, const LfccConfig& cfg, int jobs = 1);

// Class-stratified epoch batches: each label pool is shuffled independently,
// the pools are interleaved by fractional position so batches stay roughly
// balanced, and a trailing partial batch is dropped.
std::vector<std::vector<int>> make_batches(const std::vector<Label>& labels, int batch_size,
                                           uint64_t seed);

struct TrainStats {
  std::vector<double> epoch_loss;  // mean per epoch
  int64_t steps = 0;
};

struct SequencePlan {
  TrainMode mode = TrainMode::lora;
  std::vector<Corpus> corpora;  // first entry trains the base
};

struct ReportMatrix {
  std::vector<std::string> row_names;  // model states
  std::vector<std::string> col_names;  // corpus tags
  std::vector<std::vector<double>> eer_pct;

  double cell(const std::string& row, const std::string& col) const;
  std::string to_text() const;
  std::string to_kv() const;  // cell.<row>.<col>=<eer> lines
  static ReportMatrix from_kv(const std::string& text);
};

// ---- templated cores ----

template <typename S>
Tensor<S> batch_tensor(const FeatureSet& fs, const std::vector<int>& idx) {
  if (idx.empty()) raise(Err::ShapeMismatch, "empty batch");
  int frames = int(fs.features[size_t(idx[0])].frames());
  int dims = int(fs.features[size_t(idx[0])].dims());
  auto x = Tensor<S>::zeros({int(idx.size()), 1, frames, dims});
  S* dst = x.values().data();
  for (size_t b = 0; b < idx.size(); ++b) {
    const auto& f = fs.features[size_t(idx[b])];
    if (f.frames() != frames || f.dims() != dims)
      raise(Err::ShapeMismatch, "feature map " + fs.utt_ids[size_t(idx[b])] + " is " +
                                    std::to_string(f.frames()) + "x" + std::to_string(f.dims()) +
                                    ", batch is " + std::to_string(frames) + "x" +
                                    std::to_string(dims));
    for (int64_t i = 0; i < f.frames() * f.dims(); ++i)
      dst[int64_t(b) * frames * dims + i] = S(f.data.data()[i]);
  }
  return x;
}

template <typename S>
void assert_base_frozen(const SENetModel<S>& model) {
  for (size_t i = 0; i < model.params.tensors.size(); ++i)
    if (model.params.tensors[i].has_grad())
      raise(Err::BaseMutated,
            "frozen base tensor " + model.params.names[i] + " received a gradient");
}

// Shared loop for full training (adapters == nullptr) and adapter training
// (base frozen, only pair entries step).
template <typename S>
TrainStats train_model(SENetModel<S>& model, AdapterSet<S>* adapters,
                       const FeatureSet& train_set, const TrainConfig& tc) {
  tc.validate();
  bool seen[2] = {false, false};
  for (Label l : train_set.labels) seen[l == Label::spoof ? 1 : 0] = true;
  if (!seen[0] || !seen[1])
    raise(Err::OneClassOnly, "training set '" + train_set.tag + "' needs both labels");
  if (int(train_set.size()) < tc.batch_size)
    throw ValidationError("training set '" + train_set.tag + "' has " +
                          std::to_string(train_set.size()) + " utterances, batch_size is " +
                          std::to_string(tc.batch_size));

  model.params.set_trainable(adapters == nullptr);
  std::vector<Tensor<S>> trainable =
      adapters ? adapters->trainable() : model.params.trainable();

  AdamState<S> opt;
  opt.lr = tc.lr;
  TrainStats stats;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    auto batches = make_batches(train_set.labels, tc.batch_size,
                                derive_seed(tc.seed, "shuffle." + train_set.tag + "." +
                                                         std::to_string(epoch)));
    double loss_sum = 0.0;
    for (const auto& idx : batches) {
      auto x = batch_tensor<S>(train_set, idx);
      std::vector<int> y(idx.size());
      for (size_t b = 0; b < idx.size(); ++b)
        y[b] = train_set.labels[size_t(idx[b])] == Label::bonafide ? kBonafideClass
                                                                   : 1 - kBonafideClass;
      auto loss = softmax_cross_entropy(forward(model, x, adapters), y);
      for (auto& p : trainable) p.clear_grad();
      backward(loss);
      if (adapters) assert_base_frozen(model);
      adam_step(trainable, opt);
      loss_sum += double(loss.item());
      stats.steps += 1;
    }
    stats.epoch_loss.push_back(batches.empty() ? 0.0 : loss_sum / double(batches.size()));
  }
  return stats;
}

template <typename S>
std::vector<ScoreRecord> score_features(const SENetModel<S>& model,
                                        const AdapterSet<S>* adapters, const FeatureSet& fs,
                                        int batch_size, int jobs = 1) {
  if (fs.size() == 0) raise(Err::EmptyClass, "nothing to score");
  std::vector<ScoreRecord> records(fs.size());
  int n_chunks = int((fs.size() + size_t(batch_size) - 1) / size_t(batch_size));
  parallel_for(jobs, n_chunks, [&](int chunk) {
    int lo = chunk * batch_size;
    int hi = std::min<int>(lo + batch_size, int(fs.size()));
    std::vector<int> idx(size_t(hi - lo));
    for (int i = lo; i < hi; ++i) idx[size_t(i - lo)] = i;
    auto logits = forward(model, batch_tensor<S>(fs, idx), adapters);
    auto s = score(logits);
    for (int i = lo; i < hi; ++i)
      records[size_t(i)] = {fs.utt_ids[size_t(i)], s[size_t(i - lo)], fs.labels[size_t(i)]};
  });
  std::sort(records.begin(), records.end(),
            [](const ScoreRecord& a, const ScoreRecord& b) { return a.utt_id < b.utt_id; });
  return records;
}

template <typename S>
SENetModel<S> model_from_bytes(std::string_view bytes, const SENetConfig& cfg) {
  SENetModel<S> model;
  model.cfg = cfg;
  model.params = deserialize_store<S>(bytes);
  auto expected = model_layout(cfg);
  if (store_layout(model.params) != expected)
    throw ValidationError("checkpoint does not match the model config");
  return model;
}

// ---- file-level operations (what the CLI drives) ----

template <typename S>
struct EvalOutcome {
  EerResult eer;
  std::vector<ScoreRecord> records;
};

template <typename S>
struct TrainedBase {
  SENetModel<S> model;
  uint64_t fingerprint = 0;
  TrainStats stats;
};

template <typename S>
TrainedBase<S> train_base(const RunConfig& rc, const Corpus& train_corpus,
                          const std::string& out_ckpt) {
  rc.validate();
  auto fs = extract_features(train_corpus, rc.lfcc, rc.jobs);
  TrainedBase<S> out;
  out.model = build_model<S>(rc.model, derive_seed(rc.train.seed, "model"));
  out.stats = train_model(out.model, static_cast<AdapterSet<S>*>(nullptr), fs, rc.train);
  auto bytes = serialize_store(out.model.params);
  atomic_write_file(out_ckpt, bytes);
  out.fingerprint = fingerprint_bytes(bytes);
  return out;
}

template <typename S>
struct TrainedAdapters {
  AdapterSet<S> set;
  TrainStats stats;
};

// Adapter training against a stored base.  The checkpoint bytes are hashed on
// entry; after training the model must serialize back to the same hash.
template <typename S>
TrainedAdapters<S> train_adapter(const RunConfig& rc, const std::string& base_ckpt,
                                 const Corpus& train_corpus, const std::string& tag,
                                 const std::string& out_adapters) {
  rc.validate();
  auto base_bytes = read_file_bytes(base_ckpt);
  uint64_t fp = fingerprint_bytes(base_bytes);
  auto model = model_from_bytes<S>(base_bytes, rc.model);
  model.params.set_trainable(false);

  auto targets = rc.train.adapter_targets.empty() ? default_adapter_targets(rc.model)
                                                  : rc.train.adapter_targets;
  auto dims = adapter_target_dims(model, targets);
  TrainedAdapters<S> out;
  out.set = init_adapters<S>(dims, rc.train.rank, derive_seed(rc.train.seed, "adapters." + tag),
                             rc.train.literal_zero_init);
  if (rc.train.lora_alpha > 0.0)
    for (auto& pair : out.set.pairs) pair.scaling = S(rc.train.lora_alpha / pair.rank);

  auto fs = extract_features(train_corpus, rc.lfcc, rc.jobs);
  fs.tag = tag;
  out.stats = train_model(model, &out.set, fs, rc.train);

  if (fingerprint_bytes(serialize_store(model.params)) != fp)
    raise(Err::BaseMutated, "base checkpoint bytes changed during adapter training");
  out.set.tag = tag;
  out.set.base_fingerprint = fp;
  save_adapters(out.set, out_adapters);
  return out;
}

template <typename S>
TrainStats finetune(const RunConfig& rc, const std::string& base_ckpt,
                    const Corpus& train_corpus, const std::string& out_ckpt) {
  rc.validate();
  auto model = model_from_bytes<S>(read_file_bytes(base_ckpt), rc.model);
  auto fs = extract_features(train_corpus, rc.lfcc, rc.jobs);
  auto stats = train_model(model, static_cast<AdapterSet<S>*>(nullptr), fs, rc.train);
  save_checkpoint(model.params, out_ckpt);
  return stats;
}

template <typename S>
EvalOutcome<S> evaluate(const RunConfig& rc, const std::string& base_ckpt,
                        const std::optional<std::string>& adapters_path,
                        const Corpus& eval_corpus, const std::string& out_scores) {
  rc.validate();
  auto base_bytes = read_file_bytes(base_ckpt);
  auto model = model_from_bytes<S>(base_bytes, rc.model);
  std::optional<AdapterSet<S>> adapters;
  if (adapters_path) adapters = load_adapters<S>(*adapters_path, base_bytes);

  auto fs = extract_features(eval_corpus, rc.lfcc, rc.jobs);
  EvalOutcome<S> out;
  out.records = score_features(model, adapters ? &*adapters : nullptr, fs,
                               rc.train.batch_size, rc.jobs);
  out.eer = compute_eer(out.records);
  if (!out_scores.empty()) write_scores(out.records, out_scores);
  return out;
}

template <typename S>
ReportMatrix run_sequence(const RunConfig& rc, const SequencePlan& plan,
                          const std::string& out_dir);

}  // namespace loraudio

#include "loraudio/trainer_impl.hpp"
