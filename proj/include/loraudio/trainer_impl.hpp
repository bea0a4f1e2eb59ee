#pragma once

#include <cctype>
#include <filesystem>
#include <map>

#include "loraudio/trainer.hpp"

namespace loraudio {

namespace detail {

inline void check_tag(const std::string& tag) {
  if (tag.empty()) throw ValidationError("corpus tag must not be empty");
  for (char c : tag)
    if (!std::isalnum(static_cast<unsigned char>(c)))
      throw ValidationError("corpus tag '" + tag + "' must be alphanumeric");
}

}  // namespace detail

// Full protocol over a list of corpora.  Artifacts land in out_dir:
//   base.fadckpt                      trained base
//   adapters_<tag>.fadlora            one per adapted corpus (lora mode)
//   ft_<tag>.fadckpt                  chained checkpoints (finetune mode)
//   scores_<row>_<col>.txt            one score file per matrix cell
//   report.txt / report.kv            the matrix, human and machine readable
//
// Rows are model states ("SoM", then "after-<tag>" per adapted corpus); in
// lora mode the cell (row, col) routes the corpus' own adapter set if it has
// been trained by that row, otherwise the bare base.
template <typename S>
ReportMatrix run_sequence(const RunConfig& rc, const SequencePlan& plan,
                          const std::string& out_dir) {
  rc.validate();
  if (plan.corpora.empty()) throw ValidationError("sequence needs at least one corpus");
  {
    std::vector<std::string> seen;
    for (const auto& c : plan.corpora) {
      detail::check_tag(c.tag);
      for (const auto& t : seen)
        if (t == c.tag) throw ValidationError("duplicate corpus tag '" + c.tag + "'");
      seen.push_back(c.tag);
    }
  }
  std::filesystem::create_directories(out_dir);
  uint64_t seed = rc.train.seed;

  // split once, featurize once
  size_t k = plan.corpora.size();
  std::vector<FeatureSet> train_fs(k), eval_fs(k);
  for (size_t i = 0; i < k; ++i) {
    const auto& corpus = plan.corpora[i];
    auto [tr, ev] = split_corpus(corpus, rc.train_fraction, derive_seed(seed, "split." + corpus.tag));
    train_fs[i] = extract_features(tr, rc.lfcc, rc.jobs);
    eval_fs[i] = extract_features(ev, rc.lfcc, rc.jobs);
  }

  ReportMatrix report;
  for (const auto& c : plan.corpora) report.col_names.push_back(c.tag);

  auto model = build_model<S>(rc.model, derive_seed(seed, "model"));
  train_model(model, static_cast<AdapterSet<S>*>(nullptr), train_fs[0], rc.train);
  std::string base_path = out_dir + "/base.fadckpt";
  std::string base_bytes = serialize_store(model.params);
  atomic_write_file(base_path, base_bytes);
  uint64_t base_fp = fingerprint_bytes(base_bytes);

  std::map<std::string, AdapterSet<S>> trained;  // tag -> adapter set (lora mode)

  auto eval_row = [&](const std::string& row_name, const SENetModel<S>& m, bool route) {
    report.row_names.push_back(row_name);
    report.eer_pct.emplace_back();
    for (size_t j = 0; j < k; ++j) {
      const AdapterSet<S>* adapters = nullptr;
      if (route) {
        auto it = trained.find(plan.corpora[j].tag);
        if (it != trained.end()) adapters = &it->second;
      }
      auto records = score_features(m, adapters, eval_fs[j], rc.train.batch_size, rc.jobs);
      write_scores(records, out_dir + "/scores_" + row_name + "_" + plan.corpora[j].tag + ".txt");
      report.eer_pct.back().push_back(100.0 * compute_eer(records).eer);
    }
  };

  eval_row("SoM", model, false);

  if (plan.mode == TrainMode::lora) {
    model.params.set_trainable(false);
    auto targets = rc.train.adapter_targets.empty() ? default_adapter_targets(rc.model)
                                                    : rc.train.adapter_targets;
    auto dims = adapter_target_dims(model, targets);
    for (size_t i = 1; i < k; ++i) {
      const std::string& tag = plan.corpora[i].tag;
      auto set = init_adapters<S>(dims, rc.train.rank, derive_seed(seed, "adapters." + tag),
                                  rc.train.literal_zero_init);
      if (rc.train.lora_alpha > 0.0)
        for (auto& pair : set.pairs) pair.scaling = S(rc.train.lora_alpha / pair.rank);
      train_model(model, &set, train_fs[i], rc.train);
      if (fingerprint_bytes(serialize_store(model.params)) != base_fp)
        raise(Err::BaseMutated, "base checkpoint bytes changed while adapting to " + tag);
      set.tag = tag;
      set.base_fingerprint = base_fp;
      save_adapters(set, out_dir + "/adapters_" + tag + ".fadlora");
      trained.emplace(tag, std::move(set));
      eval_row("after-" + tag, model, true);
    }
  } else {
    for (size_t i = 1; i < k; ++i) {
      const std::string& tag = plan.corpora[i].tag;
      train_model(model, static_cast<AdapterSet<S>*>(nullptr), train_fs[i], rc.train);
      save_checkpoint(model.params, out_dir + "/ft_" + tag + ".fadckpt");
      eval_row("after-" + tag, model, false);
    }
  }

  atomic_write_file(out_dir + "/report.txt", report.to_text());
  atomic_write_file(out_dir + "/report.kv", report.to_kv());
  return report;
}

}  // namespace loraudio
