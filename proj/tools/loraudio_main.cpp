#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "loraudio/config.hpp"
#include "loraudio/eer.hpp"
#include "loraudio/trainer.hpp"

namespace {

using namespace loraudio;

struct Args {
  std::string command;
  std::string config_path;
  std::string out;
  std::string base;
  std::string adapters;
  std::string tag;
  std::string mode;
  std::string inspect_file;
  std::string protocol;
  std::string wav_dir;
  std::string protocol_format = "native";
  int rank = 0;
  int jobs = 0;
  int64_t seed = -1;
  bool literal_init = false;
};

ToolConfig load_config(const Args& a) {
  if (a.config_path.empty()) throw ValidationError("--config is required");
  ToolConfig cfg = load_tool_config(a.config_path);
  if (a.seed >= 0) cfg.run.train.seed = uint64_t(a.seed);
  if (a.jobs > 0) cfg.run.jobs = a.jobs;
  if (a.rank > 0) cfg.run.train.rank = a.rank;
  cfg.run.train.literal_zero_init = a.literal_init;
  if (!a.mode.empty()) cfg.run.train.mode = parse_train_mode(a.mode);
  return cfg;
}

std::string pick_tag(const ToolConfig& cfg, const Args& a) {
  if (!a.tag.empty()) return a.tag;
  return cfg.tags.front();
}

ProtocolFormat parse_format(const std::string& s) {
  if (s == "native") return ProtocolFormat::native;
  if (s == "asvspoof") return ProtocolFormat::asvspoof_cm;
  throw ValidationError("--protocol-format must be native or asvspoof, got '" + s + "'");
}

// Synthetic corpora are split once per tag with a seed-derived stream; train
// commands take the training side and eval takes the held-out side.  A corpus
// loaded from --protocol/--wav-dir is used whole, as given.
Corpus command_corpus(const ToolConfig& cfg, const Args& a, const std::string& tag,
                      bool eval_side) {
  if (!a.protocol.empty() || !a.wav_dir.empty()) {
    if (a.protocol.empty() || a.wav_dir.empty())
      throw ValidationError("--protocol and --wav-dir must be given together");
    auto spec = cfg.corpus_for(tag);
    return load_corpus(a.protocol, parse_format(a.protocol_format), a.wav_dir,
                       spec.sample_rate, tag);
  }
  Corpus full = synth_corpus(cfg.corpus_for(tag), tag);
  auto [train, eval] = split_corpus(full, cfg.run.train_fraction,
                                    derive_seed(cfg.run.train.seed, "split." + tag));
  return eval_side ? std::move(eval) : std::move(train);
}

void print_stats(const TrainStats& stats) {
  for (size_t e = 0; e < stats.epoch_loss.size(); ++e)
    std::printf("epoch %2zu  loss %.6f\n", e + 1, stats.epoch_loss[e]);
  std::printf("steps: %lld\n", static_cast<long long>(stats.steps));
}

int do_synth_data(const Args& a) {
  ToolConfig cfg = load_config(a);
  if (a.out.empty()) throw ValidationError("--out is required");
  std::string tag = pick_tag(cfg, a);
  Corpus corpus = synth_corpus(cfg.corpus_for(tag), tag);

  std::filesystem::create_directories(a.out + "/wav");
  std::vector<ProtocolEntry> entries;
  for (const auto& [entry, wav] : corpus.entries) {
    write_wav(wav, a.out + "/wav/" + entry.utt_id + ".wav");
    entries.push_back(entry);
  }
  atomic_write_file(a.out + "/protocol.txt", format_protocol(entries));
  std::printf("wrote %zu utterances (%lld bonafide, %lld spoof) to %s\n", corpus.entries.size(),
              static_cast<long long>(corpus.count(Label::bonafide)),
              static_cast<long long>(corpus.count(Label::spoof)), a.out.c_str());
  return 0;
}

template <typename S>
int do_train_base(const Args& a) {
  ToolConfig cfg = load_config(a);
  if (a.out.empty()) throw ValidationError("--out is required");
  std::string tag = pick_tag(cfg, a);
  auto trained = train_base<S>(cfg.run, command_corpus(cfg, a, tag, false), a.out);
  print_stats(trained.stats);
  std::printf("saved %s (fingerprint %016llx)\n", a.out.c_str(),
              static_cast<unsigned long long>(trained.fingerprint));
  return 0;
}

template <typename S>
int do_train_adapter(const Args& a) {
  ToolConfig cfg = load_config(a);
  if (a.base.empty()) throw ValidationError("--base is required");
  if (a.tag.empty()) throw ValidationError("--tag is required");
  if (a.rank <= 0) throw ValidationError("--rank is required and must be >= 1");
  if (a.out.empty()) throw ValidationError("--out is required");
  auto trained = train_adapter<S>(cfg.run, a.base, command_corpus(cfg, a, a.tag, false), a.tag,
                                  a.out);
  print_stats(trained.stats);
  std::printf("saved %s (%zu pairs, %lld parameters)\n", a.out.c_str(),
              trained.set.pairs.size(), static_cast<long long>(trained.set.param_count()));
  return 0;
}

template <typename S>
int do_finetune(const Args& a) {
  ToolConfig cfg = load_config(a);
  if (a.base.empty()) throw ValidationError("--base is required");
  if (a.tag.empty()) throw ValidationError("--tag is required");
  if (a.out.empty()) throw ValidationError("--out is required");
  auto stats = finetune<S>(cfg.run, a.base, command_corpus(cfg, a, a.tag, false), a.out);
  print_stats(stats);
  std::printf("saved %s\n", a.out.c_str());
  return 0;
}

template <typename S>
int do_eval(const Args& a) {
  ToolConfig cfg = load_config(a);
  if (a.base.empty()) throw ValidationError("--base is required");
  if (a.out.empty()) throw ValidationError("--out is required");
  std::string tag = pick_tag(cfg, a);
  std::optional<std::string> adapters;
  if (!a.adapters.empty()) adapters = a.adapters;
  auto outcome =
      evaluate<S>(cfg.run, a.base, adapters, command_corpus(cfg, a, tag, true), a.out);
  std::printf("eer=%.6f%% threshold=%.9f scores=%s\n", 100.0 * outcome.eer.eer,
              outcome.eer.threshold, a.out.c_str());
  return 0;
}

template <typename S>
int do_sequence(const Args& a) {
  ToolConfig cfg = load_config(a);
  if (a.out.empty()) throw ValidationError("--out is required");
  SequencePlan plan;
  plan.mode = cfg.run.train.mode;
  for (const auto& tag : cfg.tags) plan.corpora.push_back(synth_corpus(cfg.corpus_for(tag), tag));
  ReportMatrix report = run_sequence<S>(cfg.run, plan, a.out);
  std::fputs(report.to_text().c_str(), stdout);
  std::printf("\nartifacts in %s\n", a.out.c_str());
  return 0;
}

int do_inspect(const Args& a) {
  if (a.inspect_file.empty()) throw ValidationError("inspect needs a file argument");
  std::string bytes = read_file_bytes(a.inspect_file);
  std::string magic = bytes.substr(0, std::min<size_t>(8, bytes.size()));

  if (magic == "FADCKPT1") {
    auto layout = checkpoint_layout(bytes);
    int64_t params = 0;
    std::printf("%-28s %-16s %12s %12s\n", "tensor", "shape", "params", "bytes");
    for (const auto& [name, shape] : layout) {
      int64_t n = shape_numel(shape);
      params += n;
      std::printf("%-28s %-16s %12lld %12lld\n", name.c_str(), shape_str(shape).c_str(),
                  static_cast<long long>(n), static_cast<long long>(4 * n));
    }
    std::printf("total: %lld parameters, %zu file bytes, fingerprint %016llx\n",
                static_cast<long long>(params), bytes.size(),
                static_cast<unsigned long long>(fingerprint_bytes(bytes)));
    return 0;
  }

  if (magic == "FADLORA1") {
    if (a.base.empty())
      throw ValidationError("inspecting an adapter file needs --base <checkpoint>");
    std::string base_bytes = read_file_bytes(a.base);
    auto set = load_adapters<float>(a.inspect_file, base_bytes);
    std::printf("%-28s %6s %-14s %-14s %12s\n", "target", "rank", "A", "B", "bytes");
    for (const auto& p : set.pairs)
      std::printf("%-28s %6d %-14s %-14s %12lld\n", p.target.c_str(), p.rank,
                  shape_str(p.A.shape()).c_str(), shape_str(p.B.shape()).c_str(),
                  static_cast<long long>(4 * (p.A.numel() + p.B.numel())));
    std::printf("total: %lld parameters, %zu file bytes (base %zu bytes)\n",
                static_cast<long long>(set.param_count()), bytes.size(), base_bytes.size());
    std::printf("base_fingerprint=%016llx\n",
                static_cast<unsigned long long>(set.base_fingerprint));
    std::printf("storage_ratio=%.6f\n", double(bytes.size()) / double(base_bytes.size()));
    return 0;
  }

  if (magic == "LFCC0001") {
    auto f = deserialize_features(bytes);
    std::printf("feature cache: %lld frames x %lld dims, %zu bytes\n",
                static_cast<long long>(f.frames()), static_cast<long long>(f.dims()),
                bytes.size());
    return 0;
  }

  raise(Err::BadMagic, a.inspect_file + ": unrecognized file (magic '" + magic + "')");
}

template <typename S>
int dispatch(const Args& a) {
  if (a.command == "synth-data") return do_synth_data(a);
  if (a.command == "train-base") return do_train_base<S>(a);
  if (a.command == "train-adapter") return do_train_adapter<S>(a);
  if (a.command == "finetune") return do_finetune<S>(a);
  if (a.command == "eval") return do_eval<S>(a);
  if (a.command == "sequence") return do_sequence<S>(a);
  if (a.command == "inspect") return do_inspect(a);
  throw ValidationError("unknown command " + a.command);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"low-rank adapter toolkit for fake-audio detection"};
  app.require_subcommand(1);
  Args args;

  auto add_common = [&](CLI::App* cmd, bool with_data_flags = true) {
    cmd->add_option("--config", args.config_path, "key=value config file");
    cmd->add_option("--seed", args.seed, "override train.seed; all randomness derives from it");
    cmd->add_option("--jobs", args.jobs, "worker threads for feature extraction and scoring");
    if (with_data_flags) {
      cmd->add_option("--protocol", args.protocol, "use a real protocol file instead of synthesis");
      cmd->add_option("--wav-dir", args.wav_dir, "directory of <utt_id>.wav files");
      cmd->add_option("--protocol-format", args.protocol_format, "native or asvspoof");
    }
  };

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic corpus on disk");
  add_common(synth, false);
  synth->add_option("--tag", args.tag, "corpus tag (default: first sequence tag)");
  synth->add_option("--out", args.out, "output directory");

  auto* tb = app.add_subcommand("train-base", "train the base model");
  add_common(tb);
  tb->add_option("--tag", args.tag, "corpus tag (default: first sequence tag)");
  tb->add_option("--out", args.out, "checkpoint to write");

  auto* ta = app.add_subcommand("train-adapter", "train a low-rank adapter set on a frozen base");
  add_common(ta);
  ta->add_option("--base", args.base, "base checkpoint");
  ta->add_option("--tag", args.tag, "corpus tag");
  ta->add_option("--rank", args.rank, "adapter rank");
  ta->add_option("--out", args.out, "adapter file to write");
  ta->add_flag("--paper-literal-init", args.literal_init,
               "initialize both adapter matrices to zero (training stays at zero)");

  auto* ft = app.add_subcommand("finetune", "continue training the whole model on a corpus");
  add_common(ft);
  ft->add_option("--base", args.base, "checkpoint to start from");
  ft->add_option("--tag", args.tag, "corpus tag");
  ft->add_option("--out", args.out, "checkpoint to write");

  auto* ev = app.add_subcommand("eval", "score a corpus and report EER");
  add_common(ev);
  ev->add_option("--base", args.base, "base checkpoint");
  ev->add_option("--adapters", args.adapters, "adapter file trained against --base");
  ev->add_option("--tag", args.tag, "corpus tag (default: first sequence tag)");
  ev->add_option("--out", args.out, "score file to write");

  auto* seq = app.add_subcommand("sequence", "full protocol: base, adaptations, report matrix");
  add_common(seq, false);
  seq->add_option("--mode", args.mode, "lora or finetune (default: train.mode)");
  seq->add_option("--out", args.out, "output directory");

  auto* ins = app.add_subcommand("inspect", "print the contents of a produced file");
  ins->add_option("file", args.inspect_file, "checkpoint, adapter, or feature cache file");
  ins->add_option("--base", args.base, "base checkpoint (required for adapter files)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  args.command = app.get_subcommands().front()->get_name();

  const char* prec_env = std::getenv("LORAUDIO_PRECISION");
  std::string precision = prec_env ? prec_env : "f32";
  try {
    if (precision == "f32") return dispatch<float>(args);
    if (precision == "f64") return dispatch<double>(args);
    throw ValidationError("LORAUDIO_PRECISION must be f32 or f64, got '" + precision + "'");
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
