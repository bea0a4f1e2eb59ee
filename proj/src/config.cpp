#include "loraudio/config.hpp"

#include <algorithm>
#include <sstream>

namespace loraudio {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_text(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(line_no) + ": expected key=value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw ValidationError("config line " + std::to_string(line_no) + ": empty key");
    if (cfg.values_.count(key))
      throw ValidationError("config line " + std::to_string(line_no) + ": duplicate key '" +
                            key + "'");
    cfg.values_[key] = value;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
  return parse_text(read_file_bytes(path));
}

bool KeyValueConfig::has(const std::string& key) const { return values_.count(key) != 0; }

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_.insert(key);
  return it->second;
}

int64_t KeyValueConfig::get_int(const std::string& key, int64_t fallback) {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_.insert(key);
  try {
    size_t used = 0;
    int64_t v = std::stoll(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': expected integer, got '" + it->second + "'");
  }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_.insert(key);
  try {
    size_t used = 0;
    double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': expected number, got '" + it->second + "'");
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_.insert(key);
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ValidationError("config key '" + key + "': expected true/false, got '" + it->second +
                        "'");
}

std::vector<std::string> KeyValueConfig::get_list(const std::string& key,
                                                  const std::vector<std::string>& fallback) {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_.insert(key);
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(it->second);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> KeyValueConfig::get_int_list(const std::string& key,
                                              const std::vector<int>& fallback) {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  auto items = get_list(key, {});
  std::vector<int> out;
  for (const auto& s : items) {
    try {
      size_t used = 0;
      out.push_back(std::stoi(s, &used));
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw ValidationError("config key '" + key + "': expected integer list, got '" +
                            it->second + "'");
    }
  }
  return out;
}

void KeyValueConfig::reject_unknown() const {
  std::vector<std::string> unknown;
  for (const auto& [key, value] : values_)
    if (!used_.count(key)) unknown.push_back(key);
  if (unknown.empty()) return;
  std::string msg = "unknown config key(s):";
  for (const auto& k : unknown) msg += " " + k;
  throw ValidationError(msg);
}

namespace {

CorpusSpec read_corpus_spec(KeyValueConfig& kv, const std::string& prefix,
                            const CorpusSpec& base) {
  CorpusSpec spec = base;
  spec.n_bonafide = int(kv.get_int(prefix + "n_bonafide", spec.n_bonafide));
  spec.n_per_algo = int(kv.get_int(prefix + "n_per_algo", spec.n_per_algo));
  spec.duration_s = kv.get_double(prefix + "duration_s", spec.duration_s);
  spec.sample_rate = int(kv.get_int(prefix + "sample_rate", spec.sample_rate));
  spec.algorithms = kv.get_list(prefix + "algorithms", spec.algorithms);
  return spec;
}

}  // namespace

CorpusSpec ToolConfig::corpus_for(const std::string& tag) const {
  auto it = corpus_by_tag.find(tag);
  CorpusSpec spec = it != corpus_by_tag.end() ? it->second : corpus_default;
  spec.seed = derive_seed(run.train.seed, "corpus." + tag);
  return spec;
}

ToolConfig load_tool_config_text(const std::string& text) {
  auto kv = KeyValueConfig::parse_text(text);
  ToolConfig cfg;

  cfg.tags = kv.get_list("sequence.tags", {"A", "B", "C"});
  if (cfg.tags.empty()) throw ValidationError("sequence.tags must not be empty");
  cfg.run.train_fraction = kv.get_double("sequence.train_fraction", cfg.run.train_fraction);

  auto& lf = cfg.run.lfcc;
  lf.frame_len = int(kv.get_int("lfcc.frame_len", lf.frame_len));
  lf.hop = int(kv.get_int("lfcc.hop", lf.hop));
  lf.n_fft = int(kv.get_int("lfcc.n_fft", lf.n_fft));
  lf.n_filters = int(kv.get_int("lfcc.n_filters", lf.n_filters));
  lf.n_ceps = int(kv.get_int("lfcc.n_ceps", lf.n_ceps));
  lf.include_deltas = kv.get_bool("lfcc.include_deltas", lf.include_deltas);
  lf.target_frames = int(kv.get_int("lfcc.target_frames", lf.target_frames));
  lf.log_floor = kv.get_double("lfcc.log_floor", lf.log_floor);

  auto& md = cfg.run.model;
  md.stem_channels = kv.get_int_list("model.channels", md.stem_channels);
  md.stem_kernels = kv.get_int_list("model.kernels", md.stem_kernels);
  md.blocks_per_sublayer = int(kv.get_int("model.blocks_per_sublayer", md.blocks_per_sublayer));
  md.se_reduction = int(kv.get_int("model.se_reduction", md.se_reduction));
  md.stem_stride = int(kv.get_int("model.stem_stride", md.stem_stride));

  auto& tr = cfg.run.train;
  tr.batch_size = int(kv.get_int("train.batch_size", tr.batch_size));
  tr.lr = kv.get_double("train.lr", tr.lr);
  tr.epochs = int(kv.get_int("train.epochs", tr.epochs));
  tr.seed = uint64_t(kv.get_int("train.seed", int64_t(tr.seed)));
  tr.mode = parse_train_mode(kv.get_string("train.mode", train_mode_name(tr.mode)));
  tr.rank = int(kv.get_int("train.rank", tr.rank));
  tr.adapter_targets = kv.get_list("train.adapter_targets", tr.adapter_targets);
  tr.lora_alpha = kv.get_double("train.lora_alpha", tr.lora_alpha);

  cfg.corpus_default.algorithms = {"S1", "S2", "S3", "S4"};
  cfg.corpus_default = read_corpus_spec(kv, "corpus.", cfg.corpus_default);
  for (const auto& tag : cfg.tags)
    cfg.corpus_by_tag[tag] = read_corpus_spec(kv, "corpus." + tag + ".", cfg.corpus_default);

  kv.reject_unknown();
  cfg.run.validate();
  for (const auto& tag : cfg.tags) cfg.corpus_for(tag).validate();
  return cfg;
}

ToolConfig load_tool_config(const std::string& path) {
  return load_tool_config_text(read_file_bytes(path));
}

}  // namespace loraudio
