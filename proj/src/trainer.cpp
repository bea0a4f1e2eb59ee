#include "loraudio/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace loraudio {

TrainMode parse_train_mode(const std::string& s) {
  if (s == "lora") return TrainMode::lora;
  if (s == "finetune") return TrainMode::finetune;
  throw ValidationError("mode must be 'lora' or 'finetune', got '" + s + "'");
}

const char* train_mode_name(TrainMode mode) {
  return mode == TrainMode::lora ? "lora" : "finetune";
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
  if (!(lr > 0.0)) throw ValidationError("train.lr must be positive");
  if (epochs < 1) throw ValidationError("train.epochs must be >= 1");
  if (rank < 1) throw ValidationError("train.rank must be >= 1");
  if (lora_alpha < 0.0) throw ValidationError("train.lora_alpha must be >= 0");
}

void RunConfig::validate() const {
  lfcc.validate();
  model.validate();
  train.validate();
  if (train_fraction <= 0.0 || train_fraction >= 1.0)
    throw ValidationError("train_fraction must be in (0, 1)");
  if (jobs < 1) throw ValidationError("jobs must be >= 1");
}

FeatureSet extract_features(const Corpus& corpus, const LfccConfig& cfg, int jobs) {
  cfg.validate();
  FeatureSet fs;
  fs.tag = corpus.tag;
  size_t n = corpus.entries.size();
  fs.utt_ids.resize(n);
  fs.labels.resize(n);
  fs.features.resize(n);
  parallel_for(jobs, int(n), [&](int i) {
    const auto& [entry, wav] = corpus.entries[size_t(i)];
    fs.utt_ids[size_t(i)] = entry.utt_id;
    fs.labels[size_t(i)] = entry.label;
    fs.features[size_t(i)] = lfcc(wav, cfg);
  });
  return fs;
}

std::vector<std::vector<int>> make_batches(const std::vector<Label>& labels, int batch_size,
                                           uint64_t seed) {
  std::vector<int> pools[2];
  for (size_t i = 0; i < labels.size(); ++i)
    pools[labels[i] == Label::spoof ? 1 : 0].push_back(int(i));
  Rng rng_b(derive_seed(seed, "bonafide"));
  Rng rng_s(derive_seed(seed, "spoof"));
  rng_b.shuffle(pools[0].begin(), pools[0].end());
  rng_s.shuffle(pools[1].begin(), pools[1].end());

  // merge by fractional position within each pool, keeping labels interleaved
  std::vector<int> order;
  order.reserve(labels.size());
  size_t p0 = 0, p1 = 0;
  while (p0 < pools[0].size() || p1 < pools[1].size()) {
    double f0 = p0 < pools[0].size() ? (double(p0) + 0.5) / double(pools[0].size()) : 2.0;
    double f1 = p1 < pools[1].size() ? (double(p1) + 0.5) / double(pools[1].size()) : 2.0;
    order.push_back(f0 <= f1 ? pools[0][p0++] : pools[1][p1++]);
  }

  std::vector<std::vector<int>> batches;
  for (size_t start = 0; start + size_t(batch_size) <= order.size(); start += size_t(batch_size))
    batches.emplace_back(order.begin() + long(start), order.begin() + long(start) + batch_size);
  return batches;
}

double ReportMatrix::cell(const std::string& row, const std::string& col) const {
  for (size_t i = 0; i < row_names.size(); ++i)
    if (row_names[i] == row)
      for (size_t j = 0; j < col_names.size(); ++j)
        if (col_names[j] == col) return eer_pct[i][j];
  throw ValidationError("report has no cell (" + row + ", " + col + ")");
}

std::string ReportMatrix::to_text() const {
  size_t w = 10;
  for (const auto& r : row_names) w = std::max(w, r.size() + 2);
  std::ostringstream out;
  out << "EER (%) by model state (rows) and evaluation corpus (columns)\n\n";
  out << std::string(w, ' ');
  char buf[32];
  for (const auto& c : col_names) {
    std::snprintf(buf, sizeof buf, "%10s", c.c_str());
    out << buf;
  }
  out << '\n';
  for (size_t i = 0; i < row_names.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%-*s", int(w), row_names[i].c_str());
    out << buf;
    for (size_t j = 0; j < col_names.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%10.2f", eer_pct[i][j]);
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

std::string ReportMatrix::to_kv() const {
  std::string out;
  char buf[64];
  for (size_t i = 0; i < row_names.size(); ++i)
    for (size_t j = 0; j < col_names.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.6f", eer_pct[i][j]);
      out += "cell." + row_names[i] + "." + col_names[j] + "=" + buf + "\n";
    }
  return out;
}

ReportMatrix ReportMatrix::from_kv(const std::string& text) {
  ReportMatrix m;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto index_of = [](std::vector<std::string>& names, const std::string& name) {
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    names.push_back(name);
    return names.size() - 1;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (line.rfind("cell.", 0) != 0 || eq == std::string::npos)
      raise(Err::MalformedLine, "report line " + std::to_string(line_no));
    std::string key = line.substr(5, eq - 5);
    auto dot = key.find('.');
    if (dot == std::string::npos)
      raise(Err::MalformedLine, "report line " + std::to_string(line_no));
    std::string row = key.substr(0, dot), col = key.substr(dot + 1);
    double v = 0.0;
    try {
      v = std::stod(line.substr(eq + 1));
    } catch (const std::exception&) {
      raise(Err::MalformedLine, "report line " + std::to_string(line_no) + ": bad value");
    }
    size_t i = index_of(m.row_names, row);
    size_t j = index_of(m.col_names, col);
    if (m.eer_pct.size() <= i) m.eer_pct.resize(i + 1);
    if (m.eer_pct[i].size() <= j) m.eer_pct[i].resize(j + 1);
    m.eer_pct[i][j] = v;
  }
  return m;
}

}  // namespace loraudio
