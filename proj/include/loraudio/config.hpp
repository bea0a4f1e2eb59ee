#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "loraudio/audio.hpp"
#include "loraudio/trainer.hpp"

namespace loraudio {

// Flat key=value config file.  '#' lines and blank lines are skipped; keys
// must be unique; every key must be consumed by the loader or the file is
// rejected, so typos fail loudly.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_text(const std::string& text);
  static KeyValueConfig parse_file(const std::string& path);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback);
  int64_t get_int(const std::string& key, int64_t fallback);
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback);
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback);

  // ValidationError naming every key that was never read.
  void reject_unknown() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
};

// Everything the CLI needs: pipeline config plus corpus recipes per tag.
struct ToolConfig {
  RunConfig run;
  std::vector<std::string> tags;  // sequence corpus tags, first trains the base
  CorpusSpec corpus_default;
  std::map<std::string, CorpusSpec> corpus_by_tag;

  // Per-tag recipe (tag overrides win), with the seed derived from the root
  // training seed so one --seed pins the whole pipeline.
  CorpusSpec corpus_for(const std::string& tag) const;
};

ToolConfig load_tool_config_text(const std::string& text);
ToolConfig load_tool_config(const std::string& path);

}  // namespace loraudio
