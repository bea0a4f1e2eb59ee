#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "loraudio/common.hpp"

namespace loraudio {

struct Waveform {
  Eigen::ArrayXd samples;  // mono, in [-1, 1] by convention
  int sample_rate = 16000;

  int64_t size() const { return samples.size(); }
  double duration_s() const { return double(samples.size()) / sample_rate; }
  void validate() const;  // finite samples, positive rate, at least one sample
};

enum class Label { bonafide, spoof };

const char* label_name(Label l);
Label parse_label(const std::string& s);  // UnknownLabel on anything else

struct ProtocolEntry {
  std::string utt_id;
  Label label;
  std::string algo_id;  // "-" for bonafide
};

enum class ProtocolFormat { native, asvspoof_cm };

// native:      <utt_id> <label> <algo_id>
// asvspoof_cm: <speaker> <utt_id> <compr> <algo_id> <key>   (key: bonafide|spoof)
std::vector<ProtocolEntry> parse_protocol_text(const std::string& text, ProtocolFormat fmt);
std::vector<ProtocolEntry> parse_protocol(const std::string& path, ProtocolFormat fmt);
std::string format_protocol(const std::vector<ProtocolEntry>& entries);  // native format

// 16-bit PCM mono RIFF/WAVE only.  expected_rate == 0 skips the rate check.
Waveform read_wav(const std::string& path, int expected_rate = 0);
void write_wav(const Waveform& w, const std::string& path);

struct CorpusSpec {
  int n_bonafide = 128;
  int n_per_algo = 64;
  std::vector<std::string> algorithms;  // subset of {"S1","S2","S3","S4"}
  double duration_s = 1.0;
  int sample_rate = 16000;
  uint64_t seed = 1;
  void validate() const;  // ValidationError on nonsense values
};

struct Corpus {
  std::string tag;
  std::vector<std::pair<ProtocolEntry, Waveform>> entries;

  int64_t count(Label l) const;
};

// Deterministic synthetic speech-like corpus.  Bonafide utterances are
// harmonic complexes (f0 uniform in [100, 300] Hz, three harmonics with 1/k
// amplitudes, attack/decay/sustain/release envelope, gaussian noise at
// -30 dB).  Spoofed utterances apply one of four fixed transforms to a fresh
// bonafide signal:
//   S1  amplitude quantization to 4 bits
//   S2  notch comb: every 8th FFT bin of the full-signal spectrum zeroed
//   S3  ring modulation by a 1.7 kHz sine at depth 0.5
//   S4  per-frame phase randomization, magnitudes kept
Corpus synth_corpus(const CorpusSpec& spec, const std::string& tag);

// One spoof transform applied to a raw signal; exposed for direct testing.
Eigen::ArrayXd apply_spoof_algo(const std::string& algo_id, const Eigen::ArrayXd& x,
                                int sample_rate, Rng& rng);

// Label-stratified random split.  Per label: round(train_fraction * n)
// entries, clamped so both sides keep at least one; relative order within a
// side follows the original corpus.  EmptyClass if a label has < 2 members.
std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, double train_fraction,
                                       uint64_t seed);

// Corpus from a protocol file plus a directory of <utt_id>.wav files.
Corpus load_corpus(const std::string& protocol_path, ProtocolFormat fmt,
                   const std::string& wav_dir, int expected_rate, const std::string& tag);

}  // namespace loraudio
