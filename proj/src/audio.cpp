#include "loraudio/audio.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <sstream>

namespace loraudio {

void Waveform::validate() const {
  if (sample_rate <= 0) raise(Err::NotWav, "sample rate must be positive");
  if (samples.size() < 1) raise(Err::TooShort, "waveform has no samples");
  if (!samples.allFinite()) raise(Err::NotWav, "waveform contains non-finite samples");
}

const char* label_name(Label l) { return l == Label::bonafide ? "bonafide" : "spoof"; }

Label parse_label(const std::string& s) {
  if (s == "bonafide") return Label::bonafide;
  if (s == "spoof") return Label::spoof;
  raise(Err::UnknownLabel, "'" + s + "' (expected bonafide or spoof)");
}

static std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

std::vector<ProtocolEntry> parse_protocol_text(const std::string& text, ProtocolFormat fmt) {
  std::vector<ProtocolEntry> entries;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto fields = split_fields(line);
    if (fields.empty()) continue;
    try {
      if (fmt == ProtocolFormat::native) {
        if (fields.size() != 3)
          raise(Err::MalformedLine, "expected 3 fields, got " + std::to_string(fields.size()));
        entries.push_back({fields[0], parse_label(fields[1]), fields[2]});
      } else {
        if (fields.size() != 5)
          raise(Err::MalformedLine, "expected 5 fields, got " + std::to_string(fields.size()));
        entries.push_back({fields[1], parse_label(fields[4]), fields[3]});
      }
    } catch (const Error& e) {
      if (e.code() == Err::UnknownLabel)
        raise(Err::UnknownLabel, "line " + std::to_string(line_no) + ": " + e.what());
      raise(Err::MalformedLine, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return entries;
}

std::vector<ProtocolEntry> parse_protocol(const std::string& path, ProtocolFormat fmt) {
  return parse_protocol_text(read_file_bytes(path), fmt);
}

std::string format_protocol(const std::vector<ProtocolEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    out += e.utt_id;
    out += ' ';
    out += label_name(e.label);
    out += ' ';
    out += e.algo_id.empty() ? "-" : e.algo_id;
    out += '\n';
  }
  return out;
}

// ---- WAV ----

namespace {

uint32_t rd_u32(const unsigned char* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
uint16_t rd_u16(const unsigned char* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }

}  // namespace

Waveform read_wav(const std::string& path, int expected_rate) {
  std::string bytes = read_file_bytes(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  size_t n = bytes.size();
  if (n < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    raise(Err::NotWav, path + " is not a RIFF/WAVE file");

  int channels = 0, bits = 0, rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  size_t data_len = 0;

  size_t off = 12;
  while (off + 8 <= n) {
    uint32_t chunk_len = rd_u32(p + off + 4);
    const unsigned char* body = p + off + 8;
    if (off + 8 + chunk_len > n)
      raise(Err::TruncatedFile, path + ": chunk overruns file");
    if (std::memcmp(p + off, "fmt ", 4) == 0) {
      if (chunk_len < 16) raise(Err::NotWav, path + ": fmt chunk too small");
      uint16_t audio_format = rd_u16(body);
      channels = rd_u16(body + 2);
      rate = int(rd_u32(body + 4));
      bits = rd_u16(body + 14);
      if (audio_format != 1)
        raise(Err::UnsupportedBitDepth,
              path + ": non-PCM format code " + std::to_string(audio_format));
      have_fmt = true;
    } else if (std::memcmp(p + off, "data", 4) == 0) {
      data = body;
      data_len = chunk_len;
    }
    off += 8 + chunk_len + (chunk_len & 1);  // chunks are word aligned
  }
  if (!have_fmt || !data) raise(Err::NotWav, path + ": missing fmt or data chunk");
  if (channels != 1)
    raise(Err::UnsupportedChannels, path + ": " + std::to_string(channels) + " channels");
  if (bits != 16) raise(Err::UnsupportedBitDepth, path + ": " + std::to_string(bits) + " bits");
  if (expected_rate != 0 && rate != expected_rate)
    raise(Err::SampleRateMismatch,
          path + ": got " + std::to_string(rate) + " Hz, expected " + std::to_string(expected_rate));

  Waveform w;
  w.sample_rate = rate;
  int64_t count = int64_t(data_len / 2);
  w.samples.resize(count);
  for (int64_t i = 0; i < count; ++i) {
    int16_t s = int16_t(rd_u16(data + 2 * i));
    w.samples[i] = double(s) / 32768.0;
  }
  w.validate();
  return w;
}

void write_wav(const Waveform& w, const std::string& path) {
  w.validate();
  int64_t n = w.samples.size();
  std::string out;
  out.reserve(size_t(44 + 2 * n));
  out += "RIFF";
  put_u32(out, uint32_t(36 + 2 * n));
  out += "WAVE";
  out += "fmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, uint32_t(w.sample_rate));
  put_u32(out, uint32_t(w.sample_rate * 2));
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, uint32_t(2 * n));
  for (int64_t i = 0; i < n; ++i) {
    double v = std::clamp(w.samples[i], -1.0, 1.0);
    auto s = int16_t(std::clamp<long>(std::lround(v * 32768.0), -32768, 32767));
    put_u16(out, uint16_t(s));
  }
  atomic_write_file(path, out);
}

// ---- synthetic corpus ----

void CorpusSpec::validate() const {
  if (n_bonafide < 1) throw ValidationError("corpus: n_bonafide must be >= 1");
  if (!algorithms.empty() && n_per_algo < 1)
    throw ValidationError("corpus: n_per_algo must be >= 1");
  if (duration_s <= 0) throw ValidationError("corpus: duration_s must be positive");
  if (sample_rate < 1000) throw ValidationError("corpus: sample_rate must be >= 1000");
  for (const auto& a : algorithms)
    if (a != "S1" && a != "S2" && a != "S3" && a != "S4")
      throw ValidationError("corpus: unknown spoof algorithm '" + a + "'");
}

int64_t Corpus::count(Label l) const {
  int64_t c = 0;
  for (const auto& [entry, wav] : entries)
    if (entry.label == l) ++c;
  return c;
}

namespace {

// Harmonic complex with an attack/decay/sustain/release envelope plus noise.
Eigen::ArrayXd synth_voice(int64_t n, int sample_rate, Rng& rng) {
  double f0 = rng.uniform(100.0, 300.0);
  Eigen::ArrayXd x = Eigen::ArrayXd::Zero(n);
  for (int k = 1; k <= 3; ++k) {
    double phase = rng.uniform(0.0, 2.0 * M_PI);
    double w = 2.0 * M_PI * f0 * k / sample_rate;
    for (int64_t i = 0; i < n; ++i) x[i] += std::sin(w * double(i) + phase) / k;
  }
  // envelope and overall level vary per utterance so that neither the energy
  // nor the envelope shape is a class cue
  double attack = rng.uniform(0.05, 0.20);
  double decay_end = attack + rng.uniform(0.05, 0.15);
  double sustain = rng.uniform(0.5, 0.95);
  double release = rng.uniform(0.70, 0.90);
  auto env = [=](int64_t i) {
    double t = double(i) / double(n);
    if (t < attack) return t / attack;
    if (t < decay_end) return 1.0 - (1.0 - sustain) * (t - attack) / (decay_end - attack);
    if (t < release) return sustain;
    return sustain * (1.0 - t) / (1.0 - release);
  };
  for (int64_t i = 0; i < n; ++i) x[i] *= env(i);
  double peak = x.abs().maxCoeff();
  double level = rng.uniform(0.25, 0.9);
  if (peak > 0) x *= level / peak;
  double noise_amp = std::pow(10.0, -30.0 / 20.0);  // -30 dB re full scale
  for (int64_t i = 0; i < n; ++i) x[i] += noise_amp * rng.gaussian();
  return x.min(1.0).max(-1.0);
}

using Cplx = std::complex<double>;

std::vector<Cplx> fft_fwd(const Eigen::ArrayXd& x) {
  Eigen::FFT<double> fft;
  std::vector<double> in(x.data(), x.data() + x.size());
  std::vector<Cplx> out;
  fft.fwd(out, in);
  return out;  // full spectrum, size == x.size()
}

Eigen::ArrayXd fft_inv_real(const std::vector<Cplx>& spec) {
  Eigen::FFT<double> fft;
  std::vector<double> out;
  fft.inv(out, spec);
  return Eigen::Map<const Eigen::ArrayXd>(out.data(), int64_t(out.size()));
}

Eigen::ArrayXd spoof_quantize(const Eigen::ArrayXd& x) {
  // 4-bit midtread: 17 reconstruction levels at k/8
  return (x * 8.0).round() / 8.0;
}

Eigen::ArrayXd spoof_notch(const Eigen::ArrayXd& x) {
  auto spec = fft_fwd(x);
  size_t n = spec.size();
  for (size_t k = 0; k < n; ++k)
    if (k % 8 == 0 || (n - k) % 8 == 0) spec[k] = 0.0;
  return fft_inv_real(spec);
}

Eigen::ArrayXd spoof_ringmod(const Eigen::ArrayXd& x, int sample_rate) {
  const double depth = 0.5, freq = 1700.0;
  Eigen::ArrayXd y(x.size());
  double w = 2.0 * M_PI * freq / sample_rate;
  for (int64_t i = 0; i < x.size(); ++i)
    y[i] = x[i] * ((1.0 - depth) + depth * std::sin(w * double(i)));
  return y;
}

Eigen::ArrayXd spoof_phase_scramble(const Eigen::ArrayXd& x, Rng& rng) {
  const int64_t frame = 512;
  Eigen::ArrayXd y = x;
  for (int64_t start = 0; start + frame <= x.size(); start += frame) {
    auto spec = fft_fwd(x.segment(start, frame));
    // keep magnitudes, draw fresh phases; respect conjugate symmetry so the
    // inverse transform stays real
    for (int64_t k = 1; k < frame / 2; ++k) {
      double mag = std::abs(spec[size_t(k)]);
      double ph = rng.uniform(0.0, 2.0 * M_PI);
      spec[size_t(k)] = std::polar(mag, ph);
      spec[size_t(frame - k)] = std::conj(spec[size_t(k)]);
    }
    y.segment(start, frame) = fft_inv_real(spec);
  }
  return y.min(1.0).max(-1.0);
}

}  // namespace

Eigen::ArrayXd apply_spoof_algo(const std::string& algo_id, const Eigen::ArrayXd& x,
                                int sample_rate, Rng& rng) {
  if (algo_id == "S1") return spoof_quantize(x);
  if (algo_id == "S2") return spoof_notch(x);
  if (algo_id == "S3") return spoof_ringmod(x, sample_rate);
  if (algo_id == "S4") return spoof_phase_scramble(x, rng);
  throw ValidationError("unknown spoof algorithm '" + algo_id + "'");
}

Corpus synth_corpus(const CorpusSpec& spec, const std::string& tag) {
  spec.validate();
  auto n_samples = int64_t(std::llround(spec.duration_s * spec.sample_rate));
  Corpus corpus;
  corpus.tag = tag;

  char buf[64];
  for (int i = 0; i < spec.n_bonafide; ++i) {
    std::snprintf(buf, sizeof buf, "bona_%s_%04d", tag.c_str(), i);
    // one rng per utterance keyed by its id: corpus content does not depend
    // on generation order
    Rng rng(derive_seed(spec.seed, buf));
    Waveform w{synth_voice(n_samples, spec.sample_rate, rng), spec.sample_rate};
    corpus.entries.push_back({{buf, Label::bonafide, "-"}, std::move(w)});
  }
  for (const auto& algo : spec.algorithms) {
    for (int i = 0; i < spec.n_per_algo; ++i) {
      std::snprintf(buf, sizeof buf, "spoof_%s_%s_%04d", algo.c_str(), tag.c_str(), i);
      Rng rng(derive_seed(spec.seed, buf));
      Eigen::ArrayXd base = synth_voice(n_samples, spec.sample_rate, rng);
      Waveform w{apply_spoof_algo(algo, base, spec.sample_rate, rng), spec.sample_rate};
      corpus.entries.push_back({{buf, Label::spoof, algo}, std::move(w)});
    }
  }
  return corpus;
}

std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, double train_fraction,
                                       uint64_t seed) {
  if (train_fraction <= 0.0 || train_fraction >= 1.0)
    throw ValidationError("train_fraction must be in (0, 1)");

  std::vector<size_t> strata[2];
  for (size_t i = 0; i < corpus.entries.size(); ++i)
    strata[corpus.entries[i].first.label == Label::spoof ? 1 : 0].push_back(i);

  std::vector<bool> in_train(corpus.entries.size(), false);
  for (int s = 0; s < 2; ++s) {
    auto& idx = strata[s];
    if (idx.size() < 2)
      raise(Err::EmptyClass, std::string("cannot split: label '") +
                                 label_name(s == 0 ? Label::bonafide : Label::spoof) +
                                 "' has " + std::to_string(idx.size()) + " entries");
    auto n = int64_t(idx.size());
    int64_t n_train =
        std::clamp<int64_t>(std::llround(train_fraction * double(n)), 1, n - 1);
    Rng rng(derive_seed(seed, std::string("split.") + (s == 0 ? "bonafide" : "spoof")));
    std::vector<size_t> pool = idx;
    rng.shuffle(pool.begin(), pool.end());
    for (int64_t k = 0; k < n_train; ++k) in_train[pool[size_t(k)]] = true;
  }

  Corpus train, eval;
  train.tag = corpus.tag;
  eval.tag = corpus.tag;
  for (size_t i = 0; i < corpus.entries.size(); ++i)
    (in_train[i] ? train : eval).entries.push_back(corpus.entries[i]);
  return {std::move(train), std::move(eval)};
}

Corpus load_corpus(const std::string& protocol_path, ProtocolFormat fmt,
                   const std::string& wav_dir, int expected_rate, const std::string& tag) {
  Corpus corpus;
  corpus.tag = tag;
  for (const auto& e : parse_protocol(protocol_path, fmt)) {
    Waveform w = read_wav(wav_dir + "/" + e.utt_id + ".wav", expected_rate);
    corpus.entries.push_back({e, std::move(w)});
  }
  return corpus;
}

}  // namespace loraudio
