#include "loraudio/lfcc.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <vector>

namespace loraudio {

void LfccConfig::validate() const {
  if (frame_len < 2) throw ValidationError("lfcc: frame_len must be >= 2");
  if (hop < 1) throw ValidationError("lfcc: hop must be >= 1");
  if (n_fft < frame_len) throw ValidationError("lfcc: n_fft must be >= frame_len");
  if (n_filters < 1) throw ValidationError("lfcc: n_filters must be >= 1");
  if (n_ceps < 1 || n_ceps > n_filters)
    throw ValidationError("lfcc: n_ceps must be in [1, n_filters]");
  if (target_frames < 1) throw ValidationError("lfcc: target_frames must be >= 1");
  if (log_floor <= 0) throw ValidationError("lfcc: log_floor must be positive");
  if (n_fft / 2 < 2 * (n_filters + 1))
    throw ValidationError("lfcc: n_fft too small for n_filters (breakpoints collide)");
}

Eigen::MatrixXd frame_signal(const Waveform& w, int frame_len, int hop) {
  w.validate();
  int64_t n = w.samples.size();
  if (n < frame_len)
    raise(Err::TooShort, std::to_string(n) + " samples < frame length " +
                             std::to_string(frame_len));
  int64_t n_frames = 1 + (n - frame_len) / hop;
  Eigen::ArrayXd window(frame_len);
  for (int i = 0; i < frame_len; ++i)
    window[i] = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (frame_len - 1));
  Eigen::MatrixXd frames(n_frames, frame_len);
  for (int64_t t = 0; t < n_frames; ++t)
    frames.row(t) = (w.samples.segment(t * hop, frame_len) * window).matrix();
  return frames;
}

Eigen::MatrixXd power_spectrum(const Eigen::MatrixXd& frames, int n_fft) {
  if (frames.cols() > n_fft)
    throw ValidationError("power_spectrum: frame length exceeds n_fft");
  int n_bins = n_fft / 2 + 1;
  Eigen::MatrixXd power(frames.rows(), n_bins);
  Eigen::FFT<double> fft;
  std::vector<double> in(static_cast<size_t>(n_fft), 0.0);
  std::vector<std::complex<double>> out;
  for (int64_t t = 0; t < frames.rows(); ++t) {
    for (int i = 0; i < frames.cols(); ++i) in[size_t(i)] = frames(t, i);
    std::fill(in.begin() + frames.cols(), in.end(), 0.0);
    fft.fwd(out, in);
    for (int k = 0; k < n_bins; ++k) power(t, k) = std::norm(out[size_t(k)]) / n_fft;
  }
  return power;
}

Eigen::MatrixXd linear_filterbank(int n_filters, int n_fft) {
  int n_bins = n_fft / 2 + 1;
  std::vector<int> bp(size_t(n_filters) + 2);
  for (int j = 0; j <= n_filters + 1; ++j)
    bp[size_t(j)] = int(std::llround(double(j) * (n_fft / 2) / (n_filters + 1)));
  for (int j = 0; j <= n_filters; ++j)
    if (bp[size_t(j)] >= bp[size_t(j) + 1])
      throw ValidationError("linear_filterbank: breakpoints collide; raise n_fft");

  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_filters, n_bins);
  for (int i = 0; i < n_filters; ++i) {
    int lo = bp[size_t(i)], center = bp[size_t(i) + 1], hi = bp[size_t(i) + 2];
    for (int k = lo + 1; k <= center; ++k) fb(i, k) = double(k - lo) / (center - lo);
    for (int k = center + 1; k < hi; ++k) fb(i, k) = double(hi - k) / (hi - center);
  }
  return fb;
}

Eigen::MatrixXd dct_matrix(int n_ceps, int n) {
  Eigen::MatrixXd dct(n_ceps, n);
  for (int k = 0; k < n_ceps; ++k) {
    double c = std::sqrt((k == 0 ? 1.0 : 2.0) / n);
    for (int j = 0; j < n; ++j) dct(k, j) = c * std::cos(M_PI * k * (2 * j + 1) / (2.0 * n));
  }
  return dct;
}

Eigen::MatrixXd delta_features(const Eigen::MatrixXd& feats) {
  const int width = 2;
  const double denom = 10.0;  // 2 * (1^2 + 2^2)
  int64_t n = feats.rows();
  Eigen::MatrixXd out(n, feats.cols());
  auto row_at = [&](int64_t t) {
    return feats.row(std::clamp(t, int64_t(0), n - 1));
  };
  for (int64_t t = 0; t < n; ++t) {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(feats.cols());
    for (int k = 1; k <= width; ++k) acc += k * (row_at(t + k) - row_at(t - k));
    out.row(t) = acc / denom;
  }
  return out;
}

FeatureMap pad_or_crop(const FeatureMap& f, int target_frames) {
  if (f.frames() < 1) raise(Err::TooShort, "pad_or_crop: empty feature map");
  FeatureMap out;
  out.data.resize(target_frames, f.dims());
  for (int t = 0; t < target_frames; ++t) out.data.row(t) = f.data.row(t % f.frames());
  return out;
}

Eigen::MatrixXd log_filterbank_energies(const Waveform& w, const LfccConfig& cfg) {
  cfg.validate();
  auto frames = frame_signal(w, cfg.frame_len, cfg.hop);
  auto power = power_spectrum(frames, cfg.n_fft);
  auto fb = linear_filterbank(cfg.n_filters, cfg.n_fft);
  Eigen::MatrixXd energies = power * fb.transpose();
  return energies.array().max(cfg.log_floor).log().matrix();
}

FeatureMap lfcc(const Waveform& w, const LfccConfig& cfg) {
  Eigen::MatrixXd loge = log_filterbank_energies(w, cfg);
  Eigen::MatrixXd ceps = loge * dct_matrix(cfg.n_ceps, cfg.n_filters).transpose();

  FeatureMap f;
  if (cfg.include_deltas) {
    Eigen::MatrixXd d1 = delta_features(ceps);
    Eigen::MatrixXd d2 = delta_features(d1);
    f.data.resize(ceps.rows(), 3 * cfg.n_ceps);
    f.data << ceps.cast<float>(), d1.cast<float>(), d2.cast<float>();
  } else {
    f.data = ceps.cast<float>();
  }
  return pad_or_crop(f, cfg.target_frames);
}

std::string serialize_features(const FeatureMap& f) {
  std::string out = "LFCC0001";
  put_u32(out, uint32_t(f.frames()));
  put_u32(out, uint32_t(f.dims()));
  for (int64_t t = 0; t < f.frames(); ++t)
    for (int64_t d = 0; d < f.dims(); ++d) put_f32(out, f.data(t, d));
  return out;
}

FeatureMap deserialize_features(std::string_view bytes) {
  ByteReader r(bytes, "feature cache");
  if (r.take(8) != "LFCC0001") raise(Err::BadMagic, "feature cache: expected LFCC0001");
  uint32_t frames = r.u32();
  uint32_t dims = r.u32();
  FeatureMap f;
  f.data.resize(frames, dims);
  for (uint32_t t = 0; t < frames; ++t)
    for (uint32_t d = 0; d < dims; ++d) f.data(t, d) = r.f32();
  r.expect_done();
  return f;
}

void write_feature_cache(const FeatureMap& f, const std::string& path) {
  atomic_write_file(path, serialize_features(f));
}

FeatureMap read_feature_cache(const std::string& path) {
  return deserialize_features(read_file_bytes(path));
}

}  // namespace loraudio
