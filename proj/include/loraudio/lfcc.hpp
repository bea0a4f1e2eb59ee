#pragma once

#include <Eigen/Dense>
#include <string>

#include "loraudio/audio.hpp"
#include "loraudio/common.hpp"

namespace loraudio {

struct LfccConfig {
  int frame_len = 400;
  int hop = 160;
  int n_fft = 512;
  int n_filters = 20;
  int n_ceps = 20;
  bool include_deltas = true;  // append delta and delta-delta blocks
  int target_frames = 96;
  double log_floor = 1e-10;

  int feature_dims() const { return n_ceps * (include_deltas ? 3 : 1); }
  void validate() const;
};

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FeatureMap {
  FeatureMatrix data;  // frames x dims
  int64_t frames() const { return data.rows(); }
  int64_t dims() const { return data.cols(); }
};

// Hamming-windowed frames, one per row.  TooShort when the signal cannot fill
// a single frame.
Eigen::MatrixXd frame_signal(const Waveform& w, int frame_len, int hop);

// |FFT|^2 / n_fft of each zero-padded frame row; keeps bins 0..n_fft/2.
Eigen::MatrixXd power_spectrum(const Eigen::MatrixXd& frames, int n_fft);

// Triangular filters on a linear frequency grid.  Breakpoints live on integer
// FFT bins (rounded from an even partition of [0, n_fft/2]) so every filter
// peaks at exactly 1 on its center bin.  Shape: n_filters x (n_fft/2 + 1).
Eigen::MatrixXd linear_filterbank(int n_filters, int n_fft);

// Orthonormal DCT-II; rows are the first n_ceps basis vectors of length n.
Eigen::MatrixXd dct_matrix(int n_ceps, int n);

// Regression deltas of width 2 over rows, edges replicated.
Eigen::MatrixXd delta_features(const Eigen::MatrixXd& feats);

// Wrap-around tile when short, truncate when long.
FeatureMap pad_or_crop(const FeatureMap& f, int target_frames);

// Full pipeline: frame -> power spectrum -> filterbank -> log -> DCT
// (-> deltas) -> pad_or_crop.  Log energies are floored at cfg.log_floor.
FeatureMap lfcc(const Waveform& w, const LfccConfig& cfg);

// Intermediate stage exposed for inspection: frames x n_filters log energies.
Eigen::MatrixXd log_filterbank_energies(const Waveform& w, const LfccConfig& cfg);

// Cache file: magic LFCC0001, u32 frames, u32 dims, row-major f32 payload.
std::string serialize_features(const FeatureMap& f);
FeatureMap deserialize_features(std::string_view bytes);
void write_feature_cache(const FeatureMap& f, const std::string& path);
FeatureMap read_feature_cache(const std::string& path);

}  // namespace loraudio
