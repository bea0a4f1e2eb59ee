#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>

#include "loraudio/lfcc.hpp"
#include "oracles.hpp"

using namespace loraudio;

namespace {

Waveform tone(double freq, double dur_s, int rate, double amp = 0.3) {
  int64_t n = int64_t(std::llround(dur_s * rate));
  Waveform w;
  w.sample_rate = rate;
  w.samples = Eigen::ArrayXd(n);
  for (int64_t i = 0; i < n; ++i) w.samples[i] = amp * std::sin(2 * M_PI * freq * i / rate);
  return w;
}

}  // namespace

TEST_CASE("frame count and window follow the hop grid") {
  Waveform w = tone(200.0, 1.0, 16000);  // 16000 samples
  auto frames = frame_signal(w, 400, 160);
  // floor((16000 - 400) / 160) + 1
  CHECK(frames.rows() == 98);
  CHECK(frames.cols() == 400);

  // row 0 equals the raw segment times the Hamming window
  for (int j : {0, 1, 57, 399}) {
    double ham = 0.54 - 0.46 * std::cos(2 * M_PI * j / 399.0);
    CHECK(frames(0, j) == doctest::Approx(w.samples[j] * ham).epsilon(1e-12));
  }

  Waveform tiny;
  tiny.sample_rate = 16000;
  tiny.samples = Eigen::ArrayXd::Zero(399);
  CHECK_THROWS_AS(frame_signal(tiny, 400, 160), Error);
}

TEST_CASE("power spectrum matches a direct DFT") {
  Waveform w = tone(437.0, 0.05, 16000);
  auto frames = frame_signal(w, 400, 160);
  auto ps = power_spectrum(frames, 512);
  CHECK(ps.cols() == 257);
  CHECK(ps.rows() == frames.rows());

  std::vector<double> padded(512, 0.0);
  for (int j = 0; j < 400; ++j) padded[size_t(j)] = frames(1, j);
  auto spec = oracles::naive_dft(padded);
  for (int k = 0; k <= 256; ++k) {
    double expect = std::norm(spec[size_t(k)]) / 512.0;
    CHECK(std::abs(ps(1, k) - expect) <= 1e-9 * (1.0 + expect));
  }
}

TEST_CASE("linear filterbank peaks at one and partitions the band") {
  auto fb = linear_filterbank(20, 512);
  REQUIRE(fb.rows() == 20);
  REQUIRE(fb.cols() == 257);
  for (int f = 0; f < 20; ++f) {
    CHECK(fb.row(f).maxCoeff() == doctest::Approx(1.0));
    CHECK(fb.row(f).minCoeff() >= 0.0);
    CHECK(fb.row(f).sum() > 0.0);
  }
  // a pure tone lights up the filter whose center bin is nearest the tone
  Waveform w = tone(2000.0, 0.2, 16000);
  LfccConfig cfg;
  auto logE = log_filterbank_energies(w, cfg);
  Eigen::Index arg = 0;
  logE.row(0).maxCoeff(&arg);
  // 2000 Hz -> bin 64 of 257; centers at round(k * 256 / 21) -> filter index 4
  CHECK(arg == 4);
}

TEST_CASE("dct matrix is orthonormal and matches the closed form") {
  auto d = dct_matrix(20, 20);
  Eigen::MatrixXd eye = d * d.transpose();
  CHECK((eye - Eigen::MatrixXd::Identity(20, 20)).cwiseAbs().maxCoeff() < 1e-12);

  auto rect = dct_matrix(20, 31);
  for (int k = 0; k < 20; ++k)
    for (int j = 0; j < 31; ++j) {
      double scale = k == 0 ? std::sqrt(1.0 / 31.0) : std::sqrt(2.0 / 31.0);
      double expect = scale * std::cos(M_PI * k * (2 * j + 1) / (2.0 * 31.0));
      CHECK(rect(k, j) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("delta features are regression slopes with replicated edges") {
  Eigen::MatrixXd feats(5, 1);
  feats << 0, 1, 2, 3, 4;  // constant slope 1
  auto d = delta_features(feats);
  REQUIRE(d.rows() == 5);
  // interior rows see the true slope; edge rows shrink because the
  // replicated frames flatten the regression
  CHECK(d(2, 0) == doctest::Approx(1.0));
  CHECK(d(0, 0) < 1.0);
  CHECK(d(4, 0) < 1.0);
  CHECK(d(0, 0) == doctest::Approx(d(4, 0)));  // symmetric ramp, symmetric edges

  // constant input has zero deltas everywhere
  Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(7, 3, 2.5);
  CHECK(delta_features(flat).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pad_or_crop wraps short inputs and truncates long ones") {
  FeatureMap f;
  f.data = FeatureMatrix(3, 2);
  f.data << 1, 2, 3, 4, 5, 6;
  auto wrapped = pad_or_crop(f, 8);
  REQUIRE(wrapped.frames() == 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 2; ++j) CHECK(wrapped.data(i, j) == f.data(i % 3, j));

  auto cropped = pad_or_crop(wrapped, 3);
  CHECK(cropped.frames() == 3);
  CHECK(cropped.data == f.data);

  auto same = pad_or_crop(f, 3);
  CHECK(same.data == f.data);
}

TEST_CASE("full pipeline emits the configured shape") {
  LfccConfig cfg;
  Waveform w = tone(250.0, 1.0, 16000);
  auto f = lfcc(w, cfg);
  CHECK(f.frames() == 96);
  CHECK(f.dims() == 60);
  CHECK(f.data.allFinite());

  cfg.include_deltas = false;
  auto f2 = lfcc(w, cfg);
  CHECK(f2.dims() == 20);
  // static block agrees with the deltas=on run
  CHECK(f.data.leftCols(20) == f2.data);

  // short input still reaches target_frames via wrap tiling
  Waveform shorty = tone(250.0, 0.05, 16000);
  auto f3 = lfcc(shorty, cfg);
  CHECK(f3.frames() == 96);
}

TEST_CASE("feature cache round-trips bitwise and rejects corruption") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / ("lfcc_cache_" + std::to_string(::getpid()));
  fs::create_directories(dir);

  LfccConfig cfg;
  auto f = lfcc(tone(180.0, 0.3, 16000), cfg);
  auto path = (dir / "f.lfcc").string();
  write_feature_cache(f, path);
  auto back = read_feature_cache(path);
  CHECK(back.data == f.data);

  auto bytes = serialize_features(f);
  CHECK(deserialize_features(bytes).data == f.data);
  CHECK_THROWS_AS(deserialize_features(bytes.substr(0, bytes.size() - 3)), Error);
  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_features(wrong_magic), Error);
  CHECK_THROWS_AS(deserialize_features(bytes + "x"), Error);

  fs::remove_all(dir);
}
