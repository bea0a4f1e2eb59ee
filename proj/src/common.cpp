#include "loraudio/common.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>
#include <unistd.h>

namespace loraudio {

const char* err_name(Err code) {
  switch (code) {
    case Err::NotWav: return "NotWav";
    case Err::UnsupportedChannels: return "UnsupportedChannels";
    case Err::UnsupportedBitDepth: return "UnsupportedBitDepth";
    case Err::SampleRateMismatch: return "SampleRateMismatch";
    case Err::MalformedLine: return "MalformedLine";
    case Err::UnknownLabel: return "UnknownLabel";
    case Err::EmptyClass: return "EmptyClass";
    case Err::OneClassOnly: return "OneClassOnly";
    case Err::TooShort: return "TooShort";
    case Err::ShapeMismatch: return "ShapeMismatch";
    case Err::NonScalarLoss: return "NonScalarLoss";
    case Err::MissingGrad: return "MissingGrad";
    case Err::UnknownAdapterTarget: return "UnknownAdapterTarget";
    case Err::RankTooLarge: return "RankTooLarge";
    case Err::BadMagic: return "BadMagic";
    case Err::TruncatedFile: return "TruncatedFile";
    case Err::FingerprintMismatch: return "FingerprintMismatch";
    case Err::BaseMutated: return "BaseMutated";
    case Err::IoError: return "IoError";
  }
  return "UnknownError";
}

uint64_t fnv1a64(const void* data, size_t n, uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t derive_seed(uint64_t root, std::string_view tag) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = (unsigned char)(root >> (8 * i));
  uint64_t h = fnv1a64(buf, 8);
  h = fnv1a64(tag.data(), tag.size(), h);
  return h;
}

double Rng::gaussian() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  while (u1 == 0.0) u1 = uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  uint64_t span = uint64_t(hi - lo) + 1;
  uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return lo + int64_t(x % span);
}

void put_u16(std::string& out, uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char(v >> 8));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

void ByteReader::need(size_t n) const {
  if (bytes_.size() - pos_ < n)
    raise(Err::TruncatedFile, ctx_ + ": needed " + std::to_string(n) + " more bytes at offset " +
                                  std::to_string(pos_));
}

uint16_t ByteReader::u16() {
  need(2);
  auto* p = reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_;
  pos_ += 2;
  return uint16_t(p[0]) | uint16_t(p[1]) << 8;
}

uint32_t ByteReader::u32() {
  need(4);
  auto* p = reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_;
  pos_ += 4;
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

uint64_t ByteReader::u64() {
  uint64_t lo = u32();
  uint64_t hi = u32();
  return lo | hi << 32;
}

float ByteReader::f32() {
  uint32_t bits = u32();
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

std::string_view ByteReader::take(size_t n) {
  need(n);
  auto v = bytes_.substr(pos_, n);
  pos_ += n;
  return v;
}

void ByteReader::expect_done() const {
  if (pos_ != bytes_.size())
    raise(Err::TruncatedFile,
          ctx_ + ": " + std::to_string(bytes_.size() - pos_) + " trailing bytes");
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Err::IoError, "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) raise(Err::IoError, "read failed: " + path);
  return bytes;
}

void atomic_write_file(const std::string& path, std::string_view bytes) {
  std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) raise(Err::IoError, "cannot open " + tmp);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    out.flush();
    if (!out) raise(Err::IoError, "write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    raise(Err::IoError, "rename to " + path + " failed");
  }
}

void parallel_for(int jobs, int n, const std::function<void(int)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto worker = [&] {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  int k = std::min(jobs, n);
  pool.reserve(size_t(k));
  for (int t = 0; t < k; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace loraudio
