#pragma once

#include <cstdint>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace loraudio {

// Error codes carried by loraudio::Error.  CLI maps Error to exit code 2 and
// ValidationError (bad flags / config values) to exit code 1.
enum class Err {
  NotWav,
  UnsupportedChannels,
  UnsupportedBitDepth,
  SampleRateMismatch,
  MalformedLine,
  UnknownLabel,
  EmptyClass,
  OneClassOnly,
  TooShort,
  ShapeMismatch,
  NonScalarLoss,
  MissingGrad,
  UnknownAdapterTarget,
  RankTooLarge,
  BadMagic,
  TruncatedFile,
  FingerprintMismatch,
  BaseMutated,
  IoError,
};

const char* err_name(Err code);

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& msg)
      : std::runtime_error(std::string(err_name(code)) + ": " + msg), code_(code) {}
  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void raise(Err code, const std::string& msg) { throw Error(code, msg); }

// Bad user input (flags, config files, incompatible options).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 64-bit FNV-1a over a byte range.
uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull);
inline uint64_t fnv1a64(std::string_view bytes) { return fnv1a64(bytes.data(), bytes.size()); }

// Stable sub-seed derivation: one root seed fans out to independent streams
// keyed by a short tag ("corpus.A", "shuffle.3", ...).
uint64_t derive_seed(uint64_t root, std::string_view tag);

// Deterministic random source.  Both the generator and the value conversions
// (uniform, gaussian, integer range, shuffle) are spelled out here because the
// std distribution objects are implementation-defined and would break
// cross-toolchain reproducibility.
class Rng {
 public:
  explicit Rng(uint64_t seed) : s_(seed == 0 ? 0x9e3779b97f4a7c15ull : seed) {
    for (int i = 0; i < 4; ++i) next_u64();  // warm up a thin seed
  }

  uint64_t next_u64() {
    // xorshift64* : tiny, fast, and fully specified by this header
    s_ ^= s_ >> 12;
    s_ ^= s_ << 25;
    s_ ^= s_ >> 27;
    return s_ * 0x2545f4914f6cdd1dull;
  }

  // uniform in [0, 1), 53 usable bits
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller; second sample cached
  double gaussian();

  // inclusive integer range, rejection sampled to avoid modulo bias
  int64_t uniform_int(int64_t lo, int64_t hi);

  template <typename It>
  void shuffle(It first, It last) {
    auto n = int64_t(last - first);
    for (int64_t i = n - 1; i > 0; --i) {
      auto j = uniform_int(0, i);
      std::swap(first[i], first[j]);
    }
  }

 private:
  uint64_t s_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// ---- little-endian byte packing ----

void put_u16(std::string& out, uint16_t v);
void put_u32(std::string& out, uint32_t v);
void put_u64(std::string& out, uint64_t v);
void put_f32(std::string& out, float v);

// Bounds-checked little-endian reader over a byte buffer.  Running past the
// end raises TruncatedFile with the consumer's name in the message.
class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string context)
      : bytes_(bytes), ctx_(std::move(context)) {}

  uint16_t u16();
  uint32_t u32();
  uint64_t u64();
  float f32();
  std::string_view take(size_t n);
  size_t remaining() const { return bytes_.size() - pos_; }
  bool done() const { return pos_ == bytes_.size(); }
  void expect_done() const;

 private:
  void need(size_t n) const;
  std::string_view bytes_;
  std::string ctx_;
  size_t pos_ = 0;
};

std::string read_file_bytes(const std::string& path);

// Write via temp file + rename so readers never observe a half-written file.
void atomic_write_file(const std::string& path, std::string_view bytes);

// Run fn(0..n-1) on `jobs` threads.  Work items must not touch shared mutable
// state; the first exception thrown by any item is rethrown after join.
void parallel_for(int jobs, int n, const std::function<void(int)>& fn);

}  // namespace loraudio
