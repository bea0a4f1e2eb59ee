#include <doctest.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "loraudio/common.hpp"

using namespace loraudio;

TEST_CASE("fnv1a64 matches published reference values") {
  // test vectors from the FNV reference code
  CHECK(fnv1a64("", 0) == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a", 1) == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar", 6) == 0x85944171f73967e8ull);
}

TEST_CASE("derive_seed separates streams and is stable") {
  uint64_t a1 = derive_seed(42, "corpus.A");
  uint64_t a2 = derive_seed(42, "corpus.A");
  uint64_t b = derive_seed(42, "corpus.B");
  uint64_t other_root = derive_seed(43, "corpus.A");
  CHECK(a1 == a2);
  CHECK(a1 != b);
  CHECK(a1 != other_root);
}

TEST_CASE("rng is deterministic and seed-sensitive") {
  Rng r1(7), r2(7), r3(8);
  for (int i = 0; i < 100; ++i) {
    double v = r1.uniform();
    CHECK(v == r2.uniform());
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
  bool differs = false;
  Rng r4(7);
  for (int i = 0; i < 10; ++i) differs = differs || (r4.uniform() != r3.uniform());
  CHECK(differs);
}

TEST_CASE("rng seed zero is remapped, not degenerate") {
  Rng r(0);
  std::set<uint64_t> seen;
  for (int i = 0; i < 50; ++i) seen.insert(r.next_u64());
  CHECK(seen.size() == 50);
}

TEST_CASE("rng uniform_int covers its range without bias artifacts") {
  Rng r(12345);
  int counts[6] = {0};
  for (int i = 0; i < 60000; ++i) counts[r.uniform_int(0, 5)] += 1;
  for (int k = 0; k < 6; ++k) {
    CHECK(counts[k] > 9000);
    CHECK(counts[k] < 11000);
  }
  for (int i = 0; i < 100; ++i) CHECK(r.uniform_int(3, 3) == 3);
}

TEST_CASE("rng gaussian has near-standard moments") {
  Rng r(99);
  double sum = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double g = r.gaussian();
    sum += g;
    sq += g * g;
  }
  double mean = sum / n;
  double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("rng shuffle is a permutation and depends on seed") {
  std::vector<int> v1 = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  auto v2 = v1;
  Rng r1(5), r2(5);
  r1.shuffle(v1.begin(), v1.end());
  r2.shuffle(v2.begin(), v2.end());
  CHECK(v1 == v2);
  std::set<int> elems(v1.begin(), v1.end());
  CHECK(elems.size() == 10);
}

TEST_CASE("byte packing round-trips through ByteReader") {
  std::string buf;
  put_u16(buf, 0xBEEF);
  put_u32(buf, 0xDEADBEEFu);
  put_u64(buf, 0x0123456789ABCDEFull);
  put_f32(buf, -1.5f);
  ByteReader r(buf, "test");
  CHECK(r.u16() == 0xBEEF);
  CHECK(r.u32() == 0xDEADBEEFu);
  CHECK(r.u64() == 0x0123456789ABCDEFull);
  CHECK(r.f32() == -1.5f);
  CHECK(r.done());
  r.expect_done();
}

TEST_CASE("byte packing is little-endian on disk") {
  std::string buf;
  put_u32(buf, 0x01020304u);
  REQUIRE(buf.size() == 4);
  CHECK(uint8_t(buf[0]) == 0x04);
  CHECK(uint8_t(buf[3]) == 0x01);
}

TEST_CASE("ByteReader raises TruncatedFile past the end") {
  std::string buf;
  put_u16(buf, 7);
  ByteReader r(buf, "trunc-test");
  CHECK_THROWS_AS(r.u32(), Error);
  try {
    ByteReader r2(buf, "trunc-test");
    r2.u32();
  } catch (const Error& e) {
    CHECK(e.code() == Err::TruncatedFile);
    CHECK(std::string(e.what()).find("trunc-test") != std::string::npos);
  }
}

TEST_CASE("ByteReader expect_done rejects trailing bytes") {
  std::string buf = "abcd";
  ByteReader r(buf, "tail-test");
  r.take(2);
  CHECK_THROWS_AS(r.expect_done(), Error);
}

TEST_CASE("atomic_write_file then read_file_bytes round-trips") {
  auto dir = std::filesystem::temp_directory_path() / "loraudio_test_io";
  std::filesystem::create_directories(dir);
  auto path = (dir / "blob.bin").string();
  std::string payload = "hello\0world", expect(payload);
  atomic_write_file(path, payload);
  CHECK(read_file_bytes(path) == expect);
  atomic_write_file(path, "second");
  CHECK(read_file_bytes(path) == "second");
  std::filesystem::remove_all(dir);
}

TEST_CASE("read_file_bytes raises IoError for a missing path") {
  CHECK_THROWS_AS(read_file_bytes("/nonexistent/loraudio/nope.bin"), Error);
}

TEST_CASE("parallel_for covers every index exactly once") {
  std::vector<std::atomic<int>> hits(257);
  parallel_for(4, 257, [&](int i) { hits[size_t(i)] += 1; });
  for (auto& h : hits) CHECK(h.load() == 1);
}

TEST_CASE("parallel_for propagates the first worker exception") {
  CHECK_THROWS_AS(parallel_for(3, 64,
                               [](int i) {
                                 if (i == 17) throw ValidationError("boom");
                               }),
                  ValidationError);
}

TEST_CASE("error text leads with the error name") {
  try {
    raise(Err::BadMagic, "details here");
  } catch (const Error& e) {
    CHECK(std::string(e.what()) == "BadMagic: details here");
  }
}
