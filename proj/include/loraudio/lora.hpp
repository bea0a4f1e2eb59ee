#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "loraudio/checkpoint.hpp"
#include "loraudio/tensor.hpp"

// Low-rank adapter pairs.  A layer with weight matrix W (d_out x d_in) gets a
// pair (A: d_out x r, B: r x d_in); the adapted map is
//   h = W x + scaling * A (B x)
// with W frozen.  Convolution kernels participate through their matrix view
// (C_out x C_in*kh*kw): the pair is trained against that view and folded back
// to a kernel when the delta is convolved or merged.

namespace loraudio {

template <typename S>
struct LoraPair {
  std::string target;
  Tensor<S> A;  // d_out x r, zero-initialized
  Tensor<S> B;  // r x d_in
  int rank = 0;
  S scaling = S(1);
};

template <typename S>
struct AdapterSet {
  std::string tag;
  std::vector<LoraPair<S>> pairs;
  std::unordered_map<std::string, size_t> index;
  uint64_t base_fingerprint = 0;

  void add(LoraPair<S> pair) {
    if (index.count(pair.target))
      raise(Err::ShapeMismatch, "duplicate adapter target " + pair.target);
    index[pair.target] = pairs.size();
    pairs.push_back(std::move(pair));
  }

  const LoraPair<S>* find(const std::string& target) const {
    auto it = index.find(target);
    return it == index.end() ? nullptr : &pairs[it->second];
  }

  std::vector<Tensor<S>> trainable() const {
    std::vector<Tensor<S>> out;
    for (const auto& p : pairs) {
      out.push_back(p.A);
      out.push_back(p.B);
    }
    return out;
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& p : pairs) n += p.A.numel() + p.B.numel();
    return n;
  }
};

struct LayerDims {
  int d_out = 0;
  int d_in = 0;
};
using TargetDims = std::vector<std::pair<std::string, LayerDims>>;

// Matrix-view dimensions of every rank >= 2 tensor in a checkpoint layout:
// d_out is the leading dimension, d_in the rest folded together.
inline TargetDims target_dims_from_layout(
    const std::vector<std::pair<std::string, Shape>>& layout) {
  TargetDims dims;
  for (const auto& [name, shape] : layout) {
    if (shape.size() < 2) continue;
    auto n = shape_numel(shape);
    dims.push_back({name, {shape[0], int(n / shape[0])}});
  }
  return dims;
}

inline const LayerDims* find_dims(const TargetDims& dims, const std::string& name) {
  for (const auto& [n, d] : dims)
    if (n == name) return &d;
  return nullptr;
}

// Rank-4 kernel as its (C_out, C_in*kh*kw) matrix view; graph-aware, so
// gradients flow back to the kernel.
template <typename S>
Tensor<S> conv_as_matrix(const Tensor<S>& w) {
  if (w.rank() != 4)
    raise(Err::ShapeMismatch, "conv_as_matrix: need rank 4, got " + shape_str(w.shape()));
  return reshape(w, {w.dim(0), int(w.numel() / w.dim(0))});
}

// Fresh adapters: A all zero so the adapted model starts exactly equal to the
// base; B gaussian with std 0.01 so A receives a nonzero gradient from step
// one.  literal_zero_b reproduces the all-zero published initialization,
// which is a gradient fixed point (dL/dA has a factor Bx = 0 and dL/dB a
// factor A^T = 0), so training goes nowhere; it exists to demonstrate that.
// Requested ranks above min(d_out, d_in) are clamped per target.
template <typename S>
AdapterSet<S> init_adapters(const TargetDims& targets, int rank, uint64_t seed,
                            bool literal_zero_b = false) {
  if (rank < 1) throw ValidationError("adapter rank must be >= 1");
  AdapterSet<S> set;
  for (const auto& [name, d] : targets) {
    int r = std::min({rank, d.d_out, d.d_in});
    LoraPair<S> pair;
    pair.target = name;
    pair.rank = r;
    pair.scaling = S(1);
    pair.A = Tensor<S>::zeros({d.d_out, r}, true);
    pair.B = Tensor<S>::zeros({r, d.d_in}, true);
    if (!literal_zero_b) {
      Rng rng(derive_seed(seed, "lora." + name));
      for (int64_t i = 0; i < pair.B.numel(); ++i)
        pair.B.values()[i] = S(0.01 * rng.gaussian());
    }
    set.add(std::move(pair));
  }
  return set;
}

template <typename S>
void check_pair_dims(const char* op, const Tensor<S>& w_matrix, const LoraPair<S>& pair) {
  if (pair.A.rank() != 2 || pair.B.rank() != 2 || pair.A.dim(1) != pair.B.dim(0) ||
      pair.A.dim(0) != w_matrix.dim(0) || pair.B.dim(1) != w_matrix.dim(1))
    raise(Err::ShapeMismatch, std::string(op) + ": W " + shape_str(w_matrix.shape()) + ", A " +
                                  shape_str(pair.A.shape()) + ", B " +
                                  shape_str(pair.B.shape()));
}

// h = W x + scaling * A (B x); W (d_out, d_in), x (d_in, n_cols).
template <typename S>
Tensor<S> adapted_forward(const Tensor<S>& W, const LoraPair<S>& pair, const Tensor<S>& x) {
  if (W.rank() != 2)
    raise(Err::ShapeMismatch, "adapted_forward: W " + shape_str(W.shape()));
  check_pair_dims("adapted_forward", W, pair);
  auto base = matmul(W, x);
  auto delta = matmul(pair.A, matmul(pair.B, x));
  if (pair.scaling != S(1)) delta = scale(delta, pair.scaling);
  return add(base, delta);
}

// W' = W + scaling * A B, folded back to W's shape.  Plain values, no graph.
template <typename S>
Tensor<S> merge_pair(const Tensor<S>& W, const LoraPair<S>& pair) {
  if (W.rank() < 2) raise(Err::ShapeMismatch, "merge_pair: W " + shape_str(W.shape()));
  int d_out = W.dim(0);
  int d_in = int(W.numel() / d_out);
  if (pair.A.dim(0) != d_out || pair.B.dim(1) != d_in || pair.A.dim(1) != pair.B.dim(0))
    raise(Err::ShapeMismatch, "merge_pair: W view [" + std::to_string(d_out) + "," +
                                  std::to_string(d_in) + "], A " + shape_str(pair.A.shape()) +
                                  ", B " + shape_str(pair.B.shape()));
  Tensor<S> out = Tensor<S>::zeros(W.shape());
  MatView<S>(out.values().data(), d_out, d_in).noalias() =
      ConstMatView<S>(W.values().data(), d_out, d_in) +
      pair.scaling * (pair.A.node->mat(d_out, pair.rank) * pair.B.node->mat(pair.rank, d_in));
  return out;
}

// ---- FADLORA1 serialization ----
// magic, u32 version, u64 base_fingerprint, u32 pair count, then per pair:
// u16 name length, name, u32 rank, f32 scaling, A payload, B payload (f32,
// row-major).  A/B dimensions are not stored; they come from the base
// checkpoint the set is bound to.

inline constexpr uint32_t kAdapterVersion = 1;

template <typename S>
std::string serialize_adapters(const AdapterSet<S>& set) {
  std::string out = "FADLORA1";
  put_u32(out, kAdapterVersion);
  put_u64(out, set.base_fingerprint);
  put_u32(out, uint32_t(set.pairs.size()));
  for (const auto& p : set.pairs) {
    put_u16(out, uint16_t(p.target.size()));
    out += p.target;
    put_u32(out, uint32_t(p.rank));
    put_f32(out, float(p.scaling));
    for (int64_t i = 0; i < p.A.numel(); ++i) put_f32(out, float(p.A.values()[i]));
    for (int64_t i = 0; i < p.B.numel(); ++i) put_f32(out, float(p.B.values()[i]));
  }
  return out;
}

// Exact size of serialize_adapters output for a fresh set at the given rank.
inline int64_t adapter_file_bytes(const TargetDims& targets, int rank) {
  int64_t total = 8 + 4 + 8 + 4;
  for (const auto& [name, d] : targets) {
    int r = std::min({rank, d.d_out, d.d_in});
    total += 2 + int64_t(name.size()) + 4 + 4 + 4 * (int64_t(d.d_out) * r + int64_t(r) * d.d_in);
  }
  return total;
}

template <typename S>
AdapterSet<S> parse_adapters(std::string_view bytes, const TargetDims& base_dims,
                             uint64_t expected_fingerprint) {
  ByteReader r(bytes, "adapter set");
  if (r.take(8) != "FADLORA1") raise(Err::BadMagic, "adapter set: expected FADLORA1");
  uint32_t version = r.u32();
  if (version != kAdapterVersion)
    raise(Err::BadMagic, "adapter set: unsupported version " + std::to_string(version));
  uint64_t fp = r.u64();
  if (fp != expected_fingerprint)
    raise(Err::FingerprintMismatch,
          "adapter set was trained against a different base checkpoint (file fingerprint " +
              std::to_string(fp) + ", base " + std::to_string(expected_fingerprint) + ")");
  uint32_t count = r.u32();
  AdapterSet<S> set;
  set.base_fingerprint = fp;
  for (uint32_t i = 0; i < count; ++i) {
    std::string name(r.take(r.u16()));
    const LayerDims* d = find_dims(base_dims, name);
    if (!d) raise(Err::UnknownAdapterTarget, "adapter target " + name + " not in base model");
    uint32_t rank = r.u32();
    if (rank < 1 || int(rank) > std::min(d->d_out, d->d_in))
      raise(Err::RankTooLarge, "target " + name + ": rank " + std::to_string(rank) +
                                   " exceeds min(" + std::to_string(d->d_out) + ", " +
                                   std::to_string(d->d_in) + ")");
    LoraPair<S> pair;
    pair.target = name;
    pair.rank = int(rank);
    pair.scaling = S(r.f32());
    pair.A = Tensor<S>::zeros({d->d_out, int(rank)}, true);
    pair.B = Tensor<S>::zeros({int(rank), d->d_in}, true);
    for (int64_t j = 0; j < pair.A.numel(); ++j) pair.A.values()[j] = S(r.f32());
    for (int64_t j = 0; j < pair.B.numel(); ++j) pair.B.values()[j] = S(r.f32());
    set.add(std::move(pair));
  }
  r.expect_done();
  return set;
}

template <typename S>
void save_adapters(const AdapterSet<S>& set, const std::string& path) {
  atomic_write_file(path, serialize_adapters(set));
}

// Load against the base checkpoint the set claims to belong to; target
// dimensions and the expected fingerprint both come from those bytes.
template <typename S>
AdapterSet<S> load_adapters(const std::string& path, std::string_view base_checkpoint_bytes) {
  auto dims = target_dims_from_layout(checkpoint_layout(base_checkpoint_bytes));
  return parse_adapters<S>(read_file_bytes(path), dims,
                           fingerprint_bytes(base_checkpoint_bytes));
}

}  // namespace loraudio
