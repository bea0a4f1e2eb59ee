#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "loraudio/tensor.hpp"

namespace loraudio {

// Ordered collection of named tensors.  Serialization order is insertion
// order, so a round trip is byte-identical.
template <typename S>
struct TensorStore {
  std::vector<std::string> names;
  std::vector<Tensor<S>> tensors;
  std::unordered_map<std::string, size_t> index;

  void add(const std::string& name, Tensor<S> t) {
    if (index.count(name)) raise(Err::ShapeMismatch, "duplicate tensor name " + name);
    index[name] = names.size();
    names.push_back(name);
    tensors.push_back(std::move(t));
  }

  bool has(const std::string& name) const { return index.count(name) != 0; }

  Tensor<S>& at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) raise(Err::UnknownAdapterTarget, "no tensor named " + name);
    return tensors[it->second];
  }
  const Tensor<S>& at(const std::string& name) const {
    return const_cast<TensorStore*>(this)->at(name);
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& t : tensors) n += t.numel();
    return n;
  }

  void set_trainable(bool trainable) {
    for (auto& t : tensors) t.set_requires_grad(trainable);
  }

  std::vector<Tensor<S>> trainable() const {
    std::vector<Tensor<S>> out;
    for (const auto& t : tensors)
      if (t.requires_grad()) out.push_back(t);
    return out;
  }
};

// Checkpoint bytes: magic FADCKPT1, u32 version, u32 tensor count, then per
// tensor u16 name length, name, u8 rank, u32 per dimension, row-major f32
// payload.  Payloads are written as f32 regardless of the engine scalar.
inline constexpr uint32_t kCheckpointVersion = 1;

template <typename S>
std::string serialize_store(const TensorStore<S>& store) {
  std::string out = "FADCKPT1";
  put_u32(out, kCheckpointVersion);
  put_u32(out, uint32_t(store.names.size()));
  for (size_t i = 0; i < store.names.size(); ++i) {
    const auto& name = store.names[i];
    const auto& t = store.tensors[i];
    put_u16(out, uint16_t(name.size()));
    out += name;
    out.push_back(char(t.rank()));
    for (int d = 0; d < t.rank(); ++d) put_u32(out, uint32_t(t.dim(d)));
    for (int64_t j = 0; j < t.numel(); ++j) put_f32(out, float(t.values()[j]));
  }
  return out;
}

// Names and shapes only; cheap enough for inspect and for deriving adapter
// target dimensions without materializing tensors.
inline std::vector<std::pair<std::string, Shape>> checkpoint_layout(std::string_view bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.take(8) != "FADCKPT1") raise(Err::BadMagic, "checkpoint: expected FADCKPT1");
  uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    raise(Err::BadMagic, "checkpoint: unsupported version " + std::to_string(version));
  uint32_t count = r.u32();
  std::vector<std::pair<std::string, Shape>> layout;
  layout.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    std::string name(r.take(r.u16()));
    int rank = int(uint8_t(r.take(1)[0]));
    Shape shape(static_cast<size_t>(rank), 0);
    for (int d = 0; d < rank; ++d) shape[size_t(d)] = int(r.u32());
    r.take(size_t(4) * size_t(shape_numel(shape)));
    layout.emplace_back(std::move(name), std::move(shape));
  }
  r.expect_done();
  return layout;
}

template <typename S>
TensorStore<S> deserialize_store(std::string_view bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.take(8) != "FADCKPT1") raise(Err::BadMagic, "checkpoint: expected FADCKPT1");
  uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    raise(Err::BadMagic, "checkpoint: unsupported version " + std::to_string(version));
  uint32_t count = r.u32();
  TensorStore<S> store;
  for (uint32_t i = 0; i < count; ++i) {
    std::string name(r.take(r.u16()));
    int rank = int(uint8_t(r.take(1)[0]));
    Shape shape(static_cast<size_t>(rank), 0);
    for (int d = 0; d < rank; ++d) shape[size_t(d)] = int(r.u32());
    auto t = Tensor<S>::zeros(shape);
    for (int64_t j = 0; j < t.numel(); ++j) t.values()[j] = S(r.f32());
    store.add(name, std::move(t));
  }
  r.expect_done();
  return store;
}

inline uint64_t fingerprint_bytes(std::string_view bytes) { return fnv1a64(bytes); }

inline uint64_t fingerprint_file(const std::string& path) {
  return fingerprint_bytes(read_file_bytes(path));
}

template <typename S>
void save_checkpoint(const TensorStore<S>& store, const std::string& path) {
  atomic_write_file(path, serialize_store(store));
}

template <typename S>
TensorStore<S> load_checkpoint(const std::string& path) {
  return deserialize_store<S>(read_file_bytes(path));
}

}  // namespace loraudio
