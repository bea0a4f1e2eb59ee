#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "loraudio/checkpoint.hpp"
#include "loraudio/common.hpp"
#include "loraudio/lora.hpp"
#include "loraudio/tensor.hpp"

// Squeeze-and-excitation residual classifier over feature maps.  Three
// strided conv stems widen 1 channel to the final width, then three
// sub-layers of SE residual blocks refine at constant width, and a global
// average pool feeds a two-class linear head.  Class 0 is bonafide, class 1
// spoof; the detection score is logit(bonafide) - logit(spoof).

namespace loraudio {

inline constexpr int kBonafideClass = 0;
inline constexpr int kNumClasses = 2;

struct SENetConfig {
  std::vector<int> stem_channels = {128, 256, 512};
  std::vector<int> stem_kernels = {9, 7, 5};
  int blocks_per_sublayer = 3;
  int se_reduction = 16;
  int stem_stride = 2;
  int in_channels = 1;

  void validate() const {
    if (stem_channels.size() != 3 || stem_kernels.size() != 3)
      throw ValidationError("model: stem_channels and stem_kernels must list 3 values");
    for (int c : stem_channels)
      if (c < 1) throw ValidationError("model: channel counts must be >= 1");
    for (int k : stem_kernels)
      if (k < 1 || k % 2 == 0)
        throw ValidationError("model: stem kernels must be odd and >= 1");
    if (blocks_per_sublayer < 1) throw ValidationError("model: blocks_per_sublayer must be >= 1");
    if (se_reduction < 1) throw ValidationError("model: se_reduction must be >= 1");
    for (int c : stem_channels)
      if (c % se_reduction != 0)
        throw ValidationError("model: se_reduction must divide every channel count");
    if (stem_stride < 1) throw ValidationError("model: stem_stride must be >= 1");
    if (in_channels < 1) throw ValidationError("model: in_channels must be >= 1");
  }
};

// Name and shape of every model tensor, in serialization order.
inline std::vector<std::pair<std::string, Shape>> model_layout(const SENetConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::string, Shape>> layout;
  int prev = cfg.in_channels;
  for (int i = 0; i < 3; ++i) {
    int c = cfg.stem_channels[size_t(i)], k = cfg.stem_kernels[size_t(i)];
    std::string stem = "stem" + std::to_string(i + 1);
    layout.push_back({stem + ".w", {c, prev, k, k}});
    layout.push_back({stem + ".b", {c}});
    prev = c;
  }
  for (int i = 0; i < 3; ++i) {
    int c = cfg.stem_channels[size_t(i)];
    int cr = c / cfg.se_reduction;
    for (int j = 0; j < cfg.blocks_per_sublayer; ++j) {
      std::string blk = "sub" + std::to_string(i + 1) + ".block" + std::to_string(j + 1);
      layout.push_back({blk + ".conv1.w", {c, c, 3, 3}});
      layout.push_back({blk + ".conv1.b", {c}});
      layout.push_back({blk + ".conv2.w", {c, c, 3, 3}});
      layout.push_back({blk + ".conv2.b", {c}});
      layout.push_back({blk + ".se.fc1.w", {cr, c}});
      layout.push_back({blk + ".se.fc1.b", {cr}});
      layout.push_back({blk + ".se.fc2.w", {c, cr}});
      layout.push_back({blk + ".se.fc2.b", {c}});
    }
  }
  layout.push_back({"head.w", {kNumClasses, cfg.stem_channels[2]}});
  layout.push_back({"head.b", {kNumClasses}});
  return layout;
}

template <typename S>
struct SENetModel {
  SENetConfig cfg;
  TensorStore<S> params;
};

// Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases.  Each tensor
// draws from its own name-keyed stream, so the result is independent of
// construction order.
template <typename S>
SENetModel<S> build_model(const SENetConfig& cfg, uint64_t seed) {
  SENetModel<S> model;
  model.cfg = cfg;
  for (const auto& [name, shape] : model_layout(cfg)) {
    auto t = Tensor<S>::zeros(shape);
    if (shape.size() >= 2) {
      int64_t fan_in = shape_numel(shape) / shape[0];
      double bound = std::sqrt(6.0 / double(fan_in));
      Rng rng(derive_seed(seed, "init." + name));
      for (int64_t i = 0; i < t.numel(); ++i)
        t.values()[i] = S(rng.uniform(-bound, bound));
    }
    model.params.add(name, std::move(t));
  }
  return model;
}

template <typename S>
std::vector<std::pair<std::string, Shape>> store_layout(const TensorStore<S>& store) {
  std::vector<std::pair<std::string, Shape>> layout;
  for (size_t i = 0; i < store.names.size(); ++i)
    layout.push_back({store.names[i], store.tensors[i].shape()});
  return layout;
}

// Checkpoint into a config-shaped model; tensor names and shapes must match
// the layout exactly.
template <typename S>
SENetModel<S> load_model(const std::string& path, const SENetConfig& cfg) {
  SENetModel<S> model;
  model.cfg = cfg;
  model.params = load_checkpoint<S>(path);
  auto expected = model_layout(cfg);
  auto actual = store_layout(model.params);
  if (actual != expected)
    throw ValidationError("checkpoint " + path + " does not match the model config (" +
                          std::to_string(actual.size()) + " tensors vs " +
                          std::to_string(expected.size()) + " expected, or shapes differ)");
  return model;
}

// Default adapter targets: every plain linear map in the model, i.e. the
// three stems via their matrix views, both SE FC layers of every block, and
// the head.  Residual 3x3 convs stay untouched.
inline std::vector<std::string> default_adapter_targets(const SENetConfig& cfg) {
  std::vector<std::string> targets = {"stem1.w", "stem2.w", "stem3.w"};
  for (int i = 1; i <= 3; ++i)
    for (int j = 1; j <= cfg.blocks_per_sublayer; ++j) {
      std::string blk = "sub" + std::to_string(i) + ".block" + std::to_string(j);
      targets.push_back(blk + ".se.fc1.w");
      targets.push_back(blk + ".se.fc2.w");
    }
  targets.push_back("head.w");
  return targets;
}

// Matrix-view dimensions for the named targets, validated against the model.
template <typename S>
TargetDims adapter_target_dims(const SENetModel<S>& model, const std::vector<std::string>& targets) {
  auto all = target_dims_from_layout(store_layout(model.params));
  TargetDims out;
  for (const auto& name : targets) {
    const LayerDims* d = find_dims(all, name);
    if (!d)
      raise(Err::UnknownAdapterTarget,
            name + (model.params.has(name) ? " is not a matrix-shaped tensor" : " not in model"));
    out.push_back({name, *d});
  }
  return out;
}

namespace detail {

template <typename S>
Tensor<S> conv_layer(const SENetModel<S>& m, const AdapterSet<S>* adapters,
                     const std::string& prefix, const Tensor<S>& x, int stride, int pad) {
  const auto& w = m.params.at(prefix + ".w");
  const auto& b = m.params.at(prefix + ".b");
  Tensor<S> out = conv2d(x, w, b, stride, pad);
  const LoraPair<S>* p = adapters ? adapters->find(prefix + ".w") : nullptr;
  if (p) {
    // fold the low-rank delta back into kernel form and convolve; on the
    // patch matrix this is exactly (A B) x
    auto delta_kernel = reshape(matmul(p->A, p->B), w.shape());
    auto delta = conv2d(x, delta_kernel, Tensor<S>(), stride, pad);
    if (p->scaling != S(1)) delta = scale(delta, p->scaling);
    out = add(out, delta);
  }
  return out;
}

// x_cols is (d_in, n); returns (d_out, n)
template <typename S>
Tensor<S> linear_layer(const SENetModel<S>& m, const AdapterSet<S>* adapters,
                       const std::string& prefix, const Tensor<S>& x_cols) {
  const auto& w = m.params.at(prefix + ".w");
  const auto& b = m.params.at(prefix + ".b");
  const LoraPair<S>* p = adapters ? adapters->find(prefix + ".w") : nullptr;
  Tensor<S> z = p ? adapted_forward(w, *p, x_cols) : matmul(w, x_cols);
  return add_row_bias(z, b);
}

}  // namespace detail

// One SE residual block: conv3x3 -> ReLU -> conv3x3, gated per channel by a
// squeeze-and-excitation branch (pool -> FC C->C/r -> ReLU -> FC C/r->C ->
// sigmoid), then skip add and ReLU.
template <typename S>
Tensor<S> se_block_forward(const SENetModel<S>& model, const std::string& block_prefix,
                           const Tensor<S>& x, const AdapterSet<S>* adapters = nullptr) {
  auto h = relu(detail::conv_layer(model, adapters, block_prefix + ".conv1", x, 1, 1));
  h = detail::conv_layer(model, adapters, block_prefix + ".conv2", h, 1, 1);

  auto pooled = transpose(global_avg_pool(h));  // (C, N)
  auto z = relu(detail::linear_layer(model, adapters, block_prefix + ".se.fc1", pooled));
  z = detail::linear_layer(model, adapters, block_prefix + ".se.fc2", z);
  auto gate = transpose(sigmoid(z));  // (N, C)

  return relu(add(channel_scale(h, gate), x));
}

// batch: (N, in_channels, frames, dims) -> logits (N, 2).  Adapters apply to
// any layer whose weight name matches a pair target; every pair must match.
template <typename S>
Tensor<S> forward(const SENetModel<S>& model, const Tensor<S>& batch,
                  const AdapterSet<S>* adapters = nullptr) {
  const auto& cfg = model.cfg;
  if (batch.rank() != 4 || batch.dim(1) != cfg.in_channels)
    raise(Err::ShapeMismatch, "forward: batch " + shape_str(batch.shape()) + " (need [N," +
                                  std::to_string(cfg.in_channels) + ",H,W])");
  if (adapters)
    for (const auto& p : adapters->pairs)
      if (!model.params.has(p.target))
        raise(Err::UnknownAdapterTarget, "adapter target " + p.target + " not in model");

  Tensor<S> x = batch;
  for (int i = 1; i <= 3; ++i) {
    int k = cfg.stem_kernels[size_t(i) - 1];
    x = relu(detail::conv_layer(model, adapters, "stem" + std::to_string(i), x,
                                cfg.stem_stride, k / 2));
    for (int j = 1; j <= cfg.blocks_per_sublayer; ++j)
      x = se_block_forward(model, "sub" + std::to_string(i) + ".block" + std::to_string(j), x,
                           adapters);
  }

  auto pooled = transpose(global_avg_pool(x));  // (C, N)
  auto logits_cols = detail::linear_layer(model, adapters, "head", pooled);
  return transpose(logits_cols);  // (N, 2)
}

// Detection score per sample: logit(bonafide) - logit(spoof).  Higher means
// more genuine.
template <typename S>
std::vector<double> score(const Tensor<S>& logits) {
  if (logits.rank() != 2 || logits.dim(1) != kNumClasses)
    raise(Err::ShapeMismatch, "score: logits " + shape_str(logits.shape()));
  std::vector<double> out(size_t(logits.dim(0)));
  for (int i = 0; i < logits.dim(0); ++i)
    out[size_t(i)] = double(logits.values()[i * kNumClasses + kBonafideClass]) -
                     double(logits.values()[i * kNumClasses + 1 - kBonafideClass]);
  return out;
}

}  // namespace loraudio
