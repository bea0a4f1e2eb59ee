#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "loraudio/common.hpp"

// Reverse-mode tensor engine.  Dense values live in flat row-major Eigen
// arrays; 2-D views are Eigen maps so matmul and friends run on Eigen's GEMM.
// The scalar type is a template parameter: float for training, double for
// gradient checking.

namespace loraudio {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <typename S>
using MatView = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstMatView =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using FlatArray = Eigen::Array<S, Eigen::Dynamic, 1>;

namespace detail {

template <typename S>
struct TensorNode {
  Shape shape;
  FlatArray<S> value;
  FlatArray<S> grad;  // size 0 until populated
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;

  bool has_grad() const { return grad.size() != 0; }
  FlatArray<S>& ensure_grad() {
    if (grad.size() == 0) grad = FlatArray<S>::Zero(value.size());
    return grad;
  }
  ConstMatView<S> mat(int rows, int cols) const { return {value.data(), rows, cols}; }
  MatView<S> grad_mat(int rows, int cols) { return {ensure_grad().data(), rows, cols}; }
};

}  // namespace detail

template <typename S>
class Tensor {
 public:
  using Node = detail::TensorNode<S>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.node = std::make_shared<Node>();
    t.node->shape = std::move(shape);
    t.node->value = FlatArray<S>::Zero(shape_numel(t.node->shape));
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  static Tensor from_data(Shape shape, const std::vector<S>& data, bool requires_grad = false) {
    if (int64_t(data.size()) != shape_numel(shape))
      raise(Err::ShapeMismatch, "from_data: " + std::to_string(data.size()) +
                                    " values for shape " + shape_str(shape));
    Tensor t = zeros(std::move(shape), requires_grad);
    for (size_t i = 0; i < data.size(); ++i) t.node->value[int64_t(i)] = data[i];
    return t;
  }

  static Tensor scalar_value(S v, bool requires_grad = false) {
    Tensor t = zeros({1}, requires_grad);
    t.node->value[0] = v;
    return t;
  }

  explicit operator bool() const { return node != nullptr; }

  const Shape& shape() const { return node->shape; }
  int rank() const { return int(node->shape.size()); }
  int dim(int i) const { return node->shape[size_t(i)]; }
  int64_t numel() const { return node->value.size(); }

  FlatArray<S>& values() { return node->value; }
  const FlatArray<S>& values() const { return node->value; }

  bool requires_grad() const { return node->requires_grad; }

  // Leaves flagged trainable carry a zero gradient from the start, so a leaf
  // untouched by backward still reads as all-zero.  Freezing drops the array
  // entirely: frozen tensors must never hold a populated gradient.
  void set_requires_grad(bool rg) {
    node->requires_grad = rg;
    if (rg)
      node->ensure_grad();
    else
      node->grad.resize(0);
  }

  bool has_grad() const { return node->has_grad(); }
  const FlatArray<S>& grad() const { return node->grad; }
  void clear_grad() {
    if (node->has_grad()) node->grad.setZero();
  }

  S item() const {
    if (numel() != 1) raise(Err::NonScalarLoss, "item() on shape " + shape_str(shape()));
    return node->value[0];
  }

  std::shared_ptr<Node> node;
};

namespace detail {

template <typename S>
Tensor<S> make_op(Shape shape, const char* op, std::vector<Tensor<S>> parents) {
  Tensor<S> t;
  t.node = std::make_shared<TensorNode<S>>();
  t.node->shape = std::move(shape);
  t.node->value.resize(shape_numel(t.node->shape));
  t.node->op = op;
  for (auto& p : parents) {
    if (p.node->requires_grad) t.node->requires_grad = true;
    t.node->parents.push_back(p.node);
  }
  return t;
}

template <typename S>
void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    raise(Err::ShapeMismatch,
          std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---- element ops ----

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("add", a, b);
  auto out = detail::make_op<S>(a.shape(), "add", {a, b});
  out.node->value = a.values() + b.values();
  auto an = a.node, bn = b.node;
  out.node->backprop = [an, bn](detail::TensorNode<S>& self) {
    if (an->requires_grad) an->ensure_grad() += self.grad;
    if (bn->requires_grad) bn->ensure_grad() += self.grad;
  };
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("mul", a, b);
  auto out = detail::make_op<S>(a.shape(), "mul", {a, b});
  out.node->value = a.values() * b.values();
  auto an = a.node, bn = b.node;
  out.node->backprop = [an, bn](detail::TensorNode<S>& self) {
    if (an->requires_grad) an->ensure_grad() += self.grad * bn->value;
    if (bn->requires_grad) bn->ensure_grad() += self.grad * an->value;
  };
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
  auto out = detail::make_op<S>(a.shape(), "scale", {a});
  out.node->value = a.values() * factor;
  auto an = a.node;
  out.node->backprop = [an, factor](detail::TensorNode<S>& self) {
    if (an->requires_grad) an->ensure_grad() += self.grad * factor;
  };
  return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  auto out = detail::make_op<S>(a.shape(), "relu", {a});
  out.node->value = a.values().max(S(0));
  auto an = a.node;
  out.node->backprop = [an](detail::TensorNode<S>& self) {
    if (an->requires_grad)
      an->ensure_grad() += (an->value > S(0)).select(self.grad, FlatArray<S>::Zero(self.grad.size()));
  };
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  auto out = detail::make_op<S>(a.shape(), "sigmoid", {a});
  out.node->value = S(1) / (S(1) + (-a.values()).exp());
  auto an = a.node;
  out.node->backprop = [an](detail::TensorNode<S>& self) {
    if (an->requires_grad)
      an->ensure_grad() += self.grad * self.value * (S(1) - self.value);
  };
  return out;
}

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  auto out = detail::make_op<S>({1}, "sum", {a});
  out.node->value[0] = a.values().sum();
  auto an = a.node;
  out.node->backprop = [an](detail::TensorNode<S>& self) {
    if (an->requires_grad) an->ensure_grad() += self.grad[0];
  };
  return out;
}

// ---- shape plumbing ----

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    raise(Err::ShapeMismatch,
          "reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  auto out = detail::make_op<S>(std::move(shape), "reshape", {a});
  out.node->value = a.values();
  auto an = a.node;
  out.node->backprop = [an](detail::TensorNode<S>& self) {
    if (an->requires_grad) an->ensure_grad() += self.grad;
  };
  return out;
}

template <typename S>
Tensor<S> flatten(const Tensor<S>& a) {
  if (a.rank() < 2) raise(Err::ShapeMismatch, "flatten: rank >= 2 required");
  int n = a.dim(0);
  return reshape(a, {n, int(a.numel() / n)});
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.rank() != 2) raise(Err::ShapeMismatch, "transpose: need rank 2, got " + shape_str(a.shape()));
  int r = a.dim(0), c = a.dim(1);
  auto out = detail::make_op<S>({c, r}, "transpose", {a});
  MatView<S>(out.node->value.data(), c, r) = a.node->mat(r, c).transpose();
  auto an = a.node;
  out.node->backprop = [an, r, c](detail::TensorNode<S>& self) {
    if (an->requires_grad)
      an->grad_mat(r, c) += ConstMatView<S>(self.grad.data(), c, r).transpose();
  };
  return out;
}

// ---- linear algebra ----

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    raise(Err::ShapeMismatch, "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = detail::make_op<S>({m, n}, "matmul", {a, b});
  MatView<S>(out.node->value.data(), m, n).noalias() = a.node->mat(m, k) * b.node->mat(k, n);
  auto an = a.node, bn = b.node;
  out.node->backprop = [an, bn, m, k, n](detail::TensorNode<S>& self) {
    ConstMatView<S> dout(self.grad.data(), m, n);
    if (an->requires_grad) an->grad_mat(m, k).noalias() += dout * bn->mat(k, n).transpose();
    if (bn->requires_grad) bn->grad_mat(k, n).noalias() += an->mat(m, k).transpose() * dout;
  };
  return out;
}

// out(r, c) = m(r, c) + bias(r)
template <typename S>
Tensor<S> add_row_bias(const Tensor<S>& m, const Tensor<S>& bias) {
  if (m.rank() != 2 || bias.rank() != 1 || bias.dim(0) != m.dim(0))
    raise(Err::ShapeMismatch,
          "add_row_bias: " + shape_str(m.shape()) + " + " + shape_str(bias.shape()));
  int r = m.dim(0), c = m.dim(1);
  auto out = detail::make_op<S>({r, c}, "add_row_bias", {m, bias});
  MatView<S>(out.node->value.data(), r, c) =
      m.node->mat(r, c).colwise() + Eigen::Matrix<S, Eigen::Dynamic, 1>::Map(bias.values().data(), r);
  auto mn = m.node, bn = bias.node;
  out.node->backprop = [mn, bn, r, c](detail::TensorNode<S>& self) {
    ConstMatView<S> dout(self.grad.data(), r, c);
    if (mn->requires_grad) mn->grad_mat(r, c) += dout;
    if (bn->requires_grad)
      Eigen::Matrix<S, Eigen::Dynamic, 1>::Map(bn->ensure_grad().data(), r) += dout.rowwise().sum();
  };
  return out;
}

// ---- convolution ----

namespace detail {

struct ConvDims {
  int N, C, H, W, Cout, kh, kw, stride, pad, Ho, Wo;
};

template <typename S>
ConvDims conv_dims(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int stride,
                   int pad) {
  if (x.rank() != 4 || w.rank() != 4)
    raise(Err::ShapeMismatch,
          "conv2d: input " + shape_str(x.shape()) + ", kernel " + shape_str(w.shape()));
  ConvDims d;
  d.N = x.dim(0); d.C = x.dim(1); d.H = x.dim(2); d.W = x.dim(3);
  d.Cout = w.dim(0); d.kh = w.dim(2); d.kw = w.dim(3);
  d.stride = stride; d.pad = pad;
  if (w.dim(1) != d.C)
    raise(Err::ShapeMismatch,
          "conv2d: input " + shape_str(x.shape()) + " vs kernel " + shape_str(w.shape()));
  if (b && b.numel() != 0 && (b.rank() != 1 || b.dim(0) != d.Cout))
    raise(Err::ShapeMismatch, "conv2d: bias " + shape_str(b.shape()) + " for " +
                                  std::to_string(d.Cout) + " output channels");
  if (stride < 1 || pad < 0) raise(Err::ShapeMismatch, "conv2d: bad stride/pad");
  d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
  d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;
  if (d.H + 2 * pad < d.kh || d.W + 2 * pad < d.kw)
    raise(Err::ShapeMismatch, "conv2d: kernel larger than padded input");
  return d;
}

// Patch matrix: row (c*kh + ki)*kw + kj, column (n*Ho + oh)*Wo + ow.
template <typename S>
void im2col_fill(const S* x, const ConvDims& d,
                 Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& cols) {
  int64_t ncol = int64_t(d.N) * d.Ho * d.Wo;
  cols.resize(int64_t(d.C) * d.kh * d.kw, ncol);
  for (int c = 0; c < d.C; ++c)
    for (int ki = 0; ki < d.kh; ++ki)
      for (int kj = 0; kj < d.kw; ++kj) {
        S* row = cols.data() + ((int64_t(c) * d.kh + ki) * d.kw + kj) * ncol;
        for (int n = 0; n < d.N; ++n) {
          const S* xn = x + (int64_t(n) * d.C + c) * d.H * d.W;
          for (int oh = 0; oh < d.Ho; ++oh) {
            int ih = oh * d.stride + ki - d.pad;
            S* dst = row + (int64_t(n) * d.Ho + oh) * d.Wo;
            if (ih < 0 || ih >= d.H) {
              for (int ow = 0; ow < d.Wo; ++ow) dst[ow] = S(0);
              continue;
            }
            const S* src = xn + int64_t(ih) * d.W;
            for (int ow = 0; ow < d.Wo; ++ow) {
              int iw = ow * d.stride + kj - d.pad;
              dst[ow] = (iw >= 0 && iw < d.W) ? src[iw] : S(0);
            }
          }
        }
      }
}

// Scatter-add transpose of im2col_fill.
template <typename S>
void col2im_add(const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& cols,
                const ConvDims& d, S* dx) {
  int64_t ncol = int64_t(d.N) * d.Ho * d.Wo;
  for (int c = 0; c < d.C; ++c)
    for (int ki = 0; ki < d.kh; ++ki)
      for (int kj = 0; kj < d.kw; ++kj) {
        const S* row = cols.data() + ((int64_t(c) * d.kh + ki) * d.kw + kj) * ncol;
        for (int n = 0; n < d.N; ++n) {
          S* xn = dx + (int64_t(n) * d.C + c) * d.H * d.W;
          for (int oh = 0; oh < d.Ho; ++oh) {
            int ih = oh * d.stride + ki - d.pad;
            if (ih < 0 || ih >= d.H) continue;
            const S* src = row + (int64_t(n) * d.Ho + oh) * d.Wo;
            S* dst = xn + int64_t(ih) * d.W;
            for (int ow = 0; ow < d.Wo; ++ow) {
              int iw = ow * d.stride + kj - d.pad;
              if (iw >= 0 && iw < d.W) dst[iw] += src[ow];
            }
          }
        }
      }
}

}  // namespace detail

// Standalone patch extraction, exposed for the matrix-view identities used by
// the adapter code and its tests.  x is a plain value tensor here.
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> im2col(
    const Tensor<S>& x, int kh, int kw, int stride, int pad) {
  auto w_stub = Tensor<S>::zeros({1, x.dim(1), kh, kw});
  auto d = detail::conv_dims(x, w_stub, Tensor<S>(), stride, pad);
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cols;
  detail::im2col_fill(x.values().data(), d, cols);
  return cols;
}

// NCHW convolution.  The patch matrix is scratch: it is rebuilt during the
// backward pass instead of being stored, which keeps peak memory at one
// layer's worth of patches.  Pass an empty Tensor to skip the bias.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int stride,
                 int pad) {
  auto d = detail::conv_dims(x, w, b, stride, pad);
  bool with_bias = b && b.numel() != 0;

  std::vector<Tensor<S>> parents = {x, w};
  if (with_bias) parents.push_back(b);
  auto out = detail::make_op<S>({d.N, d.Cout, d.Ho, d.Wo}, "conv2d", std::move(parents));

  int64_t ncol = int64_t(d.N) * d.Ho * d.Wo;
  int64_t krows = int64_t(d.C) * d.kh * d.kw;
  int64_t plane = int64_t(d.Ho) * d.Wo;
  {
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cols;
    detail::im2col_fill(x.values().data(), d, cols);
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> y(d.Cout, ncol);
    y.noalias() = w.node->mat(d.Cout, int(krows)) * cols;
    if (with_bias)
      for (int co = 0; co < d.Cout; ++co) y.row(co).array() += b.values()[co];
    // (Cout, N*Ho*Wo) -> NCHW
    S* dst = out.node->value.data();
    for (int n = 0; n < d.N; ++n)
      for (int co = 0; co < d.Cout; ++co)
        std::copy_n(y.data() + co * ncol + n * plane, plane,
                    dst + (int64_t(n) * d.Cout + co) * plane);
  }

  auto xn = x.node, wn = w.node;
  auto bn = with_bias ? b.node : nullptr;
  out.node->backprop = [xn, wn, bn, d, ncol, krows, plane](detail::TensorNode<S>& self) {
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dy(d.Cout, ncol);
    const S* src = self.grad.data();
    for (int n = 0; n < d.N; ++n)
      for (int co = 0; co < d.Cout; ++co)
        std::copy_n(src + (int64_t(n) * d.Cout + co) * plane, plane,
                    dy.data() + co * ncol + n * plane);

    if (bn && bn->requires_grad)
      Eigen::Matrix<S, Eigen::Dynamic, 1>::Map(bn->ensure_grad().data(), d.Cout) +=
          dy.rowwise().sum();
    if (wn->requires_grad) {
      Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cols;
      detail::im2col_fill(xn->value.data(), d, cols);
      MatView<S>(wn->ensure_grad().data(), d.Cout, int(krows)).noalias() += dy * cols.transpose();
    }
    if (xn->requires_grad) {
      Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dcols(krows, ncol);
      dcols.noalias() = wn->mat(d.Cout, int(krows)).transpose() * dy;
      xn->ensure_grad();
      detail::col2im_add(dcols, d, xn->grad.data());
    }
  };
  return out;
}

// ---- pooling / gating ----

// (N, C, H, W) -> (N, C) mean over the spatial plane
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  if (x.rank() != 4)
    raise(Err::ShapeMismatch, "global_avg_pool: need rank 4, got " + shape_str(x.shape()));
  int N = x.dim(0), C = x.dim(1);
  int64_t plane = int64_t(x.dim(2)) * x.dim(3);
  auto out = detail::make_op<S>({N, C}, "global_avg_pool", {x});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      out.node->value[int64_t(n) * C + c] =
          x.values().segment((int64_t(n) * C + c) * plane, plane).sum() / S(plane);
  auto xnode = x.node;
  out.node->backprop = [xnode, N, C, plane](detail::TensorNode<S>& self) {
    if (!xnode->requires_grad) return;
    auto& dx = xnode->ensure_grad();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        dx.segment((int64_t(n) * C + c) * plane, plane) +=
            self.grad[int64_t(n) * C + c] / S(plane);
  };
  return out;
}

// out(n,c,h,w) = x(n,c,h,w) * gate(n,c)
template <typename S>
Tensor<S> channel_scale(const Tensor<S>& x, const Tensor<S>& gate) {
  if (x.rank() != 4 || gate.rank() != 2 || gate.dim(0) != x.dim(0) || gate.dim(1) != x.dim(1))
    raise(Err::ShapeMismatch,
          "channel_scale: " + shape_str(x.shape()) + " with gate " + shape_str(gate.shape()));
  int N = x.dim(0), C = x.dim(1);
  int64_t plane = int64_t(x.dim(2)) * x.dim(3);
  auto out = detail::make_op<S>(x.shape(), "channel_scale", {x, gate});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      out.node->value.segment((int64_t(n) * C + c) * plane, plane) =
          x.values().segment((int64_t(n) * C + c) * plane, plane) *
          gate.values()[int64_t(n) * C + c];
  auto xnode = x.node, gnode = gate.node;
  out.node->backprop = [xnode, gnode, N, C, plane](detail::TensorNode<S>& self) {
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        int64_t off = (int64_t(n) * C + c) * plane;
        if (xnode->requires_grad)
          xnode->ensure_grad().segment(off, plane) +=
              self.grad.segment(off, plane) * gnode->value[int64_t(n) * C + c];
        if (gnode->requires_grad)
          gnode->ensure_grad()[int64_t(n) * C + c] +=
              (self.grad.segment(off, plane) * xnode->value.segment(off, plane)).sum();
      }
  };
  return out;
}

// ---- loss ----

// Mean negative log likelihood over the batch; logits (N, K), labels in
// [0, K).  The softmax probabilities are kept for the backward pass.
template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2)
    raise(Err::ShapeMismatch, "softmax_cross_entropy: logits " + shape_str(logits.shape()));
  int N = logits.dim(0), K = logits.dim(1);
  if (int(labels.size()) != N)
    raise(Err::ShapeMismatch, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                  " labels for batch " + std::to_string(N));
  for (int y : labels)
    if (y < 0 || y >= K)
      raise(Err::ShapeMismatch, "softmax_cross_entropy: label " + std::to_string(y) +
                                    " outside [0, " + std::to_string(K) + ")");

  auto probs = std::make_shared<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      N, K);
  auto lm = logits.node->mat(N, K);
  S loss = S(0);
  for (int i = 0; i < N; ++i) {
    S mx = lm.row(i).maxCoeff();
    Eigen::Array<S, 1, Eigen::Dynamic> e = (lm.row(i).array() - mx).exp();
    S z = e.sum();
    probs->row(i) = (e / z).matrix();
    loss -= std::log((*probs)(i, labels[size_t(i)]));
  }
  auto out = detail::make_op<S>({1}, "softmax_cross_entropy", {logits});
  out.node->value[0] = loss / S(N);

  auto ln = logits.node;
  auto labs = labels;
  out.node->backprop = [ln, probs, labs, N, K](detail::TensorNode<S>& self) {
    if (!ln->requires_grad) return;
    S d = self.grad[0] / S(N);
    auto dl = ln->grad_mat(N, K);
    for (int i = 0; i < N; ++i) {
      dl.row(i) += probs->row(i) * d;
      dl(i, labs[size_t(i)]) -= d;
    }
  };
  return out;
}

// ---- backward ----

// Reverse accumulation from a scalar loss.  Frozen subgraphs (requires_grad
// false) are never visited, so frozen leaves cannot end up with gradients.
template <typename S>
void backward(const Tensor<S>& loss) {
  if (!loss || loss.numel() != 1)
    raise(Err::NonScalarLoss,
          "backward needs a scalar, got " + (loss ? shape_str(loss.shape()) : "empty tensor"));
  using Node = detail::TensorNode<S>;
  if (!loss.node->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({loss.node.get(), 0});
  visited.insert(loss.node.get());
  while (!stack.empty()) {
    auto [nd, i] = stack.back();
    if (i < nd->parents.size()) {
      stack.back().second = i + 1;
      Node* p = nd->parents[i].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(nd);
      stack.pop_back();
    }
  }

  loss.node->ensure_grad()[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* nd = *it;
    if (nd->backprop && nd->has_grad()) nd->backprop(*nd);
  }
}

}  // namespace loraudio
