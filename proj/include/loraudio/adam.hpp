#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "loraudio/tensor.hpp"

namespace loraudio {

// Adam with bias correction; eps sits outside the square root:
//   w -= lr * m_hat / (sqrt(v_hat) + eps)
template <typename S>
struct AdamState {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::vector<FlatArray<S>> m, v;

  void reset() {
    t = 0;
    m.clear();
    v.clear();
  }
};

// One update over a fixed parameter list.  The list must keep the same order
// and shapes across steps; state moments are allocated on first use.
template <typename S>
void adam_step(std::vector<Tensor<S>>& params, AdamState<S>& state) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i] = FlatArray<S>::Zero(params[i].numel());
      state.v[i] = FlatArray<S>::Zero(params[i].numel());
    }
  }
  if (state.m.size() != params.size())
    raise(Err::ShapeMismatch, "adam_step: state holds " + std::to_string(state.m.size()) +
                                  " moments for " + std::to_string(params.size()) + " params");
  state.t += 1;
  S bc1 = S(1) - S(std::pow(state.beta1, double(state.t)));
  S bc2 = S(1) - S(std::pow(state.beta2, double(state.t)));
  S b1 = S(state.beta1), b2 = S(state.beta2);
  S lr = S(state.lr), eps = S(state.eps);
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.has_grad())
      raise(Err::MissingGrad, "adam_step: parameter " + std::to_string(i) + " has no gradient");
    if (state.m[i].size() != p.numel())
      raise(Err::ShapeMismatch, "adam_step: parameter " + std::to_string(i) + " changed size");
    const auto& g = p.grad();
    state.m[i] = b1 * state.m[i] + (S(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (S(1) - b2) * g * g;
    p.values() -= lr * (state.m[i] / bc1) / ((state.v[i] / bc2).sqrt() + eps);
  }
}

// Central-difference check of reverse-mode gradients.  Returns
//   max_i |fd_i - an_i| / max(||an||_inf, ||fd||_inf, 1e-8)
// over all coordinates of all parameters; normalizing by the gradient's
// magnitude keeps coordinates with tiny true gradients from blowing up the
// ratio through finite-difference noise.  f must be a pure function of the
// parameter values.
template <typename S>
double finite_diff_check(const std::function<Tensor<S>(std::vector<Tensor<S>>&)>& f,
                         std::vector<Tensor<S>> params, double eps = 1e-5) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.clear_grad();
  }
  auto loss = f(params);
  backward(loss);

  std::vector<FlatArray<S>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());

  double max_diff = 0.0, an_inf = 0.0, fd_inf = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    auto& vals = params[i].values();
    for (int64_t j = 0; j < vals.size(); ++j) {
      S saved = vals[j];
      vals[j] = saved + S(eps);
      double up = double(f(params).item());
      vals[j] = saved - S(eps);
      double down = double(f(params).item());
      vals[j] = saved;
      double fd = (up - down) / (2.0 * eps);
      double an = double(analytic[i][j]);
      max_diff = std::max(max_diff, std::abs(fd - an));
      an_inf = std::max(an_inf, std::abs(an));
      fd_inf = std::max(fd_inf, std::abs(fd));
    }
  }
  return max_diff / std::max({an_inf, fd_inf, 1e-8});
}

}  // namespace loraudio
