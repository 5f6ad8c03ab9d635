#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "osdg/numerics/tape.hpp"

namespace osdg {

/// Adaptive-moment state with decoupled weight decay.
template <typename T>
struct OptimState {
  double lr = 1e-5;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

template <typename T>
void adam_step(std::span<Param<T>* const> params, OptimState<T>& st) {
  if (!(st.lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  if (st.m.empty()) {
    for (const Param<T>* p : params) {
      st.m.emplace_back(p->value.shape());
      st.v.emplace_back(p->value.shape());
    }
  }
  if (st.m.size() != params.size())
    throw std::invalid_argument("adam_step: state holds " + std::to_string(st.m.size()) +
                                " moments for " + std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Param<T>& p = *params[i];
    if (p.grad.shape() != p.value.shape() || st.m[i].shape() != p.value.shape())
      throw std::invalid_argument("adam_step: shape mismatch for parameter '" + p.name + "'");
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<T>& p = *params[i];
    T* w = p.value.data();
    const T* g = p.grad.data();
    T* m = st.m[i].data();
    T* v = st.v[i].data();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double gk = g[k];
      const double mk = st.beta1 * m[k] + (1.0 - st.beta1) * gk;
      const double vk = st.beta2 * v[k] + (1.0 - st.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      double wk = w[k];
      wk -= st.lr * st.weight_decay * wk;
      wk -= st.lr * (mk / bc1) / (std::sqrt(vk / bc2) + st.eps);
      w[k] = static_cast<T>(wk);
    }
  }
}

/// Cosine annealing from lr0 at epoch 0 to lr0/10 at the final epoch.
inline double cosine_lr(int epoch, int total_epochs, double lr0) {
  if (total_epochs <= 0 || epoch < 0 || epoch > total_epochs || !(lr0 > 0.0))
    throw std::invalid_argument("cosine_lr: need 0 <= epoch <= total and lr0 > 0");
  const double eta_min = lr0 / 10.0;
  const double phase = std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return eta_min + (lr0 - eta_min) * (1.0 + std::cos(phase)) / 2.0;
}

/// Rescales all gradients in place so the global L2 norm is at most
/// max_norm. Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::span<Param<T>* const> params, double max_norm = 1.0) {
  double sq = 0.0;
  for (const Param<T>* p : params)
    for (std::size_t k = 0; k < p->grad.size(); ++k) {
      const double g = p->grad[k];
      if (!std::isfinite(g))
        throw std::runtime_error("clip_grad_norm: non-finite gradient in '" + p->name + "' at index " +
                                 std::to_string(k));
      sq += g * g;
    }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Param<T>* p : params)
      for (auto& g : p->grad.vec()) g = static_cast<T>(g * s);
  }
  return norm;
}

}  // namespace osdg
