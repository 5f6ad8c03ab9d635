#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "osdg/numerics/tape.hpp"
#include "osdg/params.hpp"

namespace osdg::edl {

inline constexpr double kEvidenceEps = 1e-6;

enum class Kind { Edl, SoftmaxConf, Entropy, TempScaling };

inline Kind parse_kind(const std::string& s) {
  if (s == "edl") return Kind::Edl;
  if (s == "softmax_conf") return Kind::SoftmaxConf;
  if (s == "entropy") return Kind::Entropy;
  if (s == "temp_scaling") return Kind::TempScaling;
  throw std::invalid_argument("unknown edl kind '" + s + "' (valid: edl, softmax_conf, entropy, temp_scaling)");
}

inline std::string to_string(Kind k) {
  switch (k) {
    case Kind::Edl: return "edl";
    case Kind::SoftmaxConf: return "softmax_conf";
    case Kind::Entropy: return "entropy";
    case Kind::TempScaling: return "temp_scaling";
  }
  return "?";
}

/// Dirichlet summary of one pathway for one sample.
struct DirichletOutput {
  std::vector<double> evidence;
  std::vector<double> alpha;
  std::vector<double> p;
  double strength = 0.0;     // S
  double uncertainty = 1.0;  // u = K / S
};

/// alpha = e + 1, S = sum(alpha), p = alpha / S, u = K / S.
inline DirichletOutput dirichlet_from_evidence(std::span<const double> e) {
  if (e.size() < 2) throw std::invalid_argument("dirichlet: need K >= 2");
  DirichletOutput d;
  d.evidence.assign(e.begin(), e.end());
  d.alpha.resize(e.size());
  for (std::size_t k = 0; k < e.size(); ++k) {
    if (!(e[k] >= 0.0) || !std::isfinite(e[k]))
      throw std::invalid_argument("dirichlet: evidence must be finite and >= 0 (index " + std::to_string(k) + ")");
    d.alpha[k] = e[k] + 1.0;
  }
  for (double a : d.alpha) d.strength += a;
  d.p.resize(e.size());
  for (std::size_t k = 0; k < e.size(); ++k) d.p[k] = d.alpha[k] / d.strength;
  d.uncertainty = static_cast<double>(e.size()) / d.strength;
  return d;
}

/// e = max(0, z) + eps applied to raw head outputs z.
inline DirichletOutput evidence_from_logits(std::span<const double> z, double eps = kEvidenceEps) {
  std::vector<double> e(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) {
    if (!std::isfinite(z[k])) throw std::runtime_error("edl: non-finite head output at class " + std::to_string(k));
    e[k] = std::max(0.0, z[k]) + eps;
  }
  return dirichlet_from_evidence(e);
}

/// Squared error to the one-hot target plus lambda_reg times the
/// Dirichlet mass on the wrong classes. `cls` is 0-based.
inline double edl_loss(std::span<const double> alpha, std::size_t cls, double lambda_reg) {
  if (cls >= alpha.size()) throw std::invalid_argument("edl_loss: class index out of range");
  double s = 0.0;
  for (double a : alpha) s += a;
  double mse = 0.0, reg = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    const double target = k == cls ? 1.0 : 0.0;
    mse += (target - alpha[k] / s) * (target - alpha[k] / s);
    if (k != cls) reg += alpha[k];
  }
  return mse + lambda_reg * reg;
}

inline std::vector<double> softmax(std::span<const double> z, double temperature = 1.0) {
  std::vector<double> p(z.size());
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) sum += p[k] = std::exp((z[k] - mx) / temperature);
  for (auto& v : p) v /= sum;
  return p;
}

/// Non-evidential uncertainty of a probability vector.
inline double alt_uncertainty(Kind kind, std::span<const double> p) {
  double total = 0.0;
  for (double v : p) total += v;
  if (p.size() < 2 || std::abs(total - 1.0) > 1e-5)
    throw std::invalid_argument("alt_uncertainty: expects a probability vector");
  switch (kind) {
    case Kind::Edl: throw std::invalid_argument("alt_uncertainty: edl uncertainty comes from the evidence heads");
    case Kind::Entropy: {
      double h = 0.0;
      for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
      return std::clamp(h / std::log(static_cast<double>(p.size())), 0.0, 1.0);
    }
    case Kind::SoftmaxConf:
    case Kind::TempScaling:  // caller passes softmax(logits / T)
      return std::clamp(1.0 - *std::max_element(p.begin(), p.end()), 0.0, 1.0);
  }
  return 1.0;
}

/// Temperature minimising the mean negative log-likelihood of labelled
/// logits (golden-section search on log T over [0.05, 20]).
inline double fit_temperature(const std::vector<std::vector<double>>& logits, const std::vector<std::size_t>& labels) {
  if (logits.empty() || logits.size() != labels.size())
    throw std::invalid_argument("fit_temperature: need matching non-empty logits and labels");
  auto nll = [&](double log_t) {
    const double t = std::exp(log_t);
    double acc = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const auto p = softmax(logits[i], t);
      acc -= std::log(std::max(p[labels[i]], 1e-300));
    }
    return acc / static_cast<double>(logits.size());
  };
  double lo = std::log(0.05), hi = std::log(20.0);
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
  double fa = nll(a), fb = nll(b);
  for (int it = 0; it < 80; ++it) {
    if (fa < fb) {
      hi = b;
      b = a;
      fb = fa;
      a = hi - phi * (hi - lo);
      fa = nll(a);
    } else {
      lo = a;
      a = b;
      fa = fb;
      b = lo + phi * (hi - lo);
      fb = nll(b);
    }
  }
  return std::exp((lo + hi) / 2.0);
}

// ---- tape-level heads -------------------------------------------------

template <typename T>
struct Head {
  Param<T>* w;
  Param<T>* b;
};

template <typename T>
Head<T> create_head(ParamStore<T>& store, const std::string& name, std::size_t dim, std::size_t k,
                    std::mt19937_64& rng) {
  Head<T> h;
  h.w = &store.add_uniform(name + ".w", {dim, k}, glorot_bound(dim, k), rng);
  h.b = &store.add(name + ".b", {k});
  // Positive bias keeps the ReLU evidence units alive while the
  // off-class regulariser pulls every unit down early in training.
  h.b->value.fill(T(1));
  return h;
}

template <typename T>
Var<T> head_logits(Tape<T>& t, const Var<T>& f, const Head<T>& h) {
  Var<T> b = t.param(*h.b);
  return ad::linear(f, t.param(*h.w), &b);
}

template <typename T>
struct DirichletVars {
  Var<T> evidence;  // [B,K]
  Var<T> alpha;     // [B,K]
  Var<T> strength;  // [B,1]
  Var<T> p;         // [B,K]
  Var<T> u;         // [B,1]
};

template <typename T>
DirichletVars<T> evidence(const Var<T>& logits, T eps = T(kEvidenceEps)) {
  using namespace ad;
  if (!logits.value().all_finite()) throw std::runtime_error("edl: non-finite head output");
  const T k = static_cast<T>(logits.dim(1));
  DirichletVars<T> d;
  d.evidence = add_scalar(relu(logits), eps);
  d.alpha = add_scalar(d.evidence, T(1));
  d.strength = sum_last(d.alpha);
  Var<T> inv = reciprocal(d.strength);
  d.p = mul_col(d.alpha, inv);
  d.u = scale(inv, k);
  return d;
}

template <typename T>
Tensor<T> one_hot(const std::vector<std::size_t>& labels, std::size_t k) {
  Tensor<T> y({labels.size(), k});
  for (std::size_t i = 0; i < labels.size(); ++i) y.at(i, labels[i]) = T(1);
  return y;
}

/// Batch mean of the evidential loss.
template <typename T>
Var<T> edl_loss(const DirichletVars<T>& d, const std::vector<std::size_t>& labels, T lambda_reg) {
  using namespace ad;
  Tape<T>& t = d.p.tape();
  const std::size_t k = d.p.dim(1), b = d.p.dim(0);
  Tensor<T> y = one_hot<T>(labels, k);
  Tensor<T> off(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) off[i] = T(1) - y[i];
  Var<T> diff = sub(t.constant(y), d.p);
  Var<T> mse = sum(mul(diff, diff));
  Var<T> reg = sum(mul(t.constant(off), d.alpha));
  return scale(add(mse, scale(reg, lambda_reg)), T(1) / static_cast<T>(b));
}

/// Batch mean cross-entropy of softmax(logits) against labels.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<std::size_t>& labels) {
  using namespace ad;
  Tape<T>& t = logits.tape();
  Var<T> logp = ad::log(ad::softmax(logits));
  Var<T> picked = sum(mul(t.constant(one_hot<T>(labels, logits.dim(1))), logp));
  return scale(picked, T(-1) / static_cast<T>(logits.dim(0)));
}

}  // namespace osdg::edl
