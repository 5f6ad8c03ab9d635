#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "osdg/dataio/cube.hpp"

// Spectral-spatial uncertainty disentanglement: pathway reliabilities,
// reliability-based decoupling, rejection scoring and the open-set
// decision.
namespace osdg::ssud {

enum class Variant { Full, NoDecoupling, FixedWeights, SimpleAverage, MaxUncertainty, NoConfidence, NoUncertainty };

inline const std::vector<std::pair<std::string, Variant>>& variant_names() {
  static const std::vector<std::pair<std::string, Variant>> names = {
      {"full", Variant::Full},
      {"no_decoupling", Variant::NoDecoupling},
      {"fixed_weights", Variant::FixedWeights},
      {"simple_average", Variant::SimpleAverage},
      {"max_uncertainty", Variant::MaxUncertainty},
      {"no_confidence", Variant::NoConfidence},
      {"no_uncertainty", Variant::NoUncertainty}};
  return names;
}

inline std::string to_string(Variant v) {
  for (const auto& [n, x] : variant_names())
    if (x == v) return n;
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (const auto& [n, x] : variant_names())
    if (n == s) return x;
  std::string valid;
  for (const auto& [n, x] : variant_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown ssud variant '" + s + "' (valid: " + valid + ")");
}

struct Config {
  Variant variant = Variant::Full;
  double tau_decouple = 0.3;
  double kappa_down = 0.5;
  double w_unc = 0.5;
  double w_conf = 0.5;

  void validate() const {
    if (!(tau_decouple > 0.0 && tau_decouple <= 1.0)) throw std::invalid_argument("ssud: tau_decouple must be in (0,1]");
    if (!(kappa_down > 0.0 && kappa_down <= 1.0)) throw std::invalid_argument("ssud: kappa_down must be in (0,1]");
    if (w_unc < 0.0 || w_conf < 0.0 || std::abs(w_unc + w_conf - 1.0) > 1e-9)
      throw std::invalid_argument("ssud: w_unc and w_conf must be >= 0 and sum to 1");
  }
};

enum class Branch { Spectral, Spatial, Combined };

inline std::string to_string(Branch b) {
  switch (b) {
    case Branch::Spectral: return "spectral";
    case Branch::Spatial: return "spatial";
    case Branch::Combined: return "combined";
  }
  return "?";
}

struct Reliability {
  double r_spec;
  double r_spat;
  double delta;
};

inline Reliability reliability(double u_spec, double u_spat) {
  for (double u : {u_spec, u_spat})
    if (!(u >= 0.0 && u <= 1.0)) throw std::invalid_argument("reliability: uncertainty outside [0,1]");
  const double rs = 1.0 - u_spec, rp = 1.0 - u_spat;
  return {rs, rp, std::abs(rs - rp)};
}

struct Disentangled {
  double u_final;
  Branch branch;
};

inline Disentangled disentangle(double u_spec, double u_spat, double u_comb, const Config& cfg) {
  if (!(u_comb >= 0.0 && u_comb <= 1.0)) throw std::invalid_argument("disentangle: u_comb outside [0,1]");
  const Reliability r = reliability(u_spec, u_spat);
  switch (cfg.variant) {
    case Variant::NoDecoupling: return {u_comb, Branch::Combined};
    case Variant::SimpleAverage: return {(u_spec + u_spat) / 2.0, Branch::Combined};
    case Variant::MaxUncertainty: return {std::max(u_spec, u_spat), Branch::Combined};
    case Variant::Full:
    case Variant::FixedWeights:
    case Variant::NoConfidence:
    case Variant::NoUncertainty: break;
  }
  if (r.delta > cfg.tau_decouple) {
    if (r.r_spec > r.r_spat) return {std::max(u_spec, cfg.kappa_down * u_spat), Branch::Spectral};
    if (r.r_spat > r.r_spec) return {std::max(u_spat, cfg.kappa_down * u_spec), Branch::Spatial};
  }
  return {u_comb, Branch::Combined};
}

struct Rejection {
  double r_score;
  double p_max;
  std::size_t k_hat;  // 0-based; ties go to the lowest index
};

inline Rejection rejection_score(double u_final, std::span<const double> p_cls, const Config& cfg) {
  if (p_cls.empty()) throw std::invalid_argument("rejection_score: empty probability vector");
  double total = 0.0;
  for (double v : p_cls) total += v;
  if (std::abs(total - 1.0) > 1e-5)
    throw std::invalid_argument("rejection_score: probabilities sum to " + std::to_string(total));
  double w_unc = cfg.w_unc, w_conf = cfg.w_conf;
  switch (cfg.variant) {
    case Variant::NoConfidence: w_unc = 1.0, w_conf = 0.0; break;
    case Variant::NoUncertainty: w_unc = 0.0, w_conf = 1.0; break;
    case Variant::FixedWeights: w_unc = 0.5, w_conf = 0.5; break;
    default: break;
  }
  const auto it = std::max_element(p_cls.begin(), p_cls.end());  // first maximum
  const double p_max = *it;
  return {w_unc * u_final + w_conf * (1.0 - p_max), p_max, static_cast<std::size_t>(it - p_cls.begin())};
}

/// Known label (k_hat + 1) when r_score <= tau, otherwise unknown.
inline std::uint16_t decide(double r_score, std::size_t k_hat, double tau) {
  return r_score <= tau ? static_cast<std::uint16_t>(k_hat + 1) : kUnknownLabel;
}

struct Decision {
  Reliability reliability;
  Branch branch;
  double u_final;
  double p_max;
  std::size_t k_hat;
  double r_score;
  std::uint16_t prediction;
};

inline Decision decide_sample(double u_spec, double u_spat, double u_comb, std::span<const double> p_cls,
                              const Config& cfg, double tau) {
  const Disentangled d = disentangle(u_spec, u_spat, u_comb, cfg);
  const Rejection r = rejection_score(d.u_final, p_cls, cfg);
  return {reliability(u_spec, u_spat), d.branch, d.u_final, r.p_max, r.k_hat, r.r_score,
          decide(r.r_score, r.k_hat, tau)};
}

}  // namespace osdg::ssud
