#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "osdg/dataio/patch.hpp"

// Synthetic-unknown generation and rejection-threshold selection.
namespace osdg::calibration {

enum class Strategy { Noise, Mixing, SpectralCorruption, SpatialCorruption };
inline constexpr Strategy kStrategies[] = {Strategy::Noise, Strategy::Mixing, Strategy::SpectralCorruption,
                                           Strategy::SpatialCorruption};

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Noise: return "noise";
    case Strategy::Mixing: return "mixing";
    case Strategy::SpectralCorruption: return "spectral_corruption";
    case Strategy::SpatialCorruption: return "spatial_corruption";
  }
  return "?";
}

struct Spec {
  std::vector<double> sigmas{0.1, 0.2, 0.4};
  double lambda_lo = 0.3;
  double lambda_hi = 0.7;
  double band_frac_lo = 0.20;
  double band_frac_hi = 0.30;
  std::size_t regions_lo = 2;
  std::size_t regions_hi = 3;
  std::size_t samples_per_strategy = 500;
  double rho_target = 0.75;
  std::uint64_t seed = 17;

  void validate() const {
    if (sigmas.empty()) throw std::invalid_argument("calib: sigmas must be non-empty");
    for (double s : sigmas)
      if (!(s >= 0.0)) throw std::invalid_argument("calib: sigma must be >= 0");
    if (!(lambda_lo > 0.0 && lambda_lo <= lambda_hi && lambda_hi < 1.0))
      throw std::invalid_argument("calib: lambda_range must satisfy 0 < lo <= hi < 1");
    if (!(band_frac_lo >= 0.20 && band_frac_lo <= band_frac_hi && band_frac_hi <= 0.30))
      throw std::invalid_argument("calib: band fraction range must lie in [0.20, 0.30]");
    if (!(regions_lo >= 2 && regions_lo <= regions_hi && regions_hi <= 3))
      throw std::invalid_argument("calib: spatial region count range must lie in [2, 3]");
    if (samples_per_strategy == 0) throw std::invalid_argument("calib: samples_per_strategy must be > 0");
    if (!(rho_target > 0.0 && rho_target <= 1.0)) throw std::invalid_argument("calib: rho_target must be in (0,1]");
  }
};

inline void to_json(nlohmann::json& j, const Spec& s) {
  j = {{"sigmas", s.sigmas},
       {"lambda_range", {s.lambda_lo, s.lambda_hi}},
       {"band_fraction_range", {s.band_frac_lo, s.band_frac_hi}},
       {"region_count_range", {s.regions_lo, s.regions_hi}},
       {"samples_per_strategy", s.samples_per_strategy},
       {"rho_target", s.rho_target},
       {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, Spec& s) {
  s.sigmas = j.value("sigmas", s.sigmas);
  if (j.contains("lambda_range")) {
    s.lambda_lo = j.at("lambda_range").at(0).get<double>();
    s.lambda_hi = j.at("lambda_range").at(1).get<double>();
  }
  if (j.contains("band_fraction_range")) {
    s.band_frac_lo = j.at("band_fraction_range").at(0).get<double>();
    s.band_frac_hi = j.at("band_fraction_range").at(1).get<double>();
  }
  if (j.contains("region_count_range")) {
    s.regions_lo = j.at("region_count_range").at(0).get<std::size_t>();
    s.regions_hi = j.at("region_count_range").at(1).get<std::size_t>();
  }
  s.samples_per_strategy = j.value("samples_per_strategy", s.samples_per_strategy);
  s.rho_target = j.value("rho_target", s.rho_target);
  s.seed = j.value("seed", s.seed);
}

/// splitmix64 finaliser, used to derive independent per-sample seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline Patch gen_noise(const Patch& x, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("gen_noise: sigma must be >= 0");
  Patch out = x;
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& v : out.window) v = static_cast<float>(v + n(rng));
  return out;
}

inline Patch gen_mix(const Patch& xi, const Patch& xj, double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument("gen_mix: lambda must be in (0,1)");
  if (xi.label == xj.label) throw std::invalid_argument("gen_mix: patches share class " + std::to_string(xi.label));
  if (xi.bands != xj.bands) throw std::invalid_argument("gen_mix: band counts differ");
  Patch out = xi;
  for (std::size_t i = 0; i < out.window.size(); ++i)
    out.window[i] = static_cast<float>(lambda * xi.window[i] + (1.0 - lambda) * xj.window[i]);
  return out;
}

namespace detail {

inline void check_stats(const Patch& x, const BandStats& st) {
  if (st.mean.size() != x.bands || st.stddev.size() != x.bands)
    throw std::invalid_argument("corruption: band statistics do not match the patch");
}

inline float band_noise(const BandStats& st, std::size_t b, std::mt19937_64& rng) {
  return static_cast<float>(std::normal_distribution<double>(st.mean[b], st.stddev[b])(rng));
}

}  // namespace detail

/// Number of bands replaced for a given fraction.
inline std::size_t corrupted_band_count(double frac, std::size_t bands) {
  return static_cast<std::size_t>(std::floor(frac * static_cast<double>(bands) + 1e-9));
}

inline Patch gen_spectral_corrupt(const Patch& x, const BandStats& st, double frac, std::uint64_t seed) {
  if (!(frac >= 0.20 - 1e-12 && frac <= 0.30 + 1e-12))
    throw std::invalid_argument("gen_spectral_corrupt: fraction must be in [0.20, 0.30]");
  detail::check_stats(x, st);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> bands(x.bands);
  for (std::size_t b = 0; b < x.bands; ++b) bands[b] = b;
  std::shuffle(bands.begin(), bands.end(), rng);
  bands.resize(corrupted_band_count(frac, x.bands));
  std::sort(bands.begin(), bands.end());
  Patch out = x;
  for (std::size_t r = 0; r < kPatchSize; ++r)
    for (std::size_t c = 0; c < kPatchSize; ++c)
      for (std::size_t b : bands) out.at(r, c, b) = detail::band_noise(st, b, rng);
  return out;
}

inline Patch gen_spatial_corrupt(const Patch& x, const BandStats& st, std::size_t n_regions, std::uint64_t seed) {
  if (n_regions < 2 || n_regions > 3) throw std::invalid_argument("gen_spatial_corrupt: region count must be 2 or 3");
  detail::check_stats(x, st);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pos(0, kPatchSize - 2);
  std::vector<char> taken(kPatchSize * kPatchSize, 0);
  std::vector<std::pair<std::size_t, std::size_t>> corners;
  for (int attempt = 0; attempt < 1000 && corners.size() < n_regions; ++attempt) {
    const std::size_t r = pos(rng), c = pos(rng);
    bool free = true;
    for (std::size_t dr = 0; dr < 2; ++dr)
      for (std::size_t dc = 0; dc < 2; ++dc) free = free && !taken[(r + dr) * kPatchSize + c + dc];
    if (!free) continue;
    for (std::size_t dr = 0; dr < 2; ++dr)
      for (std::size_t dc = 0; dc < 2; ++dc) taken[(r + dr) * kPatchSize + c + dc] = 1;
    corners.emplace_back(r, c);
  }
  if (corners.size() < n_regions) throw std::runtime_error("gen_spatial_corrupt: could not place regions");
  Patch out = x;
  for (auto [r, c] : corners)
    for (std::size_t dr = 0; dr < 2; ++dr)
      for (std::size_t dc = 0; dc < 2; ++dc)
        for (std::size_t b = 0; b < x.bands; ++b) out.at(r + dr, c + dc, b) = detail::band_noise(st, b, rng);
  return out;
}

struct SyntheticUnknown {
  Patch patch;
  Strategy strategy;
};

/// samples_per_strategy patches from each generator, built from known
/// patches. `st` holds band statistics in the patches' value space.
inline std::vector<SyntheticUnknown> generate(const std::vector<Patch>& known, const BandStats& st, const Spec& spec,
                                              std::uint64_t seed) {
  spec.validate();
  if (known.empty()) throw std::invalid_argument("calibration: no known patches to build unknowns from");
  bool two_classes = false;
  for (const auto& p : known) two_classes = two_classes || p.label != known.front().label;
  if (!two_classes) throw std::invalid_argument("calibration: mixing needs patches from two classes");

  std::vector<SyntheticUnknown> out;
  out.reserve(4 * spec.samples_per_strategy);
  std::uniform_int_distribution<std::size_t> pick(0, known.size() - 1);
  for (std::size_t s = 0; s < 4; ++s) {
    const Strategy strat = kStrategies[s];
    for (std::size_t i = 0; i < spec.samples_per_strategy; ++i) {
      std::mt19937_64 rng(mix_seed(seed ^ mix_seed(s * 1000003ULL + i)));
      const Patch& base = known[pick(rng)];
      const std::uint64_t sub = rng();
      switch (strat) {
        case Strategy::Noise:
          out.push_back({gen_noise(base, spec.sigmas[i % spec.sigmas.size()], sub), strat});
          break;
        case Strategy::Mixing: {
          const Patch* other = &known[pick(rng)];
          while (other->label == base.label) other = &known[pick(rng)];
          const double lam = std::uniform_real_distribution<double>(spec.lambda_lo, spec.lambda_hi)(rng);
          out.push_back({gen_mix(base, *other, lam), strat});
          break;
        }
        case Strategy::SpectralCorruption: {
          const double frac = std::uniform_real_distribution<double>(spec.band_frac_lo, spec.band_frac_hi)(rng);
          out.push_back({gen_spectral_corrupt(base, st, frac, sub), strat});
          break;
        }
        case Strategy::SpatialCorruption: {
          const std::size_t n = std::uniform_int_distribution<std::size_t>(spec.regions_lo, spec.regions_hi)(rng);
          out.push_back({gen_spatial_corrupt(base, st, n, sub), strat});
          break;
        }
      }
      out.back().patch.label = kUnknownLabel;
    }
  }
  return out;
}

struct SweepRow {
  double tau;
  double tpr;             // synthetic unknowns with score > tau
  double known_retention;  // known samples with score <= tau
};

struct Threshold {
  double tau = 0.0;
  double tpr = 0.0;
  double known_retention = 0.0;
  std::vector<SweepRow> sweep;
};

/// tau* = argmin |TPR(tau) - rho| over the sorted distinct scores, their
/// midpoints and one candidate below the minimum; ties go to the larger tau.
inline Threshold select_threshold(std::span<const double> synthetic, std::span<const double> known, double rho) {
  if (synthetic.empty()) throw std::invalid_argument("calibration: no synthetic-unknown scores");
  if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("calibration: rho_target must be in (0,1]");
  std::vector<double> all(synthetic.begin(), synthetic.end());
  all.insert(all.end(), known.begin(), known.end());
  for (double v : all)
    if (!std::isfinite(v)) throw std::invalid_argument("calibration: non-finite score");
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  if (all.size() < 2)
    throw std::runtime_error("calibration: degenerate score distribution (every score equals " +
                             std::to_string(all.front()) + ")");

  std::vector<double> cand;
  cand.push_back(std::nextafter(all.front(), -std::numeric_limits<double>::infinity()));
  for (std::size_t i = 0; i < all.size(); ++i) {
    cand.push_back(all[i]);
    if (i + 1 < all.size()) cand.push_back(0.5 * (all[i] + all[i + 1]));
  }

  std::vector<double> syn(synthetic.begin(), synthetic.end()), kn(known.begin(), known.end());
  std::sort(syn.begin(), syn.end());
  std::sort(kn.begin(), kn.end());
  Threshold out;
  double best = std::numeric_limits<double>::infinity();
  for (double tau : cand) {
    const auto above = syn.end() - std::upper_bound(syn.begin(), syn.end(), tau);
    const double tpr = static_cast<double>(above) / static_cast<double>(syn.size());
    const double ret = kn.empty() ? 0.0
                                  : static_cast<double>(std::upper_bound(kn.begin(), kn.end(), tau) - kn.begin()) /
                                        static_cast<double>(kn.size());
    out.sweep.push_back({tau, tpr, ret});
    const double gap = std::abs(tpr - rho);
    if (gap <= best + 1e-12) {  // ascending sweep, so ties move toward larger tau
      best = std::min(best, gap);
      out.tau = tau;
      out.tpr = tpr;
      out.known_retention = ret;
    }
  }
  return out;
}

}  // namespace osdg::calibration
