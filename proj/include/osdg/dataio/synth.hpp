#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "osdg/dataio/cube.hpp"

namespace osdg {

/// Source-to-target distortion applied to every target spectrum.
struct DomainShift {
  double gain_amplitude = 0.08;        // per-band multiplicative gain: 1 +- amplitude, smooth in band
  double offset_amplitude = 0.02;      // per-band additive offset, smooth in band
  double distortion_amplitude = 0.03;  // sinusoidal wavelength distortion
  double distortion_cycles = 1.5;      // periods across the band range
  double noise = 0.01;                 // white noise std in the target
};

/// Parameters of the built-in cross-domain benchmark.
struct SceneSpec {
  std::size_t num_known = 5;    // K
  std::size_t num_unknown = 2;  // U, target only
  std::size_t bands = 64;       // C
  std::size_t height = 40;
  std::size_t width = 40;
  std::size_t pixels_per_class = 110;
  double source_noise = 0.01;
  double brightness_jitter = 0.12;  // per-pixel multiplicative scale in [1-j, 1+j]
  double min_endmember_distance = 0.35;  // minimum shape distance between class curves
  DomainShift shift;
  std::uint64_t seed = 7;
  int max_layout_retries = 50;

  void validate() const {
    if (num_known < 2) throw std::invalid_argument("SceneSpec: K must be >= 2");
    if (num_unknown < 1) throw std::invalid_argument("SceneSpec: U must be >= 1");
    if (bands < 8) throw std::invalid_argument("SceneSpec: C must be >= 8");
    if (pixels_per_class < 50) throw std::invalid_argument("SceneSpec: every class needs >= 50 pixels");
    for (double v : {shift.gain_amplitude, shift.offset_amplitude, shift.distortion_amplitude,
                     shift.distortion_cycles, shift.noise, source_noise, brightness_jitter})
      if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("SceneSpec: shift parameters must be finite and >= 0");
    if ((num_known + num_unknown) * pixels_per_class > height * width)
      throw std::invalid_argument("SceneSpec: classes do not fit into the grid");
  }
};

inline void to_json(nlohmann::json& j, const DomainShift& s) {
  j = {{"gain_amplitude", s.gain_amplitude},
       {"offset_amplitude", s.offset_amplitude},
       {"distortion_amplitude", s.distortion_amplitude},
       {"distortion_cycles", s.distortion_cycles},
       {"noise", s.noise}};
}

inline void from_json(const nlohmann::json& j, DomainShift& s) {
  s.gain_amplitude = j.value("gain_amplitude", s.gain_amplitude);
  s.offset_amplitude = j.value("offset_amplitude", s.offset_amplitude);
  s.distortion_amplitude = j.value("distortion_amplitude", s.distortion_amplitude);
  s.distortion_cycles = j.value("distortion_cycles", s.distortion_cycles);
  s.noise = j.value("noise", s.noise);
}

inline void to_json(nlohmann::json& j, const SceneSpec& s) {
  j = {{"K", s.num_known},
       {"U", s.num_unknown},
       {"bands", s.bands},
       {"height", s.height},
       {"width", s.width},
       {"pixels_per_class", s.pixels_per_class},
       {"source_noise", s.source_noise},
       {"brightness_jitter", s.brightness_jitter},
       {"min_endmember_distance", s.min_endmember_distance},
       {"shift", s.shift},
       {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SceneSpec& s) {
  s.num_known = j.value("K", s.num_known);
  s.num_unknown = j.value("U", s.num_unknown);
  s.bands = j.value("bands", s.bands);
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.pixels_per_class = j.value("pixels_per_class", s.pixels_per_class);
  s.source_noise = j.value("source_noise", s.source_noise);
  s.brightness_jitter = j.value("brightness_jitter", s.brightness_jitter);
  s.min_endmember_distance = j.value("min_endmember_distance", s.min_endmember_distance);
  if (j.contains("shift")) s.shift = j.at("shift").get<DomainShift>();
  s.seed = j.value("seed", s.seed);
}

namespace detail {

// Smooth reflectance-like curve: baseline plus a few Gaussian bumps.
inline std::vector<double> random_endmember(std::size_t bands, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<double> curve(bands, 0.15 + 0.25 * u01(rng));
  const double slope = (u01(rng) - 0.5) * 0.3;
  const int bumps = 2 + static_cast<int>(u01(rng) * 3.0);
  for (std::size_t b = 0; b < bands; ++b) curve[b] += slope * static_cast<double>(b) / static_cast<double>(bands);
  for (int k = 0; k < bumps; ++k) {
    const double center = u01(rng);
    const double width = 0.05 + 0.15 * u01(rng);
    const double amp = (u01(rng) - 0.35) * 0.6;
    for (std::size_t b = 0; b < bands; ++b) {
      const double x = static_cast<double>(b) / static_cast<double>(bands - 1);
      curve[b] += amp * std::exp(-0.5 * std::pow((x - center) / width, 2));
    }
  }
  for (auto& v : curve) v = std::clamp(v, 0.02, 0.95);
  return curve;
}

inline double rms_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc / static_cast<double>(a.size()));
}

// RMS distance between curves scaled to unit mean, so brightness jitter
// cannot make two classes coincide.
inline double shape_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  std::vector<double> na(a.size()), nb(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) na[i] = a[i] * a.size() / ma, nb[i] = b[i] * b.size() / mb;
  return rms_distance(na, nb);
}

// Smooth per-band field in [-1, 1] built from two random low-order cosines.
inline std::vector<double> smooth_field(std::size_t bands, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double f1 = 0.5 + u01(rng), f2 = 1.5 + u01(rng);
  const double p1 = 2.0 * std::numbers::pi * u01(rng), p2 = 2.0 * std::numbers::pi * u01(rng);
  std::vector<double> out(bands);
  for (std::size_t b = 0; b < bands; ++b) {
    const double x = static_cast<double>(b) / static_cast<double>(bands - 1);
    out[b] = 0.7 * std::cos(2.0 * std::numbers::pi * f1 * x + p1) + 0.3 * std::cos(2.0 * std::numbers::pi * f2 * x + p2);
  }
  return out;
}

// Grows one 4-connected blob per slot, each exactly `per_class` pixels.
// slot[i] is the blob index of pixel i or -1. Returns false when a blob
// runs out of room.
inline bool grow_layout(std::vector<int>& slot, std::size_t h, std::size_t w, std::size_t n_slots,
                        std::size_t per_class, std::mt19937_64& rng) {
  slot.assign(h * w, -1);
  for (std::size_t s = 0; s < n_slots; ++s) {
    std::vector<std::size_t> free;
    for (std::size_t i = 0; i < h * w; ++i)
      if (slot[i] < 0) free.push_back(i);
    if (free.size() < per_class) return false;
    const std::size_t seed_px = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
    std::vector<std::size_t> frontier{seed_px};
    std::vector<char> seen(h * w, 0);
    seen[seed_px] = 1;
    std::size_t grown = 0;
    while (grown < per_class) {
      if (frontier.empty()) return false;
      const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, frontier.size() - 1)(rng);
      const std::size_t px = frontier[pick];
      frontier[pick] = frontier.back();
      frontier.pop_back();
      slot[px] = static_cast<int>(s);
      ++grown;
      const long r = static_cast<long>(px / w), c = static_cast<long>(px % w);
      const std::pair<long, long> nb[4] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
      for (auto [dr, dc] : nb) {
        const long rr = r + dr, cc = c + dc;
        if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
        const std::size_t q = static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc);
        if (slot[q] < 0 && !seen[q]) {
          seen[q] = 1;
          frontier.push_back(q);
        }
      }
    }
  }
  return true;
}

}  // namespace detail

struct SyntheticScene {
  HSICube source;
  HSICube target;
  std::vector<std::vector<double>> endmembers;  // K known, then U unknown, then background
};

/// Builds a source scene with K known classes and a shifted target scene
/// that additionally contains U unknown classes (label 65535).
inline SyntheticScene synth_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const std::size_t c = spec.bands;
  const std::size_t n_classes = spec.num_known + spec.num_unknown;

  SyntheticScene out;
  // Known, then unknown, then one background curve; rejection sampling
  // keeps class curves pairwise apart.
  for (std::size_t k = 0; k < n_classes; ++k) {
    std::vector<double> cand;
    int tries = 0;
    do {
      if (++tries > 5000) throw std::runtime_error("synth_scene: cannot place distinct endmembers");
      cand = detail::random_endmember(c, rng);
    } while (std::any_of(out.endmembers.begin(), out.endmembers.end(), [&](const auto& e) {
      return detail::shape_distance(e, cand) < spec.min_endmember_distance;
    }));
    out.endmembers.push_back(std::move(cand));
  }
  out.endmembers.push_back(detail::random_endmember(c, rng));

  const auto gain_field = detail::smooth_field(c, rng);
  const auto offset_field = detail::smooth_field(c, rng);
  const double phase = 2.0 * std::numbers::pi * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  std::vector<double> gain(c), offset(c), distortion(c);
  for (std::size_t b = 0; b < c; ++b) {
    const double x = static_cast<double>(b) / static_cast<double>(c - 1);
    gain[b] = 1.0 + spec.shift.gain_amplitude * gain_field[b];
    offset[b] = spec.shift.offset_amplitude * offset_field[b];
    distortion[b] = spec.shift.distortion_amplitude *
                    std::sin(2.0 * std::numbers::pi * spec.shift.distortion_cycles * x + phase);
  }

  std::vector<std::string> names;
  for (std::size_t k = 1; k <= spec.num_known; ++k) names.push_back("class_" + std::to_string(k));

  // Independent streams so the source does not depend on U.
  std::mt19937_64 src_rng(spec.seed ^ 0x5eed5eed5eedULL);
  std::mt19937_64 tgt_rng(spec.seed ^ 0x7a7a7a7a7a7aULL);

  auto make_cube = [&](bool target, std::mt19937_64& g) {
    HSICube cube;
    cube.height = spec.height;
    cube.width = spec.width;
    cube.bands = c;
    cube.num_known = spec.num_known;
    cube.class_names = names;
    cube.labels.assign(spec.height * spec.width, kUnlabeled);
    cube.data.assign(spec.height * spec.width * c, 0.0f);
    const std::size_t n_slots = target ? n_classes : spec.num_known;
    std::vector<int> slot;
    bool ok = false;
    for (int attempt = 0; attempt < spec.max_layout_retries && !ok; ++attempt)
      ok = detail::grow_layout(slot, spec.height, spec.width, n_slots, spec.pixels_per_class, g);
    if (!ok) throw std::runtime_error("synth_scene: infeasible spatial layout after retries");
    std::uniform_real_distribution<double> jitter(1.0 - spec.brightness_jitter, 1.0 + spec.brightness_jitter);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double sigma = target ? spec.shift.noise : spec.source_noise;
    for (std::size_t i = 0; i < slot.size(); ++i) {
      const std::size_t em = slot[i] < 0 ? n_classes : static_cast<std::size_t>(slot[i]);
      if (slot[i] >= 0)
        cube.labels[i] = em < spec.num_known ? static_cast<std::uint16_t>(em + 1) : kUnknownLabel;
      const double bright = jitter(g);
      float* px = cube.data.data() + i * c;
      for (std::size_t b = 0; b < c; ++b) {
        double v = out.endmembers[em][b] * bright;
        if (target) v = gain[b] * v + offset[b] + distortion[b];
        px[b] = static_cast<float>(v + sigma * noise(g));
      }
    }
    return cube;
  };
  out.source = make_cube(false, src_rng);
  out.target = make_cube(true, tgt_rng);
  return out;
}

}  // namespace osdg
