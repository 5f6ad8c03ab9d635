#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "osdg/dataio/cube.hpp"

namespace osdg {

inline constexpr std::size_t kPatchSize = 7;
inline constexpr std::size_t kPatchRadius = kPatchSize / 2;

/// 7 x 7 x C window around a labeled pixel, stored (row, col, band).
struct Patch {
  std::size_t bands = 0;
  std::vector<float> window;
  std::uint16_t label = kUnlabeled;
  std::size_t row = 0;
  std::size_t col = 0;

  Patch() = default;
  explicit Patch(std::size_t c) : bands(c), window(kPatchSize * kPatchSize * c, 0.0f) {}

  float& at(std::size_t r, std::size_t c, std::size_t b) { return window[(r * kPatchSize + c) * bands + b]; }
  float at(std::size_t r, std::size_t c, std::size_t b) const { return window[(r * kPatchSize + c) * bands + b]; }
  const float* spectrum(std::size_t r, std::size_t c) const { return window.data() + (r * kPatchSize + c) * bands; }
  float* spectrum(std::size_t r, std::size_t c) { return window.data() + (r * kPatchSize + c) * bands; }
  const float* center() const { return spectrum(kPatchRadius, kPatchRadius); }
};

/// Mirror index about the border without repeating the edge sample
/// (-1 -> 1, n -> n-2); repeated for offsets larger than the extent.
inline std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long m = static_cast<long>(n);
  const long period = 2 * (m - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < m ? i : period - i);
}

inline Patch extract_patch(const HSICube& cube, std::size_t row, std::size_t col) {
  if (row >= cube.height || col >= cube.width)
    throw std::out_of_range("extract_patch: (" + std::to_string(row) + "," + std::to_string(col) +
                            ") outside cube");
  const std::uint16_t l = cube.label(row, col);
  if (l == kUnlabeled)
    throw std::invalid_argument("extract_patch: unlabeled center at (" + std::to_string(row) + "," +
                                std::to_string(col) + ")");
  Patch p(cube.bands);
  p.label = l;
  p.row = row;
  p.col = col;
  for (std::size_t i = 0; i < kPatchSize; ++i) {
    const std::size_t r = reflect_index(static_cast<long>(row + i) - static_cast<long>(kPatchRadius), cube.height);
    for (std::size_t j = 0; j < kPatchSize; ++j) {
      const std::size_t c = reflect_index(static_cast<long>(col + j) - static_cast<long>(kPatchRadius), cube.width);
      std::copy_n(cube.pixel(r, c), cube.bands, p.spectrum(i, j));
    }
  }
  return p;
}

/// Flat pixel indices (r * W + c) of every labeled pixel, row-major.
inline std::vector<std::size_t> labeled_pixels(const HSICube& cube) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < cube.labels.size(); ++i)
    if (cube.labels[i] != kUnlabeled) out.push_back(i);
  return out;
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Per known class, ceil(ratio * n) shuffled pixels go to train and the
/// rest to validation. Indices refer to flat pixel positions.
inline Split stratified_split(const std::vector<std::uint16_t>& labels, std::size_t num_known, double ratio,
                              std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("stratified_split: ratio must be in (0,1)");
  std::vector<std::vector<std::size_t>> per_class(num_known + 1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto l = labels[i];
    if (l == kUnlabeled) continue;
    if (l == kUnknownLabel || l > num_known)
      throw std::invalid_argument("stratified_split: label " + std::to_string(l) + " is not a known class");
    per_class[l].push_back(i);
  }
  std::mt19937_64 rng(seed);
  Split s;
  for (std::size_t k = 1; k <= num_known; ++k) {
    auto& idx = per_class[k];
    if (idx.size() < 2)
      throw std::invalid_argument("stratified_split: class " + std::to_string(k) + " has " +
                                  std::to_string(idx.size()) + " samples (need >= 2)");
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(idx.size()) - 1e-9));
    s.train.insert(s.train.end(), idx.begin(), idx.begin() + static_cast<long>(n_train));
    s.validation.insert(s.validation.end(), idx.begin() + static_cast<long>(n_train), idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  return s;
}

/// Per-band statistics of source training pixels.
struct BandStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<double> min;
  std::vector<double> max;
};

inline BandStats compute_band_stats(const HSICube& cube, const std::vector<std::size_t>& pixels) {
  if (pixels.empty()) throw std::invalid_argument("compute_band_stats: no pixels");
  const std::size_t c = cube.bands;
  BandStats st{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0),
               std::vector<double>(c, std::numeric_limits<double>::infinity()),
               std::vector<double>(c, -std::numeric_limits<double>::infinity())};
  for (std::size_t p : pixels) {
    const float* s = cube.data.data() + p * c;
    for (std::size_t b = 0; b < c; ++b) {
      st.mean[b] += s[b];
      st.min[b] = std::min(st.min[b], static_cast<double>(s[b]));
      st.max[b] = std::max(st.max[b], static_cast<double>(s[b]));
    }
  }
  const double n = static_cast<double>(pixels.size());
  for (auto& m : st.mean) m /= n;
  for (std::size_t p : pixels) {
    const float* s = cube.data.data() + p * c;
    for (std::size_t b = 0; b < c; ++b) st.stddev[b] += (s[b] - st.mean[b]) * (s[b] - st.mean[b]);
  }
  for (auto& v : st.stddev) {
    v = std::sqrt(v / n);
    if (!(v > 1e-12)) v = 1.0;  // degenerate band
  }
  return st;
}

/// Per-band z-score with the supplied (source-train) statistics.
inline HSICube standardize(const HSICube& cube, const BandStats& stats) {
  if (stats.mean.size() != cube.bands || stats.stddev.size() != cube.bands)
    throw std::invalid_argument("standardize: stats have " + std::to_string(stats.mean.size()) +
                                " bands, cube has " + std::to_string(cube.bands));
  HSICube out = cube;
  for (std::size_t i = 0; i < cube.pixels(); ++i)
    for (std::size_t b = 0; b < cube.bands; ++b) {
      float& v = out.data[i * cube.bands + b];
      v = static_cast<float>((v - stats.mean[b]) / stats.stddev[b]);
    }
  return out;
}

}  // namespace osdg
