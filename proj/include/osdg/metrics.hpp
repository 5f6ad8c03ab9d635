#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "osdg/dataio/cube.hpp"

namespace osdg::metrics {

/// (K+1) x (K+1) counts; row = truth, column = prediction, last index = unknown.
struct Confusion {
  std::size_t k = 0;
  std::vector<std::size_t> counts;

  std::size_t& at(std::size_t truth, std::size_t pred) { return counts[truth * (k + 1) + pred]; }
  std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * (k + 1) + pred]; }
  std::size_t row_total(std::size_t truth) const {
    std::size_t n = 0;
    for (std::size_t j = 0; j <= k; ++j) n += at(truth, j);
    return n;
  }
  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
};

/// Row/column index of a label: 1..K -> 0..K-1, unknown -> K.
inline std::size_t label_index(std::uint16_t l, std::size_t k) {
  if (l == kUnknownLabel) return k;
  if (l >= 1 && l <= k) return l - 1u;
  throw std::invalid_argument("metrics: label " + std::to_string(l) + " outside {1.." + std::to_string(k) +
                              ", 65535}");
}

/// Unlabeled (0) truth entries are skipped.
inline Confusion confusion(const std::vector<std::uint16_t>& predictions, const std::vector<std::uint16_t>& labels,
                           std::size_t k) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("confusion: length mismatch");
  Confusion c{k, std::vector<std::size_t>((k + 1) * (k + 1), 0)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kUnlabeled) continue;
    ++c.at(label_index(labels[i], k), label_index(predictions[i], k));
  }
  return c;
}

/// Per-known-class accuracy in percent.
inline std::vector<double> per_class_accuracy(const Confusion& c) {
  std::vector<double> acc(c.k);
  for (std::size_t i = 0; i < c.k; ++i) {
    const std::size_t n = c.row_total(i);
    if (n == 0) throw std::invalid_argument("os_score: known class " + std::to_string(i + 1) + " has no samples");
    acc[i] = 100.0 * static_cast<double>(c.at(i, i)) / static_cast<double>(n);
  }
  return acc;
}

/// Macro mean of per-class accuracies (percent).
inline double os_from_accuracies(const std::vector<double>& acc) {
  if (acc.empty()) throw std::invalid_argument("os_score: no known classes");
  double s = 0.0;
  for (double a : acc) s += a;
  return s / static_cast<double>(acc.size());
}

inline double os_score(const Confusion& c) { return os_from_accuracies(per_class_accuracy(c)); }

inline double unk_rate(const Confusion& c) {
  const std::size_t n = c.row_total(c.k);
  if (n == 0) throw std::invalid_argument("unk_rate: no unknown-labelled samples");
  return 100.0 * static_cast<double>(c.at(c.k, c.k)) / static_cast<double>(n);
}

inline double hos(double os, double unk) {
  if (os < 0.0 || unk < 0.0) throw std::invalid_argument("hos: negative score");
  if (os + unk == 0.0) {
    std::cerr << "warning: hos(0, 0) defined as 0\n";
    return 0.0;
  }
  return 2.0 * os * unk / (os + unk);
}

struct Report {
  Confusion confusion;
  std::vector<double> per_class;
  double os = 0.0;
  double unk = 0.0;
  double hos = 0.0;
  double tau = 0.0;
};

inline Report make_report(const Confusion& c, double tau) {
  Report r;
  r.confusion = c;
  r.per_class = per_class_accuracy(c);
  r.os = os_from_accuracies(r.per_class);
  r.unk = unk_rate(c);
  r.hos = hos(r.os, r.unk);
  r.tau = tau;
  return r;
}

inline std::string fixed(double v, int digits = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

inline std::string report_csv(const Report& r, const std::vector<std::string>& class_names) {
  std::ostringstream s;
  s << "metric,value\n";
  for (std::size_t i = 0; i < r.per_class.size(); ++i)
    s << "acc_" << (i < class_names.size() ? class_names[i] : "class_" + std::to_string(i + 1)) << ','
      << fixed(r.per_class[i], 4) << '\n';
  s << "OS," << fixed(r.os, 4) << "\nUnk," << fixed(r.unk, 4) << "\nHOS," << fixed(r.hos, 4) << "\ntau,"
    << fixed(r.tau, 6) << '\n';
  return s.str();
}

inline std::string confusion_csv(const Confusion& c) {
  std::ostringstream s;
  s << "truth";
  for (std::size_t j = 0; j < c.k; ++j) s << ",pred_" << j + 1;
  s << ",pred_unknown\n";
  for (std::size_t i = 0; i <= c.k; ++i) {
    s << (i == c.k ? std::string("unknown") : std::to_string(i + 1));
    for (std::size_t j = 0; j <= c.k; ++j) s << ',' << c.at(i, j);
    s << '\n';
  }
  return s.str();
}

inline std::string report_table(const Report& r, const std::vector<std::string>& class_names) {
  std::ostringstream s;
  s << std::left << std::setw(18) << "class" << std::right << std::setw(10) << "acc(%)" << '\n';
  for (std::size_t i = 0; i < r.per_class.size(); ++i)
    s << std::left << std::setw(18) << (i < class_names.size() ? class_names[i] : std::to_string(i + 1)) << std::right
      << std::setw(10) << fixed(r.per_class[i]) << '\n';
  s << std::left << std::setw(18) << "OS" << std::right << std::setw(10) << fixed(r.os) << '\n'
    << std::left << std::setw(18) << "Unk" << std::right << std::setw(10) << fixed(r.unk) << '\n'
    << std::left << std::setw(18) << "HOS" << std::right << std::setw(10) << fixed(r.hos) << '\n'
    << std::left << std::setw(18) << "tau*" << std::right << std::setw(10) << fixed(r.tau, 4) << '\n';
  return s.str();
}

// ---- classification map ---------------------------------------------------

inline constexpr std::uint8_t kBackgroundIndex = 0;
inline constexpr std::uint8_t kUnknownIndex = 255;

inline std::array<std::array<std::uint8_t, 3>, 256> map_palette() {
  std::array<std::array<std::uint8_t, 3>, 256> pal{};
  static const std::uint8_t base[][3] = {{230, 25, 75},   {60, 180, 75},  {255, 225, 25}, {0, 130, 200},
                                         {245, 130, 48},  {145, 30, 180}, {70, 240, 240}, {240, 50, 230},
                                         {210, 245, 60},  {250, 190, 212}, {0, 128, 128}, {220, 190, 255},
                                         {170, 110, 40},  {128, 0, 0},    {170, 255, 195}, {128, 128, 0}};
  pal[kBackgroundIndex] = {0, 0, 0};
  for (std::size_t i = 1; i < 255; ++i) {
    const auto* c = base[(i - 1) % 16];
    const std::uint8_t dim = static_cast<std::uint8_t>(((i - 1) / 16) * 12);
    pal[i] = {static_cast<std::uint8_t>(std::max(0, c[0] - dim)), static_cast<std::uint8_t>(std::max(0, c[1] - dim)),
              static_cast<std::uint8_t>(std::max(0, c[2] - dim))};
  }
  pal[kUnknownIndex] = {255, 255, 255};
  return pal;
}

/// 8-bit palettised BMP of a label grid (0 background, 1..K, 65535 unknown).
inline std::string encode_bmp(const std::vector<std::uint16_t>& grid, std::size_t height, std::size_t width) {
  if (grid.size() != height * width) throw std::invalid_argument("bmp: grid size mismatch");
  const std::size_t stride = (width + 3) & ~std::size_t{3};
  const std::uint32_t pixel_off = 14 + 40 + 256 * 4;
  const std::uint32_t file_size = pixel_off + static_cast<std::uint32_t>(stride * height);
  std::string out;
  auto u16 = [&](std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>(v >> 8));
  };
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  };
  out += "BM";
  u32(file_size);
  u32(0);
  u32(pixel_off);
  u32(40);
  u32(static_cast<std::uint32_t>(width));
  u32(static_cast<std::uint32_t>(height));
  u16(1);
  u16(8);
  u32(0);
  u32(static_cast<std::uint32_t>(stride * height));
  u32(2835);
  u32(2835);
  u32(256);
  u32(0);
  for (const auto& c : map_palette()) {
    out.push_back(static_cast<char>(c[2]));
    out.push_back(static_cast<char>(c[1]));
    out.push_back(static_cast<char>(c[0]));
    out.push_back(0);
  }
  for (std::size_t r = height; r-- > 0;) {  // bottom-up rows
    for (std::size_t c = 0; c < width; ++c) {
      const std::uint16_t l = grid[r * width + c];
      std::uint8_t idx = kBackgroundIndex;
      if (l == kUnknownLabel) idx = kUnknownIndex;
      else if (l > 0) idx = static_cast<std::uint8_t>(std::min<std::uint16_t>(l, 254));
      out.push_back(static_cast<char>(idx));
    }
    for (std::size_t p = width; p < stride; ++p) out.push_back(0);
  }
  return out;
}

inline void write_bmp(const std::filesystem::path& path, const std::vector<std::uint16_t>& grid, std::size_t height,
                      std::size_t width) {
  const std::string bytes = encode_bmp(grid, height, width);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace osdg::metrics
