#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace osdg::spectral {

namespace detail {

template <typename T>
void validate(std::span<const T> s, const char* who) {
  if (s.size() < 2)
    throw std::invalid_argument(std::string(who) + ": need at least 2 samples, got " +
                                std::to_string(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!std::isfinite(s[i]))
      throw std::invalid_argument(std::string(who) + ": non-finite value at index " + std::to_string(i));
}

}  // namespace detail

template <typename T>
struct Spectrum {
  std::vector<T> re;
  std::vector<T> im;
};

/// One-sided DFT of a real signal, X_k = sum_n s_n exp(-2 pi i k n / C),
/// k = 0 .. C/2. Direct O(C^2) evaluation in double.
template <typename T>
Spectrum<T> fft_spectrum(std::span<const T> s) {
  detail::validate(s, "fft_spectrum");
  const std::size_t c = s.size(), m = c / 2 + 1;
  Spectrum<T> out{std::vector<T>(m), std::vector<T>(m)};
  for (std::size_t k = 0; k < m; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t n = 0; n < c; ++n) {
      // reduce k*n mod C first so the angle stays small
      const double ang = -2.0 * std::numbers::pi * static_cast<double>((k * n) % c) / static_cast<double>(c);
      re += static_cast<double>(s[n]) * std::cos(ang);
      im += static_cast<double>(s[n]) * std::sin(ang);
    }
    out.re[k] = static_cast<T>(re);
    out.im[k] = static_cast<T>(im);
  }
  return out;
}

/// Orthonormal DCT-II.
template <typename T>
std::vector<T> dct_spectrum(std::span<const T> s) {
  detail::validate(s, "dct_spectrum");
  const std::size_t c = s.size();
  std::vector<T> out(c);
  const double n = static_cast<double>(c);
  for (std::size_t k = 0; k < c; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < c; ++i)
      acc += static_cast<double>(s[i]) *
             std::cos(std::numbers::pi / n * (static_cast<double>(i) + 0.5) * static_cast<double>(k));
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    out[k] = static_cast<T>(acc * scale);
  }
  return out;
}

/// Inverse of dct_spectrum (DCT-III with the same normalisation).
template <typename T>
std::vector<T> idct(std::span<const T> coeffs) {
  const std::size_t c = coeffs.size();
  std::vector<T> out(c);
  const double n = static_cast<double>(c);
  for (std::size_t i = 0; i < c; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
      acc += scale * static_cast<double>(coeffs[k]) *
             std::cos(std::numbers::pi / n * (static_cast<double>(i) + 0.5) * static_cast<double>(k));
    }
    out[i] = static_cast<T>(acc);
  }
  return out;
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Edge-replicates s up to the next power of two.
template <typename T>
std::vector<T> pad_edge_pow2(std::span<const T> s) {
  std::vector<T> out(s.begin(), s.end());
  out.resize(next_pow2(s.size()), s.back());
  return out;
}

/// Full orthonormal Haar decomposition. Layout: [approximation,
/// coarsest detail, ..., finest details]; length is the padded size.
template <typename T>
std::vector<T> haar_spectrum(std::span<const T> s) {
  detail::validate(s, "haar_spectrum");
  std::vector<double> work;
  for (T v : pad_edge_pow2(s)) work.push_back(static_cast<double>(v));
  const std::size_t n = work.size();
  std::vector<double> tmp(n);
  const double r = std::numbers::sqrt2 / 2.0;
  for (std::size_t len = n; len > 1; len /= 2) {
    const std::size_t h = len / 2;
    for (std::size_t i = 0; i < h; ++i) {
      tmp[i] = (work[2 * i] + work[2 * i + 1]) * r;
      tmp[h + i] = (work[2 * i] - work[2 * i + 1]) * r;
    }
    std::copy(tmp.begin(), tmp.begin() + static_cast<long>(len), work.begin());
  }
  return std::vector<T>(work.begin(), work.end());
}

}  // namespace osdg::spectral
