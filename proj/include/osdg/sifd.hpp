#pragma once

#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "osdg/numerics/spectral.hpp"
#include "osdg/numerics/tape.hpp"
#include "osdg/params.hpp"

// Spectrum-invariant frequency features: a spectral transform of the
// center pixel, a small 1-D convolutional encoder with channel attention,
// a domain head behind gradient reversal, a reconstruction decoder and
// the additive input enhancement.
namespace osdg::sifd {

enum class Transform { Fft, Dct, Wavelet, RealOnly, ImagOnly, None };

inline const std::vector<std::pair<std::string, Transform>>& transform_names() {
  static const std::vector<std::pair<std::string, Transform>> names = {
      {"fft", Transform::Fft},          {"dct", Transform::Dct},
      {"wavelet", Transform::Wavelet},  {"real_only", Transform::RealOnly},
      {"imag_only", Transform::ImagOnly}, {"none", Transform::None}};
  return names;
}

inline std::string to_string(Transform t) {
  for (const auto& [n, v] : transform_names())
    if (v == t) return n;
  return "?";
}

inline Transform parse_transform(const std::string& s) {
  for (const auto& [n, v] : transform_names())
    if (n == s) return v;
  std::string valid;
  for (const auto& [n, v] : transform_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown sifd variant '" + s + "' (valid: " + valid + ")");
}

// How the encoder is pushed toward domain-invariant features.
// Confusion: the encoder minimises BCE(D(f), 0.5) with D held fixed, while
// D itself learns to tell source from augmented views on detached features.
// Adversarial: D learns the views through the gradient-reversal layer.
enum class DomainMode { Confusion, Adversarial };

inline DomainMode parse_domain_mode(const std::string& s) {
  if (s == "confusion") return DomainMode::Confusion;
  if (s == "adversarial") return DomainMode::Adversarial;
  throw std::invalid_argument("unknown sifd domain_mode '" + s + "' (valid: confusion, adversarial)");
}
inline std::string to_string(DomainMode m) { return m == DomainMode::Confusion ? "confusion" : "adversarial"; }

struct Config {
  Transform variant = Transform::Fft;
  DomainMode domain_mode = DomainMode::Confusion;
  bool attention = true;
  bool domain_reg = true;
  bool recon = true;
  std::size_t channels1 = 8;
  std::size_t channels2 = 16;
  std::size_t feature_dim = 64;  // d_f
  std::size_t kernel = 5;
  std::size_t stride = 2;

  void validate() const {
    if (feature_dim == 0 || channels1 == 0 || channels2 == 0) throw std::invalid_argument("sifd: widths must be > 0");
  }
};

/// Length of the encoder input produced by `variant` for C bands.
inline std::size_t transform_length(Transform variant, std::size_t bands) {
  switch (variant) {
    case Transform::Fft: return 2 * (bands / 2 + 1);
    case Transform::RealOnly:
    case Transform::ImagOnly: return bands / 2 + 1;
    case Transform::Dct:
    case Transform::None: return bands;
    case Transform::Wavelet: return spectral::next_pow2(bands);
  }
  return bands;
}

/// Encoder input for one standardized spectrum.
template <typename T>
std::vector<T> transform_spectrum(Transform variant, std::span<const T> s) {
  switch (variant) {
    case Transform::Fft: {
      auto sp = spectral::fft_spectrum(s);
      sp.re.insert(sp.re.end(), sp.im.begin(), sp.im.end());
      return sp.re;
    }
    case Transform::RealOnly: return spectral::fft_spectrum(s).re;
    case Transform::ImagOnly: return spectral::fft_spectrum(s).im;
    case Transform::Dct: return spectral::dct_spectrum(s);
    case Transform::Wavelet: return spectral::haar_spectrum(s);
    case Transform::None:
      for (std::size_t i = 0; i < s.size(); ++i)
        if (!std::isfinite(s[i])) throw std::invalid_argument("sifd: non-finite input at band " + std::to_string(i));
      return std::vector<T>(s.begin(), s.end());
  }
  return {};
}

inline std::size_t conv_out(std::size_t len, std::size_t k, std::size_t stride) {
  return (len + 2 * (k / 2) - k) / stride + 1;
}

template <typename T>
struct Weights {
  Param<T>* conv1_w;
  Param<T>* conv1_b;
  Param<T>* conv2_w;
  Param<T>* conv2_b;
  Param<T>* att1_w;
  Param<T>* att1_b;
  Param<T>* att2_w;
  Param<T>* att2_b;
  Param<T>* enc_w;
  Param<T>* enc_b;
  Param<T>* dom1_w;
  Param<T>* dom1_b;
  Param<T>* dom2_w;
  Param<T>* dom2_b;
  Param<T>* dec1_w;
  Param<T>* dec1_b;
  Param<T>* dec2_w;
  Param<T>* dec2_b;
  Param<T>* proj_w;
  std::size_t input_len = 0;
  std::size_t encoded_len = 0;
};

template <typename T>
Weights<T> create(ParamStore<T>& store, const Config& cfg, std::size_t bands, std::mt19937_64& rng) {
  cfg.validate();
  Weights<T> w{};
  const std::size_t k = cfg.kernel, c1 = cfg.channels1, c2 = cfg.channels2, df = cfg.feature_dim;
  w.input_len = transform_length(cfg.variant, bands);
  w.encoded_len = conv_out(conv_out(w.input_len, k, cfg.stride), k, cfg.stride);
  const std::size_t squeeze = std::max<std::size_t>(c2 / 2, 1);
  w.conv1_w = &store.add_uniform("sifd.conv1.w", {c1, 1, k}, he_bound(k), rng);
  w.conv1_b = &store.add("sifd.conv1.b", {c1});
  w.conv2_w = &store.add_uniform("sifd.conv2.w", {c2, c1, k}, he_bound(c1 * k), rng);
  w.conv2_b = &store.add("sifd.conv2.b", {c2});
  w.att1_w = &store.add_uniform("sifd.att1.w", {c2, squeeze}, he_bound(c2), rng);
  w.att1_b = &store.add("sifd.att1.b", {squeeze});
  w.att2_w = &store.add_uniform("sifd.att2.w", {squeeze, c2}, glorot_bound(squeeze, c2), rng);
  w.att2_b = &store.add("sifd.att2.b", {c2});
  w.enc_w = &store.add_uniform("sifd.enc.w", {c2 * w.encoded_len, df}, he_bound(c2 * w.encoded_len), rng);
  w.enc_b = &store.add("sifd.enc.b", {df});
  w.dom1_w = &store.add_uniform("sifd.dom1.w", {df, 32}, he_bound(df), rng);
  w.dom1_b = &store.add("sifd.dom1.b", {32});
  w.dom2_w = &store.add_uniform("sifd.dom2.w", {32, 1}, glorot_bound(32, 1), rng);
  w.dom2_b = &store.add("sifd.dom2.b", {1});
  w.dec1_w = &store.add_uniform("sifd.dec1.w", {df, 64}, he_bound(df), rng);
  w.dec1_b = &store.add("sifd.dec1.b", {64});
  w.dec2_w = &store.add_uniform("sifd.dec2.w", {64, bands}, glorot_bound(64, bands), rng);
  w.dec2_b = &store.add("sifd.dec2.b", {bands});
  // The enhancement starts small so early training sees mostly the raw patch.
  w.proj_w = &store.add_uniform("sifd.proj.w", {df, bands}, 0.1 * glorot_bound(df, bands), rng);
  return w;
}

/// Tape-level result of the frequency branch for a batch of spectra.
template <typename T>
struct Output {
  Var<T> f_freq;                 // [B, d_f]
  std::optional<Var<T>> attention;  // [B, channels2], absent when attention is off
};

/// freq_in: [B, L] transformed spectra (see transform_spectrum).
template <typename T>
Output<T> freq_features(Tape<T>& t, const Var<T>& freq_in, const Config& cfg, const Weights<T>& w) {
  using namespace ad;
  require(freq_in.value().rank() == 2 && freq_in.dim(1) == w.input_len,
          "sifd: expected input [B," + std::to_string(w.input_len) + "], got " + shape_str(freq_in.shape()));
  const std::size_t b = freq_in.dim(0), pad = cfg.kernel / 2;
  Var<T> x = reshape(freq_in, {b, 1, w.input_len});
  Var<T> c1b = t.param(*w.conv1_b), c2b = t.param(*w.conv2_b);
  Var<T> h = relu(conv1d(x, t.param(*w.conv1_w), &c1b, pad, cfg.stride));
  h = relu(conv1d(h, t.param(*w.conv2_w), &c2b, pad, cfg.stride));
  Output<T> out;
  if (cfg.attention) {
    Var<T> squeeze = mean_spatial(h);
    Var<T> a1b = t.param(*w.att1_b), a2b = t.param(*w.att2_b);
    Var<T> gate = sigmoid(linear(relu(linear(squeeze, t.param(*w.att1_w), &a1b)), t.param(*w.att2_w), &a2b));
    h = mul_channel(h, gate);
    out.attention = gate;
  }
  Var<T> flat = reshape(h, {b, cfg.channels2 * w.encoded_len});
  Var<T> eb = t.param(*w.enc_b);
  out.f_freq = linear(flat, t.param(*w.enc_w), &eb);
  if (!out.f_freq.value().all_finite()) throw std::runtime_error("sifd: non-finite value after encoder");
  return out;
}

/// Logit of the domain head behind a gradient-reversal layer, [B,1].
template <typename T>
Var<T> domain_logit(Tape<T>& t, const Var<T>& f_freq, const Weights<T>& w, T grl_lambda = T(1)) {
  using namespace ad;
  Var<T> b1 = t.param(*w.dom1_b), b2 = t.param(*w.dom2_b);
  Var<T> h = relu(linear(grad_reverse(f_freq, grl_lambda), t.param(*w.dom1_w), &b1));
  return linear(h, t.param(*w.dom2_w), &b2);
}

/// Domain logit with the head weights taken as constants, so gradients
/// reach f_freq but not the head.
template <typename T>
Var<T> domain_logit_frozen(Tape<T>& t, const Var<T>& f_freq, const Weights<T>& w) {
  using namespace ad;
  Var<T> b1 = t.constant(w.dom1_b->value), b2 = t.constant(w.dom2_b->value);
  Var<T> h = relu(linear(f_freq, t.constant(w.dom1_w->value), &b1));
  return linear(h, t.constant(w.dom2_w->value), &b2);
}

/// Mean binary cross-entropy between sigmoid(logit) and targets in [0,1].
template <typename T>
Var<T> bce_with_targets(const Var<T>& logit, const std::vector<T>& targets) {
  using namespace ad;
  Tape<T>& t = logit.tape();
  require(targets.size() == logit.value().size(), "bce: target count mismatch");
  const Shape shp = logit.shape();
  Var<T> p = sigmoid(logit);
  Tensor<T> tt(shp, targets), tc(shp);
  for (std::size_t i = 0; i < targets.size(); ++i) tc[i] = T(1) - targets[i];
  Var<T> pos = mul(t.constant(tt), log(p));
  Var<T> neg = mul(t.constant(tc), log(add_scalar(scale(p, T(-1)), T(1))));
  return scale(mean(add(pos, neg)), T(-1));
}

/// Domain-agnostic loss: BCE of MLP(GRL(f_freq)) against a constant 0.5.
template <typename T>
Var<T> domain_loss(Tape<T>& t, const Var<T>& f_freq, const Weights<T>& w, T grl_lambda = T(1)) {
  ad::require(f_freq.dim(0) > 0, "domain_loss: empty batch");
  return bce_with_targets(domain_logit(t, f_freq, w, grl_lambda), std::vector<T>(f_freq.dim(0), T(0.5)));
}

/// Encoder-side confusion term: BCE of the fixed domain head against 0.5.
template <typename T>
Var<T> confusion_loss(Tape<T>& t, const Var<T>& f_freq, const Weights<T>& w) {
  ad::require(f_freq.dim(0) > 0, "confusion_loss: empty batch");
  return bce_with_targets(domain_logit_frozen(t, f_freq, w), std::vector<T>(f_freq.dim(0), T(0.5)));
}

/// sigmoid(MLP(f_freq)), [B,C].
template <typename T>
Var<T> reconstruct(Tape<T>& t, const Var<T>& f_freq, const Weights<T>& w) {
  using namespace ad;
  Var<T> b1 = t.param(*w.dec1_b), b2 = t.param(*w.dec2_b);
  return sigmoid(linear(relu(linear(f_freq, t.param(*w.dec1_w), &b1)), t.param(*w.dec2_w), &b2));
}

/// Batch mean of || target - recon ||_2^2, target rescaled to (0,1).
template <typename T>
Var<T> recon_loss(const Var<T>& target, const Var<T>& recon) {
  using namespace ad;
  Var<T> d = sub(target, recon);
  return scale(sum(mul(d, d)), T(1) / static_cast<T>(target.dim(0)));
}

/// Adds the projected frequency feature to every position of the patch.
/// patches: [B,C,7,7]; f_freq: [B,d_f].
template <typename T>
Var<T> enhance(Tape<T>& t, const Var<T>& patches, const Var<T>& f_freq, const Weights<T>& w) {
  using namespace ad;
  return add_channel(patches, matmul(f_freq, t.param(*w.proj_w)));
}

}  // namespace osdg::sifd
