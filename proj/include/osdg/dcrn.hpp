#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "osdg/numerics/tape.hpp"
#include "osdg/params.hpp"

// Dual-channel residual network: a per-pixel spectral pathway of 1x1
// convolutions and a compact 3x3 residual spatial pathway, fused into a
// combined feature.
namespace osdg::dcrn {

enum class Mode { Dual, SpectralOnly };
enum class Fusion { Attention, Add, Concat };

inline Mode parse_mode(const std::string& s) {
  if (s == "dual") return Mode::Dual;
  if (s == "spectral_only") return Mode::SpectralOnly;
  throw std::invalid_argument("unknown dcrn mode '" + s + "' (valid: dual, spectral_only)");
}
inline std::string to_string(Mode m) { return m == Mode::Dual ? "dual" : "spectral_only"; }

inline Fusion parse_fusion(const std::string& s) {
  if (s == "attention") return Fusion::Attention;
  if (s == "add") return Fusion::Add;
  if (s == "concat") return Fusion::Concat;
  throw std::invalid_argument("unknown dcrn fusion '" + s + "' (valid: attention, add, concat)");
}
inline std::string to_string(Fusion f) {
  switch (f) {
    case Fusion::Attention: return "attention";
    case Fusion::Add: return "add";
    case Fusion::Concat: return "concat";
  }
  return "?";
}

struct Config {
  Mode mode = Mode::Dual;
  Fusion fusion = Fusion::Attention;
  std::size_t dim = 128;            // d
  std::size_t spectral_blocks = 2;
  std::size_t spatial_blocks = 4;
  std::size_t spatial_width = 32;

  void validate() const {
    if (dim == 0 || spatial_width == 0) throw std::invalid_argument("dcrn: widths must be > 0");
  }
};

template <typename T>
struct ConvLayer {
  Param<T>* w;
  Param<T>* b;
};

template <typename T>
struct Weights {
  ConvLayer<T> spec_stem;
  std::vector<ConvLayer<T>> spec_blocks;
  Param<T>* spec_out_w;
  Param<T>* spec_out_b;
  ConvLayer<T> spat_stem;
  std::vector<ConvLayer<T>> spat_blocks;
  Param<T>* spat_out_w;
  Param<T>* spat_out_b;
  Param<T>* gate1_w;
  Param<T>* gate1_b;
  Param<T>* gate2_w;
  Param<T>* gate2_b;
  Param<T>* mix_w;
  Param<T>* mix_b;
};

template <typename T>
Weights<T> create(ParamStore<T>& store, const Config& cfg, std::size_t bands, std::mt19937_64& rng) {
  cfg.validate();
  Weights<T> w{};
  const std::size_t d = cfg.dim, sw = cfg.spatial_width;
  auto conv = [&](const std::string& name, std::size_t cout, std::size_t cin, std::size_t k, double gain) {
    ConvLayer<T> l;
    l.w = &store.add_uniform(name + ".w", {cout, cin, k, k}, gain * he_bound(cin * k * k), rng);
    l.b = &store.add(name + ".b", {cout});
    return l;
  };
  // Residual branches start scaled down so the stack begins near identity.
  w.spec_stem = conv("dcrn.spec.stem", d, bands, 1, 1.0);
  for (std::size_t i = 0; i < cfg.spectral_blocks; ++i)
    w.spec_blocks.push_back(conv("dcrn.spec.block" + std::to_string(i), d, d, 1, 0.5));
  w.spec_out_w = &store.add_uniform("dcrn.spec.out.w", {d, d}, he_bound(d), rng);
  w.spec_out_b = &store.add("dcrn.spec.out.b", {d});
  w.spat_stem = conv("dcrn.spat.stem", sw, bands, 1, 1.0);
  for (std::size_t i = 0; i < cfg.spatial_blocks; ++i)
    w.spat_blocks.push_back(conv("dcrn.spat.block" + std::to_string(i), sw, sw, 3, 0.5));
  w.spat_out_w = &store.add_uniform("dcrn.spat.out.w", {sw, d}, he_bound(sw), rng);
  w.spat_out_b = &store.add("dcrn.spat.out.b", {d});
  const std::size_t squeeze = std::max<std::size_t>(d / 4, 1);
  w.gate1_w = &store.add_uniform("dcrn.fuse.gate1.w", {2 * d, squeeze}, he_bound(2 * d), rng);
  w.gate1_b = &store.add("dcrn.fuse.gate1.b", {squeeze});
  w.gate2_w = &store.add_uniform("dcrn.fuse.gate2.w", {squeeze, 2 * d}, glorot_bound(squeeze, 2 * d), rng);
  w.gate2_b = &store.add("dcrn.fuse.gate2.b", {2 * d});
  w.mix_w = &store.add_uniform("dcrn.fuse.mix.w", {2 * d, d}, glorot_bound(2 * d, d), rng);
  w.mix_b = &store.add("dcrn.fuse.mix.b", {d});
  return w;
}

namespace detail {

template <typename T>
Var<T> conv(Tape<T>& t, const Var<T>& x, const ConvLayer<T>& l, std::size_t pad) {
  Var<T> b = t.param(*l.b);
  return ad::conv2d(x, t.param(*l.w), &b, pad);
}

template <typename T>
void check_finite(const Var<T>& v, const char* where) {
  if (!v.value().all_finite()) throw std::runtime_error(std::string("dcrn: non-finite value in ") + where);
}

}  // namespace detail

/// x: enhanced patches [B,C,7,7] -> f_spec [B,d].
template <typename T>
Var<T> spectral_path(Tape<T>& t, const Var<T>& x, const Weights<T>& w) {
  using namespace ad;
  Var<T> h = relu(detail::conv(t, x, w.spec_stem, 0));
  for (const auto& blk : w.spec_blocks) h = add(h, relu(detail::conv(t, h, blk, 0)));
  Var<T> ob = t.param(*w.spec_out_b);
  Var<T> f = linear(mean_spatial(h), t.param(*w.spec_out_w), &ob);
  detail::check_finite(f, "spectral pathway");
  return f;
}

/// x: enhanced patches [B,C,7,7] -> f_spat [B,d].
template <typename T>
Var<T> spatial_path(Tape<T>& t, const Var<T>& x, const Weights<T>& w) {
  using namespace ad;
  Var<T> h = relu(detail::conv(t, x, w.spat_stem, 0));
  for (const auto& blk : w.spat_blocks) h = add(h, relu(detail::conv(t, h, blk, 1)));
  Var<T> ob = t.param(*w.spat_out_b);
  Var<T> f = linear(mean_spatial(h), t.param(*w.spat_out_w), &ob);
  detail::check_finite(f, "spatial pathway");
  return f;
}

template <typename T>
Var<T> fuse(Tape<T>& t, const Var<T>& f_spec, const Var<T>& f_spat, Fusion fusion, const Weights<T>& w) {
  using namespace ad;
  require(f_spec.shape() == f_spat.shape(), "fuse: pathway widths differ");
  Var<T> residual = scale(add(f_spec, f_spat), T(0.5));
  if (fusion == Fusion::Add) return residual;
  Var<T> cat = concat(f_spec, f_spat);
  Var<T> mb = t.param(*w.mix_b);
  if (fusion == Fusion::Concat) return linear(cat, t.param(*w.mix_w), &mb);
  Var<T> g1 = t.param(*w.gate1_b), g2 = t.param(*w.gate2_b);
  Var<T> gate = sigmoid(linear(relu(linear(cat, t.param(*w.gate1_w), &g1)), t.param(*w.gate2_w), &g2));
  return add(linear(mul(cat, gate), t.param(*w.mix_w), &mb), residual);
}

template <typename T>
struct PathwayFeatures {
  Var<T> f_spec;
  Var<T> f_spat;
  Var<T> f_comb;
};

template <typename T>
PathwayFeatures<T> forward(Tape<T>& t, const Var<T>& x, const Config& cfg, const Weights<T>& w) {
  PathwayFeatures<T> out;
  out.f_spec = spectral_path(t, x, w);
  if (cfg.mode == Mode::SpectralOnly) {
    out.f_spat = out.f_spec;
    out.f_comb = out.f_spec;
    return out;
  }
  out.f_spat = spatial_path(t, x, w);
  out.f_comb = fuse(t, out.f_spec, out.f_spat, cfg.fusion, w);
  return out;
}

}  // namespace osdg::dcrn
