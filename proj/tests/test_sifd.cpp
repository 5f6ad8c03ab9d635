#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "osdg/numerics/gradcheck.hpp"
#include "osdg/sifd.hpp"

using namespace osdg;

namespace {

struct Fixture {
  ParamStore<double> store;
  sifd::Weights<double> w;
  sifd::Config cfg;
  std::size_t bands;

  explicit Fixture(sifd::Config c = {}, std::size_t b = 16, std::uint64_t seed = 1) : cfg(c), bands(b) {
    std::mt19937_64 rng(seed);
    w = sifd::create(store, cfg, bands, rng);
  }

  Tensor<double> freq_batch(const std::vector<std::vector<double>>& spectra) const {
    Tensor<double> t({spectra.size(), w.input_len});
    for (std::size_t i = 0; i < spectra.size(); ++i) {
      const auto f = sifd::transform_spectrum<double>(cfg.variant, spectra[i]);
      std::copy(f.begin(), f.end(), t.data() + i * w.input_len);
    }
    return t;
  }
};

std::vector<double> random_spectrum(std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  std::vector<double> s(c);
  for (auto& v : s) v = n(rng);
  return s;
}

// Sets the domain head so that its logit is a fixed constant.
void pin_domain_logit(Fixture& f, double logit) {
  f.w.dom1_w->value.fill(0.0);
  f.w.dom1_b->value.fill(0.0);
  f.w.dom2_w->value.fill(0.0);
  f.w.dom2_b->value.fill(logit);
}

// The confusion term reads the domain head as constants, so finite
// differences on the head weights would not match by design.
std::vector<Param<double>*> trainable_without_domain_head(ParamStore<double>& store) {
  std::vector<Param<double>*> out;
  for (auto* p : store.all())
    if (p->name.rfind("sifd.dom", 0) != 0) out.push_back(p);
  return out;
}

}  // namespace

TEST(Sifd, TransformLengths) {
  EXPECT_EQ(sifd::transform_length(sifd::Transform::Fft, 64), 66u);
  EXPECT_EQ(sifd::transform_length(sifd::Transform::RealOnly, 64), 33u);
  EXPECT_EQ(sifd::transform_length(sifd::Transform::ImagOnly, 64), 33u);
  EXPECT_EQ(sifd::transform_length(sifd::Transform::Dct, 64), 64u);
  EXPECT_EQ(sifd::transform_length(sifd::Transform::None, 50), 50u);
  EXPECT_EQ(sifd::transform_length(sifd::Transform::Wavelet, 50), 64u);
  std::vector<double> s(50, 1.0);
  for (const auto& [name, t] : sifd::transform_names())
    EXPECT_EQ(sifd::transform_spectrum<double>(t, s).size(), sifd::transform_length(t, 50)) << name;
}

TEST(Sifd, ParseVariantNames) {
  EXPECT_EQ(sifd::parse_transform("wavelet"), sifd::Transform::Wavelet);
  EXPECT_EQ(sifd::to_string(sifd::Transform::ImagOnly), "imag_only");
  EXPECT_THROW(sifd::parse_transform("laplace"), std::invalid_argument);
}

TEST(Sifd, RealOnlyOnConstantSpectrumIsDcVector) {
  std::vector<double> s(16, 0.5);
  const auto v = sifd::transform_spectrum<double>(sifd::Transform::RealOnly, s);
  ASSERT_EQ(v.size(), 9u);
  EXPECT_NEAR(v[0], 8.0, 1e-12);
  for (std::size_t i = 1; i < v.size(); ++i) EXPECT_NEAR(v[i], 0.0, 1e-12);
}

TEST(Sifd, FftVariantConcatenatesRealAndImaginary) {
  std::mt19937_64 rng(2);
  const auto s = random_spectrum(12, rng);
  const auto v = sifd::transform_spectrum<double>(sifd::Transform::Fft, s);
  const auto sp = spectral::fft_spectrum<double>(s);
  ASSERT_EQ(v.size(), 14u);
  for (std::size_t k = 0; k < 7; ++k) {
    EXPECT_EQ(v[k], sp.re[k]);
    EXPECT_EQ(v[7 + k], sp.im[k]);
  }
  const auto none = sifd::transform_spectrum<double>(sifd::Transform::None, s);
  EXPECT_EQ(none, s);
}

TEST(Sifd, NoneVariantRejectsNonFinite) {
  std::vector<double> s(8, 1.0);
  s[3] = std::nan("");
  EXPECT_THROW(sifd::transform_spectrum<double>(sifd::Transform::None, s), std::invalid_argument);
  EXPECT_THROW(sifd::transform_spectrum<double>(sifd::Transform::Fft, s), std::invalid_argument);
}

TEST(Sifd, AttentionOffMeansUniformWeights) {
  sifd::Config on_cfg;
  sifd::Config off_cfg;
  off_cfg.attention = false;
  Fixture on(on_cfg), off(off_cfg);
  std::mt19937_64 rng(3);
  auto x = on.freq_batch({random_spectrum(16, rng), random_spectrum(16, rng)});
  Tape<double> t(false);
  auto out_off = sifd::freq_features(t, t.constant(x), off.cfg, off.w);
  EXPECT_FALSE(out_off.attention.has_value());
  // Forcing the gate to 1 in the attention model reproduces the plain encoder.
  on.w.att2_w->value.fill(0.0);
  on.w.att2_b->value.fill(1e3);
  on.store.get("sifd.enc.w").value = off.store.get("sifd.enc.w").value;
  auto out_on = sifd::freq_features(t, t.constant(x), on.cfg, on.w);
  ASSERT_TRUE(out_on.attention.has_value());
  for (double g : out_on.attention->value().vec()) EXPECT_DOUBLE_EQ(g, 1.0);
  EXPECT_EQ(out_on.f_freq.value().vec(), out_off.f_freq.value().vec());
}

TEST(Sifd, AttentionWeightsLieInUnitInterval) {
  Fixture f;
  std::mt19937_64 rng(4);
  std::vector<std::vector<double>> spectra;
  for (int i = 0; i < 6; ++i) spectra.push_back(random_spectrum(16, rng));
  Tape<double> t(false);
  auto out = sifd::freq_features(t, t.constant(f.freq_batch(spectra)), f.cfg, f.w);
  for (double g : out.attention->value().vec()) {
    EXPECT_GE(g, 0.0);
    EXPECT_LE(g, 1.0);
  }
  EXPECT_EQ(out.f_freq.dim(1), f.cfg.feature_dim);
}

TEST(Sifd, IdenticalSpectraGiveIdenticalFeatures) {
  Fixture f;
  std::mt19937_64 rng(5);
  const auto s = random_spectrum(16, rng);
  Tape<double> t(false);
  auto out = sifd::freq_features(t, t.constant(f.freq_batch({s, s})), f.cfg, f.w);
  const auto& v = out.f_freq.value();
  for (std::size_t j = 0; j < v.dim(1); ++j) EXPECT_EQ(v.at(0, j), v.at(1, j));
}

TEST(Sifd, FreqFeaturesRejectsWrongLength) {
  Fixture f;
  Tape<double> t(false);
  EXPECT_THROW(sifd::freq_features(t, t.constant(Tensor<double>({2, 5})), f.cfg, f.w), std::invalid_argument);
}

TEST(Sifd, DomainLossAtHalfIsLn2) {
  Fixture f;
  pin_domain_logit(f, 0.0);
  Tape<double> t(false);
  auto loss = sifd::domain_loss(t, t.constant(Tensor<double>({3, f.cfg.feature_dim}, 0.3)), f.w);
  EXPECT_NEAR(loss.value()[0], std::log(2.0), 1e-12);
}

TEST(Sifd, DomainLossAtPointNine) {
  Fixture f;
  pin_domain_logit(f, std::log(0.9 / 0.1));
  Tape<double> t(false);
  auto loss = sifd::domain_loss(t, t.constant(Tensor<double>({2, f.cfg.feature_dim}, 0.1)), f.w);
  EXPECT_NEAR(loss.value()[0], -(0.5 * std::log(0.9) + 0.5 * std::log(0.1)), 1e-9);
  EXPECT_NEAR(loss.value()[0], 1.2040, 1e-4);
}

TEST(Sifd, DomainLossIsMinimalAtHalf) {
  Fixture f;
  Tensor<double> feats({2, f.cfg.feature_dim}, 0.2);
  double at_half = 0;
  {
    pin_domain_logit(f, 0.0);
    Tape<double> t(false);
    at_half = sifd::domain_loss(t, t.constant(feats), f.w).value()[0];
  }
  for (double logit : {-3.0, -0.5, 0.2, 1.0, 4.0}) {
    pin_domain_logit(f, logit);
    Tape<double> t(false);
    EXPECT_GT(sifd::domain_loss(t, t.constant(feats), f.w).value()[0], at_half);
  }
}

TEST(Sifd, GradientReversalFlipsEncoderGradient) {
  Fixture f;
  std::mt19937_64 rng(6);
  auto x = f.freq_batch({random_spectrum(16, rng), random_spectrum(16, rng), random_spectrum(16, rng)});
  const std::vector<double> targets{1.0, 0.0, 1.0};
  auto encoder_grad = [&](bool reversed) {
    f.store.zero_grad();
    Tape<double> t;
    auto out = sifd::freq_features(t, t.constant(x), f.cfg, f.w);
    Var<double> feat = reversed ? ad::grad_reverse(out.f_freq, 1.0) : out.f_freq;
    // the head itself already has a GRL, so reverse again to obtain the plain path
    Var<double> logit = sifd::domain_logit(t, ad::grad_reverse(feat, 1.0), f.w);
    t.backward(sifd::bce_with_targets(logit, targets));
    return f.w.enc_w->grad.vec();
  };
  const auto plain = encoder_grad(false);
  const auto flipped = encoder_grad(true);
  double norm = 0;
  for (std::size_t i = 0; i < plain.size(); ++i) {
    EXPECT_DOUBLE_EQ(flipped[i], -plain[i]);
    norm += plain[i] * plain[i];
  }
  EXPECT_GT(norm, 0.0);
}

TEST(Sifd, DomainHeadGradientIsNotReversed) {
  Fixture f;
  Tensor<double> feats({2, f.cfg.feature_dim}, 0.5);
  auto r = gradient_check_params<double>(
      [&](Tape<double>& t) {
        return sifd::bce_with_targets(sifd::domain_logit(t, t.constant(feats), f.w), std::vector<double>{1.0, 0.0});
      },
      {f.w.dom1_w, f.w.dom1_b, f.w.dom2_w, f.w.dom2_b}, 1e-4);
  EXPECT_TRUE(r.ok(1e-4)) << r.max_rel_error << " " << r.worst_param;
}

TEST(Sifd, ConfusionLossLeavesHeadUntouched) {
  Fixture f;
  Tape<double> t;
  Var<double> feats = t.variable(Tensor<double>({2, f.cfg.feature_dim}, 0.4));
  f.store.zero_grad();
  t.backward(sifd::confusion_loss(t, feats, f.w));
  for (double g : f.w.dom1_w->grad.vec()) EXPECT_EQ(g, 0.0);
  double norm = 0;
  for (double g : t.grad(feats).vec()) norm += g * g;
  EXPECT_GE(norm, 0.0);
}

TEST(Sifd, ReconLossExamples) {
  Tape<double> t(false);
  Var<double> target = t.constant(Tensor<double>({1, 2}, std::vector<double>{1.0, 0.0}));
  Var<double> half = t.constant(Tensor<double>({1, 2}, 0.5));
  EXPECT_NEAR(sifd::recon_loss(target, half).value()[0], 0.5, 1e-15);
  EXPECT_EQ(sifd::recon_loss(target, target).value()[0], 0.0);
}

TEST(Sifd, ReconstructionIsInUnitIntervalAndLossNonNegative) {
  Fixture f;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  Tensor<double> feats({4, f.cfg.feature_dim});
  for (auto& v : feats.vec()) v = 3.0 * (u(rng) - 0.5);
  Tensor<double> target({4, f.bands});
  for (auto& v : target.vec()) v = u(rng);
  Tape<double> t(false);
  auto rec = sifd::reconstruct(t, t.constant(feats), f.w);
  for (double v : rec.value().vec()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_GE(sifd::recon_loss(t.constant(target), rec).value()[0], 0.0);
}

TEST(Sifd, EnhanceWithZeroProjectionIsIdentity) {
  Fixture f;
  f.w.proj_w->value.fill(0.0);
  std::mt19937_64 rng(8);
  Tensor<double> patches({2, f.bands, 7, 7});
  for (auto& v : patches.vec()) v = std::normal_distribution<double>(0, 1)(rng);
  Tape<double> t(false);
  auto out = sifd::enhance(t, t.constant(patches), t.constant(Tensor<double>({2, f.cfg.feature_dim}, 1.0)), f.w);
  EXPECT_EQ(out.value().vec(), patches.vec());
}

TEST(Sifd, EnhanceBroadcastsAndIsLinear) {
  Fixture f;
  std::mt19937_64 rng(9);
  Tensor<double> patches({1, f.bands, 7, 7});
  for (auto& v : patches.vec()) v = std::normal_distribution<double>(0, 1)(rng);
  Tensor<double> ff({1, f.cfg.feature_dim});
  for (auto& v : ff.vec()) v = std::normal_distribution<double>(0, 1)(rng);
  Tensor<double> ff2 = ff;
  for (auto& v : ff2.vec()) v *= 2.0;
  // projection p = f_freq . W
  std::vector<double> p(f.bands, 0.0);
  for (std::size_t j = 0; j < f.bands; ++j)
    for (std::size_t i = 0; i < f.cfg.feature_dim; ++i) p[j] += ff[i] * f.w.proj_w->value.at(i, j);
  Tape<double> t(false);
  auto one = sifd::enhance(t, t.constant(patches), t.constant(ff), f.w).value();
  auto two = sifd::enhance(t, t.constant(patches), t.constant(ff2), f.w).value();
  for (std::size_t b = 0; b < f.bands; ++b)
    for (auto [r, c] : {std::pair{0, 0}, std::pair{3, 5}}) {
      const std::size_t i = (b * 7 + r) * 7 + c;
      EXPECT_NEAR(one[i] - patches[i], p[b], 1e-12);
      EXPECT_NEAR(two[i] - patches[i], 2.0 * p[b], 1e-12);
    }
}

TEST(Sifd, GradientCheckThroughEncoderAndDecoder) {
  for (auto variant : {sifd::Transform::Fft, sifd::Transform::Dct, sifd::Transform::Wavelet, sifd::Transform::None}) {
    sifd::Config cfg;
    cfg.variant = variant;
    cfg.feature_dim = 8;
    Fixture f(cfg, 12, 11);
    std::mt19937_64 rng(12);
    auto x = f.freq_batch({random_spectrum(12, rng), random_spectrum(12, rng)});
    Tensor<double> target({2, 12}, 0.3);
    auto r = gradient_check_params<double>(
        [&](Tape<double>& t) {
          auto out = sifd::freq_features(t, t.constant(x), f.cfg, f.w);
          return ad::add(sifd::recon_loss(t.constant(target), sifd::reconstruct(t, out.f_freq, f.w)),
                         sifd::confusion_loss(t, out.f_freq, f.w));
        },
        trainable_without_domain_head(f.store), 1e-4, 6, 3);
    EXPECT_TRUE(r.ok(1e-4)) << sifd::to_string(variant) << " " << r.max_rel_error << " " << r.worst_param;
  }
}
