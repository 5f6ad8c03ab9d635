#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <random>

#include "osdg/numerics/gradcheck.hpp"
#include "osdg/numerics/optim.hpp"
#include "osdg/numerics/spectral.hpp"
#include "osdg/numerics/tape.hpp"
#include "test_support.hpp"

using namespace osdg;

using test_support::kNoBias;
using test_support::op_cases;
using test_support::random_tensor;
using test_support::weighted_sum;

TEST(Numerics, FftConstantSignalHasOnlyDc) {
  std::vector<double> s(8, 2.5);
  auto sp = spectral::fft_spectrum<double>(s);
  ASSERT_EQ(sp.re.size(), 5u);
  EXPECT_NEAR(sp.re[0], 20.0, 1e-12);
  for (std::size_t k = 1; k < sp.re.size(); ++k) EXPECT_NEAR(sp.re[k], 0.0, 1e-12);
  for (double v : sp.im) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Numerics, FftUnitImpulse) {
  std::vector<double> s{1, 0, 0, 0};
  auto sp = spectral::fft_spectrum<double>(s);
  ASSERT_EQ(sp.re.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_NEAR(sp.re[k], 1.0, 1e-12);
    EXPECT_NEAR(sp.im[k], 0.0, 1e-12);
  }
}

TEST(Numerics, FftParseval) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t c : {8u, 64u, 103u}) {
    std::vector<double> s(c);
    for (auto& v : s) v = n(rng);
    auto sp = spectral::fft_spectrum<double>(s);
    double energy = 0.0, spec = 0.0;
    for (double v : s) energy += v * v;
    const std::size_t m = sp.re.size();
    for (std::size_t k = 0; k < m; ++k) {
      const double mag = sp.re[k] * sp.re[k] + sp.im[k] * sp.im[k];
      const bool single = k == 0 || (c % 2 == 0 && k == c / 2);
      spec += single ? mag : 2.0 * mag;
    }
    EXPECT_NEAR(energy, spec / static_cast<double>(c), 1e-5) << "C=" << c;
  }
}

TEST(Numerics, FftMatchesDirectDefinition) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> s(10);
  for (auto& v : s) v = u(rng);
  auto sp = spectral::fft_spectrum<double>(s);
  for (std::size_t k = 0; k < sp.re.size(); ++k) {
    std::complex<double> acc = 0;
    for (std::size_t n = 0; n < s.size(); ++n)
      acc += s[n] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * n) / 10.0);
    EXPECT_NEAR(sp.re[k], acc.real(), 1e-10);
    EXPECT_NEAR(sp.im[k], acc.imag(), 1e-10);
  }
}

TEST(Numerics, SpectralTransformsRejectBadInput) {
  std::vector<double> one{1.0};
  std::vector<double> bad{1.0, std::nan(""), 2.0};
  EXPECT_THROW(spectral::fft_spectrum<double>(one), std::invalid_argument);
  EXPECT_THROW(spectral::fft_spectrum<double>(bad), std::invalid_argument);
  EXPECT_THROW(spectral::dct_spectrum<double>(one), std::invalid_argument);
  EXPECT_THROW(spectral::dct_spectrum<double>(bad), std::invalid_argument);
  EXPECT_THROW(spectral::haar_spectrum<double>(one), std::invalid_argument);
  EXPECT_THROW(spectral::haar_spectrum<double>(bad), std::invalid_argument);
}

TEST(Numerics, DctConstantOrthonormalAndInvertible) {
  std::vector<double> c(16, 3.0);
  auto d = spectral::dct_spectrum<double>(c);
  EXPECT_NEAR(d[0], 12.0, 1e-10);
  for (std::size_t k = 1; k < d.size(); ++k) EXPECT_NEAR(d[k], 0.0, 1e-10);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> s(37);
  for (auto& v : s) v = n(rng);
  auto ds = spectral::dct_spectrum<double>(s);
  double a = 0, b = 0;
  for (double v : s) a += v * v;
  for (double v : ds) b += v * v;
  EXPECT_NEAR(std::sqrt(a), std::sqrt(b), 1e-5);
  // transpose of the explicit DCT-II matrix
  const double nn = static_cast<double>(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    double acc = 0;
    for (std::size_t k = 0; k < s.size(); ++k)
      acc += (k == 0 ? std::sqrt(1 / nn) : std::sqrt(2 / nn)) * ds[k] *
             std::cos(std::numbers::pi / nn * (static_cast<double>(i) + 0.5) * static_cast<double>(k));
    EXPECT_NEAR(acc, s[i], 1e-5);
  }
  auto back = spectral::idct<double>(ds);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(back[i], s[i], 1e-5);
}

TEST(Numerics, HaarConstantAndAlternating) {
  std::vector<double> ones{1, 1, 1, 1};
  auto h = spectral::haar_spectrum<double>(ones);
  EXPECT_NEAR(h[0], 2.0, 1e-12);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_NEAR(h[i], 0.0, 1e-12);

  std::vector<double> alt{1, -1, 1, -1};
  auto a = spectral::haar_spectrum<double>(alt);
  EXPECT_NEAR(a[0], 0.0, 1e-12);
  EXPECT_NEAR(a[1], 0.0, 1e-12);
  EXPECT_NEAR(a[2], std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(a[3], std::sqrt(2.0), 1e-12);
}

TEST(Numerics, HaarPadsAndPreservesEnergy) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> s(50);
  for (auto& v : s) v = n(rng);
  auto h = spectral::haar_spectrum<double>(s);
  ASSERT_EQ(h.size(), 64u);
  auto padded = spectral::pad_edge_pow2<double>(s);
  EXPECT_EQ(padded.back(), s.back());
  double a = 0, b = 0;
  for (double v : padded) a += v * v;
  for (double v : h) b += v * v;
  EXPECT_NEAR(a, b, 1e-5 * std::max(1.0, a));
}

TEST(Numerics, GradientCheckSumOfSquares) {
  std::mt19937_64 rng(1);
  auto x = random_tensor({5, 3}, rng);
  auto r = gradient_check<double>([](Tape<double>&, const Var<double>& v) { return ad::sum(ad::mul(v, v)); }, x);
  EXPECT_TRUE(r.ok(1e-4)) << r.max_rel_error;
  EXPECT_EQ(r.checked, 15u);
}

TEST(Numerics, GradientCheckRejectsStep) {
  Tensor<double> x({2}, 1.0);
  auto f = [](Tape<double>&, const Var<double>& v) { return ad::sum(v); };
  EXPECT_THROW(gradient_check<double>(f, x, 1e-5), std::invalid_argument);
  EXPECT_THROW(gradient_check<double>(f, x, 0.1), std::invalid_argument);
}

TEST(Numerics, GradientCheckReportsNonFiniteIndex) {
  Tensor<double> x({3}, std::vector<double>{1.0, 0.0, 2.0});
  auto r = gradient_check<double>([](Tape<double>&, const Var<double>& v) { return ad::sum(ad::reciprocal(v)); }, x);
  ASSERT_TRUE(r.non_finite_index.has_value());
  EXPECT_EQ(*r.non_finite_index, 1u);
  EXPECT_FALSE(r.ok(1.0));
}

TEST(Numerics, EveryPrimitivePassesGradientCheckOnTwentySeeds) {
  for (const auto& c : op_cases()) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(seed * 7919 + 1);
      auto x = random_tensor(c.shape, rng, c.lo, c.hi);
      const std::uint64_t aux = seed + 100;
      auto f = [&](Tape<double>& t, const Var<double>& v) {
        std::mt19937_64 r2(aux);
        return weighted_sum(t, c.f(t, v, r2), aux);
      };
      auto r = gradient_check<double>(f, x, 1e-4);
      ASSERT_TRUE(r.ok(1e-4)) << c.name << " seed " << seed << " err " << r.max_rel_error;
    }
  }
}

TEST(Numerics, GradReverseFlipsSignExactly) {
  Tape<double> t;
  Var<double> x = t.variable(Tensor<double>({3}, std::vector<double>{1.0, -2.0, 0.5}));
  Var<double> y = ad::grad_reverse(x, 1.0);
  EXPECT_EQ(y.value().vec(), x.value().vec());
  Tensor<double> up({3}, std::vector<double>{0.3, -1.5, 2.0});
  t.backward(ad::sum(ad::mul(y, t.constant(up))));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(t.grad(x)[i], -up[i]);
}

TEST(Numerics, DetachBlocksGradient) {
  Tape<double> t;
  Var<double> x = t.variable(Tensor<double>({2}, std::vector<double>{1.0, 2.0}));
  t.backward(ad::sum(ad::mul(ad::detach(x), x)));
  EXPECT_DOUBLE_EQ(t.grad(x)[0], 1.0);
  EXPECT_DOUBLE_EQ(t.grad(x)[1], 2.0);
}

TEST(Numerics, RowNormStandardisesRows) {
  Tape<double> t(false);
  Var<double> x = t.constant(Tensor<double>({2, 4}, std::vector<double>{1, 2, 3, 4, -5, 0, 5, 10}));
  Var<double> y = ad::row_norm(x);
  for (std::size_t r = 0; r < 2; ++r) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 4; ++j) m += y.value().at(r, j);
    m /= 4;
    for (std::size_t j = 0; j < 4; ++j) v += std::pow(y.value().at(r, j) - m, 2);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 4, 1.0, 1e-5);
  }
}

TEST(Numerics, BackwardVisitsOpsInReverseOrder) {
  Tape<double> t;
  Var<double> x = t.variable(Tensor<double>({2, 2}, 0.5));
  Var<double> a = ad::relu(x);
  Var<double> b = ad::sigmoid(a);
  Var<double> c = ad::sum(b);
  t.backward(c);
  const auto& order = t.backward_order();
  ASSERT_EQ(order.size(), 4u);
  EXPECT_EQ(order, (std::vector<int>{c.id(), b.id(), a.id(), x.id()}));
}

TEST(Numerics, ParameterOffTapeGetsZeroGradient) {
  Param<double> on("on", Tensor<double>({2}, 1.0));
  Param<double> off("off", Tensor<double>({2}, 1.0));
  Tape<double> t;
  t.backward(ad::sum(ad::mul(t.param(on), t.param(on))));
  EXPECT_DOUBLE_EQ(on.grad[0], 2.0);
  EXPECT_DOUBLE_EQ(off.grad[0], 0.0);
  EXPECT_DOUBLE_EQ(off.grad[1], 0.0);
}

TEST(Numerics, ForwardOfFiniteInputStaysFinite) {
  Tape<float> t(false);
  Tensor<float> x({2, 3}, std::vector<float>{80, -80, 0, 1e3f, -1e3f, 3});
  EXPECT_TRUE(ad::softmax(t.constant(x)).value().all_finite());
  EXPECT_TRUE(ad::sigmoid(t.constant(x)).value().all_finite());
  EXPECT_TRUE(ad::log(t.constant(Tensor<float>({2}, 0.0f))).value().all_finite());
}

TEST(Numerics, TensorShapeMismatchThrows) {
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), std::invalid_argument);
  Tensor<float> a({2, 3});
  EXPECT_THROW(a.reshaped({4, 2}), std::invalid_argument);
}

TEST(Numerics, AdamZeroGradientZeroDecayIsNoop) {
  Param<float> p("p", Tensor<float>({3}, std::vector<float>{1, -2, 3}));
  std::vector<Param<float>*> ps{&p};
  OptimState<float> st;
  st.lr = 1e-3;
  st.weight_decay = 0.0;
  adam_step<float>(ps, st);
  EXPECT_EQ(p.value.vec(), (std::vector<float>{1, -2, 3}));
  EXPECT_EQ(st.step, 1);
  EXPECT_EQ(st.m[0].shape(), p.value.shape());
}

TEST(Numerics, AdamFirstStepMovesByLearningRate) {
  Param<double> p("p", Tensor<double>({1}, 1.0));
  p.grad[0] = 1.0;
  std::vector<Param<double>*> ps{&p};
  OptimState<double> st;
  adam_step<double>(ps, st);
  // mhat = 1, vhat = 1, so the step is lr/(1+eps) plus decay lr*wd*p
  const double expected = 1.0 - 1e-5 * 1e-5 - 1e-5 / (1.0 + 1e-8);
  EXPECT_NEAR(p.value[0], expected, 1e-15);
  EXPECT_NEAR(1.0 - p.value[0], 1e-5, 1e-9);
}

TEST(Numerics, AdamIsDeterministicAndStepIncreases) {
  auto run = [] {
    Param<float> p("p", Tensor<float>({4}, std::vector<float>{0.1f, 0.2f, -0.3f, 0.4f}));
    p.grad = Tensor<float>({4}, std::vector<float>{0.5f, -0.1f, 0.2f, 0.05f});
    std::vector<Param<float>*> ps{&p};
    OptimState<float> st;
    st.lr = 1e-2;
    long last = st.step;
    for (int i = 0; i < 3; ++i) {
      adam_step<float>(ps, st);
      EXPECT_GT(st.step, last);
      last = st.step;
    }
    return p.value.vec();
  };
  EXPECT_EQ(run(), run());
}

TEST(Numerics, AdamRejectsBadInput) {
  Param<float> p("p", Tensor<float>({2}));
  std::vector<Param<float>*> ps{&p};
  OptimState<float> st;
  st.lr = 0.0;
  EXPECT_THROW(adam_step<float>(ps, st), std::invalid_argument);
  st.lr = 1e-3;
  p.grad = Tensor<float>({3});
  EXPECT_THROW(adam_step<float>(ps, st), std::invalid_argument);
}

TEST(Numerics, CosineSchedule) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 50, 1e-3), 1e-3);
  EXPECT_NEAR(cosine_lr(50, 50, 1e-3), 1e-4, 1e-15);
  EXPECT_NEAR(cosine_lr(25, 50, 1e-3), 0.55e-3, 1e-15);
  EXPECT_EQ(cosine_lr(7, 50, 1e-3), cosine_lr(7, 50, 1e-3));
  EXPECT_THROW(cosine_lr(51, 50, 1e-3), std::invalid_argument);
  EXPECT_THROW(cosine_lr(1, 50, 0.0), std::invalid_argument);
}

TEST(Numerics, ClipGradNorm) {
  Param<double> p("p", Tensor<double>({2}));
  std::vector<Param<double>*> ps{&p};
  p.grad = Tensor<double>({2}, std::vector<double>{0.3, 0.4});
  EXPECT_NEAR(clip_grad_norm<double>(ps, 1.0), 0.5, 1e-15);
  EXPECT_DOUBLE_EQ(p.grad[0], 0.3);
  p.grad = Tensor<double>({2}, std::vector<double>{3, 4});
  EXPECT_NEAR(clip_grad_norm<double>(ps, 1.0), 5.0, 1e-15);
  EXPECT_NEAR(p.grad[0], 0.6, 1e-15);
  EXPECT_NEAR(p.grad[1], 0.8, 1e-15);
  p.grad[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(clip_grad_norm<double>(ps, 1.0), std::runtime_error);
}

TEST(Numerics, ClipGradNormBoundHoldsOnRandomGradients) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Param<float> a("a", Tensor<float>({5})), b("b", Tensor<float>({3, 2}));
    std::normal_distribution<float> n(0.0f, 3.0f);
    for (auto& g : a.grad.vec()) g = n(rng);
    for (auto& g : b.grad.vec()) g = n(rng);
    std::vector<Param<float>*> ps{&a, &b};
    clip_grad_norm<float>(ps, 1.0);
    double sq = 0;
    for (auto* p : ps)
      for (float g : p->grad.vec()) sq += static_cast<double>(g) * g;
    EXPECT_LE(std::sqrt(sq), 1.0 + 1e-6);
  }
}
