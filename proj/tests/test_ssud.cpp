#include <gtest/gtest.h>

#include <map>
#include <random>

#include "osdg/network.hpp"
#include "osdg/numerics/gradcheck.hpp"
#include "osdg/ssud.hpp"
#include "test_support.hpp"

using namespace osdg;
using ssud::Branch;
using ssud::Variant;

namespace {

ssud::Config with_variant(Variant v) {
  ssud::Config c;
  c.variant = v;
  return c;
}

std::vector<Variant> all_variants() {
  std::vector<Variant> out;
  for (const auto& [n, v] : ssud::variant_names()) out.push_back(v);
  return out;
}

std::vector<double> random_simplex(std::size_t k, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(k);
  double s = 0;
  for (auto& v : p) s += v = e(rng);
  for (auto& v : p) v /= s;
  return p;
}

}  // namespace

TEST(Ssud, VariantNames) {
  EXPECT_EQ(ssud::variant_names().size(), 7u);
  for (const auto& [n, v] : ssud::variant_names()) EXPECT_EQ(ssud::parse_variant(n), v);
  EXPECT_THROW(ssud::parse_variant("median"), std::invalid_argument);
}

TEST(Ssud, ConfigValidation) {
  ssud::Config c;
  c.validate();
  c.w_unc = 0.7;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ssud::Config{};
  c.kappa_down = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ssud::Config{};
  c.tau_decouple = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Ssud, ReliabilityExamples) {
  auto r = ssud::reliability(0.5, 0.5);
  EXPECT_EQ(r.r_spec, 0.5);
  EXPECT_EQ(r.r_spat, 0.5);
  EXPECT_EQ(r.delta, 0.0);
  r = ssud::reliability(0.1, 0.6);
  EXPECT_NEAR(r.r_spec, 0.9, 1e-15);
  EXPECT_NEAR(r.r_spat, 0.4, 1e-15);
  EXPECT_NEAR(r.delta, 0.5, 1e-15);
  EXPECT_EQ(ssud::reliability(0.6, 0.1).delta, r.delta);
  EXPECT_THROW(ssud::reliability(1.2, 0.1), std::invalid_argument);
  EXPECT_THROW(ssud::reliability(0.1, -0.01), std::invalid_argument);
}

TEST(Ssud, DisentangleSpectralBranch) {
  const auto d = ssud::disentangle(0.1, 0.6, 0.3, ssud::Config{});
  EXPECT_EQ(d.branch, Branch::Spectral);
  EXPECT_NEAR(d.u_final, 0.3, 1e-15);
}

TEST(Ssud, DisentangleCombinedBelowThreshold) {
  const auto d = ssud::disentangle(0.40, 0.45, 0.77, ssud::Config{});
  EXPECT_EQ(d.branch, Branch::Combined);
  EXPECT_EQ(d.u_final, 0.77);
}

TEST(Ssud, DisentangleSwapMirrorsBranch) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 500; ++i) {
    const double a = u(rng), b = u(rng), c = u(rng);
    const auto d1 = ssud::disentangle(a, b, c, ssud::Config{});
    const auto d2 = ssud::disentangle(b, a, c, ssud::Config{});
    EXPECT_EQ(d1.u_final, d2.u_final);
    if (d1.branch == Branch::Spectral) { EXPECT_EQ(d2.branch, Branch::Spatial); }
    if (d1.branch == Branch::Spatial) { EXPECT_EQ(d2.branch, Branch::Spectral); }
    if (d1.branch == Branch::Combined) { EXPECT_EQ(d2.branch, Branch::Combined); }
  }
}

TEST(Ssud, DisentangleVariants) {
  EXPECT_EQ(ssud::disentangle(0.1, 0.9, 0.4, with_variant(Variant::NoDecoupling)).u_final, 0.4);
  EXPECT_NEAR(ssud::disentangle(0.1, 0.9, 0.4, with_variant(Variant::SimpleAverage)).u_final, 0.5, 1e-15);
  EXPECT_EQ(ssud::disentangle(0.1, 0.9, 0.4, with_variant(Variant::MaxUncertainty)).u_final, 0.9);
  // the weighting variants decouple exactly like full
  for (Variant v : {Variant::FixedWeights, Variant::NoConfidence, Variant::NoUncertainty}) {
    const auto d = ssud::disentangle(0.1, 0.6, 0.3, with_variant(v));
    EXPECT_EQ(d.branch, Branch::Spectral);
    EXPECT_NEAR(d.u_final, 0.3, 1e-15);
  }
}

TEST(Ssud, TieUnderFullGoesToCombined) {
  ssud::Config c;
  c.tau_decouple = 0.01;
  const auto d = ssud::disentangle(0.3, 0.3, 0.9, c);
  EXPECT_EQ(d.branch, Branch::Combined);
  EXPECT_EQ(d.u_final, 0.9);
}

TEST(Ssud, FullWithUnitThresholdBehavesAsNoDecoupling) {
  ssud::Config full;
  full.tau_decouple = 1.0;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 500; ++i) {
    const double a = u(rng), b = u(rng), c = u(rng);
    const auto d = ssud::disentangle(a, b, c, full);
    const auto n = ssud::disentangle(a, b, c, with_variant(Variant::NoDecoupling));
    EXPECT_EQ(d.u_final, n.u_final);
    EXPECT_EQ(d.branch, n.branch);
  }
  EXPECT_EQ(ssud::disentangle(0.0, 1.0, 0.2, full).u_final, 0.2);
}

TEST(Ssud, RejectionScoreExamples) {
  std::vector<double> p{0.9, 0.05, 0.05};
  const auto r = ssud::rejection_score(0.3, p, ssud::Config{});
  EXPECT_NEAR(r.r_score, 0.20, 1e-15);
  EXPECT_EQ(r.p_max, 0.9);
  EXPECT_EQ(r.k_hat, 0u);
  std::vector<double> one_hot{0, 1, 0};
  for (double w : {0.0, 0.3, 1.0}) {
    ssud::Config c;
    c.w_unc = w;
    c.w_conf = 1.0 - w;
    EXPECT_EQ(ssud::rejection_score(0.0, one_hot, c).r_score, 0.0);
  }
  std::vector<double> low{0.4, 0.35, 0.25};
  for (double u : {0.0, 0.5, 1.0})
    EXPECT_NEAR(ssud::rejection_score(u, low, with_variant(Variant::NoUncertainty)).r_score, 0.6, 1e-15);
  EXPECT_NEAR(ssud::rejection_score(0.7, low, with_variant(Variant::NoConfidence)).r_score, 0.7, 1e-15);
  ssud::Config skew;
  skew.w_unc = 0.9;
  skew.w_conf = 0.1;
  EXPECT_NEAR(ssud::rejection_score(0.2, low, with_variant(Variant::FixedWeights)).r_score, 0.5 * 0.2 + 0.5 * 0.6,
              1e-15);
  skew.variant = Variant::FixedWeights;
  EXPECT_NEAR(ssud::rejection_score(0.2, low, skew).r_score, 0.4, 1e-15);
}

TEST(Ssud, RejectionScoreTieBreakAndValidation) {
  std::vector<double> tie{0.1, 0.45, 0.45};
  EXPECT_EQ(ssud::rejection_score(0.1, tie, ssud::Config{}).k_hat, 1u);
  std::vector<double> bad{0.5, 0.4};
  EXPECT_THROW(ssud::rejection_score(0.1, bad, ssud::Config{}), std::invalid_argument);
  EXPECT_THROW(ssud::rejection_score(0.1, std::vector<double>{}, ssud::Config{}), std::invalid_argument);
}

TEST(Ssud, DecideExamples) {
  EXPECT_EQ(ssud::decide(0.20, 2, 0.5), 3);
  EXPECT_EQ(ssud::decide(0.5, 2, 0.5), 3);
  EXPECT_EQ(ssud::decide(1.0, 2, 0.999), kUnknownLabel);
  EXPECT_EQ(ssud::decide(0.5000001, 0, 0.5), kUnknownLabel);
}

TEST(Ssud, DecideIsMonotoneInScore) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 1000; ++i) {
    const double tau = u(rng), a = u(rng), b = u(rng);
    const double lo = std::min(a, b), hi = std::max(a, b);
    if (ssud::decide(lo, 0, tau) == kUnknownLabel) { EXPECT_EQ(ssud::decide(hi, 0, tau), kUnknownLabel); }
  }
}

TEST(Ssud, ScoreStaysInUnitIntervalForEveryVariant) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (Variant v : all_variants())
    for (int i = 0; i < 300; ++i) {
      const auto p = random_simplex(5, rng);
      const auto d = ssud::decide_sample(u(rng), u(rng), u(rng), p, with_variant(v), 0.5);
      EXPECT_GE(d.r_score, 0.0);
      EXPECT_LE(d.r_score, 1.0);
      EXPECT_EQ(d.prediction == kUnknownLabel, d.r_score > 0.5);
      EXPECT_NEAR(d.reliability.delta, std::abs(d.reliability.r_spec - d.reliability.r_spat), 1e-15);
    }
}

TEST(Ssud, TemperatureNeverChangesArgmax) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0, 2);
  for (int i = 0; i < 300; ++i) {
    std::vector<double> z(6);
    for (auto& v : z) v = nd(rng);
    const auto base = ssud::rejection_score(0.2, edl::softmax(z), ssud::Config{});
    for (double t : {0.1, 0.7, 3.0, 50.0})
      EXPECT_EQ(ssud::rejection_score(0.2, edl::softmax(z, t), ssud::Config{}).k_hat, base.k_hat);
  }
}

TEST(Ssud, DecideSampleTracesTheWorkedExample) {
  std::vector<double> p{0.9, 0.1};
  const auto d = ssud::decide_sample(0.1, 0.6, 0.3, p, ssud::Config{}, 0.5);
  EXPECT_EQ(d.branch, Branch::Spectral);
  EXPECT_NEAR(d.u_final, 0.3, 1e-15);
  EXPECT_NEAR(d.r_score, 0.2, 1e-15);
  EXPECT_EQ(d.prediction, 1);
}

// ---- joint training objective ------------------------------------------------

class TotalLoss : public ::testing::Test {
 protected:
  ModelConfig cfg = test_support::tiny_model();
  static constexpr std::size_t kBands = 8, kClasses = 3;

  double total(Network<double>& net, const Batch& b, const LossWeights& lw, LossBreakdown<double>* out = nullptr) {
    Tape<double> t(false);
    auto o = net.forward(t, b);
    auto l = net.total_loss(t, b, o, lw);
    if (out) *out = l;
    return l.total.value()[0];
  }
};

TEST_F(TotalLoss, ZeroWeightsLeaveClassificationOnly) {
  Network<double> net(cfg, kBands, kClasses, 1);
  const Batch b = test_support::random_batch(cfg.sifd, 4, kBands, kClasses, 2);
  LossWeights lw;
  lw.alpha = lw.beta = lw.gamma = 0.0;
  LossBreakdown<double> br;
  const double tot = total(net, b, lw, &br);
  EXPECT_NEAR(tot, br.cls, 1e-12);
}

TEST_F(TotalLoss, BreakdownSumsToTotal) {
  for (auto mode : {sifd::DomainMode::Confusion, sifd::DomainMode::Adversarial}) {
    cfg.sifd.domain_mode = mode;
    Network<double> net(cfg, kBands, kClasses, 3);
    const Batch b = test_support::random_batch(cfg.sifd, 4, kBands, kClasses, 4);
    LossWeights lw;
    lw.alpha = 0.3;
    lw.beta = 0.7;
    lw.gamma = 0.9;
    LossBreakdown<double> br;
    const double tot = total(net, b, lw, &br);
    const double domain = mode == sifd::DomainMode::Confusion ? br.domain_head + br.domain : br.domain_head;
    EXPECT_NEAR(br.cls + lw.alpha * br.edl + lw.beta * domain + lw.gamma * br.recon, tot, 1e-6);
    EXPECT_GE(br.edl, 0.0);
    EXPECT_GE(br.recon, 0.0);
    EXPECT_GE(br.domain_head, 0.0);
  }
}

TEST_F(TotalLoss, DoublingGammaAddsOneReconTerm) {
  Network<double> net(cfg, kBands, kClasses, 5);
  const Batch b = test_support::random_batch(cfg.sifd, 4, kBands, kClasses, 6);
  LossWeights lw;
  lw.gamma = 0.3;
  LossBreakdown<double> br;
  const double once = total(net, b, lw, &br);
  lw.gamma = 0.6;
  const double twice = total(net, b, lw);
  EXPECT_NEAR(twice - once, 0.3 * br.recon, 1e-12);
}

TEST_F(TotalLoss, TogglesRemoveTerms) {
  cfg.sifd.recon = false;
  cfg.sifd.domain_reg = false;
  Network<double> net(cfg, kBands, kClasses, 7);
  const Batch b = test_support::random_batch(cfg.sifd, 4, kBands, kClasses, 8);
  LossWeights lw;
  LossBreakdown<double> br;
  const double tot = total(net, b, lw, &br);
  EXPECT_EQ(br.recon, 0.0);
  EXPECT_EQ(br.domain, 0.0);
  EXPECT_NEAR(tot, br.cls + lw.alpha * br.edl, 1e-12);
}

TEST_F(TotalLoss, RejectsEmptyOrUnlabelledBatch) {
  Network<double> net(cfg, kBands, kClasses, 9);
  Batch b = test_support::random_batch(cfg.sifd, 2, kBands, kClasses, 10);
  b.labels.clear();
  Tape<double> t(false);
  auto o = net.forward(t, b);
  EXPECT_THROW(net.total_loss(t, b, o, LossWeights{}), std::invalid_argument);
}

// With the reversal strength set to -1 the layer passes gradients through
// unchanged, so the tape gradient is the true derivative of the objective.
TEST_F(TotalLoss, FullObjectiveGradientCheck) {
  cfg.sifd.domain_mode = sifd::DomainMode::Adversarial;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Network<double> net(cfg, kBands, kClasses, seed);
    test_support::jitter_biases(net.params(), seed + 50);
    const Batch b = test_support::random_batch(cfg.sifd, 4, kBands, kClasses, seed + 100);
    LossWeights lw;
    lw.grl_lambda = -1.0;
    auto r = gradient_check_params<double>(
        [&](Tape<double>& t) { return net.total_loss(t, b, net.forward(t, b), lw).total; }, net.params().all(), 1e-6,
        4, seed);
    EXPECT_TRUE(r.ok(1e-3)) << "seed " << seed << " err " << r.max_rel_error << " at " << r.worst_param;
  }
}

TEST_F(TotalLoss, AdversarialModeReversesOnlyTheEncoderSide) {
  cfg.sifd.domain_mode = sifd::DomainMode::Adversarial;
  Network<double> net(cfg, kBands, kClasses, 11);
  const Batch b = test_support::random_batch(cfg.sifd, 4, kBands, kClasses, 12);
  auto grads = [&](double beta, double grl) {
    LossWeights lw;
    lw.beta = beta;
    lw.grl_lambda = grl;
    for (auto* p : net.params().all()) p->zero_grad();
    Tape<double> t;
    t.backward(net.total_loss(t, b, net.forward(t, b), lw).total);
    std::map<std::string, std::vector<double>> g;
    for (auto* p : net.params().all()) g[p->name].assign(p->grad.data(), p->grad.data() + p->grad.size());
    return g;
  };
  const auto base = grads(0.0, 1.0), rev = grads(0.5, 1.0), plain = grads(0.5, -1.0);
  for (const auto& [name, g0] : base) {
    const bool dom_head = name.rfind("sifd.dom", 0) == 0;
    for (std::size_t i = 0; i < g0.size(); ++i) {
      if (dom_head)
        EXPECT_NEAR(rev.at(name)[i], plain.at(name)[i], 1e-12) << name;
      else
        EXPECT_NEAR(rev.at(name)[i] - g0[i], -(plain.at(name)[i] - g0[i]), 1e-12) << name;
    }
  }
}
