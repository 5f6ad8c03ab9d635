#pragma once

#include <array>
#include <optional>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "osdg/dcrn.hpp"
#include "osdg/edl.hpp"
#include "osdg/numerics/tape.hpp"
#include "osdg/params.hpp"
#include "osdg/sifd.hpp"

namespace osdg {

struct ModelConfig {
  sifd::Config sifd;
  dcrn::Config dcrn;
  edl::Kind edl_kind = edl::Kind::Edl;
  std::size_t cls_hidden = 64;
};

/// Loss weights of the joint objective.
struct LossWeights {
  double alpha = 0.5;       // evidential / pathway-head term
  double beta = 0.1;        // domain term
  double gamma = 0.1;       // reconstruction term
  double lambda_reg = 0.2;  // evidential regulariser
  double grl_lambda = 1.0;
};

/// Network inputs for one minibatch, always stored in single precision.
struct Batch {
  std::size_t size = 0;
  std::size_t bands = 0;
  std::size_t freq_len = 0;
  std::vector<float> patches;       // [B,C,7,7]
  std::vector<float> freq;          // [B,L] transformed center spectra
  std::vector<float> recon_target;  // [B,C] in [0,1]
  std::vector<float> aug_freq;      // [B,L] transformed augmented views (may be empty)
  std::vector<std::size_t> labels;  // 0-based class ids (training only)
};

inline constexpr std::size_t kPathways = 3;  // spectral, spatial, combined

template <typename T>
struct Outputs {
  sifd::Output<T> sifd;
  Var<T> enhanced;
  dcrn::PathwayFeatures<T> paths;
  std::array<Var<T>, kPathways> head_inputs;  // pathway features entering the evidence heads
  std::array<Var<T>, kPathways> head_logits;
  std::array<edl::DirichletVars<T>, kPathways> dirichlet;
  Var<T> cls_logits;
  Var<T> p_cls;
};

template <typename T>
struct LossBreakdown {
  Var<T> total;
  double cls = 0.0;
  double edl = 0.0;
  double domain = 0.0;       // encoder-side domain term
  double domain_head = 0.0;  // domain head's view-classification loss
  double recon = 0.0;
};

/// Per-sample inference summary in double precision.
struct SampleInference {
  std::array<std::vector<double>, kPathways> head_logits;
  std::array<edl::DirichletOutput, kPathways> dirichlet;
  std::vector<double> cls_logits;
  std::vector<double> p_cls;
};

/// Per-pathway running mean of the row-standardised features.
using FeatureMeans = std::array<std::vector<double>, kPathways>;

template <typename T>
class Network {
 public:
  Network(const ModelConfig& cfg, std::size_t bands, std::size_t num_classes, std::uint64_t seed)
      : cfg_(cfg), bands_(bands), k_(num_classes) {
    if (num_classes < 2) throw std::invalid_argument("network: need K >= 2");
    std::mt19937_64 rng(seed);
    sifd_ = sifd::create(store_, cfg.sifd, bands, rng);
    dcrn_ = dcrn::create(store_, cfg.dcrn, bands, rng);
    const char* names[kPathways] = {"edl.spec", "edl.spat", "edl.comb"};
    for (std::size_t i = 0; i < kPathways; ++i) {
      heads_[i] = edl::create_head(store_, names[i], cfg.dcrn.dim, k_, rng);
      feat_mean_[i].assign(cfg.dcrn.dim, 0.0);
    }
    cls1_w_ = &store_.add_uniform("cls.fc1.w", {cfg.dcrn.dim, cfg.cls_hidden}, he_bound(cfg.dcrn.dim), rng);
    cls1_b_ = &store_.add("cls.fc1.b", {cfg.cls_hidden});
    cls2_w_ = &store_.add_uniform("cls.fc2.w", {cfg.cls_hidden, k_}, glorot_bound(cfg.cls_hidden, k_), rng);
    cls2_b_ = &store_.add("cls.fc2.b", {k_});
  }

  const ModelConfig& config() const { return cfg_; }
  std::size_t bands() const { return bands_; }
  std::size_t num_classes() const { return k_; }
  std::size_t freq_len() const { return sifd_.input_len; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  const sifd::Weights<T>& sifd_weights() const { return sifd_; }
  const dcrn::Weights<T>& dcrn_weights() const { return dcrn_; }
  const edl::Head<T>& head(std::size_t i) const { return heads_.at(i); }

  Outputs<T> forward(Tape<T>& t, const Batch& b) const {
    using namespace ad;
    check_batch(b);
    Outputs<T> o;
    Var<T> freq = t.constant(to_tensor({b.size, b.freq_len}, b.freq));
    Var<T> patches = t.constant(to_tensor({b.size, bands_, kPatchEdge, kPatchEdge}, b.patches));
    o.sifd = sifd::freq_features(t, freq, cfg_.sifd, sifd_);
    o.enhanced = sifd::enhance(t, patches, o.sifd.f_freq, sifd_);
    o.paths = dcrn::forward(t, o.enhanced, cfg_.dcrn, dcrn_);
    const Var<T>* feats[kPathways] = {&o.paths.f_spec, &o.paths.f_spat, &o.paths.f_comb};
    for (std::size_t i = 0; i < kPathways; ++i) {
      o.head_inputs[i] = row_norm(*feats[i]);
      o.head_logits[i] = edl::head_logits(t, centre_features(t, o.head_inputs[i], i), heads_[i]);
      o.dirichlet[i] = edl::evidence(o.head_logits[i]);
    }
    Var<T> b1 = t.param(*cls1_b_), b2 = t.param(*cls2_b_);
    o.cls_logits = linear(relu(linear(o.paths.f_comb, t.param(*cls1_w_), &b1)), t.param(*cls2_w_), &b2);
    o.p_cls = softmax(o.cls_logits);
    return o;
  }

  /// L = L_cls + alpha * L_EDL (three heads) + beta * L_domain + gamma * L_recon.
  LossBreakdown<T> total_loss(Tape<T>& t, const Batch& b, const Outputs<T>& o, const LossWeights& lw) const {
    using namespace ad;
    if (b.size == 0) throw std::invalid_argument("total_loss: empty batch");
    if (b.labels.size() != b.size) throw std::invalid_argument("total_loss: labels missing");
    LossBreakdown<T> out;
    Var<T> cls = edl::cross_entropy(o.cls_logits, b.labels);
    out.cls = static_cast<double>(cls.value()[0]);
    Var<T> total = cls;

    Var<T> head_loss;
    for (std::size_t i = 0; i < kPathways; ++i) {
      Var<T> li = cfg_.edl_kind == edl::Kind::Edl
                      ? edl::edl_loss(o.dirichlet[i], b.labels, static_cast<T>(lw.lambda_reg))
                      : edl::cross_entropy(o.head_logits[i], b.labels);
      head_loss = i == 0 ? li : add(head_loss, li);
    }
    out.edl = static_cast<double>(head_loss.value()[0]);
    total = add(total, scale(head_loss, static_cast<T>(lw.alpha)));

    if (cfg_.sifd.domain_reg) {
      const DomainTerms d = domain_terms(t, b, o, lw);
      Var<T> dom = d.head;
      out.domain_head = static_cast<double>(d.head.value()[0]);
      if (d.confusion) {
        out.domain = static_cast<double>(d.confusion->value()[0]);
        dom = add(dom, *d.confusion);
      } else {
        out.domain = out.domain_head;
      }
      total = add(total, scale(dom, static_cast<T>(lw.beta)));
    }
    if (cfg_.sifd.recon) {
      Var<T> target = t.constant(to_tensor({b.size, bands_}, b.recon_target));
      Var<T> rec = sifd::recon_loss(target, sifd::reconstruct(t, o.sifd.f_freq, sifd_));
      out.recon = static_cast<double>(rec.value()[0]);
      total = add(total, scale(rec, static_cast<T>(lw.gamma)));
    }
    out.total = total;
    return out;
  }

  /// Forward pass without recording, summarised per sample.
  std::vector<SampleInference> infer(const Batch& b) const {
    Tape<T> t(false);
    const Outputs<T> o = forward(t, b);
    std::vector<SampleInference> out(b.size);
    for (std::size_t n = 0; n < b.size; ++n) {
      SampleInference& s = out[n];
      for (std::size_t i = 0; i < kPathways; ++i) {
        s.head_logits[i] = row(o.head_logits[i].value(), n);
        s.dirichlet[i] = edl::evidence_from_logits(s.head_logits[i]);
      }
      s.cls_logits = row(o.cls_logits.value(), n);
      s.p_cls = edl::softmax(s.cls_logits);
    }
    return out;
  }

  /// Running per-dimension mean of the row-standardised pathway features.
  /// The evidence heads see centred features, so a unit cannot sit below
  /// zero on every sample of a batch.
  void update_feature_means(const Outputs<T>& o, double momentum) {
    for (std::size_t i = 0; i < kPathways; ++i) {
      const std::vector<double> m = column_mean(o.head_inputs[i].value());
      auto& st = feat_mean_[i];
      for (std::size_t j = 0; j < m.size(); ++j) st[j] = means_set_ ? (1.0 - momentum) * st[j] + momentum * m[j] : m[j];
    }
    means_set_ = true;
  }

  /// Replaces the running means by exact ones over `batches`.
  void set_feature_means_from(const std::vector<Batch>& batches) {
    FeatureMeans sum;
    std::size_t n = 0;
    for (const auto& b : batches) {
      Tape<T> t(false);
      const Outputs<T> o = forward(t, b);
      for (std::size_t i = 0; i < kPathways; ++i) {
        const auto& v = o.head_inputs[i].value();
        const std::size_t d = v.dim(1);
        sum[i].resize(d, 0.0);
        for (std::size_t r = 0; r < v.dim(0); ++r)
          for (std::size_t j = 0; j < d; ++j) sum[i][j] += v[r * d + j];
      }
      n += b.size;
    }
    if (n == 0) throw std::invalid_argument("set_feature_means_from: no samples");
    for (std::size_t i = 0; i < kPathways; ++i)
      for (std::size_t j = 0; j < sum[i].size(); ++j) feat_mean_[i][j] = sum[i][j] / static_cast<double>(n);
    means_set_ = true;
  }

  const FeatureMeans& feature_means() const { return feat_mean_; }

  void set_feature_means(const FeatureMeans& m) {
    for (const auto& v : m)
      if (v.size() != cfg_.dcrn.dim) throw std::invalid_argument("set_feature_means: dimension mismatch");
    feat_mean_ = m;
    means_set_ = true;
  }

  static constexpr std::size_t kPatchEdge = 7;

 private:
  struct DomainTerms {
    Var<T> head;
    std::optional<Var<T>> confusion;
  };

  // Domain head learns source views (label 1) against augmented views
  // (label 0). In confusion mode the encoder separately minimises the
  // constant-0.5 BCE through a frozen copy of the head.
  DomainTerms domain_terms(Tape<T>& t, const Batch& b, const Outputs<T>& o, const LossWeights& lw) const {
    using namespace ad;
    DomainTerms d;
    const bool adversarial = cfg_.sifd.domain_mode == sifd::DomainMode::Adversarial;
    const T grl = static_cast<T>(lw.grl_lambda);
    auto head_input = [&](const Var<T>& f) { return adversarial ? f : detach(f); };
    Var<T> f_src = o.sifd.f_freq;
    Var<T> head = sifd::bce_with_targets(sifd::domain_logit(t, head_input(f_src), sifd_, grl), std::vector<T>(b.size, T(1)));
    std::optional<Var<T>> f_aug;
    if (!b.aug_freq.empty()) {
      Var<T> aug_in = t.constant(to_tensor({b.size, b.freq_len}, b.aug_freq));
      f_aug = sifd::freq_features(t, aug_in, cfg_.sifd, sifd_).f_freq;
      Var<T> neg = sifd::bce_with_targets(sifd::domain_logit(t, head_input(*f_aug), sifd_, grl),
                                          std::vector<T>(b.size, T(0)));
      head = scale(add(head, neg), T(0.5));
    }
    d.head = head;
    if (!adversarial) {
      Var<T> conf = sifd::confusion_loss(t, f_src, sifd_);
      if (f_aug) conf = scale(add(conf, sifd::confusion_loss(t, *f_aug, sifd_)), T(0.5));
      d.confusion = conf;
    }
    return d;
  }

  void check_batch(const Batch& b) const {
    if (b.bands != bands_)
      throw std::invalid_argument("network: batch has " + std::to_string(b.bands) + " bands, model expects " +
                                  std::to_string(bands_));
    if (b.freq_len != sifd_.input_len) throw std::invalid_argument("network: frequency input length mismatch");
    if (b.patches.size() != b.size * bands_ * kPatchEdge * kPatchEdge || b.freq.size() != b.size * b.freq_len)
      throw std::invalid_argument("network: batch buffers have inconsistent sizes");
  }

  static Tensor<T> to_tensor(Shape shape, const std::vector<float>& v) {
    return Tensor<T>(std::move(shape), std::vector<T>(v.begin(), v.end()));
  }

  static std::vector<double> column_mean(const Tensor<T>& m) {
    const std::size_t rows = m.dim(0), n = m.dim(1);
    std::vector<double> mean(n, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) mean[j] += m[r * n + j];
    for (auto& v : mean) v /= static_cast<double>(rows);
    return mean;
  }

  Var<T> centre_features(Tape<T>& t, const Var<T>& f, std::size_t i) const {
    Tensor<T> shift({feat_mean_[i].size()});
    for (std::size_t j = 0; j < shift.size(); ++j) shift[j] = static_cast<T>(-feat_mean_[i][j]);
    return ad::add_row(f, t.constant(std::move(shift)));
  }

  static std::vector<double> row(const Tensor<T>& m, std::size_t r) {
    const std::size_t n = m.dim(1);
    return std::vector<double>(m.data() + r * n, m.data() + (r + 1) * n);
  }

  ModelConfig cfg_;
  std::size_t bands_;
  std::size_t k_;
  ParamStore<T> store_;
  sifd::Weights<T> sifd_;
  dcrn::Weights<T> dcrn_;
  std::array<edl::Head<T>, kPathways> heads_;
  FeatureMeans feat_mean_;
  bool means_set_ = false;
  Param<T>* cls1_w_;
  Param<T>* cls1_b_;
  Param<T>* cls2_w_;
  Param<T>* cls2_b_;
};

}  // namespace osdg
