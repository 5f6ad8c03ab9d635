#pragma once

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "osdg/calibration.hpp"
#include "osdg/config.hpp"
#include "osdg/dataio/cube.hpp"
#include "osdg/dataio/patch.hpp"
#include "osdg/metrics.hpp"
#include "osdg/network.hpp"
#include "osdg/numerics/optim.hpp"
#include "osdg/ssud.hpp"

namespace osdg::pipeline {

// ---- target access tracking ------------------------------------------------

/// Wraps the target cube; every read is logged with the phase that made it.
class TrackedCube {
 public:
  explicit TrackedCube(HSICube cube) : cube_(std::move(cube)) {}

  const HSICube& read(const std::string& phase) {
    log_.push_back(phase);
    return cube_;
  }
  std::size_t reads() const { return log_.size(); }
  const std::vector<std::string>& log() const { return log_; }
  std::size_t bands() const { return cube_.bands; }  // metadata only, not a data read

 private:
  HSICube cube_;
  std::vector<std::string> log_;
};

// ---- data preparation ------------------------------------------------------

/// Source-derived state shared by training and calibration.
struct SourceData {
  Split split;
  BandStats raw_stats;       // per band, raw reflectance, training pixels
  BandStats std_stats;       // per band, standardized values, training pixels
  std::vector<double> recon_lo;
  std::vector<double> recon_hi;
  std::vector<Patch> train;
  std::vector<Patch> validation;
};

inline std::vector<Patch> extract_patches(const HSICube& cube, const std::vector<std::size_t>& pixels) {
  std::vector<Patch> out;
  out.reserve(pixels.size());
  for (std::size_t p : pixels) out.push_back(extract_patch(cube, p / cube.width, p % cube.width));
  return out;
}

inline SourceData prepare_source(const HSICube& source, double split_ratio, std::uint64_t seed) {
  validate_cube(source);
  for (auto l : source.labels)
    if (l == kUnknownLabel) throw std::invalid_argument("train: source cube contains unknown-labelled pixels");
  SourceData d;
  d.split = stratified_split(source.labels, source.num_known, split_ratio, seed);
  d.raw_stats = compute_band_stats(source, d.split.train);
  const HSICube std_cube = standardize(source, d.raw_stats);
  d.std_stats = compute_band_stats(std_cube, d.split.train);
  d.recon_lo = d.std_stats.min;
  d.recon_hi = d.std_stats.max;
  d.train = extract_patches(std_cube, d.split.train);
  d.validation = extract_patches(std_cube, d.split.validation);
  return d;
}

/// Random smooth gain/offset/sinusoid shift plus noise on one standardized
/// spectrum; the shift is applied in reflectance units.
inline std::vector<float> augment_spectrum(const float* s, const BandStats& raw, const AugmentSpec& a,
                                           std::mt19937_64& rng) {
  const std::size_t c = raw.mean.size();
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double g0 = unit(rng), g1 = unit(rng), o0 = unit(rng), o1 = unit(rng);
  const double phase = std::numbers::pi * (unit(rng) + 1.0), cycles = 1.0 + 0.5 * (unit(rng) + 1.0);
  const double amp = unit(rng);
  std::normal_distribution<double> noise(0.0, a.noise_sigma);
  std::vector<float> out(c);
  for (std::size_t b = 0; b < c; ++b) {
    const double x = c > 1 ? static_cast<double>(b) / static_cast<double>(c - 1) : 0.0;
    const double raw_v = s[b] * raw.stddev[b] + raw.mean[b];
    const double gain = 1.0 + a.gain_amplitude * (g0 * (1.0 - x) + g1 * x);
    const double offset = a.offset_amplitude * (o0 * (1.0 - x) + o1 * x);
    const double dist = a.distortion_amplitude * amp * std::sin(2.0 * std::numbers::pi * cycles * x + phase);
    const double shifted = gain * raw_v + offset + dist;
    out[b] = static_cast<float>((shifted - raw.mean[b]) / raw.stddev[b] + noise(rng));
  }
  return out;
}

/// Normalisation context a trained network needs at inference.
struct InputSpace {
  sifd::Transform transform = sifd::Transform::Fft;
  std::size_t bands = 0;
  std::size_t freq_len = 0;
  std::vector<double> recon_lo;
  std::vector<double> recon_hi;
};

inline void append_freq(std::vector<float>& dst, const InputSpace& in, const float* spectrum) {
  std::vector<double> s(spectrum, spectrum + in.bands);
  const auto f = sifd::transform_spectrum<double>(in.transform, s);
  for (double v : f) dst.push_back(static_cast<float>(v));
}

/// Builds a minibatch. `aug` (one spectrum per patch) is optional.
inline Batch make_batch(const InputSpace& in, std::span<const Patch* const> patches,
                        const std::vector<std::vector<float>>* aug = nullptr, bool with_labels = true) {
  Batch b;
  b.size = patches.size();
  b.bands = in.bands;
  b.freq_len = in.freq_len;
  b.patches.resize(b.size * in.bands * kPatchSize * kPatchSize);
  b.freq.reserve(b.size * in.freq_len);
  b.recon_target.reserve(b.size * in.bands);
  for (std::size_t n = 0; n < b.size; ++n) {
    const Patch& p = *patches[n];
    if (p.bands != in.bands) throw std::invalid_argument("batch: patch band count mismatch");
    float* dst = b.patches.data() + n * in.bands * kPatchSize * kPatchSize;
    for (std::size_t r = 0; r < kPatchSize; ++r)
      for (std::size_t c = 0; c < kPatchSize; ++c)
        for (std::size_t ch = 0; ch < in.bands; ++ch) dst[(ch * kPatchSize + r) * kPatchSize + c] = p.at(r, c, ch);
    append_freq(b.freq, in, p.center());
    for (std::size_t ch = 0; ch < in.bands; ++ch) {
      const double span = std::max(in.recon_hi[ch] - in.recon_lo[ch], 1e-12);
      b.recon_target.push_back(static_cast<float>(std::clamp((p.center()[ch] - in.recon_lo[ch]) / span, 0.0, 1.0)));
    }
    if (aug) append_freq(b.aug_freq, in, (*aug)[n].data());
    if (with_labels) {
      if (p.label < 1 || p.label == kUnknownLabel) throw std::invalid_argument("batch: training label must be known");
      b.labels.push_back(p.label - 1u);
    }
  }
  return b;
}

// ---- trained model ----------------------------------------------------------

struct EpochRecord {
  double loss = 0.0;
  double cls = 0.0;
  double edl = 0.0;
  double domain = 0.0;
  double domain_head = 0.0;
  double recon = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;
};

struct RunHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
};

struct TrainedModel {
  RunConfig cfg;
  std::uint64_t seed = 0;
  std::size_t num_known = 0;
  std::vector<std::string> class_names;
  BandStats raw_stats;
  BandStats std_stats;
  InputSpace input;
  double temperature = 1.0;
  std::shared_ptr<Network<float>> net;
  RunHistory history;
};

inline constexpr std::size_t kInferChunk = 64;

inline std::vector<SampleInference> infer_patches(const TrainedModel& m, const std::vector<Patch>& patches) {
  std::vector<SampleInference> out;
  out.reserve(patches.size());
  std::vector<const Patch*> ptrs;
  for (std::size_t i = 0; i < patches.size(); i += kInferChunk) {
    ptrs.clear();
    for (std::size_t j = i; j < std::min(patches.size(), i + kInferChunk); ++j) ptrs.push_back(&patches[j]);
    auto part = m.net->infer(make_batch(m.input, ptrs, nullptr, false));
    for (auto& s : part) out.push_back(std::move(s));
  }
  return out;
}

inline std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Closed-set accuracy of the classifier head, percent.
inline double closed_set_accuracy(const TrainedModel& m, const std::vector<Patch>& patches) {
  const auto inf = infer_patches(m, patches);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < patches.size(); ++i) ok += argmax(inf[i].p_cls) + 1 == patches[i].label;
  return 100.0 * static_cast<double>(ok) / static_cast<double>(patches.size());
}

/// Fits the temperature used by the temp_scaling variant on the
/// validation logits of the combined pathway head.
inline void fit_model_temperature(TrainedModel& m, const std::vector<Patch>& validation) {
  const auto inf = infer_patches(m, validation);
  std::vector<std::vector<double>> logits;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < inf.size(); ++i) {
    logits.push_back(inf[i].head_logits[2]);
    labels.push_back(validation[i].label - 1u);
  }
  m.temperature = edl::fit_temperature(logits, labels);
}

/// Off-class evidence penalty for an epoch: linear ramp, then constant.
inline double lambda_reg_at(const TrainConfig& t, std::size_t epoch) {
  if (t.lambda_reg_warmup == 0) return t.lambda_reg;
  return t.lambda_reg * std::min(1.0, static_cast<double>(epoch + 1) / static_cast<double>(t.lambda_reg_warmup));
}

using ProgressFn = std::function<void(std::size_t epoch, const EpochRecord&)>;

inline constexpr double kFeatureMomentum = 0.1;

inline TrainedModel train(const RunConfig& cfg, const HSICube& source, std::uint64_t seed,
                          const ProgressFn& progress = {}) {
  cfg.validate();
  const SourceData data = prepare_source(source, cfg.train.split_ratio, seed);
  TrainedModel m;
  m.cfg = cfg;
  m.seed = seed;
  m.num_known = source.num_known;
  m.class_names = source.class_names;
  m.raw_stats = data.raw_stats;
  m.std_stats = data.std_stats;
  m.net = std::make_shared<Network<float>>(cfg.model, source.bands, source.num_known, calibration::mix_seed(seed));
  m.input = {cfg.model.sifd.variant, source.bands, m.net->freq_len(), data.recon_lo, data.recon_hi};

  auto params = m.net->params().all();
  OptimState<float> opt;
  opt.weight_decay = static_cast<float>(cfg.train.weight_decay);
  LossWeights lw = cfg.loss_weights();
  const bool want_views = cfg.model.sifd.domain_reg;

  std::vector<std::vector<float>> best_values;
  double best_acc = -1.0;
  std::vector<std::size_t> order(data.train.size());
  std::mt19937_64 rng(calibration::mix_seed(seed ^ 0xA11CEULL));
  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    opt.lr = static_cast<float>(cosine_lr(epoch, cfg.train.epochs, cfg.train.lr));
    lw.lambda_reg = lambda_reg_at(cfg.train, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<float>> views;
    if (want_views)
      for (const auto& p : data.train) views.push_back(augment_spectrum(p.center(), data.raw_stats, cfg.train.augment, rng));

    EpochRecord rec;
    rec.lr = opt.lr;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.train.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.train.batch);
      std::vector<const Patch*> ptrs;
      std::vector<std::vector<float>> batch_views;
      for (std::size_t i = start; i < end; ++i) {
        ptrs.push_back(&data.train[order[i]]);
        if (want_views) batch_views.push_back(views[order[i]]);
      }
      const Batch b = make_batch(m.input, ptrs, want_views ? &batch_views : nullptr);
      Tape<float> tape(true);
      const auto out = m.net->forward(tape, b);
      const auto loss = m.net->total_loss(tape, b, out, lw);
      m.net->update_feature_means(out, kFeatureMomentum);
      const double total = loss.total.value()[0];
      if (!std::isfinite(total))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                 std::to_string(batches + 1));
      m.net->params().zero_grad();
      tape.backward(loss.total);
      clip_grad_norm<float>(params, static_cast<float>(cfg.train.clip));
      adam_step<float>(params, opt);
      rec.loss += total;
      rec.cls += loss.cls;
      rec.edl += loss.edl;
      rec.domain += loss.domain;
      rec.domain_head += loss.domain_head;
      rec.recon += loss.recon;
      ++batches;
    }
    for (double* v : {&rec.loss, &rec.cls, &rec.edl, &rec.domain, &rec.domain_head, &rec.recon}) *v /= static_cast<double>(batches);
    rec.val_acc = closed_set_accuracy(m, data.validation);
    if (rec.val_acc >= best_acc) {  // ties go to the later epoch
      best_acc = rec.val_acc;
      m.history.best_epoch = epoch;
      best_values.clear();
      for (const Param<float>* p : params) best_values.push_back(p->value.vec());
    }
    m.history.epochs.push_back(rec);
    if (progress) progress(epoch, rec);
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value.vec() = best_values[i];
  std::vector<Batch> stat_batches;
  for (std::size_t i = 0; i < data.train.size(); i += kInferChunk) {
    std::vector<const Patch*> ptrs;
    for (std::size_t j = i; j < std::min(data.train.size(), i + kInferChunk); ++j) ptrs.push_back(&data.train[j]);
    stat_batches.push_back(make_batch(m.input, ptrs, nullptr, false));
  }
  m.net->set_feature_means_from(stat_batches);
  if (cfg.model.edl_kind == edl::Kind::TempScaling) fit_model_temperature(m, data.validation);
  return m;
}

// ---- persistence ---------------------------------------------------------------

inline nlohmann::json stats_json(const BandStats& s) {
  return {{"mean", s.mean}, {"stddev", s.stddev}, {"min", s.min}, {"max", s.max}};
}

inline BandStats stats_from_json(const nlohmann::json& j) {
  return {j.at("mean").get<std::vector<double>>(), j.at("stddev").get<std::vector<double>>(),
          j.at("min").get<std::vector<double>>(), j.at("max").get<std::vector<double>>()};
}

/// Everything except the weights, as JSON. Doubles round-trip exactly.
inline nlohmann::json model_json(const TrainedModel& m) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : m.history.epochs)
    hist.push_back({r.loss, r.cls, r.edl, r.domain, r.domain_head, r.recon, r.val_acc, r.lr});
  return {{"config", m.cfg},
          {"seed", m.seed},
          {"num_known", m.num_known},
          {"class_names", m.class_names},
          {"bands", m.input.bands},
          {"raw_stats", stats_json(m.raw_stats)},
          {"std_stats", stats_json(m.std_stats)},
          {"recon_lo", m.input.recon_lo},
          {"recon_hi", m.input.recon_hi},
          {"temperature", m.temperature},
          {"feature_means", m.net->feature_means()},
          {"best_epoch", m.history.best_epoch},
          {"history", hist}};
}

inline TrainedModel model_from_json(const nlohmann::json& j, const std::string& weights) {
  TrainedModel m;
  m.cfg = parse_run_config(j.at("config"));
  m.seed = j.at("seed").get<std::uint64_t>();
  m.num_known = j.at("num_known").get<std::size_t>();
  m.class_names = j.at("class_names").get<std::vector<std::string>>();
  m.raw_stats = stats_from_json(j.at("raw_stats"));
  m.std_stats = stats_from_json(j.at("std_stats"));
  m.temperature = j.at("temperature").get<double>();
  const auto bands = j.at("bands").get<std::size_t>();
  m.net = std::make_shared<Network<float>>(m.cfg.model, bands, m.num_known, calibration::mix_seed(m.seed));
  decode_params_into(weights, m.net->params());
  m.net->set_feature_means(j.at("feature_means").get<FeatureMeans>());
  m.input = {m.cfg.model.sifd.variant, bands, m.net->freq_len(), j.at("recon_lo").get<std::vector<double>>(),
             j.at("recon_hi").get<std::vector<double>>()};
  m.history.best_epoch = j.at("best_epoch").get<std::size_t>();
  for (const auto& r : j.at("history")) {
    const auto v = r.get<std::vector<double>>();
    if (v.size() != 8) throw std::runtime_error("model: malformed history entry");
    m.history.epochs.push_back({v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]});
  }
  return m;
}

// ---- scoring -----------------------------------------------------------------

/// Pathway uncertainties (spectral, spatial, combined) of one sample.
inline std::array<double, kPathways> pathway_uncertainty(const TrainedModel& m, const SampleInference& s) {
  std::array<double, kPathways> u{};
  const edl::Kind kind = m.cfg.model.edl_kind;
  for (std::size_t i = 0; i < kPathways; ++i) {
    if (kind == edl::Kind::Edl) {
      u[i] = s.dirichlet[i].uncertainty;
    } else {
      const double t = kind == edl::Kind::TempScaling ? m.temperature : 1.0;
      u[i] = edl::alt_uncertainty(kind, edl::softmax(s.head_logits[i], t));
    }
  }
  return u;
}

struct Scored {
  std::array<double, kPathways> u;
  ssud::Decision decision;
};

inline std::vector<Scored> score(const TrainedModel& m, const std::vector<SampleInference>& inf,
                                 const ssud::Config& cfg, double tau) {
  std::vector<Scored> out;
  out.reserve(inf.size());
  for (const auto& s : inf) {
    const auto u = pathway_uncertainty(m, s);
    out.push_back({u, ssud::decide_sample(u[0], u[1], u[2], s.p_cls, cfg, tau)});
  }
  return out;
}

inline std::vector<double> r_scores(const std::vector<Scored>& s) {
  std::vector<double> out;
  out.reserve(s.size());
  for (const auto& x : s) out.push_back(x.decision.r_score);
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// ---- calibration ---------------------------------------------------------------

struct CalibrationResult {
  calibration::Threshold threshold;
  double known_mean_score = 0.0;
  std::array<double, 4> strategy_mean_score{};
};

inline std::vector<Patch> unknown_patches(const std::vector<calibration::SyntheticUnknown>& s) {
  std::vector<Patch> out;
  out.reserve(s.size());
  for (const auto& x : s) out.push_back(x.patch);
  return out;
}

/// Synthetic unknowns are generated in reflectance units (noise levels are
/// reflectance standard deviations) and mapped back to the standardised space.
inline std::vector<calibration::SyntheticUnknown> synthetic_unknowns(const SourceData& data,
                                                                     const calibration::Spec& spec,
                                                                     std::uint64_t seed) {
  const BandStats& raw = data.raw_stats;
  std::vector<Patch> known = data.validation;
  for (auto& p : known)
    for (std::size_t i = 0; i < p.window.size(); ++i) {
      const std::size_t b = i % p.bands;
      p.window[i] = static_cast<float>(p.window[i] * raw.stddev[b] + raw.mean[b]);
    }
  auto synth = calibration::generate(known, raw, spec, seed);
  for (auto& s : synth)
    for (std::size_t i = 0; i < s.patch.window.size(); ++i) {
      const std::size_t b = i % s.patch.bands;
      s.patch.window[i] = static_cast<float>((s.patch.window[i] - raw.mean[b]) / raw.stddev[b]);
    }
  return synth;
}

/// Source-only threshold selection; `ssud_cfg` selects the decision variant.
inline CalibrationResult calibrate(const TrainedModel& m, const HSICube& source, const ssud::Config& ssud_cfg,
                                   const calibration::Spec& spec, bool enforce_sanity = true) {
  const SourceData data = prepare_source(source, m.cfg.train.split_ratio, m.seed);
  const auto synth = synthetic_unknowns(data, spec, spec.seed ^ m.seed);
  const auto syn_scored = score(m, infer_patches(m, unknown_patches(synth)), ssud_cfg, 0.0);
  const auto known_scored = score(m, infer_patches(m, data.validation), ssud_cfg, 0.0);
  CalibrationResult r;
  const auto syn = r_scores(syn_scored), known = r_scores(known_scored);
  r.known_mean_score = mean_of(known);
  for (std::size_t s = 0; s < 4; ++s) {
    std::vector<double> part;
    for (std::size_t i = 0; i < synth.size(); ++i)
      if (synth[i].strategy == calibration::kStrategies[s]) part.push_back(syn[i]);
    r.strategy_mean_score[s] = mean_of(part);
    if (enforce_sanity && !(r.strategy_mean_score[s] > r.known_mean_score))
      throw std::runtime_error("calibration: " + calibration::to_string(calibration::kStrategies[s]) +
                               " unknowns score " + std::to_string(r.strategy_mean_score[s]) +
                               " on average, not above the known-validation mean " +
                               std::to_string(r.known_mean_score));
  }
  r.threshold = calibration::select_threshold(syn, known, spec.rho_target);
  return r;
}

/// Fraction (percent) of freshly generated synthetic unknowns rejected at tau.
inline double heldout_synthetic_tpr(const TrainedModel& m, const HSICube& source, const ssud::Config& ssud_cfg,
                                    const calibration::Spec& spec, double tau) {
  const SourceData data = prepare_source(source, m.cfg.train.split_ratio, m.seed);
  const auto synth = synthetic_unknowns(data, spec, calibration::mix_seed(spec.seed ^ m.seed ^ 0x4e1dULL));
  const auto scored = score(m, infer_patches(m, unknown_patches(synth)), ssud_cfg, tau);
  std::size_t rejected = 0;
  for (const auto& s : scored) rejected += s.decision.prediction == kUnknownLabel;
  return 100.0 * static_cast<double>(rejected) / static_cast<double>(scored.size());
}

// ---- evaluation ----------------------------------------------------------------

struct SampleRecord {
  std::size_t pixel;
  std::uint16_t label;
  std::array<double, kPathways> u;
  double strength_comb;
  double evidence_entropy;  // normalised entropy of the combined evidence share
  Scored scored;
};

struct Evaluation {
  metrics::Report report;
  std::vector<SampleRecord> samples;
  std::vector<std::uint16_t> grid;  // H x W predictions, 0 for unlabeled pixels
  std::size_t height = 0;
  std::size_t width = 0;
};

inline double evidence_entropy(const std::vector<double>& e) {
  double s = 0.0;
  for (double v : e) s += v;
  if (!(s > 0.0)) return 1.0;
  double h = 0.0;
  for (double v : e)
    if (v > 0.0) h -= (v / s) * std::log(v / s);
  return std::clamp(h / std::log(static_cast<double>(e.size())), 0.0, 1.0);
}

inline Evaluation evaluate(const TrainedModel& m, TrackedCube& target, const ssud::Config& ssud_cfg, double tau,
                           const std::string& phase = "evaluate") {
  if (target.bands() != m.input.bands)
    throw std::invalid_argument("evaluate: target has " + std::to_string(target.bands()) + " bands, model expects " +
                                std::to_string(m.input.bands));
  const HSICube& cube = target.read(phase);
  if (cube.num_known != m.num_known) throw std::invalid_argument("evaluate: target K differs from the source");
  const HSICube std_cube = standardize(cube, m.raw_stats);
  const auto pixels = labeled_pixels(std_cube);
  const auto patches = extract_patches(std_cube, pixels);
  const auto inf = infer_patches(m, patches);
  const auto scored = score(m, inf, ssud_cfg, tau);

  Evaluation ev;
  ev.height = cube.height;
  ev.width = cube.width;
  ev.grid.assign(cube.pixels(), kUnlabeled);
  std::vector<std::uint16_t> preds, labels;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const auto& d = inf[i].dirichlet[2];
    ev.samples.push_back({pixels[i], patches[i].label, scored[i].u, d.strength, evidence_entropy(d.evidence),
                          scored[i]});
    ev.grid[pixels[i]] = scored[i].decision.prediction;
    preds.push_back(scored[i].decision.prediction);
    labels.push_back(patches[i].label);
  }
  ev.report = metrics::make_report(metrics::confusion(preds, labels, m.num_known), tau);
  return ev;
}

// ---- uncertainty analysis ------------------------------------------------------

struct UncertaintyTables {
  std::string branch_frequency;
  std::string class_uncertainty;
  std::string evidence_entropy;
  std::string strength_uncertainty;
  std::string pathway_uncertainty;
  double known_mean_u = 0.0;
  double unknown_mean_u = 0.0;
};

inline UncertaintyTables uncertainty_tables(const Evaluation& ev, std::size_t k,
                                            const std::vector<std::string>& class_names) {
  using metrics::fixed;
  UncertaintyTables t;
  auto group = [](const SampleRecord& s) { return s.label == kUnknownLabel ? 1 : 0; };
  const char* group_name[2] = {"known", "unknown"};

  std::array<std::array<double, 3>, 2> branch{};
  std::array<double, 2> count{}, u_sum{};
  for (const auto& s : ev.samples) {
    const int g = group(s);
    branch[g][static_cast<int>(s.scored.decision.branch)] += 1.0;
    count[g] += 1.0;
    u_sum[g] += s.scored.decision.u_final;
  }
  t.known_mean_u = count[0] > 0 ? u_sum[0] / count[0] : 0.0;
  t.unknown_mean_u = count[1] > 0 ? u_sum[1] / count[1] : 0.0;

  std::string s = "group,spectral,spatial,combined,count\n";
  for (int g = 0; g < 2; ++g) {
    s += group_name[g];
    for (int b = 0; b < 3; ++b) s += "," + fixed(count[g] > 0 ? branch[g][b] / count[g] : 0.0, 6);
    s += "," + std::to_string(static_cast<std::size_t>(count[g])) + "\n";
  }
  t.branch_frequency = s;

  s = "class,count,mean_u,std_u\n";
  for (std::size_t c = 0; c <= k; ++c) {
    const std::uint16_t label = c < k ? static_cast<std::uint16_t>(c + 1) : kUnknownLabel;
    std::vector<double> us;
    for (const auto& r : ev.samples)
      if (r.label == label) us.push_back(r.scored.decision.u_final);
    const double mu = mean_of(us);
    double var = 0.0;
    for (double v : us) var += (v - mu) * (v - mu);
    const double sd = us.empty() ? 0.0 : std::sqrt(var / static_cast<double>(us.size()));
    s += (c < k ? (c < class_names.size() ? class_names[c] : std::to_string(c + 1)) : std::string("unknown")) + "," +
         std::to_string(us.size()) + "," + fixed(mu, 6) + "," + fixed(sd, 6) + "\n";
  }
  t.class_uncertainty = s;

  constexpr std::size_t kBins = 10;
  std::array<std::array<std::size_t, kBins>, 2> hist{};
  for (const auto& r : ev.samples)
    ++hist[group(r)][std::min(kBins - 1, static_cast<std::size_t>(r.evidence_entropy * kBins))];
  s = "bin_lo,bin_hi,known,unknown\n";
  for (std::size_t b = 0; b < kBins; ++b)
    s += fixed(static_cast<double>(b) / kBins, 2) + "," + fixed(static_cast<double>(b + 1) / kBins, 2) + "," +
         std::to_string(hist[0][b]) + "," + std::to_string(hist[1][b]) + "\n";
  t.evidence_entropy = s;

  s = "pixel,group,strength,uncertainty\n";
  for (const auto& r : ev.samples)
    s += std::to_string(r.pixel) + "," + group_name[group(r)] + "," + fixed(r.strength_comb, 6) + "," +
         fixed(static_cast<double>(k) / r.strength_comb, 6) + "\n";
  t.strength_uncertainty = s;

  s = "pixel,group,u_spec,u_spat,branch\n";
  for (const auto& r : ev.samples)
    s += std::to_string(r.pixel) + "," + group_name[group(r)] + "," + fixed(r.u[0], 6) + "," + fixed(r.u[1], 6) +
         "," + ssud::to_string(r.scored.decision.branch) + "\n";
  t.pathway_uncertainty = s;
  return t;
}

inline UncertaintyTables uncertainty_report(const TrainedModel& m, TrackedCube& target, double tau) {
  const Evaluation ev = evaluate(m, target, m.cfg.ssud, tau, "uncertainty_report");
  return uncertainty_tables(ev, m.num_known, m.class_names);
}

// ---- end-to-end runs and ablation ------------------------------------------------

struct RunResult {
  TrainedModel model;
  CalibrationResult calibration;
  Evaluation evaluation;
  double heldout_tpr = 0.0;
  std::size_t target_reads_before_eval = 0;
};

/// Train, calibrate, then evaluate one seed. Target reads are counted
/// up to the moment evaluation starts.
inline RunResult run_once(const RunConfig& cfg, const HSICube& source, TrackedCube& target, std::uint64_t seed,
                          const ProgressFn& progress = {}, bool enforce_sanity = true) {
  RunResult r;
  const std::size_t reads_at_start = target.reads();
  r.model = train(cfg, source, seed, progress);
  r.calibration = calibrate(r.model, source, cfg.ssud, cfg.calib, enforce_sanity);
  r.heldout_tpr = heldout_synthetic_tpr(r.model, source, cfg.ssud, cfg.calib, r.calibration.threshold.tau);
  r.target_reads_before_eval = target.reads() - reads_at_start;
  r.evaluation = evaluate(r.model, target, cfg.ssud, r.calibration.threshold.tau);
  return r;
}

/// Ablation variant names look like "module:value", e.g. "ssud:no_uncertainty",
/// "edl:entropy", "sifd:dct", "sifd:no_attention", "dcrn:spectral_only",
/// "dcrn:add". "default" leaves the configuration unchanged.
inline std::vector<std::string> valid_variants() {
  std::vector<std::string> v{"default", "sifd:no_attention", "sifd:no_domain_reg", "sifd:no_recon",
                             "dcrn:spectral_only", "dcrn:add", "dcrn:concat", "dcrn:attention"};
  for (const auto& [n, x] : sifd::transform_names()) v.push_back("sifd:" + n);
  for (const char* k : {"edl", "softmax_conf", "entropy", "temp_scaling"}) v.push_back(std::string("edl:") + k);
  for (const auto& [n, x] : ssud::variant_names()) v.push_back("ssud:" + n);
  return v;
}

inline RunConfig apply_variant(const RunConfig& base, const std::string& name) {
  const auto valid = valid_variants();
  if (std::find(valid.begin(), valid.end(), name) == valid.end()) {
    std::string list;
    for (const auto& v : valid) list += (list.empty() ? "" : ", ") + v;
    throw std::invalid_argument("unknown variant '" + name + "' (valid: " + list + ")");
  }
  RunConfig c = base;
  if (name == "default") return c;
  const std::string module = name.substr(0, name.find(':')), value = name.substr(name.find(':') + 1);
  if (module == "sifd") {
    if (value == "no_attention") c.model.sifd.attention = false;
    else if (value == "no_domain_reg") c.model.sifd.domain_reg = false;
    else if (value == "no_recon") c.model.sifd.recon = false;
    else c.model.sifd.variant = sifd::parse_transform(value);
  } else if (module == "dcrn") {
    if (value == "spectral_only") c.model.dcrn.mode = dcrn::Mode::SpectralOnly;
    else c.model.dcrn.fusion = dcrn::parse_fusion(value);
  } else if (module == "edl") {
    c.model.edl_kind = edl::parse_kind(value);
  } else if (module == "ssud") {
    c.ssud.variant = ssud::parse_variant(value);
  }
  c.validate();
  return c;
}

/// Key of everything that influences training. The non-evidential kinds
/// share one cross-entropy-trained model, and decision settings are
/// excluded, so such variants reuse a trained network.
inline std::string training_key(const RunConfig& c, std::uint64_t seed) {
  nlohmann::json j = c;
  j.erase("ssud");
  j.erase("calib");
  j.erase("seeds");
  if (c.model.edl_kind != edl::Kind::Edl) j["edl"]["kind"] = "cross_entropy";
  return j.dump() + "#" + std::to_string(seed);
}

struct AblationRow {
  std::string variant;
  std::uint64_t seed;
  double os;
  double unk;
  double hos;
  double tau;
  double heldout_tpr;
  double known_u;
  double unknown_u;
  std::size_t target_reads_before_eval;
};

using AblationProgress = std::function<void(const AblationRow&)>;

inline std::vector<AblationRow> ablate(const RunConfig& base, const HSICube& source, TrackedCube& target,
                                       const std::vector<std::string>& variants,
                                       const AblationProgress& progress = {}, bool enforce_sanity = true) {
  if (variants.empty()) throw std::invalid_argument("ablate: empty variant list");
  std::vector<RunConfig> cfgs;
  for (const auto& v : variants) cfgs.push_back(apply_variant(base, v));  // validate all names first
  std::map<std::string, TrainedModel> cache;
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : base.seeds) {
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      const RunConfig& c = cfgs[vi];
      const std::string key = training_key(c, seed);
      auto it = cache.find(key);
      if (it == cache.end()) it = cache.emplace(key, train(c, source, seed)).first;
      TrainedModel m = it->second;  // shares the network, owns the decision config
      m.cfg = c;
      if (c.model.edl_kind == edl::Kind::TempScaling)
        fit_model_temperature(m, prepare_source(source, c.train.split_ratio, seed).validation);
      const std::size_t reads_before = target.reads();
      const auto cal = calibrate(m, source, c.ssud, c.calib, enforce_sanity);
      const double tpr = heldout_synthetic_tpr(m, source, c.ssud, c.calib, cal.threshold.tau);
      const std::size_t leaked = target.reads() - reads_before;
      const auto ev = evaluate(m, target, c.ssud, cal.threshold.tau);
      const auto tables = uncertainty_tables(ev, m.num_known, m.class_names);
      rows.push_back({variants[vi], seed, ev.report.os, ev.report.unk, ev.report.hos, cal.threshold.tau, tpr,
                      tables.known_mean_u, tables.unknown_mean_u, leaked});
      if (progress) progress(rows.back());
    }
    // Models for this seed are not reused by later seeds.
    for (auto it = cache.begin(); it != cache.end();)
      it = it->first.ends_with("#" + std::to_string(seed)) ? cache.erase(it) : std::next(it);
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  using metrics::fixed;
  std::string s = "variant,seed,OS,Unk,HOS,tau,heldout_tpr,known_u,unknown_u\n";
  for (const auto& r : rows)
    s += r.variant + "," + std::to_string(r.seed) + "," + fixed(r.os, 4) + "," + fixed(r.unk, 4) + "," +
         fixed(r.hos, 4) + "," + fixed(r.tau, 6) + "," + fixed(r.heldout_tpr, 4) + "," + fixed(r.known_u, 6) + "," +
         fixed(r.unknown_u, 6) + "\n";
  return s;
}

/// Mean and standard deviation per variant, in first-appearance order.
inline std::string ablation_summary(const std::vector<AblationRow>& rows) {
  using metrics::fixed;
  std::vector<std::string> order;
  for (const auto& r : rows)
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
  std::string s = "variant,n,OS_mean,OS_std,Unk_mean,Unk_std,HOS_mean,HOS_std\n";
  for (const auto& v : order) {
    std::array<std::vector<double>, 3> vals;
    for (const auto& r : rows)
      if (r.variant == v) {
        vals[0].push_back(r.os);
        vals[1].push_back(r.unk);
        vals[2].push_back(r.hos);
      }
    s += v + "," + std::to_string(vals[0].size());
    for (const auto& x : vals) {
      const double mu = mean_of(x);
      double var = 0.0;
      for (double y : x) var += (y - mu) * (y - mu);
      s += "," + fixed(mu, 2) + "," + fixed(std::sqrt(var / static_cast<double>(x.size())), 2);
    }
    s += "\n";
  }
  return s;
}

inline std::string history_csv(const RunHistory& h) {
  using metrics::fixed;
  std::string s = "epoch,loss,cls,edl,domain,domain_head,recon,val_acc,lr,best\n";
  for (std::size_t e = 0; e < h.epochs.size(); ++e) {
    const auto& r = h.epochs[e];
    s += std::to_string(e + 1) + "," + fixed(r.loss, 6) + "," + fixed(r.cls, 6) + "," + fixed(r.edl, 6) + "," +
         fixed(r.domain, 6) + "," + fixed(r.domain_head, 6) + "," + fixed(r.recon, 6) + "," + fixed(r.val_acc, 4) + "," + fixed(r.lr, 9) + "," +
         (e == h.best_epoch ? "1" : "0") + "\n";
  }
  return s;
}

inline std::string sweep_csv(const calibration::Threshold& t) {
  using metrics::fixed;
  std::string s = "tau,tpr,known_retention\n";
  for (const auto& r : t.sweep) s += fixed(r.tau, 9) + "," + fixed(r.tpr, 6) + "," + fixed(r.known_retention, 6) + "\n";
  return s;
}

}  // namespace osdg::pipeline
