#include <gtest/gtest.h>

#include <sstream>

#include "osdg/dataio/synth.hpp"
#include "osdg/params.hpp"
#include "osdg/pipeline.hpp"

using namespace osdg;
using namespace osdg::pipeline;

namespace {

RunConfig benchmark_config() { return load_run_config(std::string(OSDG_CONFIG_DIR) + "/benchmark.json"); }

RunConfig small_config(std::size_t epochs) {
  RunConfig c = load_run_config(std::string(OSDG_CONFIG_DIR) + "/smoke.json");
  c.train.epochs = epochs;
  return c;
}

SceneSpec small_scene() {
  SceneSpec s;
  s.num_known = 3;
  s.num_unknown = 1;
  s.bands = 16;
  s.height = 24;
  s.width = 24;
  s.pixels_per_class = 60;
  return s;
}

std::vector<std::string> csv_column(const std::string& csv, std::size_t col) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> out;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string cell;
    for (std::size_t i = 0; i <= col; ++i) std::getline(ls, cell, ',');
    out.push_back(cell);
  }
  return out;
}

}  // namespace

TEST(Pipeline, PrepareSourceSplitsAndStandardises) {
  const auto scene = synth_scene(small_scene());
  const auto d = prepare_source(scene.source, 0.8, 3);
  EXPECT_EQ(d.train.size() + d.validation.size(), labeled_pixels(scene.source).size());
  EXPECT_EQ(d.train.size(), 4 * d.validation.size());
  for (double m : d.std_stats.mean) EXPECT_NEAR(m, 0.0, 1e-6);
  for (double s : d.std_stats.stddev) EXPECT_NEAR(s, 1.0, 1e-5);
}

TEST(Pipeline, SeparableTwoClassSceneIsLearned) {
  SceneSpec s = small_scene();
  s.num_known = 2;
  s.min_endmember_distance = 0.6;
  const auto scene = synth_scene(s);
  RunConfig c = benchmark_config();
  c.train.epochs = 10;
  const auto m = train(c, scene.source, 0);
  ASSERT_EQ(m.history.epochs.size(), 10u);
  EXPECT_GE(m.history.epochs[m.history.best_epoch].val_acc, 95.0);
  const auto d = prepare_source(scene.source, c.train.split_ratio, 0);
  EXPECT_GE(closed_set_accuracy(m, d.validation), 95.0);
}

TEST(Pipeline, TrainingIsDeterministic) {
  const auto scene = synth_scene(small_scene());
  const RunConfig c = small_config(2);
  const auto a = train(c, scene.source, 4), b = train(c, scene.source, 4);
  EXPECT_EQ(history_csv(a.history), history_csv(b.history));
  EXPECT_EQ(encode_params(a.net->params()), encode_params(b.net->params()));
  const auto other = train(c, scene.source, 5);
  EXPECT_NE(history_csv(a.history), history_csv(other.history));
}

TEST(Pipeline, BestEpochWeightsAreRestored) {
  const auto scene = synth_scene(small_scene());
  const auto m = train(small_config(4), scene.source, 1);
  const auto d = prepare_source(scene.source, 0.8, 1);
  double best = 0;
  for (const auto& e : m.history.epochs) best = std::max(best, e.val_acc);
  EXPECT_EQ(m.history.epochs[m.history.best_epoch].val_acc, best);
  EXPECT_DOUBLE_EQ(closed_set_accuracy(m, d.validation), best);
}

TEST(Pipeline, ModelPersistenceRoundTrip) {
  const auto scene = synth_scene(small_scene());
  const auto m = train(small_config(2), scene.source, 2);
  const auto back = model_from_json(nlohmann::json::parse(model_json(m).dump()), encode_params(m.net->params()));
  EXPECT_EQ(model_json(back), model_json(m));
  const auto d = prepare_source(scene.source, 0.8, 2);
  const auto a = infer_patches(m, d.validation), b = infer_patches(back, d.validation);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].p_cls, b[i].p_cls);
}

TEST(Pipeline, TargetIsReadOnlyDuringEvaluation) {
  const auto scene = synth_scene(small_scene());
  TrackedCube target(scene.target);
  const RunConfig c = small_config(2);
  const auto r = run_once(c, scene.source, target, 0, {}, false);
  EXPECT_EQ(r.target_reads_before_eval, 0u);
  ASSERT_EQ(target.log().size(), 1u);
  EXPECT_EQ(target.log()[0], "evaluate");
}

TEST(Pipeline, EvaluateRejectsBadTargets) {
  const auto scene = synth_scene(small_scene());
  const auto m = train(small_config(1), scene.source, 0);
  TrackedCube source_as_target(scene.source);
  EXPECT_THROW(evaluate(m, source_as_target, m.cfg.ssud, 0.5), std::invalid_argument);
  SceneSpec wide = small_scene();
  wide.bands = 20;
  TrackedCube other(synth_scene(wide).target);
  EXPECT_THROW(evaluate(m, other, m.cfg.ssud, 0.5), std::invalid_argument);
  EXPECT_EQ(other.reads(), 0u);
}

TEST(Pipeline, VariantHandling) {
  const RunConfig base = small_config(1);
  EXPECT_EQ(apply_variant(base, "ssud:no_uncertainty").ssud.variant, ssud::Variant::NoUncertainty);
  EXPECT_EQ(apply_variant(base, "edl:entropy").model.edl_kind, edl::Kind::Entropy);
  EXPECT_EQ(apply_variant(base, "dcrn:spectral_only").model.dcrn.mode, dcrn::Mode::SpectralOnly);
  EXPECT_FALSE(apply_variant(base, "sifd:no_attention").model.sifd.attention);
  try {
    apply_variant(base, "ssud:bogus");
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("ssud:no_uncertainty"), std::string::npos);
  }
}

TEST(Pipeline, AblationTableShape) {
  const auto scene = synth_scene(small_scene());
  TrackedCube target(scene.target);
  RunConfig c = small_config(1);
  c.seeds = {0, 1};
  const auto rows = ablate(c, scene.source, target, {"ssud:full", "ssud:no_uncertainty", "edl:entropy"}, {}, false);
  EXPECT_EQ(rows.size(), 6u);
  for (const auto& r : rows) EXPECT_EQ(r.target_reads_before_eval, 0u);
  // one variant reproduces a plain run
  TrackedCube t2(scene.target);
  const auto plain = run_once(c, scene.source, t2, 0, {}, false);
  TrackedCube t3(scene.target);
  const auto single = ablate(c, scene.source, t3, {"default"}, {}, false);
  EXPECT_EQ(single.front().hos, plain.evaluation.report.hos);
  EXPECT_EQ(single.front().tau, plain.calibration.threshold.tau);
}

// One 50-epoch run on the default benchmark scene backs every check below.
TEST(Pipeline, DefaultBenchmarkEndToEnd) {
  const auto scene = synth_scene(SceneSpec{});
  TrackedCube target(scene.target);
  const RunConfig c = benchmark_config();
  const auto r = run_once(c, scene.source, target, 0);
  const auto& h = r.model.history;
  ASSERT_EQ(h.epochs.size(), 50u);
  EXPECT_LT(h.epochs.back().loss, h.epochs.front().loss);
  EXPECT_EQ(r.target_reads_before_eval, 0u);

  const auto& rep = r.evaluation.report;
  EXPECT_TRUE(std::isfinite(rep.hos));
  EXPECT_EQ(rep.per_class.size(), 5u);
  EXPECT_EQ(rep.confusion.total(), labeled_pixels(scene.target).size());

  const auto t = uncertainty_tables(r.evaluation, 5, scene.source.class_names);
  EXPECT_GT(t.unknown_mean_u, t.known_mean_u);
  for (const auto& row : {std::string("known"), std::string("unknown")}) {
    const auto pos = t.branch_frequency.find(row + ",");
    ASSERT_NE(pos, std::string::npos);
    std::istringstream ls(t.branch_frequency.substr(pos + row.size() + 1));
    double a, b, cc;
    char sep;
    ls >> a >> sep >> b >> sep >> cc;
    EXPECT_NEAR(a + b + cc, 1.0, 1e-5);
  }
  for (const auto& rec : r.evaluation.samples)
    EXPECT_NEAR(rec.u[2] * rec.strength_comb, 5.0, 1e-6);
  const auto strength = csv_column(t.strength_uncertainty, 2), unc = csv_column(t.strength_uncertainty, 3);
  ASSERT_EQ(strength.size(), r.evaluation.samples.size());
  for (std::size_t i = 0; i < strength.size(); ++i) {
    const double sv = std::stod(strength[i]), uv = std::stod(unc[i]);
    EXPECT_NEAR(sv * uv, 5.0, 1e-6 * sv + 1e-5);
  }

  // threshold extremum: nothing rejected
  TrackedCube t1(scene.target);
  const auto open = evaluate(r.model, t1, c.ssud, 1.0 - 1e-12);
  EXPECT_LT(open.report.unk, 1.0);

  // dropping the uncertainty term weakens rejection
  RunConfig nu = apply_variant(c, "ssud:no_uncertainty");
  const auto cal = calibrate(r.model, scene.source, nu.ssud, nu.calib, false);
  TrackedCube t2(scene.target);
  const auto ev = evaluate(r.model, t2, nu.ssud, cal.threshold.tau);
  EXPECT_LT(ev.report.unk, rep.unk);
}
