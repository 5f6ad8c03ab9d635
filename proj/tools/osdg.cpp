#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "osdg/config.hpp"
#include "osdg/dataio/cube.hpp"
#include "osdg/dataio/synth.hpp"
#include "osdg/metrics.hpp"
#include "osdg/pipeline.hpp"
#include "osdg/report.hpp"

namespace fs = std::filesystem;
using namespace osdg;

namespace {

// Bad input detected before any computation; exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string out;
  std::string run;
  std::string data;
  std::string target;
  std::vector<std::string> variants;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

std::string resolve_dir(const std::string& given, const char* what) {
  if (!given.empty()) return given;
  if (const char* env = std::getenv("OSDG_RUN_DIR"); env && *env) return env;
  throw UsageError(std::string("no ") + what + " directory: pass it or set OSDG_RUN_DIR");
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing ") + what);
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " '" + path + "' does not exist");
}

nlohmann::json parse_json_text(const std::string& text, const std::string& name) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(name + " is not valid JSON: " + e.what());
  }
}

RunConfig load_config(const Options& o) {
  RunConfig cfg;
  try {
    if (!o.config.empty()) {
      require_file(o.config, "config file");
      cfg = load_run_config(o.config);
    }
    cfg = with_overrides(cfg, o.overrides);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

std::string format_seed_list(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (auto v : seeds) s += (s.empty() ? "" : ",") + std::to_string(v);
  return s;
}

// ---- synth -------------------------------------------------------------------

int cmd_synth(const Options& o) {
  SceneSpec spec;
  if (!o.config.empty()) {
    require_file(o.config, "scene file");
    try {
      spec = parse_json_text(report::read_file(o.config), o.config).get<SceneSpec>();
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("scene file " + o.config + ": " + e.what());
    }
  }
  if (o.seed) spec.seed = *o.seed;
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  report::RunDir dir(resolve_dir(o.out, "output"));
  const auto scene = synth_scene(spec);
  dir.write("source.hsic", encode_cube(scene.source), "cube");
  dir.write("target.hsic", encode_cube(scene.target), "cube");
  dir.write("scene.json", nlohmann::json(spec).dump(2) + "\n", "config");
  dir.set_config_hash(hex64(fnv1a(nlohmann::json(spec).dump())));
  std::cout << "wrote " << (dir.root() / "source.hsic").string() << " and " << (dir.root() / "target.hsic").string()
            << '\n';
  return 0;
}

// ---- train / calibrate / eval -------------------------------------------------

pipeline::TrainedModel load_model(const report::RunDir& dir) {
  if (!dir.has("model.json") || !dir.has("weights.osdw"))
    throw UsageError("run directory " + dir.root().string() + " holds no trained model; run 'train' first");
  return pipeline::model_from_json(parse_json_text(dir.read("model.json"), "model.json"), dir.read("weights.osdw"));
}

std::string source_path(const Options& o, const report::RunDir& dir) {
  if (!o.data.empty()) return o.data;
  if (dir.has("data.json")) return parse_json_text(dir.read("data.json"), "data.json").at("source").get<std::string>();
  throw UsageError("missing --data (source cube)");
}

int cmd_train(const Options& o) {
  const RunConfig cfg = load_config(o);
  require_file(o.data, "source cube (--data)");
  report::RunDir dir(resolve_dir(o.out, "output"));
  const HSICube source = load_cube(o.data);
  const std::uint64_t seed = o.seed.value_or(cfg.seeds.front());
  auto model = pipeline::train(cfg, source, seed, [&](std::size_t e, const pipeline::EpochRecord& r) {
    std::cout << "epoch " << e + 1 << "/" << cfg.train.epochs << " loss " << metrics::fixed(r.loss, 4) << " val_acc "
              << metrics::fixed(r.val_acc, 2) << '\n';
  });
  dir.set_config_hash(config_hash(cfg));
  dir.write("config.json", nlohmann::json(cfg).dump(2) + "\n", "config");
  dir.write("data.json", nlohmann::json{{"source", fs::absolute(o.data).lexically_normal().string()}}.dump(2) + "\n",
            "config");
  dir.write("model.json", pipeline::model_json(model).dump(2) + "\n", "model");
  dir.write("weights.osdw", encode_params(model.net->params()), "model");
  dir.write("history.csv", pipeline::history_csv(model.history), "table");
  std::cout << "best epoch " << model.history.best_epoch + 1 << ", model written to " << dir.root().string() << '\n';
  return 0;
}

int cmd_calibrate(const Options& o) {
  report::RunDir dir(resolve_dir(o.run, "run"));
  const auto model = load_model(dir);
  const std::string src = source_path(o, dir);
  require_file(src, "source cube");
  const HSICube source = load_cube(src);
  const auto cal = pipeline::calibrate(model, source, model.cfg.ssud, model.cfg.calib);
  const double heldout = pipeline::heldout_synthetic_tpr(model, source, model.cfg.ssud, model.cfg.calib,
                                                         cal.threshold.tau);
  nlohmann::json strategies = nlohmann::json::object();
  for (std::size_t s = 0; s < 4; ++s)
    strategies[calibration::to_string(calibration::kStrategies[s])] = cal.strategy_mean_score[s];
  const nlohmann::json j = {{"tau", cal.threshold.tau},
                            {"tpr", cal.threshold.tpr},
                            {"known_retention", cal.threshold.known_retention},
                            {"known_mean_score", cal.known_mean_score},
                            {"strategy_mean_score", strategies},
                            {"heldout_tpr", heldout}};
  dir.write("calibration.json", j.dump(2) + "\n", "calibration");
  dir.write("sweep.csv", pipeline::sweep_csv(cal.threshold), "table");
  std::cout << "tau* = " << metrics::fixed(cal.threshold.tau, 6) << ", synthetic TPR "
            << metrics::fixed(100.0 * cal.threshold.tpr, 2) << "%, held-out TPR " << metrics::fixed(heldout, 2)
            << "%\n";
  return 0;
}

int cmd_eval(const Options& o) {
  report::RunDir dir(resolve_dir(o.run, "run"));
  const auto model = load_model(dir);
  if (!dir.has("calibration.json")) throw UsageError("run directory has no calibration; run 'calibrate' first");
  require_file(o.target, "target cube (--target)");
  const double tau = parse_json_text(dir.read("calibration.json"), "calibration.json").at("tau").get<double>();
  pipeline::TrackedCube target(load_cube(o.target));
  const auto ev = pipeline::evaluate(model, target, model.cfg.ssud, tau);
  const auto tables = pipeline::uncertainty_tables(ev, model.num_known, model.class_names);
  dir.write("metrics.csv", metrics::report_csv(ev.report, model.class_names), "table");
  dir.write("confusion.csv", metrics::confusion_csv(ev.report.confusion), "table");
  dir.write("map.bmp", metrics::encode_bmp(ev.grid, ev.height, ev.width), "image");
  dir.write("uncertainty/branch_frequency.csv", tables.branch_frequency, "table");
  dir.write("uncertainty/class_uncertainty.csv", tables.class_uncertainty, "table");
  dir.write("uncertainty/evidence_entropy.csv", tables.evidence_entropy, "table");
  dir.write("uncertainty/strength_uncertainty.csv", tables.strength_uncertainty, "table");
  dir.write("uncertainty/pathway_uncertainty.csv", tables.pathway_uncertainty, "table");
  std::cout << metrics::report_table(ev.report, model.class_names);
  return 0;
}

// ---- report ------------------------------------------------------------------

double to_double(const std::string& s) { return std::stod(s); }

int cmd_report(const Options& o) {
  report::RunDir dir(resolve_dir(o.run, "run"));
  const char* names[] = {"branch_frequency", "class_uncertainty", "evidence_entropy", "strength_uncertainty",
                         "pathway_uncertainty"};
  for (const char* n : names)
    if (!dir.has(std::string("uncertainty/") + n + ".csv"))
      throw UsageError(std::string("missing uncertainty/") + n + ".csv; run 'eval' first");
  auto table = [&](const char* n) { return report::parse_csv(dir.read(std::string("uncertainty/") + n + ".csv")); };

  {
    const auto rows = table("branch_frequency");
    std::vector<report::Series> series;
    for (std::size_t r = 1; r < rows.size(); ++r)
      series.push_back({rows[r][0], {to_double(rows[r][1]), to_double(rows[r][2]), to_double(rows[r][3])}});
    dir.write("plots/branch_frequency.svg",
              report::bar_chart("Pathway selection frequency", {"spectral", "spatial", "combined"}, series, "fraction"),
              "plot");
  }
  {
    const auto rows = table("class_uncertainty");
    std::vector<std::string> cats;
    report::Series mean{"mean u", {}}, sd{"std u", {}};
    for (std::size_t r = 1; r < rows.size(); ++r) {
      cats.push_back(rows[r][0]);
      mean.values.push_back(to_double(rows[r][2]));
      sd.values.push_back(to_double(rows[r][3]));
    }
    dir.write("plots/class_uncertainty.svg", report::bar_chart("Class-wise uncertainty", cats, {mean, sd}, "u"),
              "plot");
  }
  {
    const auto rows = table("evidence_entropy");
    std::vector<std::string> cats;
    report::Series known{"known", {}}, unknown{"unknown", {}};
    for (std::size_t r = 1; r < rows.size(); ++r) {
      cats.push_back(rows[r][0]);
      known.values.push_back(to_double(rows[r][2]));
      unknown.values.push_back(to_double(rows[r][3]));
    }
    dir.write("plots/evidence_entropy.svg",
              report::bar_chart("Evidence concentration", cats, {known, unknown}, "samples"), "plot");
  }
  {
    const auto rows = table("strength_uncertainty");
    report::ScatterSeries known{"known", {}}, unknown{"unknown", {}};
    for (std::size_t r = 1; r < rows.size(); ++r)
      (rows[r][1] == "unknown" ? unknown : known).points.emplace_back(to_double(rows[r][2]), to_double(rows[r][3]));
    dir.write("plots/strength_uncertainty.svg",
              report::scatter_plot("Evidence strength vs uncertainty", {known, unknown}, "S", "u"), "plot");
  }
  {
    const auto rows = table("pathway_uncertainty");
    report::ScatterSeries known{"known", {}}, unknown{"unknown", {}};
    for (std::size_t r = 1; r < rows.size(); ++r)
      (rows[r][1] == "unknown" ? unknown : known).points.emplace_back(to_double(rows[r][2]), to_double(rows[r][3]));
    dir.write("plots/pathway_uncertainty.svg",
              report::scatter_plot("Pathway uncertainties", {known, unknown}, "u_spec", "u_spat"), "plot");
  }
  std::cout << "plots written to " << (dir.root() / "plots").string() << '\n';
  return 0;
}

// ---- ablate ------------------------------------------------------------------

int cmd_ablate(const Options& o) {
  RunConfig cfg = load_config(o);
  if (o.seed) cfg.seeds = {*o.seed};
  require_file(o.data, "source cube (--data)");
  require_file(o.target, "target cube (--target)");
  std::vector<std::string> variants = o.variants.empty() ? std::vector<std::string>{"default"} : o.variants;
  try {
    for (const auto& v : variants) pipeline::apply_variant(cfg, v);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  report::RunDir dir(resolve_dir(o.out, "output"));
  const HSICube source = load_cube(o.data);
  pipeline::TrackedCube target(load_cube(o.target));
  std::cout << "ablating " << variants.size() << " variant(s) over seeds " << format_seed_list(cfg.seeds) << '\n';
  const auto rows = pipeline::ablate(cfg, source, target, variants, [](const pipeline::AblationRow& r) {
    std::cout << r.variant << " seed " << r.seed << ": OS " << metrics::fixed(r.os) << " Unk " << metrics::fixed(r.unk)
              << " HOS " << metrics::fixed(r.hos) << '\n';
  }, false);
  for (const auto& r : rows)
    if (r.target_reads_before_eval != 0) throw std::runtime_error("target cube was read before evaluation");
  dir.set_config_hash(config_hash(cfg));
  dir.write("config.json", nlohmann::json(cfg).dump(2) + "\n", "config");
  dir.write("ablation.csv", pipeline::ablation_csv(rows), "table");
  const std::string summary = pipeline::ablation_summary(rows);
  dir.write("ablation_summary.csv", summary, "table");
  const auto parsed = report::parse_csv(summary);
  std::vector<std::string> cats;
  report::Series os{"OS", {}}, unk{"Unk", {}}, hos{"HOS", {}};
  for (std::size_t r = 1; r < parsed.size(); ++r) {
    cats.push_back(parsed[r][0]);
    os.values.push_back(to_double(parsed[r][2]));
    unk.values.push_back(to_double(parsed[r][4]));
    hos.values.push_back(to_double(parsed[r][6]));
  }
  dir.write("plots/ablation.svg", report::bar_chart("Ablation (mean over seeds)", cats, {os, unk, hos}, "%"), "plot");
  std::cout << summary;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-set domain-generalisation pipeline for hyperspectral cubes"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto add_seed = [&](CLI::App* c) {
    c->add_option("--seed", seed, "Seed controlling all randomness of this command");
  };
  auto add_overrides = [&](CLI::App* c) {
    c->add_option("--set", o.overrides, "Config override section.key=value (repeatable)");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic source/target scene pair");
  synth->add_option("--config", o.config, "Scene JSON file");
  synth->add_option("--out", o.out, "Output directory (default $OSDG_RUN_DIR)");
  add_seed(synth);

  auto* train = app.add_subcommand("train", "Train a model on a source cube");
  train->add_option("--config", o.config, "Run config JSON file");
  train->add_option("--data", o.data, "Source cube (.hsic)")->required();
  train->add_option("--out", o.out, "Run directory (default $OSDG_RUN_DIR)");
  add_overrides(train);
  add_seed(train);

  auto* calibrate = app.add_subcommand("calibrate", "Select the rejection threshold from synthetic unknowns");
  calibrate->add_option("--run", o.run, "Run directory (default $OSDG_RUN_DIR)");
  calibrate->add_option("--data", o.data, "Source cube (default: the one used for training)");

  auto* eval = app.add_subcommand("eval", "Evaluate a calibrated model on a target cube");
  eval->add_option("--run", o.run, "Run directory (default $OSDG_RUN_DIR)");
  eval->add_option("--target", o.target, "Target cube (.hsic)")->required();

  auto* rep = app.add_subcommand("report", "Render plots from the uncertainty tables of a run");
  rep->add_option("--run", o.run, "Run directory (default $OSDG_RUN_DIR)");

  auto* ablate = app.add_subcommand("ablate", "Train, calibrate and evaluate a list of variants");
  ablate->add_option("--config", o.config, "Run config JSON file");
  ablate->add_option("--data", o.data, "Source cube (.hsic)")->required();
  ablate->add_option("--target", o.target, "Target cube (.hsic)")->required();
  ablate->add_option("--variants", o.variants, "Variants such as ssud:no_uncertainty")->delimiter(',');
  ablate->add_option("--out", o.out, "Output directory (default $OSDG_RUN_DIR)");
  add_overrides(ablate);
  add_seed(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  for (auto* c : {synth, train, ablate})
    if (c->parsed() && c->count("--seed")) o.seed = seed;

  CLI::App* cmd = app.get_subcommands().front();
  try {
    if (cmd == synth) return cmd_synth(o);
    if (cmd == train) return cmd_train(o);
    if (cmd == calibrate) return cmd_calibrate(o);
    if (cmd == eval) return cmd_eval(o);
    if (cmd == rep) return cmd_report(o);
    return cmd_ablate(o);
  } catch (const UsageError& e) {
    std::cerr << "osdg " << cmd->get_name() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "osdg " << cmd->get_name() << ": error: " << e.what() << '\n';
    return 2;
  }
}
