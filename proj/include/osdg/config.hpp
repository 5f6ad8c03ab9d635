#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "osdg/calibration.hpp"
#include "osdg/network.hpp"
#include "osdg/ssud.hpp"

namespace osdg {

/// Random spectral shift applied to source spectra to build the second
/// view seen by the domain head. Amplitudes are in reflectance units,
/// noise in standardized units.
struct AugmentSpec {
  double gain_amplitude = 0.10;
  double offset_amplitude = 0.03;
  double distortion_amplitude = 0.04;
  double noise_sigma = 0.1;
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch = 32;
  double lr = 1e-5;
  double weight_decay = 1e-5;
  double clip = 1.0;
  double alpha = 0.5;
  double beta = 0.1;
  double gamma = 0.1;
  double lambda_reg = 0.2;
  std::size_t lambda_reg_warmup = 0;  // epochs of linear ramp from 0 to lambda_reg; 0 keeps it constant
  double grl_lambda = 1.0;
  double split_ratio = 0.8;
  AugmentSpec augment;
};

struct RunConfig {
  ModelConfig model;
  ssud::Config ssud;
  calibration::Spec calib;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  LossWeights loss_weights() const {
    return {train.alpha, train.beta, train.gamma, train.lambda_reg, train.grl_lambda};
  }

  void validate() const {
    auto on_grid = [](double v) {
      for (double g : {0.1, 0.3, 0.5, 0.7, 0.9})
        if (std::abs(v - g) < 1e-9) return true;
      return false;
    };
    if (!on_grid(train.alpha) || !on_grid(train.beta) || !on_grid(train.gamma))
      throw std::invalid_argument("config: train.alpha/beta/gamma must be one of {0.1, 0.3, 0.5, 0.7, 0.9}");
    if (train.epochs == 0 || train.batch == 0) throw std::invalid_argument("config: epochs and batch must be > 0");
    for (double v : {train.lr, train.clip, train.grl_lambda})
      if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("config: lr, clip and grl_lambda must be > 0");
    if (!(train.weight_decay >= 0.0) || !(train.lambda_reg >= 0.0))
      throw std::invalid_argument("config: weight_decay and lambda_reg must be >= 0");
    if (!(train.split_ratio > 0.0 && train.split_ratio < 1.0))
      throw std::invalid_argument("config: train.split_ratio must be in (0,1)");
    if (seeds.empty()) throw std::invalid_argument("config: seeds must be non-empty");
    model.sifd.validate();
    model.dcrn.validate();
    ssud.validate();
    calib.validate();
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  const auto& s = c.model.sifd;
  const auto& d = c.model.dcrn;
  const auto& t = c.train;
  j = {{"sifd",
        {{"variant", sifd::to_string(s.variant)},
         {"domain_mode", sifd::to_string(s.domain_mode)},
         {"attention", s.attention},
         {"domain_reg", s.domain_reg},
         {"recon", s.recon},
         {"channels1", s.channels1},
         {"channels2", s.channels2},
         {"feature_dim", s.feature_dim}}},
       {"dcrn",
        {{"mode", dcrn::to_string(d.mode)},
         {"fusion", dcrn::to_string(d.fusion)},
         {"dim", d.dim},
         {"spectral_blocks", d.spectral_blocks},
         {"spatial_blocks", d.spatial_blocks},
         {"spatial_width", d.spatial_width}}},
       {"edl",
        {{"kind", edl::to_string(c.model.edl_kind)},
         {"lambda_reg", t.lambda_reg},
         {"lambda_reg_warmup", t.lambda_reg_warmup}}},
       {"classifier", {{"hidden", c.model.cls_hidden}}},
       {"ssud",
        {{"variant", ssud::to_string(c.ssud.variant)},
         {"tau_decouple", c.ssud.tau_decouple},
         {"kappa_down", c.ssud.kappa_down},
         {"w_unc", c.ssud.w_unc},
         {"w_conf", c.ssud.w_conf}}},
       {"calib", c.calib},
       {"train",
        {{"epochs", t.epochs},
         {"batch", t.batch},
         {"lr", t.lr},
         {"weight_decay", t.weight_decay},
         {"clip", t.clip},
         {"alpha", t.alpha},
         {"beta", t.beta},
         {"gamma", t.gamma},
         {"grl_lambda", t.grl_lambda},
         {"split_ratio", t.split_ratio},
         {"augment",
          {{"gain_amplitude", t.augment.gain_amplitude},
           {"offset_amplitude", t.augment.offset_amplitude},
           {"distortion_amplitude", t.augment.distortion_amplitude},
           {"noise_sigma", t.augment.noise_sigma}}}}},
       {"seeds", c.seeds}};
}

namespace detail {

// Every key present in `given` must also exist in `known` (the fully
// populated serialisation), otherwise it is a typo or an unsupported key.
inline void reject_unknown_keys(const nlohmann::json& given, const nlohmann::json& known, const std::string& prefix) {
  if (!given.is_object()) return;
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!known.is_object() || !known.contains(it.key())) throw std::invalid_argument("config: unknown key '" + key + "'");
    reject_unknown_keys(it.value(), known.at(it.key()), key);
  }
}

}  // namespace detail

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  detail::reject_unknown_keys(j, nlohmann::json(RunConfig{}), "");
  auto sect = [&](const char* name) { return j.contains(name) ? j.at(name) : nlohmann::json::object(); };
  const auto s = sect("sifd"), d = sect("dcrn"), e = sect("edl"), u = sect("ssud"), t = sect("train"),
             cl = sect("classifier");
  auto& sc = c.model.sifd;
  if (s.contains("variant")) sc.variant = sifd::parse_transform(s.at("variant").get<std::string>());
  if (s.contains("domain_mode")) sc.domain_mode = sifd::parse_domain_mode(s.at("domain_mode").get<std::string>());
  sc.attention = s.value("attention", sc.attention);
  sc.domain_reg = s.value("domain_reg", sc.domain_reg);
  sc.recon = s.value("recon", sc.recon);
  sc.channels1 = s.value("channels1", sc.channels1);
  sc.channels2 = s.value("channels2", sc.channels2);
  sc.feature_dim = s.value("feature_dim", sc.feature_dim);
  auto& dc = c.model.dcrn;
  if (d.contains("mode")) dc.mode = dcrn::parse_mode(d.at("mode").get<std::string>());
  if (d.contains("fusion")) dc.fusion = dcrn::parse_fusion(d.at("fusion").get<std::string>());
  dc.dim = d.value("dim", dc.dim);
  dc.spectral_blocks = d.value("spectral_blocks", dc.spectral_blocks);
  dc.spatial_blocks = d.value("spatial_blocks", dc.spatial_blocks);
  dc.spatial_width = d.value("spatial_width", dc.spatial_width);
  if (e.contains("kind")) c.model.edl_kind = edl::parse_kind(e.at("kind").get<std::string>());
  c.train.lambda_reg = e.value("lambda_reg", c.train.lambda_reg);
  c.train.lambda_reg_warmup = e.value("lambda_reg_warmup", c.train.lambda_reg_warmup);
  c.model.cls_hidden = cl.value("hidden", c.model.cls_hidden);
  if (u.contains("variant")) c.ssud.variant = ssud::parse_variant(u.at("variant").get<std::string>());
  c.ssud.tau_decouple = u.value("tau_decouple", c.ssud.tau_decouple);
  c.ssud.kappa_down = u.value("kappa_down", c.ssud.kappa_down);
  c.ssud.w_unc = u.value("w_unc", c.ssud.w_unc);
  c.ssud.w_conf = u.value("w_conf", c.ssud.w_conf);
  if (j.contains("calib")) j.at("calib").get_to(c.calib);
  auto& tc = c.train;
  tc.epochs = t.value("epochs", tc.epochs);
  tc.batch = t.value("batch", tc.batch);
  tc.lr = t.value("lr", tc.lr);
  tc.weight_decay = t.value("weight_decay", tc.weight_decay);
  tc.clip = t.value("clip", tc.clip);
  tc.alpha = t.value("alpha", tc.alpha);
  tc.beta = t.value("beta", tc.beta);
  tc.gamma = t.value("gamma", tc.gamma);
  tc.grl_lambda = t.value("grl_lambda", tc.grl_lambda);
  tc.split_ratio = t.value("split_ratio", tc.split_ratio);
  if (t.contains("augment")) {
    const auto& a = t.at("augment");
    tc.augment.gain_amplitude = a.value("gain_amplitude", tc.augment.gain_amplitude);
    tc.augment.offset_amplitude = a.value("offset_amplitude", tc.augment.offset_amplitude);
    tc.augment.distortion_amplitude = a.value("distortion_amplitude", tc.augment.distortion_amplitude);
    tc.augment.noise_sigma = a.value("noise_sigma", tc.augment.noise_sigma);
  }
  c.seeds = j.value("seeds", c.seeds);
}

/// Parses and validates; every failure surfaces as std::invalid_argument.
inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig c;
  try {
    c = j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config file " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_json_file(path)); }

/// Applies "section.key=value" assignments, then validates once. Values
/// are parsed as JSON when possible, otherwise taken as strings.
inline RunConfig with_overrides(const RunConfig& base, const std::vector<std::string>& assignments) {
  nlohmann::json j = base;
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    const auto dot = a.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw std::invalid_argument("override '" + a + "' must look like section.key=value");
    const std::string section = a.substr(0, dot), key = a.substr(dot + 1, eq - dot - 1);
    const std::string raw = a.substr(eq + 1);
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
      value = raw;
    }
    if (!j.contains(section) || !j.at(section).is_object() || !j.at(section).contains(key))
      throw std::invalid_argument("override: unknown key '" + section + "." + key + "'");
    j[section][key] = value;
  }
  return parse_run_config(j);
}

/// 64-bit FNV-1a, used for config hashes and artifact checksums.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << v;
  return s.str();
}

inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a(nlohmann::json(c).dump())); }

}  // namespace osdg
