#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "mcs/degrade.hpp"
#include "mcs/gmm.hpp"
#include "mcs/guidance.hpp"
#include "mcs/harness/image_io.hpp"

namespace mcs::harness {

/// Invalid or inconsistent configuration (CLI exit code 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace pt = boost::property_tree;

/// INI document with fail-fast key validation.
class IniDocument {
 public:
  static IniDocument parse(std::istream& in, const std::string& origin) {
    IniDocument doc;
    doc.origin_ = origin;
    try {
      pt::ini_parser::read_ini(in, doc.tree_);
    } catch (const pt::ini_parser_error& e) {
      throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    return doc;
  }

  static IniDocument load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    return parse(in, path.string());
  }

  /// Rejects sections and keys outside the schema.
  void require_schema(const std::map<std::string, std::set<std::string>>& schema) const {
    for (const auto& [section, body] : tree_) {
      auto it = schema.find(section);
      if (it == schema.end()) {
        if (!body.data().empty()) throw ConfigError(origin_ + ": top-level key '" + section + "' is not allowed");
        throw ConfigError(origin_ + ": unknown section [" + section + "]");
      }
      for (const auto& [key, value] : body) {
        if (!it->second.count(key)) throw ConfigError(origin_ + ": unknown key '" + key + "' in [" + section + "]");
      }
    }
  }

  [[nodiscard]] bool has_section(const std::string& section) const { return tree_.find(section) != tree_.not_found(); }

  [[nodiscard]] std::vector<std::string> sections() const {
    std::vector<std::string> out;
    for (const auto& [section, body] : tree_) out.push_back(section);
    return out;
  }

  [[nodiscard]] std::optional<std::string> get(const std::string& section, const std::string& key) const {
    auto sec = tree_.find(section);
    if (sec == tree_.not_found()) return std::nullopt;
    auto it = sec->second.find(key);
    if (it == sec->second.not_found()) return std::nullopt;
    return it->second.data();
  }

  [[nodiscard]] std::string require(const std::string& section, const std::string& key) const {
    auto v = get(section, key);
    if (!v) throw ConfigError(origin_ + ": missing required key '" + key + "' in [" + section + "]");
    return *v;
  }

  template <class T>
  [[nodiscard]] T get_as(const std::string& section, const std::string& key, T fallback) const {
    auto v = get(section, key);
    if (!v) return fallback;
    return convert<T>(*v, section, key);
  }

  template <class T>
  [[nodiscard]] T require_as(const std::string& section, const std::string& key) const {
    return convert<T>(require(section, key), section, key);
  }

  [[nodiscard]] const std::string& origin() const { return origin_; }

 private:
  template <class T>
  T convert(const std::string& text, const std::string& section, const std::string& key) const {
    if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else {
      std::istringstream ss(text);
      T value{};
      ss >> value;
      if (ss.fail() || !(ss >> std::ws).eof()) {
        throw ConfigError(origin_ + ": cannot parse [" + section + "] " + key + " = '" + text + "'");
      }
      return value;
    }
  }

  pt::ptree tree_;
  std::string origin_;
};

inline std::vector<double> parse_number_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError(what + ": bad number '" + item + "'");
    }
  }
  return out;
}

/// "a..b" (inclusive) or "a,b,c".
inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  try {
    const auto dots = text.find("..");
    if (dots != std::string::npos) {
      const std::uint64_t lo = std::stoull(text.substr(0, dots));
      const std::uint64_t hi = std::stoull(text.substr(dots + 2));
      if (hi < lo) throw ConfigError("seed range '" + text + "' is empty");
      for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
    } else {
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (!item.empty()) seeds.push_back(std::stoull(item));
      }
    }
  } catch (const std::logic_error&) {
    throw ConfigError("bad seed list '" + text + "'");
  }
  if (seeds.empty()) throw ConfigError("seed list '" + text + "' is empty");
  return seeds;
}

/// "2/1" or "1/1.5" -> forward and reverse weights.
inline WeightRatio parse_weight_ratio(const std::string& text) {
  const auto slash = text.find('/');
  if (slash == std::string::npos) throw ConfigError("weight ratio '" + text + "' must look like w1/w2");
  try {
    return WeightRatio{std::stod(text.substr(0, slash)), std::stod(text.substr(slash + 1))};
  } catch (const std::logic_error&) {
    throw ConfigError("bad weight ratio '" + text + "'");
  }
}

inline std::string format_weight_ratio(const WeightRatio& w) {
  return io::format_double(w.forward) + "/" + io::format_double(w.reverse);
}

// ---------------------------------------------------------------------------
// Prior definition files
//
//   [prior]
//   height = 16
//   width = 16
//   components = 2
//
//   [component0]
//   label = glasses
//   weight = 0.5
//   variance = 0.0025            ; one value (isotropic) or height*width values
//   mean = file:glasses.pgm      ; a PGM next to the prior file, or inline values
// ---------------------------------------------------------------------------

inline GmmPrior load_prior(const std::filesystem::path& path) {
  const IniDocument doc = IniDocument::load(path);
  const int h = doc.require_as<int>("prior", "height");
  const int w = doc.require_as<int>("prior", "width");
  const int k_count = doc.require_as<int>("prior", "components");
  if (h < 1 || w < 1 || k_count < 1) throw ConfigError(path.string() + ": bad prior dimensions");
  std::map<std::string, std::set<std::string>> schema{{"prior", {"height", "width", "components"}}};
  for (int k = 0; k < k_count; ++k) schema["component" + std::to_string(k)] = {"label", "weight", "variance", "mean"};
  doc.require_schema(schema);

  const Shape shape{h, w};
  std::vector<GmmPrior::Component> comps;
  for (int k = 0; k < k_count; ++k) {
    const std::string sec = "component" + std::to_string(k);
    GmmPrior::Component c;
    c.label = doc.require(sec, "label");
    c.weight = doc.require_as<double>(sec, "weight");
    const std::string mean_text = doc.require(sec, "mean");
    if (mean_text.rfind("file:", 0) == 0) {
      c.mean = io::read_pgm(path.parent_path() / mean_text.substr(5));
      if (c.mean.shape() != shape) throw ConfigError(path.string() + ": mean image for " + sec + " has the wrong size");
    } else {
      auto vals = parse_number_list(mean_text, path.string() + " [" + sec + "] mean");
      if (vals.size() != shape.size()) throw ConfigError(path.string() + ": [" + sec + "] mean needs " + std::to_string(shape.size()) + " values");
      c.mean = ImageGrid(h, w, std::move(vals));
    }
    auto var = parse_number_list(doc.require(sec, "variance"), path.string() + " [" + sec + "] variance");
    if (var.size() == 1) {
      c.variance = ImageGrid(shape, var[0]);
    } else if (var.size() == shape.size()) {
      c.variance = ImageGrid(h, w, std::move(var));
    } else {
      throw ConfigError(path.string() + ": [" + sec + "] variance needs 1 or " + std::to_string(shape.size()) + " values");
    }
    comps.push_back(std::move(c));
  }
  try {
    return GmmPrior(shape, std::move(comps));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Writes means and variances inline at full precision.
inline void save_prior(const std::filesystem::path& path, const GmmPrior& prior) {
  std::ostringstream out;
  out << "[prior]\nheight = " << prior.shape().height << "\nwidth = " << prior.shape().width
      << "\ncomponents = " << prior.size() << "\n";
  auto join = [](const ImageGrid& g) {
    std::string s;
    for (std::size_t i = 0; i < g.size(); ++i) s += (i ? "," : "") + io::format_double(g[i]);
    return s;
  };
  for (std::size_t k = 0; k < prior.size(); ++k) {
    const auto& c = prior[k];
    const bool isotropic = std::all_of(c.variance.values().begin(), c.variance.values().end(),
                                       [&](double v) { return v == c.variance[0]; });
    out << "\n[component" << k << "]\nlabel = " << c.label << "\nweight = " << io::format_double(c.weight)
        << "\nvariance = " << (isotropic ? io::format_double(c.variance[0]) : join(c.variance)) << "\nmean = " << join(c.mean)
        << "\n";
  }
  io::write_text(path, out.str());
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

enum class SamplerKind { mcs, dps, ddnm, unguided };

inline SamplerKind parse_sampler(const std::string& s) {
  if (s == "mcs") return SamplerKind::mcs;
  if (s == "dps") return SamplerKind::dps;
  if (s == "ddnm") return SamplerKind::ddnm;
  if (s == "unguided") return SamplerKind::unguided;
  throw ConfigError("unknown sampler '" + s + "' (expected mcs, dps, ddnm or unguided)");
}

inline std::string to_string(SamplerKind s) {
  switch (s) {
    case SamplerKind::mcs: return "mcs";
    case SamplerKind::dps: return "dps";
    case SamplerKind::ddnm: return "ddnm";
    case SamplerKind::unguided: return "unguided";
  }
  return "?";
}

/// How the low-quality observation is produced.
enum class DegradationModel {
  linear,     // y = A_deg(x_gt) + N(0, noise_std²)
  synthetic,  // blur, downsample, noise, JPEG
  file,       // y read from a PGM
};

struct ExperimentConfig {
  std::filesystem::path prior_file;

  std::string reverse_operator = "avgpool:s=8";

  DegradationModel degradation = DegradationModel::linear;
  std::string degradation_operator = "avgpool:s=8";
  double noise_std = 0.0;
  DegradationSpec synthetic_spec;
  std::filesystem::path lq_file;
  double restore_sigma = 1.0;

  /// "mean:LABEL", "sample:LABEL", "file:PATH" or "none".
  std::string ground_truth = "none";
  std::uint64_t ground_truth_seed = 0;

  int steps = 150;
  std::optional<double> beta_start;
  std::optional<double> beta_end;

  GuidanceConfig guidance;

  SamplerKind sampler = SamplerKind::mcs;
  Condition condition;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output_dir;
  double oracle_noise_var = 1e-4;
  bool write_outputs = true;

  [[nodiscard]] NoiseSchedule schedule() const {
    if (beta_start || beta_end) {
      if (!beta_start || !beta_end) throw ConfigError("[schedule] needs both beta_start and beta_end");
      return make_linear_schedule(steps, *beta_start, *beta_end);
    }
    return make_default_schedule(steps);
  }
};

inline const std::map<std::string, std::set<std::string>>& experiment_schema() {
  static const std::map<std::string, std::set<std::string>> schema{
      {"prior", {"file"}},
      {"measurement", {"reverse_operator"}},
      {"degradation", {"model", "operator", "noise_std", "spec", "scale", "seed", "lq_file", "restore_sigma"}},
      {"ground_truth", {"source", "seed"}},
      {"schedule", {"steps", "beta_start", "beta_end"}},
      {"guidance",
       {"eta_forward", "eta_reverse", "boundary", "weight_ratio", "update_rule", "gradient_target", "t_start_fraction",
        "haar_levels"}},
      {"run", {"sampler", "condition", "seeds", "output", "snapshot_stride", "oracle_noise_var", "write_outputs"}},
  };
  return schema;
}

inline ExperimentConfig parse_experiment(const IniDocument& doc, const std::filesystem::path& base_dir) {
  doc.require_schema(experiment_schema());
  ExperimentConfig cfg;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };

  cfg.prior_file = resolve(doc.require("prior", "file"));
  cfg.reverse_operator = doc.get_as<std::string>("measurement", "reverse_operator", cfg.reverse_operator);

  const std::string model = doc.get_as<std::string>("degradation", "model", "linear");
  if (model == "linear") {
    cfg.degradation = DegradationModel::linear;
  } else if (model == "synthetic") {
    cfg.degradation = DegradationModel::synthetic;
  } else if (model == "file") {
    cfg.degradation = DegradationModel::file;
    cfg.lq_file = resolve(doc.require("degradation", "lq_file"));
  } else {
    throw ConfigError(doc.origin() + ": [degradation] model must be linear, synthetic or file");
  }
  cfg.degradation_operator = doc.get_as<std::string>("degradation", "operator", cfg.degradation_operator);
  cfg.noise_std = doc.get_as<double>("degradation", "noise_std", cfg.noise_std);
  cfg.synthetic_spec.scale = doc.get_as<int>("degradation", "scale", cfg.synthetic_spec.scale);
  cfg.synthetic_spec.seed = doc.get_as<std::uint64_t>("degradation", "seed", cfg.synthetic_spec.seed);
  if (auto spec = doc.get("degradation", "spec")) {
    try {
      cfg.synthetic_spec = parse_degradation_spec(*spec, cfg.synthetic_spec);
    } catch (const std::logic_error& e) {
      throw ConfigError(doc.origin() + ": " + e.what());
    }
  }
  cfg.restore_sigma = doc.get_as<double>("degradation", "restore_sigma", cfg.restore_sigma);
  if (cfg.noise_std < 0.0) throw ConfigError(doc.origin() + ": noise_std must be >= 0");

  cfg.ground_truth = doc.get_as<std::string>("ground_truth", "source", cfg.ground_truth);
  if (cfg.ground_truth.rfind("file:", 0) == 0) cfg.ground_truth = "file:" + resolve(cfg.ground_truth.substr(5)).string();
  cfg.ground_truth_seed = doc.get_as<std::uint64_t>("ground_truth", "seed", cfg.ground_truth_seed);

  cfg.steps = doc.get_as<int>("schedule", "steps", cfg.steps);
  if (doc.get("schedule", "beta_start")) cfg.beta_start = doc.require_as<double>("schedule", "beta_start");
  if (doc.get("schedule", "beta_end")) cfg.beta_end = doc.require_as<double>("schedule", "beta_end");

  auto& g = cfg.guidance;
  g.eta_forward = doc.get_as<double>("guidance", "eta_forward", g.eta_forward);
  g.eta_reverse = doc.get_as<double>("guidance", "eta_reverse", g.eta_reverse);
  g.boundary = doc.get_as<double>("guidance", "boundary", g.boundary);
  if (auto r = doc.get("guidance", "weight_ratio")) g.weight_ratio = parse_weight_ratio(*r);
  const std::string rule = doc.get_as<std::string>("guidance", "update_rule", "alg1");
  if (rule == "alg1") {
    g.update_rule = UpdateRule::alg1;
  } else if (rule == "reanchor") {
    g.update_rule = UpdateRule::reanchor;
  } else {
    throw ConfigError(doc.origin() + ": update_rule must be alg1 or reanchor");
  }
  const std::string target = doc.get_as<std::string>("guidance", "gradient_target", "xhat");
  if (target == "xhat") {
    g.gradient_target = GradientTarget::xhat;
  } else if (target == "chain") {
    g.gradient_target = GradientTarget::chain;
  } else {
    throw ConfigError(doc.origin() + ": gradient_target must be xhat or chain");
  }
  g.t_start_fraction = doc.get_as<double>("guidance", "t_start_fraction", g.t_start_fraction);
  g.haar_levels = doc.get_as<int>("guidance", "haar_levels", g.haar_levels);
  g.snapshot_stride = doc.get_as<int>("run", "snapshot_stride", g.snapshot_stride);
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(doc.origin() + ": " + e.what());
  }

  cfg.sampler = parse_sampler(doc.get_as<std::string>("run", "sampler", "mcs"));
  try {
    cfg.condition = Condition::parse(doc.get_as<std::string>("run", "condition", "null"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(doc.origin() + ": " + e.what());
  }
  cfg.seeds = parse_seed_list(doc.get_as<std::string>("run", "seeds", "0"));
  cfg.output_dir = resolve(doc.get_as<std::string>("run", "output", "out"));
  cfg.oracle_noise_var = doc.get_as<double>("run", "oracle_noise_var", cfg.oracle_noise_var);
  cfg.write_outputs = doc.get_as<std::string>("run", "write_outputs", "true") != "false";
  if (cfg.steps < 1) throw ConfigError(doc.origin() + ": [schedule] steps must be >= 1");
  return cfg;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  return parse_experiment(IniDocument::load(path), path.parent_path());
}

}  // namespace mcs::harness
