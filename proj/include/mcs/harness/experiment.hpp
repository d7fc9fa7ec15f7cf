#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mcs/degrade.hpp"
#include "mcs/gmm.hpp"
#include "mcs/guidance.hpp"
#include "mcs/harness/config.hpp"
#include "mcs/harness/image_io.hpp"
#include "mcs/harness/stats.hpp"
#include "mcs/linops.hpp"

namespace mcs::harness {

/// Dense posterior oracles are only formed up to this many pixels.
inline constexpr std::size_t kOracleMaxDims = 1024;

/// A per-seed failure, tagged with the seed. `numerical` marks a NaN abort.
class SeedFailure : public std::runtime_error {
 public:
  SeedFailure(std::uint64_t seed, bool numerical, const std::string& what)
      : std::runtime_error("seed " + std::to_string(seed) + ": " + what), seed_(seed), numerical_(numerical) {}
  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] bool numerical() const { return numerical_; }

 private:
  std::uint64_t seed_;
  bool numerical_;
};

/// Everything a sampler needs, derived once per experiment.
struct Problem {
  GmmPrior prior;
  NoiseSchedule schedule;
  LinearOperator reverse_op;      // A in the reverse measurement
  LinearOperator observation_op;  // maps x to y for DPS / DDNM and the oracle
  ImageGrid y;
  ImageGrid y0;
  std::optional<ImageGrid> ground_truth;
  std::optional<std::string> ground_truth_label;
  std::optional<FullGaussianMixture> oracle;
};

inline Problem prepare_problem(const ExperimentConfig& cfg) {
  GmmPrior prior = load_prior(cfg.prior_file);
  const Shape shape = prior.shape();
  try {
    validate_condition(prior, cfg.condition);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  std::optional<ImageGrid> gt;
  std::optional<std::string> gt_label;
  const std::string& src = cfg.ground_truth;
  if (src.rfind("mean:", 0) == 0 || src.rfind("sample:", 0) == 0) {
    const std::string label = src.substr(src.find(':') + 1);
    if (!prior.has_label(label)) throw ConfigError("ground truth label '" + label + "' is not in the prior");
    const GmmPrior restricted = condition_restrict(prior, Condition::of({label}));
    if (src[0] == 'm') {
      gt = restricted[0].mean;
    } else {
      CounterRng rng(cfg.ground_truth_seed);
      gt = gmm_sample(restricted, rng).x;
    }
    gt_label = label;
  } else if (src.rfind("file:", 0) == 0) {
    gt = io::read_pgm(src.substr(5));
    if (gt->shape() != shape) throw ConfigError("ground truth image does not match the prior's " + to_string(shape));
    gt_label = component_assign(prior, *gt);
  } else if (src != "none") {
    throw ConfigError("ground truth source '" + src + "' must be mean:LABEL, sample:LABEL, file:PATH or none");
  }

  auto parse_op = [&](const std::string& spec) {
    try {
      return parse_operator(spec, shape);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  };
  LinearOperator reverse_op = parse_op(cfg.reverse_operator);

  std::optional<LinearOperator> obs_op;
  std::optional<LinearOperator> restore_op;
  ImageGrid y;
  double obs_noise_var = 0.0;
  switch (cfg.degradation) {
    case DegradationModel::linear: {
      if (!gt) throw ConfigError("the linear degradation model needs a ground truth");
      obs_op = parse_op(cfg.degradation_operator);
      restore_op = obs_op;
      y = obs_op->apply(*gt);
      if (cfg.noise_std > 0.0) {
        CounterRng rng(cfg.synthetic_spec.seed);
        for (double& v : y.values()) v += cfg.noise_std * rng.gaussian();
      }
      obs_noise_var = cfg.noise_std * cfg.noise_std;
      break;
    }
    case DegradationModel::synthetic: {
      if (!gt) throw ConfigError("the synthetic degradation model needs a ground truth");
      const DegradationSpec& spec = cfg.synthetic_spec;
      try {
        y = synthesize_lq(*gt, spec);
        obs_op = degradation_operator(shape, spec.sigma, spec.scale);
        restore_op = avgpool_op(shape.height, shape.width, spec.scale);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      obs_noise_var = (spec.delta / 255.0) * (spec.delta / 255.0);
      break;
    }
    case DegradationModel::file: {
      y = io::read_pgm(cfg.lq_file);
      obs_op = parse_op(cfg.degradation_operator);
      restore_op = obs_op;
      if (y.shape() != obs_op->out_shape()) {
        throw ConfigError("observation " + cfg.lq_file.string() + " is " + to_string(y.shape()) + ", operator output is " +
                          to_string(obs_op->out_shape()));
      }
      break;
    }
  }

  ImageGrid y0 = coarse_restore(y, *restore_op, cfg.restore_sigma);

  std::optional<FullGaussianMixture> oracle;
  if (shape.size() <= kOracleMaxDims) {
    try {
      oracle = gmm_exact_posterior(condition_restrict(prior, cfg.condition), *obs_op, y,
                                   obs_noise_var + cfg.oracle_noise_var);
    } catch (const OperatorTooLarge&) {
      oracle.reset();
    }
  }

  return Problem{std::move(prior), cfg.schedule(), std::move(reverse_op), std::move(*obs_op), std::move(y),
                 std::move(y0), std::move(gt), std::move(gt_label), std::move(oracle)};
}

struct SeedRow {
  std::uint64_t seed = 0;
  double residual = 0.0;
  std::optional<double> oracle_log_density;
  std::string label;
  std::optional<bool> matched;  // absent for unconditional runs
  std::optional<double> psnr;
};

struct RunReport {
  std::string sampler;
  std::string condition;
  std::vector<SeedRow> rows;
  std::optional<double> response_rate;
  double mean_residual = 0.0;
  std::optional<double> mean_oracle_log_density;
  std::optional<double> mean_psnr;
  std::map<std::string, int> label_counts;
};

/// Recomputes every aggregate from the per-seed rows.
inline void aggregate(RunReport& report) {
  const double n = static_cast<double>(report.rows.size());
  report.label_counts.clear();
  double residual = 0.0;
  double density = 0.0;
  double psnr = 0.0;
  int matched = 0;
  bool all_density = !report.rows.empty();
  bool all_psnr = !report.rows.empty();
  bool conditional = !report.rows.empty();
  for (const auto& r : report.rows) {
    ++report.label_counts[r.label];
    residual += r.residual;
    if (r.oracle_log_density) density += *r.oracle_log_density; else all_density = false;
    if (r.psnr) psnr += *r.psnr; else all_psnr = false;
    if (r.matched) matched += *r.matched ? 1 : 0; else conditional = false;
  }
  report.mean_residual = n > 0 ? residual / n : 0.0;
  report.mean_oracle_log_density = all_density ? std::optional(density / n) : std::nullopt;
  report.mean_psnr = all_psnr ? std::optional(psnr / n) : std::nullopt;
  report.response_rate = conditional ? std::optional(matched / n) : std::nullopt;
}

inline double psnr(const ImageGrid& x, const ImageGrid& ref) {
  const double mse = squared_norm(clamp01(x) - ref) / static_cast<double>(x.size());
  return mse > 0.0 ? 10.0 * std::log10(1.0 / mse) : std::numeric_limits<double>::infinity();
}

/// One sampling chain under the configured sampler.
inline SampleResult run_sampler(const ExperimentConfig& cfg, const Problem& p, const GmmDenoiser& den, std::uint64_t seed) {
  CounterRng rng(seed);
  const GuidanceConfig& g = cfg.guidance;
  switch (cfg.sampler) {
    case SamplerKind::mcs:
      return mcs_sample(den, p.y0, p.reverse_op, cfg.condition, g, p.schedule, rng);
    case SamplerKind::dps:
      return dps_sample(den, p.y, p.observation_op, g, p.schedule, rng, cfg.condition);
    case SamplerKind::ddnm:
      return ddnm_sample(den, p.y, p.observation_op, p.schedule, rng, cfg.condition, g.snapshot_stride);
    case SamplerKind::unguided: {
      const int t_start = start_step(g.t_start_fraction, p.schedule.steps());
      ImageGrid x = noise_blend_init(p.y0, t_start, p.schedule, rng);
      return unguided_sample(den, std::move(x), t_start, cfg.condition, p.schedule, rng, g.snapshot_stride);
    }
  }
  throw ConfigError("unknown sampler");
}

inline SeedRow score(const Problem& p, const ImageGrid& x, std::uint64_t seed, const Condition& cond) {
  SeedRow row;
  row.seed = seed;
  const ImageGrid ax = p.reverse_op.apply(x);
  row.residual = norm(ax - p.reverse_op.apply(p.ground_truth ? *p.ground_truth : p.y0));
  if (p.oracle) row.oracle_log_density = p.oracle->log_density(x);
  row.label = component_assign(p.prior, x);
  if (!cond.is_null()) row.matched = cond.admits(row.label);
  if (p.ground_truth) row.psnr = psnr(x, *p.ground_truth);
  return row;
}

struct ExperimentResult {
  RunReport report;
  std::vector<SampleResult> samples;  // ordered like cfg.seeds
};

/// Runs every seed (concurrently when hardware allows) and merges results in
/// seed order.
inline ExperimentResult run_seeds(const ExperimentConfig& cfg, const Problem& p) {
  const GmmDenoiser den(p.prior, p.schedule);
  const std::size_t n = cfg.seeds.size();
  std::vector<std::optional<SampleResult>> results(n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t i) {
    try {
      results[i] = run_sampler(cfg, p, den, cfg.seeds[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) work(i);
      });
    }
  }
  ExperimentResult out;
  out.report.sampler = to_string(cfg.sampler);
  out.report.condition = cfg.condition.to_string();
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) {
      try {
        std::rethrow_exception(errors[i]);
      } catch (const NumericalAbort& e) {
        throw SeedFailure(cfg.seeds[i], true, e.what());
      } catch (const std::exception& e) {
        throw SeedFailure(cfg.seeds[i], false, e.what());
      }
    }
    out.report.rows.push_back(score(p, results[i]->x0, cfg.seeds[i], cfg.condition));
    out.samples.push_back(std::move(*results[i]));
  }
  aggregate(out.report);
  return out;
}

inline nlohmann::ordered_json report_to_json(const RunReport& r, const ExperimentConfig& cfg) {
  using nlohmann::ordered_json;
  auto opt = [](const auto& v) -> ordered_json { return v ? ordered_json(*v) : ordered_json(nullptr); };
  ordered_json j;
  j["sampler"] = r.sampler;
  j["condition"] = r.condition;
  const auto& g = cfg.guidance;
  j["guidance"] = {{"eta_forward", g.eta_forward},
                   {"eta_reverse", g.eta_reverse},
                   {"boundary", g.boundary},
                   {"weight_ratio", format_weight_ratio(g.weight_ratio)},
                   {"update_rule", g.update_rule == UpdateRule::alg1 ? "alg1" : "reanchor"},
                   {"gradient_target", g.gradient_target == GradientTarget::xhat ? "xhat" : "chain"},
                   {"t_start_fraction", g.t_start_fraction},
                   {"haar_levels", g.haar_levels}};
  j["reverse_operator"] = cfg.reverse_operator;
  j["steps"] = cfg.steps;
  ordered_json rows = ordered_json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"seed", row.seed},
                    {"residual", row.residual},
                    {"oracle_log_density", opt(row.oracle_log_density)},
                    {"label", row.label},
                    {"matched", opt(row.matched)},
                    {"psnr", opt(row.psnr)}});
  }
  j["seeds"] = std::move(rows);
  j["aggregate"] = {{"runs", r.rows.size()},
                    {"response_rate", opt(r.response_rate)},
                    {"mean_residual", r.mean_residual},
                    {"mean_oracle_log_density", opt(r.mean_oracle_log_density)},
                    {"mean_psnr", opt(r.mean_psnr)},
                    {"label_counts", r.label_counts}};
  return j;
}

inline void write_outputs(const ExperimentConfig& cfg, const Problem& p, const ExperimentResult& res) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir / "samples");
  fs::create_directories(cfg.output_dir / "trajectories");
  if (p.ground_truth) io::write_pgm(cfg.output_dir / "gt.pgm", *p.ground_truth);
  io::write_pgm(cfg.output_dir / "y.pgm", p.y);
  io::write_pgm(cfg.output_dir / "y0.pgm", p.y0);
  for (std::size_t i = 0; i < res.samples.size(); ++i) {
    const std::string stem = "seed_" + std::to_string(cfg.seeds[i]);
    io::write_pgm(cfg.output_dir / "samples" / (stem + ".pgm"), res.samples[i].x0);
    io::write_text(cfg.output_dir / "trajectories" / (stem + ".csv"), trajectory_to_csv(res.samples[i].trajectory));
  }
  io::write_text(cfg.output_dir / "report.json", report_to_json(res.report, cfg).dump(2) + "\n");
}

inline RunReport run_experiment(const ExperimentConfig& cfg) {
  const Problem p = prepare_problem(cfg);
  ExperimentResult res = run_seeds(cfg, p);
  if (cfg.write_outputs) write_outputs(cfg, p, res);
  return std::move(res.report);
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

enum class SweepAxis { boundary, ratio };

inline SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "boundary") return SweepAxis::boundary;
  if (s == "ratio") return SweepAxis::ratio;
  throw ConfigError("sweep axis must be boundary or ratio, got '" + s + "'");
}

struct SweepRow {
  std::string setting;
  RunReport report;
};

/// Parses "0.9,0.6,0.3" (boundary) or "2/1,1/1,1/2" (ratio).
inline std::vector<std::string> split_grid(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw ConfigError("sweep grid is empty");
  return out;
}

/// One experiment per grid point with shared seeds. Per-point outputs go to
/// <output>/<axis>_<index> when the base config writes outputs.
inline std::vector<SweepRow> sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<std::string>& grid) {
  if (grid.empty()) throw ConfigError("sweep grid is empty");
  const Problem p = prepare_problem(base);
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    ExperimentConfig cfg = base;
    if (axis == SweepAxis::boundary) {
      try {
        cfg.guidance.boundary = std::stod(grid[i]);
      } catch (const std::logic_error&) {
        throw ConfigError("bad boundary value '" + grid[i] + "'");
      }
    } else {
      cfg.guidance.weight_ratio = parse_weight_ratio(grid[i]);
    }
    try {
      cfg.guidance.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("grid value '" + grid[i] + "': " + e.what());
    }
    cfg.output_dir = base.output_dir / ((axis == SweepAxis::boundary ? "boundary_" : "ratio_") + std::to_string(i));
    ExperimentResult res = run_seeds(cfg, p);
    if (cfg.write_outputs) write_outputs(cfg, p, res);
    rows.push_back({grid[i], std::move(res.report)});
  }
  return rows;
}

inline std::vector<std::string> sweep_header(SweepAxis axis) {
  return {axis == SweepAxis::boundary ? "boundary" : "weight_ratio", "response_rate", "mean_residual",
          "mean_oracle_log_density", "mean_psnr"};
}

inline std::vector<std::vector<std::string>> sweep_table(const std::vector<SweepRow>& rows) {
  auto opt = [](const std::optional<double>& v) { return v ? io::format_double(*v) : std::string(); };
  std::vector<std::vector<std::string>> out;
  for (const auto& r : rows) {
    out.push_back({r.setting, opt(r.report.response_rate), io::format_double(r.report.mean_residual),
                   opt(r.report.mean_oracle_log_density), opt(r.report.mean_psnr)});
  }
  return out;
}

}  // namespace mcs::harness
