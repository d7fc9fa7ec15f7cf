// Command-line front end: degrade, sample, stats, sweep, toy-prior.
//
// Exit codes: 0 success, 1 configuration or input error, 2 numerical abort.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mcs/harness/config.hpp"
#include "mcs/harness/experiment.hpp"
#include "mcs/harness/image_io.hpp"
#include "mcs/harness/stats.hpp"
#include "mcs/mcs.hpp"

namespace fs = std::filesystem;
using namespace mcs;
using namespace mcs::harness;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;

std::vector<fs::path> list_pgms(const fs::path& in) {
  if (fs::is_regular_file(in)) return {in};
  if (!fs::is_directory(in)) throw ConfigError("input '" + in.string() + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(in)) {
    if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .pgm files in '" + in.string() + "'");
  return files;
}

int cmd_degrade(const fs::path& in, const fs::path& out, int scale, std::uint64_t seed, const std::string& spec_override) {
  const auto files = list_pgms(in);
  fs::create_directories(out);
  std::ostringstream manifest;
  manifest << "filename\tsigma\ts\tdelta\tq\tseed\n";
  for (std::size_t i = 0; i < files.size(); ++i) {
    const ImageGrid gt = io::read_pgm(files[i]);
    CounterRng rng(derive_seed(seed, i));
    DegradationSpec spec;
    try {
      spec = sample_spec(rng, scale);
      if (!spec_override.empty()) spec = parse_degradation_spec(spec_override, spec);
    } catch (const std::logic_error& e) {
      throw ConfigError(e.what());
    }
    ImageGrid lq;
    try {
      lq = synthesize_lq(gt, spec);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(files[i].string() + ": " + e.what());
    }
    const std::string name = files[i].filename().string();
    io::write_pgm(out / name, lq);
    manifest << name << '\t' << io::format_double(spec.sigma) << '\t' << spec.scale << '\t'
             << io::format_double(spec.delta) << '\t' << spec.quality << '\t' << spec.seed << '\n';
  }
  io::write_text(out / "manifest.tsv", manifest.str());
  std::cout << "degraded " << files.size() << " image(s) into " << out.string() << "\n";
  return 0;
}

void print_report(const RunReport& r) {
  std::cout << "sampler " << r.sampler << ", condition " << r.condition << ", " << r.rows.size() << " seed(s)\n";
  for (const auto& row : r.rows) {
    std::cout << "  seed " << row.seed << ": label " << row.label << ", residual " << io::format_double(row.residual);
    if (row.matched) std::cout << ", matched " << (*row.matched ? "yes" : "no");
    std::cout << "\n";
  }
  if (r.response_rate) std::cout << "response rate " << io::format_double(*r.response_rate) << "\n";
  std::cout << "mean residual " << io::format_double(r.mean_residual) << "\n";
}

struct SampleOverrides {
  std::string sampler;
  std::string condition;
  std::string seeds;
  std::string output;
};

ExperimentConfig load_with_overrides(const fs::path& config, const SampleOverrides& o) {
  ExperimentConfig cfg = load_experiment(config);
  if (!o.sampler.empty()) cfg.sampler = parse_sampler(o.sampler);
  if (!o.condition.empty()) {
    try {
      cfg.condition = Condition::parse(o.condition);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (!o.seeds.empty()) cfg.seeds = parse_seed_list(o.seeds);
  if (!o.output.empty()) cfg.output_dir = o.output;
  return cfg;
}

int cmd_sample(const fs::path& config, const SampleOverrides& o) {
  const ExperimentConfig cfg = load_with_overrides(config, o);
  const RunReport report = run_experiment(cfg);
  print_report(report);
  if (cfg.write_outputs) std::cout << "outputs in " << cfg.output_dir.string() << "\n";
  return 0;
}

int cmd_stats(const fs::path& traj_path, const fs::path& out) {
  const Trajectory traj = load_trajectory(traj_path);
  std::vector<StepStats> stats;
  try {
    stats = trajectory_stats(traj);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(traj_path.string() + ": " + e.what());
  }
  if (out.empty()) {
    const auto header = stats_header();
    for (std::size_t i = 0; i < header.size(); ++i) std::cout << (i ? "," : "") << header[i];
    std::cout << "\n";
    for (const auto& row : stats_rows(stats)) {
      for (std::size_t i = 0; i < row.size(); ++i) std::cout << (i ? "," : "") << row[i];
      std::cout << "\n";
    }
  } else {
    io::write_csv(out, stats_header(), stats_rows(stats));
  }
  return 0;
}

int cmd_sweep(const fs::path& config, const SampleOverrides& o, const std::string& axis_name, const std::string& grid_text,
              const fs::path& table) {
  const ExperimentConfig cfg = load_with_overrides(config, o);
  const SweepAxis axis = parse_sweep_axis(axis_name);
  const auto rows = sweep(cfg, axis, split_grid(grid_text));
  const fs::path out = table.empty() ? cfg.output_dir / ("sweep_" + axis_name + ".csv") : table;
  fs::create_directories(out.parent_path().empty() ? fs::path(".") : out.parent_path());
  io::write_csv(out, sweep_header(axis), sweep_table(rows));
  for (const auto& r : rows) {
    std::cout << axis_name << "=" << r.setting << ": response rate "
              << (r.report.response_rate ? io::format_double(*r.report.response_rate) : "n/a") << ", mean residual "
              << io::format_double(r.report.mean_residual) << "\n";
  }
  std::cout << "table written to " << out.string() << "\n";
  return 0;
}

/// Writes the two-component collision prior, its mean images and a starter config.
int cmd_toy_prior(const fs::path& out) {
  fs::create_directories(out);
  const CollisionPriorOptions opt;
  const GmmPrior prior = make_collision_prior(opt);
  save_prior(out / "prior.ini", prior);
  fs::create_directories(out / "images");
  for (const auto& c : prior.components()) io::write_pgm(out / "images" / (c.label + ".pgm"), c.mean);
  io::write_text(out / "experiment.ini",
                 "[prior]\n"
                 "file = prior.ini\n"
                 "\n"
                 "[measurement]\n"
                 "reverse_operator = avgpool:s=8\n"
                 "\n"
                 "[degradation]\n"
                 "model = linear\n"
                 "operator = avgpool:s=8\n"
                 "noise_std = 0\n"
                 "\n"
                 "[ground_truth]\n"
                 "source = mean:" + opt.label_a + "\n"
                 "\n"
                 "[guidance]\n"
                 "eta_forward = 1\n"
                 "eta_reverse = 1\n"
                 "boundary = 0.6\n"
                 "weight_ratio = 1/1\n"
                 "\n"
                 "[run]\n"
                 "sampler = mcs\n"
                 "condition = " + opt.label_b + "\n"
                 "seeds = 0..19\n"
                 "output = run\n");
  std::cout << "wrote prior.ini, experiment.ini and images/ to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Measurement-constrained diffusion sampling toolkit"};
  app.require_subcommand(1);

  auto* degrade = app.add_subcommand("degrade", "Synthesize low-quality images from PGM ground truths");
  fs::path d_in, d_out;
  int d_scale = 8;
  std::uint64_t d_seed = 0;
  std::string d_spec;
  degrade->add_option("--in", d_in, "Input PGM file or directory")->required();
  degrade->add_option("--out", d_out, "Output directory")->required();
  degrade->add_option("--scale", d_scale, "Downsample factor")->check(CLI::IsMember({4, 8, 16}));
  degrade->add_option("--seed", d_seed, "Base seed; image i uses seed xor i");
  degrade->add_option("--spec", d_spec, "Override, e.g. \"sigma=1,delta=0,q=90\"");

  SampleOverrides o;
  fs::path config;
  auto* sample = app.add_subcommand("sample", "Run a sampling experiment");
  sample->add_option("--config", config, "Experiment config (INI)")->required();
  sample->add_option("--sampler", o.sampler, "mcs | dps | ddnm | unguided");
  sample->add_option("--condition", o.condition, "Comma-separated labels or null");
  sample->add_option("--seeds", o.seeds, "Seed list, e.g. 0..49 or 1,5,9");
  sample->add_option("--output", o.output, "Output directory override");

  fs::path traj, stats_out;
  auto* stats = app.add_subcommand("stats", "Convergence statistics of a trajectory CSV");
  stats->add_option("--traj", traj, "Trajectory CSV")->required();
  stats->add_option("--out", stats_out, "Write the table here instead of stdout");

  std::string axis, grid;
  fs::path table;
  auto* sw = app.add_subcommand("sweep", "Ablation sweep over the selection boundary or weight ratio");
  sw->add_option("--config", config, "Experiment config (INI)")->required();
  sw->add_option("--axis", axis, "boundary | ratio")->required();
  sw->add_option("--grid", grid, "Comma-separated values, e.g. 0.9,0.6,0.3 or 2/1,1/1,1/2")->required();
  sw->add_option("--sampler", o.sampler, "mcs | dps | ddnm | unguided");
  sw->add_option("--condition", o.condition, "Comma-separated labels or null");
  sw->add_option("--seeds", o.seeds, "Seed list");
  sw->add_option("--output", o.output, "Output directory override");
  sw->add_option("--table", table, "Table CSV path (default <output>/sweep_<axis>.csv)");

  fs::path toy_out;
  auto* toy = app.add_subcommand("toy-prior", "Write the two-component collision prior and a starter config");
  toy->add_option("--out", toy_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*degrade) return cmd_degrade(d_in, d_out, d_scale, d_seed, d_spec);
    if (*sample) return cmd_sample(config, o);
    if (*stats) return cmd_stats(traj, stats_out);
    if (*sw) return cmd_sweep(config, o, axis, grid, table);
    if (*toy) return cmd_toy_prior(toy_out);
  } catch (const SeedFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.numerical() ? kExitNumerical : kExitConfig;
  } catch (const NumericalAbort& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
