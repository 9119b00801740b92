// Command-line front end: Monte Carlo runs, single-trial debugging dumps and
// percentile report tables.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "radiomap/radiomap.hpp"

namespace {

using namespace radiomap;

struct CommonArgs {
  std::string preset;
  std::string config_path;
  std::optional<int> trials;
  std::optional<std::uint64_t> seed;
  std::optional<double> grid_spacing;
  std::vector<std::string> methods;
  bool no_penalty = false;
  std::string out_dir;
  int workers = 0;
};

void add_common_options(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--preset", args.preset, "Preset name: exp1, exp2, exp3 or exp4");
  cmd->add_option("--config", args.config_path, "Config file (flat key=value, overrides preset)");
  cmd->add_option("--trials", args.trials, "Number of Monte Carlo trials");
  cmd->add_option("--seed", args.seed, "Base seed; all randomness derives from it");
  cmd->add_option("--grid-spacing", args.grid_spacing, "Evaluation grid spacing [m]");
  cmd->add_option("--method", args.methods,
                  "Restrict to these methods (repeatable or comma-separated)");
  cmd->add_flag("--no-penalty", args.no_penalty,
                "Drop the bias prior from the calibration objective");
  cmd->add_option("--out", args.out_dir, "Output directory");
  cmd->add_option("--workers", args.workers, "Worker threads (default: all cores)");
}

ExperimentConfig build_config(const CommonArgs& args) {
  if (args.preset.empty() && args.config_path.empty()) {
    throw std::invalid_argument("either --preset or --config is required");
  }
  ExperimentConfig config = args.preset.empty() ? ExperimentConfig{} : preset_config(args.preset);
  if (!args.config_path.empty()) {
    config = config_from_kv(KeyValues::parse_file(args.config_path), config);
  }
  if (args.trials) config.trials = *args.trials;
  if (args.seed) config.base_seed = *args.seed;
  if (args.grid_spacing) config.grid_spacing = *args.grid_spacing;
  if (args.no_penalty) config.calib_penalty = false;
  if (!args.methods.empty()) {
    std::vector<Method> methods;
    for (const std::string& entry : args.methods) {
      std::stringstream ss(entry);
      std::string name;
      while (std::getline(ss, name, ',')) {
        if (!name.empty()) methods.push_back(parse_method(name));
      }
    }
    if (methods.empty()) throw std::invalid_argument("--method: empty method list");
    config.methods = methods;
  }
  config.validate();
  return config;
}

std::string manifest_comments() {
  const std::time_t now = std::time(nullptr);
  char stamp[64];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return std::string("# radiomap ") + kVersion + "\n# created " + stamp + "\n";
}

int cmd_run(const CommonArgs& args) {
  ExperimentConfig config = build_config(args);
  const std::string out_dir = args.out_dir.empty() ? "radiomap_out" : args.out_dir;
  const RunOutput out =
      run_experiment(config, out_dir, args.workers, serialize_config(config), manifest_comments());

  std::printf("%s: %d trial(s), outputs in %s\n", config.exp_id.c_str(), config.trials,
              out_dir.c_str());
  std::printf("%-22s %-14s %12s %12s\n", "method", "metric", "p50", "p90");
  for (const MetricSummary& e : out.stats.entries) {
    std::printf("%-22s %-14s %12.4f %12.4f\n", method_name(e.method).c_str(), e.metric.c_str(),
                e.p50, e.p90);
  }
  if (out.failure_count > 0) {
    std::fprintf(stderr, "failures:\n");
    for (const auto& [m, count] : out.stats.failures) {
      if (count > 0) std::fprintf(stderr, "  %s: %d\n", method_name(m).c_str(), count);
    }
    return 1;
  }
  return 0;
}

void write_map_csv(const std::string& path, const RadioMap& map) {
  CsvWriter w(path);
  w.row({"x", "y", "mean_dBm", "var_dB2"});
  for (std::size_t g = 0; g < map.grid.size(); ++g) {
    w.row({fmt_double(map.grid[g].x), fmt_double(map.grid[g].y), fmt_double(map.mean_dbm[g]),
           fmt_double(map.variance_db2[g])});
  }
}

int cmd_trial(const CommonArgs& args) {
  ExperimentConfig config = build_config(args);
  config.trials = 1;
  const std::string out_dir = args.out_dir.empty() ? "trial_out" : args.out_dir;
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream manifest(out_dir + "/manifest.cfg", std::ios::trunc);
    manifest << manifest_comments() << serialize_config(config);
  }

  const TrialData data = make_trial_data(config, 0);

  {
    CsvWriter w(out_dir + "/trajectories.csv");
    w.row({"sensor_id", "t", "x", "y"});
    for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
      const Trajectory& traj = data.trajectories[i];
      for (std::size_t j = 0; j < traj.positions.size(); ++j) {
        w.row({std::to_string(data.merged.sensor_ids[i]),
               fmt_double(static_cast<double>(j + 1) * traj.tau), fmt_double(traj.positions[j].x),
               fmt_double(traj.positions[j].y)});
      }
    }
  }
  {
    CsvWriter w(out_dir + "/dataset.csv");
    w.row({"sensor_id", "j", "x_reported", "y_reported", "power_dBm"});
    for (std::size_t s = 0; s < data.merged.sensor_count(); ++s) {
      for (std::size_t j = data.merged.offsets[s]; j < data.merged.offsets[s + 1]; ++j) {
        w.row({std::to_string(data.merged.sensor_ids[s]),
               std::to_string(j - data.merged.offsets[s] + 1),
               fmt_double(data.merged.reported_positions[j].x),
               fmt_double(data.merged.reported_positions[j].y), fmt_double(data.merged.powers[j])});
      }
    }
  }
  {
    // Evaluation-only ground truth; estimators never read this file.
    CsvWriter w(out_dir + "/dataset_eval.csv");
    w.row({"sensor_id", "j", "x_true", "y_true", "bias_x", "bias_y"});
    for (std::size_t s = 0; s < data.merged.sensor_count(); ++s) {
      for (std::size_t j = data.merged.offsets[s]; j < data.merged.offsets[s + 1]; ++j) {
        w.row({std::to_string(data.merged.sensor_ids[s]),
               std::to_string(j - data.merged.offsets[s] + 1),
               fmt_double(data.merged.eval.true_positions[j].x),
               fmt_double(data.merged.eval.true_positions[j].y),
               fmt_double(data.merged.eval.true_bias[s].x),
               fmt_double(data.merged.eval.true_bias[s].y)});
      }
    }
  }
  {
    CsvWriter w(out_dir + "/truth_map.csv");
    w.row({"x", "y", "power_dBm"});
    for (std::size_t g = 0; g < data.grid.size(); ++g) {
      w.row({fmt_double(data.grid[g].x), fmt_double(data.grid[g].y), fmt_double(data.truth[g])});
    }
  }

  std::optional<KernelParams> prelim;
  std::printf("trial seed %llu, %zu samples, %zu grid points\n",
              static_cast<unsigned long long>(data.seed), data.merged.size(), data.grid.size());
  int failures = 0;
  for (Method m : config.methods) {
    const std::string name = method_name(m);
    try {
      const bool needs_prelim = m == Method::GprUncorrected || m == Method::Proposed ||
                                m == Method::ProposedNoPenalty;
      if (needs_prelim && !prelim) prelim = preliminary_kernel(config, data);
      const MethodArtifacts artifacts =
          run_method(config, data, m, needs_prelim ? prelim : std::optional<KernelParams>{});
      write_map_csv(out_dir + "/map_" + name + ".csv", artifacts.map);
      double bias_rmse = std::numeric_limits<double>::quiet_NaN();
      if (artifacts.calib) {
        const CalibrationResult& calib = *artifacts.calib;
        {
          CsvWriter w(out_dir + "/calib_" + name + "_bias.csv");
          w.row({"sensor_id", "true_eps_x", "true_eps_y", "est_eps_x", "est_eps_y"});
          for (std::size_t s = 0; s < data.merged.sensor_count(); ++s) {
            w.row({std::to_string(data.merged.sensor_ids[s]),
                   fmt_double(data.merged.eval.true_bias[s].x),
                   fmt_double(data.merged.eval.true_bias[s].y),
                   fmt_double(calib.epsilon_opt.epsilon_hat[s].x),
                   fmt_double(calib.epsilon_opt.epsilon_hat[s].y)});
          }
        }
        {
          CsvWriter w(out_dir + "/calib_" + name + "_trace.csv");
          w.row({"iteration", "objective", "step_norm"});
          for (std::size_t i = 0; i < calib.objective_trace.size(); ++i) {
            w.row({std::to_string(i), fmt_double(calib.objective_trace[i].objective),
                   fmt_double(calib.objective_trace[i].step_norm)});
          }
        }
        bias_rmse = rmse_bias(calib.epsilon_opt, data.merged.eval.true_bias);
      } else if (m == Method::GprUncorrected) {
        const std::vector<Vec2> zeros(data.merged.sensor_count(), Vec2{0.0, 0.0});
        bias_rmse = rmse_bias({zeros, data.merged.bias_sigma}, data.merged.eval.true_bias);
      }
      const double map_rmse = rmse_map(artifacts.map, data.truth);
      if (std::isfinite(bias_rmse)) {
        std::printf("%-22s map RMSE %8.4f dB   bias RMSE %8.4f m\n", name.c_str(), map_rmse,
                    bias_rmse);
      } else {
        std::printf("%-22s map RMSE %8.4f dB\n", name.c_str(), map_rmse);
      }
    } catch (const std::exception& e) {
      std::fprintf(stderr, "%s failed: %s\n", name.c_str(), e.what());
      ++failures;
    }
  }
  return failures == 0 ? 0 : 1;
}

struct ReportRow {
  std::map<std::string, std::pair<double, double>> by_method;  // method -> (p50, p90)
};

int cmd_report(const std::vector<std::string>& dirs) {
  // metric -> exp_id -> rows
  std::map<std::string, std::map<std::string, ReportRow>> tables;
  std::set<std::string> seen_exp;
  for (const std::string& dir : dirs) {
    const std::string path = dir + "/summary.csv";
    if (!std::filesystem::exists(path)) {
      throw std::invalid_argument("missing summary.csv in " + dir);
    }
    const auto rows = read_csv(path);
    if (rows.empty() || rows[0].size() != 5) {
      throw std::invalid_argument("malformed summary.csv in " + dir);
    }
    std::set<std::string> exp_in_dir;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& r = rows[i];
      if (r.size() != 5) throw std::invalid_argument("malformed summary.csv in " + dir);
      exp_in_dir.insert(r[0]);
      tables[r[2]][r[0]].by_method[r[1]] = {std::stod(r[3]), std::stod(r[4])};
    }
    for (const std::string& e : exp_in_dir) {
      if (!seen_exp.insert(e).second) {
        throw std::invalid_argument("duplicate experiment id across directories: " + e);
      }
    }
  }

  const auto print_table = [&](const std::string& metric, const std::string& title, int which) {
    if (!tables.count(metric)) return;
    std::printf("\n%s — %s\n", title.c_str(), which == 0 ? "50th percentile (median)"
                                                         : "90th percentile");
    std::printf("%-8s", "exp");
    std::vector<Method> cols;
    for (Method m : all_methods()) cols.push_back(m);
    for (Method m : cols) std::printf(" %21s", method_name(m).c_str());
    std::printf("\n");
    for (const auto& [exp_id, row] : tables[metric]) {
      std::printf("%-8s", exp_id.c_str());
      // best non-ideal method gets a '*'
      std::string best;
      double best_v = std::numeric_limits<double>::infinity();
      for (const auto& [name, pp] : row.by_method) {
        const double v = which == 0 ? pp.first : pp.second;
        if (name != method_name(Method::IdealGpr) && v < best_v) {
          best_v = v;
          best = name;
        }
      }
      for (Method m : cols) {
        const auto it = row.by_method.find(method_name(m));
        if (it == row.by_method.end()) {
          std::printf(" %21s", "-");
        } else {
          const double v = which == 0 ? it->second.first : it->second.second;
          char cell[32];
          std::snprintf(cell, sizeof(cell), "%s%.4f", it->first == best ? "*" : "", v);
          std::printf(" %21s", cell);
        }
      }
      std::printf("\n");
    }
  };

  print_table("map_rmse_db", "RMSE in radio map construction [dB]", 0);
  print_table("map_rmse_db", "RMSE in radio map construction [dB]", 1);
  print_table("bias_rmse_m", "RMSE in bias estimation [m]", 0);
  print_table("bias_rmse_m", "RMSE in bias estimation [m]", 1);
  std::printf("\n(* best method aside from ideal_gpr)\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radio map construction with ex-post location-bias calibration"};
  app.require_subcommand(1);

  CommonArgs run_args, trial_args;
  std::vector<std::string> report_dirs;

  CLI::App* run = app.add_subcommand("run", "Run a Monte Carlo experiment");
  add_common_options(run, run_args);
  CLI::App* trial = app.add_subcommand("trial", "Run one trial with verbose artifact dumps");
  add_common_options(trial, trial_args);
  CLI::App* report = app.add_subcommand("report", "Merge run summaries into percentile tables");
  report->add_option("dirs", report_dirs, "Run output directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) return cmd_run(run_args);
    if (trial->parsed()) return cmd_trial(trial_args);
    if (report->parsed()) return cmd_report(report_dirs);
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
