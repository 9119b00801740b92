#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "radiomap/baseline.hpp"
#include "radiomap/calibrate.hpp"
#include "radiomap/csv.hpp"
#include "radiomap/env_model.hpp"
#include "radiomap/log.hpp"
#include "radiomap/mobility.hpp"
#include "radiomap/rng.hpp"
#include "radiomap/sensing.hpp"

namespace radiomap {

enum class Method { IdealGpr, Proposed, ProposedNoPenalty, GprUncorrected, PathLossOnly };

inline const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods{Method::IdealGpr, Method::Proposed,
                                           Method::ProposedNoPenalty, Method::GprUncorrected,
                                           Method::PathLossOnly};
  return methods;
}

inline std::string method_name(Method m) {
  switch (m) {
    case Method::IdealGpr: return "ideal_gpr";
    case Method::Proposed: return "proposed";
    case Method::ProposedNoPenalty: return "proposed_no_penalty";
    case Method::GprUncorrected: return "gpr_uncorrected";
    case Method::PathLossOnly: return "path_loss_only";
  }
  throw std::logic_error("method_name: bad method");
}

inline Method parse_method(const std::string& name) {
  for (Method m : all_methods()) {
    if (method_name(m) == name) return m;
  }
  throw std::invalid_argument("unknown method: " + name);
}

/// Full description of one Monte Carlo run.
struct ExperimentConfig {
  std::string exp_id = "exp1";
  double total_time = 3600.0;  ///< observation time T [s]
  double tau = 20.0;           ///< sampling interval [s]
  int sensors = 10;
  int trials = 200;
  std::uint64_t base_seed = 1;
  std::vector<Method> methods = all_methods();

  PropagationParams propagation{};
  LevyWalkParams mobility{};
  Vec2 sigma_bias{10.0, 10.0};

  Vec2 eval_min{125.0, 125.0};
  Vec2 eval_max{375.0, 375.0};
  double grid_spacing = 10.0;

  int mle_restarts = 3;
  int mle_max_iters = 200;
  int calib_max_iters = 200;
  double calib_learning_rate = 0.3;
  bool calib_penalty = true;
  bool calib_analytic_gradient = true;

  void validate() const {
    propagation.validate();
    mobility.validate();
    if (trials < 1) throw std::invalid_argument("config: trials must be >= 1");
    if (sensors < 1) throw std::invalid_argument("config: sensors must be >= 1");
    if (!(sigma_bias.x > 0.0 && sigma_bias.y > 0.0)) {
      throw std::invalid_argument("config: sigma_bias must be > 0");
    }
    if (!(grid_spacing > 0.0)) throw std::invalid_argument("config: grid_spacing must be > 0");
    if (!(eval_max.x > eval_min.x && eval_max.y > eval_min.y)) {
      throw std::invalid_argument("config: eval region must be non-empty");
    }
    if (methods.empty()) throw std::invalid_argument("config: method set must be non-empty");
  }

  std::vector<Vec2> make_grid() const {
    std::vector<Vec2> grid;
    const double eps = 1e-9 * grid_spacing;
    for (double x = eval_min.x; x <= eval_max.x + eps; x += grid_spacing) {
      for (double y = eval_min.y; y <= eval_max.y + eps; y += grid_spacing) {
        grid.push_back({x, y});
      }
    }
    return grid;
  }

  KernelMleOptions mle_options() const {
    KernelMleOptions o;
    o.nm.restarts = mle_restarts;
    o.nm.max_iters = mle_max_iters;
    o.init_sigma_n = propagation.sigma_n > 0.0 ? propagation.sigma_n : 1.0;
    return o;
  }

  CalibOptions calib_options(bool penalty) const {
    CalibOptions o;
    o.ascent.max_iters = calib_max_iters;
    o.ascent.learning_rate = calib_learning_rate;
    o.penalty = penalty;
    o.analytic_gradient = calib_analytic_gradient;
    o.mle = mle_options();
    return o;
  }
};

/// Map RMSE over the evaluation grid against the noise-free truth.
inline double rmse_map(const RadioMap& predicted, const std::vector<double>& truth) {
  if (predicted.mean_dbm.size() != truth.size() || truth.empty()) {
    throw std::invalid_argument("rmse_map: grid mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = predicted.mean_dbm[i] - truth[i];
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(truth.size()));
}

/// Per-component bias RMSE across sensors: sqrt(sum_i ||e_i||^2 / (2N)).
inline double rmse_bias(const BiasEstimates& estimates, const std::vector<Vec2>& truth) {
  const std::size_t n = truth.size();
  if (estimates.epsilon_hat.size() != n || n == 0) {
    throw std::invalid_argument("rmse_bias: sensor count mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += (estimates.epsilon_hat[i] - truth[i]).squared_norm();
  }
  return std::sqrt(acc / (2.0 * static_cast<double>(n)));
}

struct MethodOutcome {
  bool ok = false;
  double map_rmse_db = std::numeric_limits<double>::quiet_NaN();
  double bias_rmse_m = std::numeric_limits<double>::quiet_NaN();
  PathLossFit fitted{};
  KernelParams fitted_kernel{};
  double wall_ms = 0.0;
  std::string error;
};

struct TrialResult {
  int trial = 0;
  std::uint64_t seed = 0;
  std::vector<std::pair<Method, MethodOutcome>> outcomes;
  double wall_ms = 0.0;
};

namespace detail {

// stream tags for per-trial seed derivation
inline constexpr std::uint64_t kTrialTag = 0x7261646d61702e74ULL;
inline constexpr std::uint64_t kTrajTag = 1;
inline constexpr std::uint64_t kBiasTag = 2;
inline constexpr std::uint64_t kShadowTag = 3;
inline constexpr std::uint64_t kNoiseTag = 4;

inline double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

}  // namespace detail

/// Everything one trial works from: trajectories, the jointly sampled
/// ground-truth field over all sample positions plus the evaluation grid, the
/// sensed dataset, and the noise-free truth on the grid.
struct TrialData {
  std::uint64_t seed = 0;
  std::vector<Trajectory> trajectories;
  ShadowingField field;
  MergedDataset merged;
  std::vector<Vec2> grid;
  std::vector<double> truth;
};

/// Generates the data of one trial; a pure function of (config, trial_index).
inline TrialData make_trial_data(const ExperimentConfig& config, int trial_index) {
  config.validate();
  TrialData data;
  data.seed = derive_seed(config.base_seed, detail::kTrialTag,
                          static_cast<std::uint64_t>(trial_index));
  data.grid = config.make_grid();

  std::vector<Vec2> points;
  for (int i = 0; i < config.sensors; ++i) {
    Rng rng(derive_seed(data.seed, detail::kTrajTag, static_cast<std::uint64_t>(i)));
    data.trajectories.push_back(
        generate_trajectory(config.mobility, config.total_time, config.tau, rng));
    points.insert(points.end(), data.trajectories.back().positions.begin(),
                  data.trajectories.back().positions.end());
  }
  const std::size_t sample_total = points.size();
  points.insert(points.end(), data.grid.begin(), data.grid.end());

  Rng shadow_rng(derive_seed(data.seed, detail::kShadowTag));
  data.field = sample_shadowing(std::move(points), config.propagation, shadow_rng);

  std::vector<LocalDataset> locals;
  std::size_t offset = 0;
  for (int i = 0; i < config.sensors; ++i) {
    Rng bias_rng(derive_seed(data.seed, detail::kBiasTag, static_cast<std::uint64_t>(i)));
    Rng noise_rng(derive_seed(data.seed, detail::kNoiseTag, static_cast<std::uint64_t>(i)));
    const SensorBias bias = draw_bias(config.sigma_bias, bias_rng);
    locals.push_back(observe(data.trajectories[static_cast<std::size_t>(i)], data.field, offset,
                             bias, config.propagation.sigma_n, noise_rng, i));
    offset += data.trajectories[static_cast<std::size_t>(i)].positions.size();
  }
  data.merged = merge(locals);

  data.truth.resize(data.grid.size());
  for (std::size_t g = 0; g < data.grid.size(); ++g) {
    data.truth[g] =
        mean_power(config.propagation, data.grid[g]) + data.field.values[sample_total + g];
  }
  return data;
}

/// Map (and, for the calibrated methods, calibration output) of one method on
/// one trial. `warm_kernel` is the preliminary baseline MLE on the reported
/// positions, shared by the methods that start from the uncorrected dataset.
struct MethodArtifacts {
  RadioMap map;
  std::optional<CalibrationResult> calib;
};

inline MethodArtifacts run_method(const ExperimentConfig& config, const TrialData& data, Method m,
                                  const std::optional<KernelParams>& warm_kernel = {}) {
  const DatasetView view = data.merged.view();
  const Vec2 x_tx = config.propagation.x_tx;
  MethodArtifacts out;
  switch (m) {
    case Method::IdealGpr: {
      const MapOptions opts{.mle = config.mle_options(), .kernel_override = {}};
      out.map = construct_map(data.merged.eval.true_positions, data.merged.powers, x_tx, data.grid,
                              opts);
      break;
    }
    case Method::GprUncorrected: {
      const MapOptions opts{.mle = config.mle_options(), .kernel_override = warm_kernel};
      out.map =
          construct_map(data.merged.reported_positions, data.merged.powers, x_tx, data.grid, opts);
      break;
    }
    case Method::Proposed:
    case Method::ProposedNoPenalty: {
      const bool penalty = (m == Method::Proposed) ? config.calib_penalty : false;
      CalibOptions co = config.calib_options(penalty);
      co.warm_kernel = warm_kernel;
      const MapOptions opts{.mle = config.mle_options(), .kernel_override = {}};
      auto [map, calib] = construct_calibrated_map(view, x_tx, data.grid, opts, co);
      out.map = std::move(map);
      out.calib = std::move(calib);
      break;
    }
    case Method::PathLossOnly: {
      const PathLossFit fit = fit_path_loss(view.reported_positions, view.powers, x_tx);
      out.map.grid = data.grid;
      out.map.mean_dbm.resize(data.grid.size());
      out.map.variance_db2.assign(data.grid.size(), 0.0);
      for (std::size_t g = 0; g < data.grid.size(); ++g) {
        out.map.mean_dbm[g] = fitted_mean_power(fit, x_tx, data.grid[g]);
      }
      out.map.fitted = fit;
      break;
    }
  }
  return out;
}

/// Preliminary baseline fit on the reported positions (the "uncorrected"
/// hyperparameters), reused as the calibration warm start.
inline KernelParams preliminary_kernel(const ExperimentConfig& config, const TrialData& data) {
  const DatasetView view = data.merged.view();
  const PathLossFit f = fit_path_loss(view.reported_positions, view.powers,
                                      config.propagation.x_tx);
  const Eigen::VectorXd w =
      residual_shadowing(view.reported_positions, view.powers, f, config.propagation.x_tx);
  return fit_kernel_mle(w, view.reported_positions, config.mle_options());
}

/// One full pipeline run: data generation plus each requested method.
/// Per-method failures are recorded without aborting the trial. All
/// randomness is a pure function of (base_seed, trial_index).
inline TrialResult run_trial(const ExperimentConfig& config, int trial_index) {
  const auto trial_start = std::chrono::steady_clock::now();
  const TrialData data = make_trial_data(config, trial_index);

  TrialResult result;
  result.trial = trial_index;
  result.seed = data.seed;
  const std::vector<Vec2> zero_bias(static_cast<std::size_t>(config.sensors), Vec2{0.0, 0.0});

  std::optional<KernelParams> prelim;
  const auto needs_prelim = [](Method m) {
    return m == Method::GprUncorrected || m == Method::Proposed ||
           m == Method::ProposedNoPenalty;
  };

  for (Method m : config.methods) {
    MethodOutcome outcome;
    const auto start = std::chrono::steady_clock::now();
    try {
      if (needs_prelim(m) && !prelim) prelim = preliminary_kernel(config, data);
      const MethodArtifacts artifacts =
          run_method(config, data, m, needs_prelim(m) ? prelim : std::optional<KernelParams>{});
      outcome.map_rmse_db = rmse_map(artifacts.map, data.truth);
      if (m == Method::GprUncorrected) {
        outcome.bias_rmse_m =
            rmse_bias({zero_bias, data.merged.bias_sigma}, data.merged.eval.true_bias);
      } else if (artifacts.calib) {
        outcome.bias_rmse_m = rmse_bias(artifacts.calib->epsilon_opt, data.merged.eval.true_bias);
      }
      outcome.fitted = artifacts.map.fitted;
      outcome.fitted_kernel = artifacts.map.fitted_kernel;
      outcome.ok = true;
    } catch (const std::exception& e) {
      outcome.ok = false;
      outcome.error = e.what();
    }
    outcome.wall_ms = detail::elapsed_ms(start);
    result.outcomes.emplace_back(m, outcome);
  }
  result.wall_ms = detail::elapsed_ms(trial_start);
  return result;
}

struct MetricSummary {
  Method method;
  std::string metric;  ///< "map_rmse_db" or "bias_rmse_m"
  double p50 = 0.0;
  double p90 = 0.0;
  std::vector<double> sorted_values;  ///< CDF samples
};

struct SummaryStats {
  std::vector<MetricSummary> entries;
  std::map<Method, int> failures;

  const MetricSummary* find(Method m, const std::string& metric) const {
    for (const auto& e : entries) {
      if (e.method == m && e.metric == metric) return &e;
    }
    return nullptr;
  }
};

/// Nearest-rank percentile of an ascending sample.
inline double nearest_rank_percentile(const std::vector<double>& sorted, double pct) {
  if (sorted.empty()) throw std::invalid_argument("nearest_rank_percentile: empty sample");
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * n));
  if (rank < 1) rank = 1;
  if (rank > sorted.size()) rank = sorted.size();
  return sorted[rank - 1];
}

/// Cross-trial percentiles and CDF samples per method and metric.
inline SummaryStats summarize(const std::vector<TrialResult>& results,
                              const std::vector<Method>& methods) {
  if (results.empty()) throw std::invalid_argument("summarize: no trial results");
  SummaryStats stats;
  for (Method m : methods) {
    std::vector<double> maps, biases;
    int failures = 0;
    for (const TrialResult& tr : results) {
      for (const auto& [method, outcome] : tr.outcomes) {
        if (method != m) continue;
        if (!outcome.ok) {
          ++failures;
          continue;
        }
        if (std::isfinite(outcome.map_rmse_db)) maps.push_back(outcome.map_rmse_db);
        if (std::isfinite(outcome.bias_rmse_m)) biases.push_back(outcome.bias_rmse_m);
      }
    }
    stats.failures[m] = failures;
    std::sort(maps.begin(), maps.end());
    std::sort(biases.begin(), biases.end());
    if (!maps.empty()) {
      stats.entries.push_back({m, "map_rmse_db", nearest_rank_percentile(maps, 50.0),
                               nearest_rank_percentile(maps, 90.0), std::move(maps)});
    }
    if (!biases.empty()) {
      stats.entries.push_back({m, "bias_rmse_m", nearest_rank_percentile(biases, 50.0),
                               nearest_rank_percentile(biases, 90.0), std::move(biases)});
    }
  }
  return stats;
}

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string trial_row(const std::string& exp_id, int trial, Method m,
                             const MethodOutcome& o) {
  return exp_id + "," + std::to_string(trial) + "," + method_name(m) + "," +
         fmt_double(o.map_rmse_db) + "," + fmt_double(o.bias_rmse_m) + "," +
         fmt_double(o.wall_ms);
}

}  // namespace detail

struct RunOutput {
  SummaryStats stats;
  std::vector<TrialResult> trials;
  int failure_count = 0;
};

/// Executes all trials in a worker pool, streaming completed trials to
/// trials_partial.csv so an interrupted run can resume, then writes
/// trials.csv, summary.csv and the CDF files. Output bytes are independent of
/// worker count and execution order (apart from the wall_ms column).
/// `config_text` is the canonical serialized config; it identifies partial
/// results and, with `manifest_comments`, forms the manifest written before
/// any trial starts.
inline RunOutput run_experiment(const ExperimentConfig& config, const std::string& out_dir,
                                int workers, const std::string& config_text,
                                const std::string& manifest_comments = {}) {
  config.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  {
    std::ofstream manifest(out_dir + "/manifest.cfg", std::ios::trunc);
    if (!manifest) throw std::runtime_error("run_experiment: cannot write manifest");
    manifest << manifest_comments << config_text;
  }
  const std::uint64_t config_hash = detail::fnv1a(config_text);
  const std::string hash_line = "# config " + std::to_string(config_hash);

  // Resume: collect completed trials from a previous partial file for the
  // same config.
  const std::string partial_path = out_dir + "/trials_partial.csv";
  std::map<int, TrialResult> done;
  if (fs::exists(partial_path)) {
    std::ifstream in(partial_path);
    std::string first;
    std::getline(in, first);
    if (first == hash_line) {
      std::string line;
      std::map<int, TrialResult> partial;
      while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string exp, trial_s, method_s, map_s, bias_s, wall_s;
        if (!std::getline(ss, exp, ',') || !std::getline(ss, trial_s, ',') ||
            !std::getline(ss, method_s, ',') || !std::getline(ss, map_s, ',') ||
            !std::getline(ss, bias_s, ',') || !std::getline(ss, wall_s, ',')) {
          continue;  // truncated tail line from an interrupted write
        }
        try {
          const int trial = std::stoi(trial_s);
          MethodOutcome o;
          o.map_rmse_db = std::stod(map_s);
          o.bias_rmse_m = std::stod(bias_s);
          o.wall_ms = std::stod(wall_s);
          o.ok = std::isfinite(o.map_rmse_db) || std::isfinite(o.bias_rmse_m);
          TrialResult& tr = partial[trial];
          tr.trial = trial;
          tr.outcomes.emplace_back(parse_method(method_s), o);
        } catch (const std::exception&) {
          continue;
        }
      }
      for (auto& [trial, tr] : partial) {
        if (tr.outcomes.size() == config.methods.size() && trial >= 0 && trial < config.trials) {
          done.emplace(trial, std::move(tr));
        }
      }
    }
  }

  std::vector<int> pending;
  for (int t = 0; t < config.trials; ++t) {
    if (!done.count(t)) pending.push_back(t);
  }
  if (!done.empty()) {
    RADIOMAP_LOG_INFO("[%s] resuming: %zu trials already complete, %zu to run",
                      config.exp_id.c_str(), done.size(), pending.size());
  }

  std::ofstream partial(partial_path, std::ios::trunc);
  partial << hash_line << '\n';
  for (const auto& [trial, tr] : done) {
    for (const auto& [m, o] : tr.outcomes) {
      partial << detail::trial_row(config.exp_id, trial, m, o) << '\n';
    }
  }
  partial.flush();

  std::vector<std::optional<TrialResult>> slots(static_cast<std::size_t>(config.trials));
  for (auto& [trial, tr] : done) slots[static_cast<std::size_t>(trial)] = std::move(tr);

  if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  workers = std::min<int>(workers, std::max<int>(1, static_cast<int>(pending.size())));

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> completed{done.size()};
  std::mutex io_mutex;
  const auto worker = [&]() {
    for (;;) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= pending.size()) return;
      const int trial = pending[idx];
      TrialResult tr;
      try {
        tr = run_trial(config, trial);
      } catch (const std::exception& e) {
        tr.trial = trial;
        for (Method m : config.methods) {
          MethodOutcome o;
          o.ok = false;
          o.error = e.what();
          tr.outcomes.emplace_back(m, o);
        }
      }
      std::lock_guard<std::mutex> lock(io_mutex);
      for (const auto& [m, o] : tr.outcomes) {
        partial << detail::trial_row(config.exp_id, trial, m, o) << '\n';
      }
      partial.flush();
      const std::size_t c = completed.fetch_add(1) + 1;
      RADIOMAP_LOG_INFO("[%s] trial %d done in %.1f s (%zu/%d)", config.exp_id.c_str(), trial,
                        tr.wall_ms / 1000.0, c, config.trials);
      slots[static_cast<std::size_t>(trial)] = std::move(tr);
    }
  };

  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  partial.close();

  RunOutput out;
  out.trials.reserve(slots.size());
  for (auto& s : slots) {
    if (!s) throw std::logic_error("run_experiment: missing trial result");
    out.trials.push_back(std::move(*s));
  }
  out.stats = summarize(out.trials, config.methods);
  for (const auto& [m, count] : out.stats.failures) out.failure_count += count;

  {
    CsvWriter w(out_dir + "/trials.csv");
    w.row({"exp_id", "trial", "method", "map_rmse_db", "bias_rmse_m", "wall_ms"});
    for (const TrialResult& tr : out.trials) {
      for (const auto& [m, o] : tr.outcomes) {
        w.row({config.exp_id, std::to_string(tr.trial), method_name(m), fmt_double(o.map_rmse_db),
               fmt_double(o.bias_rmse_m), fmt_double(o.wall_ms)});
      }
    }
  }
  {
    CsvWriter w(out_dir + "/summary.csv");
    w.row({"exp_id", "method", "metric", "p50", "p90"});
    for (const MetricSummary& e : out.stats.entries) {
      w.row({config.exp_id, method_name(e.method), e.metric, fmt_double(e.p50), fmt_double(e.p90)});
    }
  }
  for (const std::string metric : {"map_rmse_db", "bias_rmse_m"}) {
    CsvWriter w(out_dir + "/cdf_" + metric + ".csv");
    w.row({"method", "value", "cumulative_probability"});
    for (const MetricSummary& e : out.stats.entries) {
      if (e.metric != metric) continue;
      const auto n = static_cast<double>(e.sorted_values.size());
      for (std::size_t i = 0; i < e.sorted_values.size(); ++i) {
        w.row({method_name(e.method), fmt_double(e.sorted_values[i]),
               fmt_double(static_cast<double>(i + 1) / n)});
      }
    }
  }
  fs::remove(partial_path);

  if (out.failure_count > 0) {
    for (const auto& [m, count] : out.stats.failures) {
      if (count > 0) {
        RADIOMAP_LOG_INFO("[%s] method %s failed in %d trial(s)", config.exp_id.c_str(),
                          method_name(m).c_str(), count);
      }
    }
  }
  return out;
}

}  // namespace radiomap
