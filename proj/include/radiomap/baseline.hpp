#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "radiomap/gp.hpp"
#include "radiomap/optimize.hpp"
#include "radiomap/rng.hpp"
#include "radiomap/vec2.hpp"

namespace radiomap {

/// Closed-form least-squares fit of the log-distance mean model.
struct PathLossFit {
  double p_tx_hat = 0.0;
  double eta_hat = 0.0;
};

inline double fitted_mean_power(const PathLossFit& fit, Vec2 x_tx, Vec2 x) {
  const double d = distance(x_tx, x);
  if (d <= 0.0) throw std::domain_error("fitted_mean_power: point coincides with the transmitter");
  return fit.p_tx_hat - 10.0 * fit.eta_hat * std::log10(d);
}

/// OLS on p = P_tx - 10 * eta * log10(d) with regressors [1, -10 log10(d)].
/// Requires at least two distinct distances from the transmitter.
inline PathLossFit fit_path_loss(std::span<const Vec2> positions, std::span<const double> powers,
                                 Vec2 x_tx) {
  const std::size_t n = positions.size();
  if (n != powers.size()) throw std::invalid_argument("fit_path_loss: length mismatch");
  if (n < 2) throw std::invalid_argument("fit_path_loss: need at least two samples");

  double mean_a = 0.0, mean_p = 0.0;
  std::vector<double> a(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = distance(x_tx, positions[i]);
    if (d <= 0.0) throw std::domain_error("fit_path_loss: sample coincides with the transmitter");
    a[i] = -10.0 * std::log10(d);
    mean_a += a[i];
    mean_p += powers[i];
  }
  mean_a /= static_cast<double>(n);
  mean_p /= static_cast<double>(n);

  double s_aa = 0.0, s_ap = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    s_aa += (a[i] - mean_a) * (a[i] - mean_a);
    s_ap += (a[i] - mean_a) * (powers[i] - mean_p);
  }
  if (s_aa <= 1e-12 * static_cast<double>(n)) {
    throw std::runtime_error("fit_path_loss: degenerate design (all samples at one distance)");
  }
  const double eta = s_ap / s_aa;
  return {mean_p - eta * mean_a, eta};
}

/// Shadowing residuals: observed power minus the fitted mean at each position.
inline Eigen::VectorXd residual_shadowing(std::span<const Vec2> positions,
                                          std::span<const double> powers, const PathLossFit& fit,
                                          Vec2 x_tx) {
  if (positions.size() != powers.size()) {
    throw std::invalid_argument("residual_shadowing: length mismatch");
  }
  Eigen::VectorXd w(static_cast<Eigen::Index>(positions.size()));
  for (std::size_t i = 0; i < positions.size(); ++i) {
    w[static_cast<Eigen::Index>(i)] = powers[i] - fitted_mean_power(fit, x_tx, positions[i]);
  }
  return w;
}

struct KernelMleOptions {
  OptimOptions nm{.max_iters = 200, .f_abs_tol = 1e-7, .f_rel_tol = 1e-6, .x_tol = 1e-5,
                  .restarts = 3};
  double init_sigma_n = 1.0;
  std::uint64_t restart_seed = 0xC0FFEEULL;
};

/// Maximum-likelihood kernel hyperparameters via Nelder-Mead in log space.
/// Restarts perturb the initial point by +/-50%; the best restart wins.
inline KernelParams fit_kernel_mle(const Eigen::VectorXd& residuals, std::span<const Vec2> points,
                                   const KernelMleOptions& opts) {
  const std::size_t n = points.size();
  if (static_cast<std::size_t>(residuals.size()) != n || n == 0) {
    throw std::invalid_argument("fit_kernel_mle: bad inputs");
  }

  const Eigen::MatrixXd dist = detail::pairwise_distances(points);
  Eigen::MatrixXd work;
  const Objective neg_loglik = [&](const Eigen::VectorXd& logp) {
    const KernelParams kp{std::exp(logp[0]), std::exp(logp[1]), std::exp(logp[2])};
    try {
      return -detail::log_marginal_from_distances(dist, residuals, kp, work);
    } catch (const std::runtime_error&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  // Initial point: residual standard deviation, bounding-box diagonal / 20,
  // and the configured noise level.
  const double stddev = std::sqrt(residuals.squaredNorm() / static_cast<double>(n) + 1e-12);
  Vec2 lo = points[0], hi = points[0];
  for (const Vec2& p : points) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
  }
  const double diag = std::max(distance(lo, hi), 1e-3);
  const Eigen::Vector3d base{std::max(stddev, 1e-3), diag / 20.0, std::max(opts.init_sigma_n, 1e-3)};

  NelderMeadResult best;
  best.f = std::numeric_limits<double>::infinity();
  bool any = false;
  const int restarts = std::max(opts.nm.restarts, 1);
  for (int r = 0; r < restarts; ++r) {
    Eigen::VectorXd x0(3);
    Rng rng(derive_seed(opts.restart_seed, static_cast<std::uint64_t>(r)));
    for (int i = 0; i < 3; ++i) {
      const double factor = (r == 0) ? 1.0 : rng.uniform(0.5, 1.5);
      x0[i] = std::log(base[i] * factor);
    }
    try {
      const NelderMeadResult res = nelder_mead(neg_loglik, x0, opts.nm);
      if (!any || res.f < best.f) {
        best = res;
        any = true;
      }
    } catch (const std::invalid_argument&) {
      // restart landed in an infeasible region; try the next one
    }
  }
  if (!any || !std::isfinite(best.f)) {
    throw std::runtime_error("fit_kernel_mle: all restarts failed to factorize");
  }
  return {std::exp(best.x[0]), std::exp(best.x[1]), std::exp(best.x[2])};
}

/// Gridded posterior of received power.
struct RadioMap {
  std::vector<Vec2> grid;
  std::vector<double> mean_dbm;
  std::vector<double> variance_db2;
  PathLossFit fitted;
  KernelParams fitted_kernel;
};

struct MapOptions {
  KernelMleOptions mle;
  /// Skip the MLE and use these hyperparameters directly (e.g. a fit already
  /// computed on the same data by the caller).
  std::optional<KernelParams> kernel_override;
};

/// Radio map construction: path-loss fit, shadowing residuals, kernel MLE and
/// the GP posterior over the grid with the fitted mean added back. Uses the
/// positions it is given. Rows are brought into a canonical order first so the
/// result is exactly invariant under permutations of the input.
inline RadioMap construct_map(std::span<const Vec2> positions, std::span<const double> powers,
                              Vec2 x_tx, std::span<const Vec2> grid, const MapOptions& opts = {}) {
  const std::size_t n = positions.size();
  if (n != powers.size() || n == 0) throw std::invalid_argument("construct_map: bad dataset");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (positions[i].x != positions[j].x) return positions[i].x < positions[j].x;
    if (positions[i].y != positions[j].y) return positions[i].y < positions[j].y;
    return powers[i] < powers[j];
  });
  std::vector<Vec2> pos(n);
  std::vector<double> pow(n);
  for (std::size_t i = 0; i < n; ++i) {
    pos[i] = positions[order[i]];
    pow[i] = powers[order[i]];
  }

  const PathLossFit fit = fit_path_loss(pos, pow, x_tx);
  const Eigen::VectorXd w = residual_shadowing(pos, pow, fit, x_tx);
  const KernelParams kp =
      opts.kernel_override ? *opts.kernel_override : fit_kernel_mle(w, pos, opts.mle);

  const GPModel model(pos, w, kp);
  const std::vector<GPPosterior> post = model.posterior(grid);

  RadioMap map;
  map.grid.assign(grid.begin(), grid.end());
  map.mean_dbm.resize(grid.size());
  map.variance_db2.resize(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    map.mean_dbm[g] = fitted_mean_power(fit, x_tx, grid[g]) + post[g].mean;
    map.variance_db2[g] = post[g].variance;
  }
  map.fitted = fit;
  map.fitted_kernel = kp;
  return map;
}

}  // namespace radiomap
