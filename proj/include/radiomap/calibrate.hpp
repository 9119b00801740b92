#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "radiomap/baseline.hpp"
#include "radiomap/gp.hpp"
#include "radiomap/linalg.hpp"
#include "radiomap/optimize.hpp"
#include "radiomap/sensing.hpp"
#include "radiomap/vec2.hpp"

namespace radiomap {

/// Hyperparameters of the composite kernel: constant mean, path-loss kernel
/// variance and length-scale (in squared log10-distance units), shadowing
/// kernel variance and length-scale, and noise variance.
struct ThetaVector {
  double theta1 = 0.0;   ///< constant mean [dBm]
  double theta2 = 1.0;   ///< path-loss kernel variance [dB^2]
  double theta3 = 0.25;  ///< path-loss kernel length-scale (log10-distance^2)
  double theta4 = 1.0;   ///< shadowing kernel variance [dB^2]
  double theta5 = 10.0;  ///< shadowing kernel length-scale [m]
  double theta6 = 1.0;   ///< noise variance [dB^2]

  void validate() const {
    if (!std::isfinite(theta1)) throw std::invalid_argument("ThetaVector: theta1 must be finite");
    if (!(theta2 > 0.0 && theta3 > 0.0 && theta4 > 0.0 && theta5 > 0.0 && theta6 > 0.0)) {
      throw std::invalid_argument("ThetaVector: theta2..theta6 must be > 0");
    }
  }
};

/// Per-sensor bias estimates together with the known bias standard deviations.
struct BiasEstimates {
  std::vector<Vec2> epsilon_hat;
  std::vector<Vec2> sigma;
};

/// Path-loss kernel on debiased points: an RBF in log10 distance from the
/// transmitter. d = reported - bias.
inline double k_pl(Vec2 x_r1, Vec2 x_r2, Vec2 bias1, Vec2 bias2, Vec2 x_tx, double theta2,
                   double theta3) {
  const Vec2 d1 = x_r1 - bias1;
  const Vec2 d2 = x_r2 - bias2;
  const double r1 = distance(x_tx, d1);
  const double r2 = distance(x_tx, d2);
  if (r1 <= 0.0 || r2 <= 0.0) throw std::domain_error("k_pl: debiased point coincides with the transmitter");
  const double dl = std::log10(r1) - std::log10(r2);
  return theta2 * std::exp(-dl * dl / (2.0 * theta3));
}

/// Shadowing kernel on debiased points: theta4 * exp(-||d1 - d2|| / (2 theta5)).
/// Within one sensor the bias cancels exactly.
inline double k_shad(Vec2 x_r1, Vec2 x_r2, Vec2 bias1, Vec2 bias2, double theta4, double theta5) {
  const Vec2 d1 = x_r1 - bias1;
  const Vec2 d2 = x_r2 - bias2;
  return theta4 * std::exp(-distance(d1, d2) / (2.0 * theta5));
}

/// Dense composite kernel matrices over a dataset, mainly for tests and
/// diagnostics (the optimizer uses the workspace-based path below).
struct CompositeKernels {
  Eigen::MatrixXd k_pl;
  Eigen::MatrixXd k_shad;
};

inline CompositeKernels composite_kernels(const DatasetView& view, const ThetaVector& theta,
                                          std::span<const Vec2> epsilon_hat, Vec2 x_tx) {
  theta.validate();
  const auto n = static_cast<std::ptrdiff_t>(view.size());
  std::vector<Vec2> debiased(view.size());
  for (std::size_t s = 0; s < view.sensor_count(); ++s) {
    const auto [lo, hi] = view.sensor_range(s);
    for (std::size_t j = lo; j < hi; ++j) debiased[j] = view.reported_positions[j] - epsilon_hat[s];
  }
  CompositeKernels out;
  out.k_pl.resize(n, n);
  out.k_shad.resize(n, n);
  for (std::ptrdiff_t j = 0; j < n; ++j) {
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const Vec2 a = debiased[static_cast<std::size_t>(i)];
      const Vec2 b = debiased[static_cast<std::size_t>(j)];
      out.k_pl(i, j) = k_pl(a, b, {0, 0}, {0, 0}, x_tx, theta.theta2, theta.theta3);
      out.k_shad(i, j) = k_shad(a, b, {0, 0}, {0, 0}, theta.theta4, theta.theta5);
    }
  }
  return out;
}

/// The penalized composite-kernel marginal log-likelihood and its analytic
/// gradient in the packed parameterization
///   [theta1, log theta2..log theta6, eps_1x, eps_1y, ..., eps_Nx, eps_Ny].
/// Holds reusable workspaces; one instance serves one optimization run and is
/// not thread-safe.
class PenalizedObjective {
 public:
  PenalizedObjective(const DatasetView& view, Vec2 x_tx, bool include_penalty)
      : reported_(view.reported_positions.begin(), view.reported_positions.end()),
        offsets_(view.offsets.begin(), view.offsets.end()),
        sigma_(view.bias_sigma.begin(), view.bias_sigma.end()),
        x_tx_(x_tx),
        include_penalty_(include_penalty),
        n_(static_cast<Eigen::Index>(view.size())),
        sensors_(view.sensor_count()) {
    if (n_ == 0 || sensors_ == 0) throw std::invalid_argument("PenalizedObjective: empty dataset");
    powers_.resize(n_);
    for (Eigen::Index i = 0; i < n_; ++i) powers_[i] = view.powers[static_cast<std::size_t>(i)];
    debiased_.resize(static_cast<std::size_t>(n_));
    g_.resize(n_);
  }

  Eigen::Index dim() const { return 6 + 2 * static_cast<Eigen::Index>(sensors_); }
  std::size_t sensor_count() const { return sensors_; }

  Eigen::VectorXd pack(const ThetaVector& theta, std::span<const Vec2> epsilon_hat) const {
    theta.validate();
    if (epsilon_hat.size() != sensors_) throw std::invalid_argument("pack: bias count mismatch");
    Eigen::VectorXd x(dim());
    x[0] = theta.theta1;
    x[1] = std::log(theta.theta2);
    x[2] = std::log(theta.theta3);
    x[3] = std::log(theta.theta4);
    x[4] = std::log(theta.theta5);
    x[5] = std::log(theta.theta6);
    for (std::size_t s = 0; s < sensors_; ++s) {
      x[6 + 2 * static_cast<Eigen::Index>(s)] = epsilon_hat[s].x;
      x[7 + 2 * static_cast<Eigen::Index>(s)] = epsilon_hat[s].y;
    }
    return x;
  }

  void unpack(const Eigen::VectorXd& x, ThetaVector& theta, std::vector<Vec2>& epsilon_hat) const {
    theta = {x[0], std::exp(x[1]), std::exp(x[2]), std::exp(x[3]), std::exp(x[4]), std::exp(x[5])};
    epsilon_hat.resize(sensors_);
    for (std::size_t s = 0; s < sensors_; ++s) {
      epsilon_hat[s] = {x[6 + 2 * static_cast<Eigen::Index>(s)],
                        x[7 + 2 * static_cast<Eigen::Index>(s)]};
    }
  }

  /// Objective value; -inf when the covariance cannot be factorized (the
  /// ascent treats such points as infeasible). Set `throw_on_error` to get
  /// the underlying numerical error instead.
  double value(const Eigen::VectorXd& x, bool throw_on_error = false) {
    try {
      prepare(x);
      return finish_value(x);
    } catch (const std::runtime_error&) {
      if (throw_on_error) throw;
      return -std::numeric_limits<double>::infinity();
    } catch (const std::domain_error&) {
      if (throw_on_error) throw;
      return -std::numeric_limits<double>::infinity();
    }
  }

  /// Value plus analytic gradient. On factorization failure returns -inf with
  /// a zero gradient.
  double value_and_grad(const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    grad = Eigen::VectorXd::Zero(dim());
    double val;
    try {
      prepare(x);
      val = finish_value(x);
    } catch (const std::runtime_error&) {
      return -std::numeric_limits<double>::infinity();
    } catch (const std::domain_error&) {
      return -std::numeric_limits<double>::infinity();
    }

    const double theta3 = std::exp(x[2]);
    const double theta5 = std::exp(x[4]);
    const double theta6 = std::exp(x[5]);

    ainv_ = cholesky_inverse(a_);
    b_ = alpha_ * alpha_.transpose() - ainv_;

    grad[0] = alpha_.sum();
    grad[5] = 0.5 * theta6 * b_.trace();

    // C = B .* K_PL drives the theta2/theta3 and path-loss bias terms.
    scratch_ = b_.cwiseProduct(kpl_);
    grad[1] = 0.5 * scratch_.sum();
    const Eigen::VectorXd row_sums = scratch_.rowwise().sum();
    const Eigen::VectorXd cg = scratch_ * g_;
    grad[2] = (g_.array().square().matrix().dot(row_sums) - g_.dot(cg)) / (2.0 * theta3);
    // Per-row coefficient of dg_j in the path-loss trace term.
    const Eigen::VectorXd pl_coef = -(g_.cwiseProduct(row_sums) - cg) / theta3;

    grad[3] = 0.5 * b_.cwiseProduct(kshad_).sum();
    grad[4] = (b_.array() * kshad_.array() * u_.array()).sum() / (4.0 * theta5);

    // W = B .* K_shad / (2 theta5 U) with zero where U == 0 drives the
    // shadowing bias terms.
    scratch_ = (u_.array() > 0.0)
                   .select(b_.array() * kshad_.array() / (2.0 * theta5 * u_.array()), 0.0);
    const Eigen::VectorXd w_sums = scratch_.rowwise().sum();
    Eigen::VectorXd dx(n_), dy(n_);
    for (Eigen::Index i = 0; i < n_; ++i) {
      dx[i] = debiased_[static_cast<std::size_t>(i)].x;
      dy[i] = debiased_[static_cast<std::size_t>(i)].y;
    }
    const Eigen::VectorXd wdx = scratch_ * dx;
    const Eigen::VectorXd wdy = scratch_ * dy;

    for (std::size_t s = 0; s < sensors_; ++s) {
      const auto lo = static_cast<Eigen::Index>(offsets_[s]);
      const auto len = static_cast<Eigen::Index>(offsets_[s + 1] - offsets_[s]);
      double gx = 0.0, gy = 0.0;
      for (Eigen::Index j = lo; j < lo + len; ++j) {
        const Vec2 d = debiased_[static_cast<std::size_t>(j)];
        const Vec2 u{x_tx_.x - d.x, x_tx_.y - d.y};
        const double inv = 1.0 / (u.squared_norm() * std::numbers::ln10);
        gx += pl_coef[j] * u.x * inv;
        gy += pl_coef[j] * u.y * inv;
        gx += d.x * w_sums[j] - wdx[j];
        gy += d.y * w_sums[j] - wdy[j];
      }
      if (include_penalty_) {
        gx -= x[6 + 2 * static_cast<Eigen::Index>(s)] / (sigma_[s].x * sigma_[s].x);
        gy -= x[7 + 2 * static_cast<Eigen::Index>(s)] / (sigma_[s].y * sigma_[s].y);
      }
      grad[6 + 2 * static_cast<Eigen::Index>(s)] = gx;
      grad[7 + 2 * static_cast<Eigen::Index>(s)] = gy;
    }
    return val;
  }

 private:
  /// Builds debiased points, kernels and the Cholesky factor of
  /// K_PL + K_shad + theta6 I for the packed parameters.
  void prepare(const Eigen::VectorXd& x) {
    const double theta2 = std::exp(x[1]);
    const double theta3 = std::exp(x[2]);
    const double theta4 = std::exp(x[3]);
    const double theta5 = std::exp(x[4]);
    const double theta6 = std::exp(x[5]);

    for (std::size_t s = 0; s < sensors_; ++s) {
      const Vec2 eps{x[6 + 2 * static_cast<Eigen::Index>(s)],
                     x[7 + 2 * static_cast<Eigen::Index>(s)]};
      for (std::size_t j = offsets_[s]; j < offsets_[s + 1]; ++j) {
        debiased_[j] = reported_[j] - eps;
      }
    }
    for (Eigen::Index i = 0; i < n_; ++i) {
      const double r = distance(x_tx_, debiased_[static_cast<std::size_t>(i)]);
      if (r <= 0.0) throw std::domain_error("penalized_loglik: debiased point at the transmitter");
      g_[i] = std::log10(r);
    }

    u_.resize(n_, n_);
    kpl_.resize(n_, n_);
    kshad_.resize(n_, n_);
    for (Eigen::Index j = 0; j < n_; ++j) {
      u_(j, j) = 0.0;
      kpl_(j, j) = theta2;
      kshad_(j, j) = theta4;
      for (Eigen::Index i = j + 1; i < n_; ++i) {
        const double d = distance(debiased_[static_cast<std::size_t>(i)],
                                  debiased_[static_cast<std::size_t>(j)]);
        u_(i, j) = d;
        u_(j, i) = d;
        const double dl = g_[i] - g_[j];
        const double vpl = theta2 * std::exp(-dl * dl / (2.0 * theta3));
        kpl_(i, j) = vpl;
        kpl_(j, i) = vpl;
        const double vsh = theta4 * std::exp(-d / (2.0 * theta5));
        kshad_(i, j) = vsh;
        kshad_(j, i) = vsh;
      }
    }

    cholesky_in_place_with_jitter(a_, theta2 + theta4, [&](Eigen::MatrixXd& m) {
      m = kpl_ + kshad_;
      m.diagonal().array() += theta6;
    });

    alpha_ = powers_ - Eigen::VectorXd::Constant(n_, x[0]);
    quad_base_ = alpha_;  // residual r = p - theta1
    cholesky_solve_in_place(a_, alpha_);
  }

  double finish_value(const Eigen::VectorXd& x) const {
    double val = -0.5 * quad_base_.dot(alpha_) - 0.5 * log_det_from_cholesky(a_) -
                 0.5 * static_cast<double>(n_) * std::log(2.0 * std::numbers::pi);
    if (include_penalty_) {
      for (std::size_t s = 0; s < sensors_; ++s) {
        const double ex = x[6 + 2 * static_cast<Eigen::Index>(s)];
        const double ey = x[7 + 2 * static_cast<Eigen::Index>(s)];
        val -= std::log(2.0 * std::numbers::pi * sigma_[s].x * sigma_[s].y) +
               0.5 * (ex * ex / (sigma_[s].x * sigma_[s].x) + ey * ey / (sigma_[s].y * sigma_[s].y));
      }
    }
    return val;
  }

  std::vector<Vec2> reported_;
  std::vector<std::size_t> offsets_;
  std::vector<Vec2> sigma_;
  Vec2 x_tx_;
  bool include_penalty_;
  Eigen::Index n_;
  std::size_t sensors_;
  Eigen::VectorXd powers_;

  // workspaces
  std::vector<Vec2> debiased_;
  Eigen::VectorXd g_;          ///< log10 distance to the transmitter
  Eigen::MatrixXd u_;          ///< pairwise debiased distances
  Eigen::MatrixXd kpl_, kshad_;
  Eigen::MatrixXd a_;          ///< factored covariance (lower = L)
  Eigen::VectorXd alpha_;      ///< (K + theta6 I)^-1 (p - theta1)
  Eigen::VectorXd quad_base_;  ///< p - theta1
  Eigen::MatrixXd ainv_, b_, scratch_;
};

/// The penalized marginal log-likelihood at a given parameter point. Throws a
/// numerical error when the covariance cannot be factorized.
inline double penalized_loglik(const DatasetView& view, const ThetaVector& theta,
                               const BiasEstimates& eps_hat, Vec2 x_tx,
                               bool include_penalty = true) {
  PenalizedObjective obj(view, x_tx, include_penalty);
  return obj.value(obj.pack(theta, eps_hat.epsilon_hat), /*throw_on_error=*/true);
}

struct CalibOptions {
  OptimOptions ascent{.max_iters = 200, .f_abs_tol = 1e-6, .f_rel_tol = 1e-8,
                      .learning_rate = 0.3, .warmup = 25, .patience = 45};
  bool penalty = true;             ///< include the bias prior of the objective
  bool analytic_gradient = true;   ///< finite differences when false
  std::optional<KernelParams> warm_kernel;  ///< preliminary baseline MLE, if already available
  KernelMleOptions mle;            ///< used to compute the preliminary fit otherwise
  bool reuse_theta_for_map = false;  ///< final map pass: refit kernel (default) or reuse theta
};

struct CalibrationResult {
  BiasEstimates epsilon_opt;
  ThetaVector theta_opt;
  std::vector<Vec2> corrected_positions;  ///< reported - epsilon_opt, dataset order
  std::vector<AscentTracePoint> objective_trace;
  int iterations = 0;
  bool diverged = false;
};

/// Joint ex-post calibration: maximizes the penalized likelihood over the six
/// kernel hyperparameters (positive ones in log space) and the 2N sensor
/// biases, starting from zero biases and a warm-started theta.
inline CalibrationResult estimate_biases(const DatasetView& view, Vec2 x_tx,
                                         const CalibOptions& opts = {}) {
  const std::size_t n = view.size();
  const std::size_t sensors = view.sensor_count();
  if (n == 0 || sensors == 0) throw std::invalid_argument("estimate_biases: empty dataset");

  const PathLossFit fit = fit_path_loss(view.reported_positions, view.powers, x_tx);
  const Eigen::VectorXd w = residual_shadowing(view.reported_positions, view.powers, fit, x_tx);
  const KernelParams prelim =
      opts.warm_kernel ? *opts.warm_kernel : fit_kernel_mle(w, view.reported_positions, opts.mle);

  // theta init: constant mean from the data, path-loss kernel variance from
  // the spread of the fitted mean surface, remaining entries from the
  // preliminary baseline fit.
  double mean_p = 0.0;
  for (double p : view.powers) mean_p += p;
  mean_p /= static_cast<double>(n);
  double mean_fit = 0.0, var_fit = 0.0;
  std::vector<double> fitted(n);
  for (std::size_t i = 0; i < n; ++i) {
    fitted[i] = fitted_mean_power(fit, x_tx, view.reported_positions[i]);
    mean_fit += fitted[i];
  }
  mean_fit /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) var_fit += (fitted[i] - mean_fit) * (fitted[i] - mean_fit);
  var_fit /= static_cast<double>(n);

  ThetaVector theta0;
  theta0.theta1 = mean_p;
  theta0.theta2 = std::max(var_fit, 1e-3);
  theta0.theta3 = 0.25;
  theta0.theta4 = std::max(prelim.sigma_f * prelim.sigma_f, 1e-6);
  theta0.theta5 = prelim.d_cor;
  theta0.theta6 = std::max(prelim.sigma_n * prelim.sigma_n, 1e-6);

  PenalizedObjective obj(view, x_tx, opts.penalty);
  const std::vector<Vec2> eps0(sensors, Vec2{0.0, 0.0});
  const Eigen::VectorXd x0 = obj.pack(theta0, eps0);

  const Objective fval = [&obj](const Eigen::VectorXd& x) { return obj.value(x); };
  FgObjective fg;
  if (opts.analytic_gradient) {
    fg = [&obj](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return obj.value_and_grad(x, g); };
  } else {
    const double step = opts.ascent.fd_rel_step;
    fg = [&obj, fval, step](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
      g = finite_diff_grad(fval, x, step);
      return obj.value(x);
    };
  }
  const AscentResult res = adaptive_gradient_ascent(fg, x0, opts.ascent);

  CalibrationResult out;
  obj.unpack(res.x, out.theta_opt, out.epsilon_opt.epsilon_hat);
  out.epsilon_opt.sigma.assign(view.bias_sigma.begin(), view.bias_sigma.end());
  out.corrected_positions.resize(n);
  for (std::size_t s = 0; s < sensors; ++s) {
    const auto [lo, hi] = view.sensor_range(s);
    for (std::size_t j = lo; j < hi; ++j) {
      out.corrected_positions[j] = view.reported_positions[j] - out.epsilon_opt.epsilon_hat[s];
    }
  }
  out.objective_trace = res.trace;
  out.iterations = res.iterations;
  out.diverged = res.diverged;
  return out;
}

/// Calibrates, substitutes the corrected positions, and runs the baseline map
/// construction on them.
inline std::pair<RadioMap, CalibrationResult> construct_calibrated_map(
    const DatasetView& view, Vec2 x_tx, std::span<const Vec2> grid, const MapOptions& map_opts = {},
    const CalibOptions& calib_opts = {}) {
  CalibrationResult calib = estimate_biases(view, x_tx, calib_opts);
  MapOptions mo = map_opts;
  if (calib_opts.reuse_theta_for_map) {
    // theta5 scales correlation as exp(-d / (2 theta5)); the baseline kernel
    // halves at d_cor, so d_cor = 2 ln2 theta5.
    mo.kernel_override = KernelParams{std::sqrt(calib.theta_opt.theta4),
                                      2.0 * std::numbers::ln2 * calib.theta_opt.theta5,
                                      std::sqrt(calib.theta_opt.theta6)};
  }
  RadioMap map = construct_map(calib.corrected_positions, view.powers, x_tx, grid, mo);
  return {std::move(map), std::move(calib)};
}

}  // namespace radiomap
