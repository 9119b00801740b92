#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "radiomap/env_model.hpp"
#include "radiomap/linalg.hpp"
#include "radiomap/vec2.hpp"

namespace radiomap {

/// Hyperparameters of the baseline GP: shadowing standard deviation,
/// correlation length and noise standard deviation.
struct KernelParams {
  double sigma_f = 1.0;
  double d_cor = 1.0;
  double sigma_n = 1.0;

  void validate() const {
    if (!(sigma_f > 0.0 && d_cor > 0.0 && sigma_n > 0.0)) {
      throw std::invalid_argument("KernelParams: all parameters must be > 0");
    }
  }
};

struct GPPosterior {
  double mean = 0.0;      ///< posterior mean of the residual [dB]
  double variance = 0.0;  ///< posterior variance [dB^2], clamped at 0
};

namespace detail {

/// Lower triangle of the pairwise distance matrix.
inline Eigen::MatrixXd pairwise_distances(std::span<const Vec2> pts) {
  const auto n = static_cast<std::ptrdiff_t>(pts.size());
  Eigen::MatrixXd d(n, n);
  for (std::ptrdiff_t j = 0; j < n; ++j) {
    d(j, j) = 0.0;
    for (std::ptrdiff_t i = j + 1; i < n; ++i) {
      d(i, j) = distance(pts[static_cast<std::size_t>(i)], pts[static_cast<std::size_t>(j)]);
    }
  }
  return d;
}

/// Fills the lower triangle of `k` with sigma_f^2 * exp(-ln2 * D / d_cor)
/// plus sigma_n^2 on the diagonal, reading the lower triangle of `dist`.
inline void fill_noisy_kernel_lower(Eigen::MatrixXd& k, const Eigen::MatrixXd& dist,
                                    const KernelParams& p) {
  const auto n = dist.rows();
  const double var = p.sigma_f * p.sigma_f;
  const double rate = -std::numbers::ln2 / p.d_cor;
  k.resize(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    k.col(j).tail(n - j) = var * (rate * dist.col(j).tail(n - j)).array().exp();
  }
  k.diagonal().array() += p.sigma_n * p.sigma_n;
}

/// Log marginal likelihood given a precomputed distance matrix; `work` is
/// factored in place. This is the hot path of hyperparameter estimation.
inline double log_marginal_from_distances(const Eigen::MatrixXd& dist,
                                          const Eigen::VectorXd& residuals,
                                          const KernelParams& params, Eigen::MatrixXd& work) {
  const auto n = dist.rows();
  cholesky_in_place_with_jitter(work, params.sigma_f * params.sigma_f,
                                [&](Eigen::MatrixXd& m) { fill_noisy_kernel_lower(m, dist, params); });
  Eigen::VectorXd alpha = residuals;
  cholesky_solve_in_place(work, alpha);
  return -0.5 * residuals.dot(alpha) - 0.5 * log_det_from_cholesky(work) -
         0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

}  // namespace detail

/// Full symmetric covariance matrix over `points` (noise-free).
inline Eigen::MatrixXd build_cov(std::span<const Vec2> points, const KernelParams& params) {
  if (points.empty()) throw std::invalid_argument("build_cov: empty point set");
  const auto n = static_cast<std::ptrdiff_t>(points.size());
  const double var = params.sigma_f * params.sigma_f;
  const double rate = -std::numbers::ln2 / params.d_cor;
  Eigen::MatrixXd k(n, n);
  for (std::ptrdiff_t j = 0; j < n; ++j) {
    k(j, j) = var;
    for (std::ptrdiff_t i = j + 1; i < n; ++i) {
      const double v = var * std::exp(rate * distance(points[static_cast<std::size_t>(i)],
                                                      points[static_cast<std::size_t>(j)]));
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

/// Log marginal likelihood of the residual vector under the noisy GP prior:
/// -w' (K + sigma_n^2 I)^-1 w / 2 - log|K + sigma_n^2 I| / 2 - n log(2 pi) / 2.
inline double log_marginal_likelihood(const Eigen::VectorXd& residuals,
                                      std::span<const Vec2> points, const KernelParams& params) {
  if (static_cast<std::size_t>(residuals.size()) != points.size()) {
    throw std::invalid_argument("log_marginal_likelihood: length mismatch");
  }
  Eigen::MatrixXd work;
  return detail::log_marginal_from_distances(detail::pairwise_distances(points), residuals, params,
                                             work);
}

/// A fitted GP over fixed training data: holds the Cholesky factor of
/// K + sigma_n^2 I and the weight vector, and answers posterior queries.
/// Immutable after construction; safe to share between threads.
class GPModel {
 public:
  GPModel(std::span<const Vec2> points, const Eigen::VectorXd& residuals, KernelParams params)
      : points_(points.begin(), points.end()), params_(params) {
    params_.validate();
    if (static_cast<std::size_t>(residuals.size()) != points_.size() || points_.empty()) {
      throw std::invalid_argument("GPModel: bad training data");
    }
    const Eigen::MatrixXd dist = detail::pairwise_distances(points);
    cholesky_in_place_with_jitter(lower_, params_.sigma_f * params_.sigma_f,
                                  [&](Eigen::MatrixXd& m) {
                                    detail::fill_noisy_kernel_lower(m, dist, params_);
                                  });
    alpha_ = residuals;
    cholesky_solve_in_place(lower_, alpha_);
    log_marginal_ = -0.5 * residuals.dot(alpha_) - 0.5 * log_det_from_cholesky(lower_) -
                    0.5 * static_cast<double>(points_.size()) * std::log(2.0 * std::numbers::pi);
  }

  double log_marginal() const { return log_marginal_; }
  const KernelParams& params() const { return params_; }

  /// Posterior mean/variance of the residual field at each target.
  std::vector<GPPosterior> posterior(std::span<const Vec2> targets) const {
    const auto n = static_cast<std::ptrdiff_t>(points_.size());
    const auto m = static_cast<std::ptrdiff_t>(targets.size());
    const double var = params_.sigma_f * params_.sigma_f;
    const double rate = -std::numbers::ln2 / params_.d_cor;
    Eigen::MatrixXd kstar(n, m);
    for (std::ptrdiff_t j = 0; j < m; ++j) {
      for (std::ptrdiff_t i = 0; i < n; ++i) {
        kstar(i, j) = var * std::exp(rate * distance(points_[static_cast<std::size_t>(i)],
                                                     targets[static_cast<std::size_t>(j)]));
      }
    }
    std::vector<GPPosterior> out(targets.size());
    Eigen::VectorXd means = kstar.transpose() * alpha_;
    lower_.triangularView<Eigen::Lower>().solveInPlace(kstar);
    for (std::ptrdiff_t j = 0; j < m; ++j) {
      const double v = var - kstar.col(j).squaredNorm();
      out[static_cast<std::size_t>(j)] = {means[j], v > 0.0 ? v : 0.0};
    }
    return out;
  }

  GPPosterior posterior_at(Vec2 target) const {
    return posterior(std::span<const Vec2>(&target, 1))[0];
  }

 private:
  std::vector<Vec2> points_;
  KernelParams params_;
  Eigen::MatrixXd lower_;
  Eigen::VectorXd alpha_;
  double log_marginal_ = 0.0;
};

/// Posterior at a single target point (convenience over GPModel).
inline GPPosterior posterior(const Eigen::VectorXd& residuals, std::span<const Vec2> train_points,
                             const KernelParams& params, Vec2 x_star) {
  return GPModel(train_points, residuals, params).posterior_at(x_star);
}

}  // namespace radiomap
