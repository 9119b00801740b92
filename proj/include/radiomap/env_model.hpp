#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "radiomap/linalg.hpp"
#include "radiomap/rng.hpp"
#include "radiomap/vec2.hpp"

namespace radiomap {

/// Ground-truth channel constants: log-distance path loss plus a spatially
/// correlated shadowing field with exponential (half-correlation-length)
/// covariance, observed under additive Gaussian noise.
struct PropagationParams {
  double p_tx_dbm = 10.0;  ///< transmit power [dBm]
  double eta = 4.0;        ///< path loss index
  Vec2 x_tx{0.0, 250.0};   ///< transmitter coordinate [m]
  double sigma_f = 8.0;    ///< shadowing standard deviation [dB]
  double d_cor = 20.0;     ///< correlation length (half-correlation distance) [m]
  double sigma_n = 1.0;    ///< observation noise standard deviation [dB]

  void validate() const {
    if (!(eta > 0.0)) throw std::invalid_argument("PropagationParams: eta must be > 0");
    if (!(sigma_f >= 0.0)) throw std::invalid_argument("PropagationParams: sigma_f must be >= 0");
    if (!(d_cor > 0.0)) throw std::invalid_argument("PropagationParams: d_cor must be > 0");
    if (!(sigma_n >= 0.0)) throw std::invalid_argument("PropagationParams: sigma_n must be >= 0");
  }
};

/// Mean received power at x: p_tx - 10 * eta * log10(||x_tx - x||).
inline double mean_power(const PropagationParams& p, Vec2 x) {
  const double d = distance(p.x_tx, x);
  if (d <= 0.0) throw std::domain_error("mean_power: point coincides with the transmitter");
  return p.p_tx_dbm - 10.0 * p.eta * std::log10(d);
}

/// Exponential shadowing covariance. Correlation halves at distance d_cor.
inline double exp_kernel(const PropagationParams& p, Vec2 a, Vec2 b) {
  return p.sigma_f * p.sigma_f * std::exp(-distance(a, b) * std::numbers::ln2 / p.d_cor);
}

/// One joint draw of the shadowing field at a fixed point set.
struct ShadowingField {
  std::vector<Vec2> points;
  std::vector<double> values;  ///< shadowing [dB], one per point
  PropagationParams params;
};

/// Draws the shadowing values at `points` jointly from N(0, K), with K built
/// from exp_kernel. Duplicate points are allowed; the jitter schedule absorbs
/// the resulting singularity.
inline ShadowingField sample_shadowing(std::vector<Vec2> points, const PropagationParams& params,
                                       Rng& rng) {
  params.validate();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(points.size());
  if (n == 0) throw std::invalid_argument("sample_shadowing: empty point set");

  Eigen::VectorXd z(n);
  for (std::ptrdiff_t i = 0; i < n; ++i) z[i] = rng.normal();

  if (params.sigma_f == 0.0) {
    return {std::move(points), std::vector<double>(static_cast<std::size_t>(n), 0.0), params};
  }

  const double var = params.sigma_f * params.sigma_f;
  const double rate = -std::numbers::ln2 / params.d_cor;
  Eigen::MatrixXd k(n, n);
  cholesky_in_place_with_jitter(k, var, [&](Eigen::MatrixXd& m) {
    for (std::ptrdiff_t j = 0; j < n; ++j) {
      for (std::ptrdiff_t i = j; i < n; ++i) {
        m(i, j) = var * std::exp(rate * distance(points[static_cast<std::size_t>(i)],
                                                 points[static_cast<std::size_t>(j)]));
      }
    }
  });

  const Eigen::VectorXd v = k.triangularView<Eigen::Lower>() * z;
  return {std::move(points), std::vector<double>(v.data(), v.data() + n), params};
}

/// Noiseless received power at a sampled field point.
inline double true_received_power(const ShadowingField& field, std::size_t index) {
  if (index >= field.points.size()) {
    throw std::out_of_range("true_received_power: point index out of range");
  }
  return mean_power(field.params, field.points[index]) + field.values[index];
}

}  // namespace radiomap
