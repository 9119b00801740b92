#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "radiomap/env_model.hpp"
#include "radiomap/mobility.hpp"
#include "radiomap/rng.hpp"
#include "radiomap/vec2.hpp"

namespace radiomap {

/// Constant per-sensor positioning bias. epsilon is one draw from
/// N(0, diag(sigma^2)) held fixed for the whole trajectory.
struct SensorBias {
  Vec2 epsilon;
  Vec2 sigma;
};

inline SensorBias draw_bias(Vec2 sigma, Rng& rng) {
  if (!(sigma.x > 0.0 && sigma.y > 0.0)) {
    throw std::invalid_argument("draw_bias: sigma must be componentwise > 0");
  }
  return {{rng.normal(0.0, sigma.x), rng.normal(0.0, sigma.y)}, sigma};
}

/// Server-visible records of one sensor, plus a sealed evaluation-only
/// section. Estimators must consume DatasetView and never touch `eval`.
struct LocalDataset {
  int sensor_id = 0;
  std::vector<Vec2> reported_positions;
  std::vector<double> powers;
  Vec2 bias_sigma;  ///< known at the server

  struct Eval {
    std::vector<Vec2> true_positions;
    Vec2 true_bias;
  } eval;
};

/// Observes one trajectory against the ground-truth field: powers get i.i.d.
/// Gaussian noise, reported positions get the constant sensor bias. The
/// trajectory must be the contiguous slice of field points starting at
/// `field_offset`.
inline LocalDataset observe(const Trajectory& traj, const ShadowingField& field,
                            std::size_t field_offset, const SensorBias& bias, double sigma_n,
                            Rng& rng, int sensor_id) {
  if (sigma_n < 0.0) throw std::invalid_argument("observe: sigma_n must be >= 0");
  const std::size_t m = traj.positions.size();
  if (field_offset + m > field.points.size()) {
    throw std::logic_error("observe: trajectory slice exceeds field extent");
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (field.points[field_offset + j] != traj.positions[j]) {
      throw std::logic_error("observe: trajectory positions do not match the field slice");
    }
  }

  LocalDataset d;
  d.sensor_id = sensor_id;
  d.bias_sigma = bias.sigma;
  d.reported_positions.reserve(m);
  d.powers.reserve(m);
  d.eval.true_positions = traj.positions;
  d.eval.true_bias = bias.epsilon;
  for (std::size_t j = 0; j < m; ++j) {
    d.reported_positions.push_back(traj.positions[j] + bias.epsilon);
    d.powers.push_back(true_received_power(field, field_offset + j) + rng.normal(0.0, sigma_n));
  }
  return d;
}

/// Estimator-facing view of a merged dataset: reported positions, powers,
/// per-sensor boundaries and the known bias standard deviations. True
/// positions and biases are not reachable through this type.
struct DatasetView {
  std::span<const Vec2> reported_positions;
  std::span<const double> powers;
  std::span<const std::size_t> offsets;  ///< size sensor_count()+1, prefix sums
  std::span<const Vec2> bias_sigma;      ///< size sensor_count()

  std::size_t size() const { return powers.size(); }
  std::size_t sensor_count() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::pair<std::size_t, std::size_t> sensor_range(std::size_t i) const {
    return {offsets[i], offsets[i + 1]};
  }
};

/// Ordered concatenation of per-sensor datasets.
struct MergedDataset {
  std::vector<Vec2> reported_positions;
  std::vector<double> powers;
  std::vector<std::size_t> offsets;  ///< N+1 prefix sums
  std::vector<int> sensor_ids;
  std::vector<Vec2> bias_sigma;

  struct Eval {
    std::vector<Vec2> true_positions;   ///< dataset order
    std::vector<Vec2> true_bias;        ///< one per sensor
  } eval;

  std::size_t size() const { return powers.size(); }
  std::size_t sensor_count() const { return sensor_ids.size(); }

  DatasetView view() const { return {reported_positions, powers, offsets, bias_sigma}; }
};

inline MergedDataset merge(const std::vector<LocalDataset>& locals) {
  if (locals.empty()) throw std::invalid_argument("merge: empty dataset list");
  std::unordered_set<int> ids;
  MergedDataset m;
  m.offsets.push_back(0);
  for (const auto& d : locals) {
    if (!ids.insert(d.sensor_id).second) {
      throw std::invalid_argument("merge: duplicate sensor_id " + std::to_string(d.sensor_id));
    }
    if (d.reported_positions.size() != d.powers.size() ||
        d.reported_positions.size() != d.eval.true_positions.size()) {
      throw std::logic_error("merge: inconsistent record lengths");
    }
    m.reported_positions.insert(m.reported_positions.end(), d.reported_positions.begin(),
                                d.reported_positions.end());
    m.powers.insert(m.powers.end(), d.powers.begin(), d.powers.end());
    m.eval.true_positions.insert(m.eval.true_positions.end(), d.eval.true_positions.begin(),
                                 d.eval.true_positions.end());
    m.offsets.push_back(m.reported_positions.size());
    m.sensor_ids.push_back(d.sensor_id);
    m.bias_sigma.push_back(d.bias_sigma);
    m.eval.true_bias.push_back(d.eval.true_bias);
  }
  return m;
}

}  // namespace radiomap
