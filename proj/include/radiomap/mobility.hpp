#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "radiomap/rng.hpp"
#include "radiomap/vec2.hpp"

namespace radiomap {

/// Levy-Walk mobility: heavy-tailed flights alternating with heavy-tailed
/// pauses inside a rectangular area, sampled on a fixed clock.
struct LevyWalkParams {
  double alpha = 0.5;          ///< flight-length power-law exponent
  double beta = 1.0;           ///< pause-time power-law exponent
  Vec2 area_min{0.0, 0.0};     ///< deployment area lower corner [m]
  Vec2 area_max{500.0, 500.0}; ///< deployment area upper corner [m]
  double speed_factor = 1.0;   ///< walking speed [m/s]; flight duration = length / speed_factor
  double step_min = 1.0;       ///< flight length truncation [m]
  double step_max = 500.0;
  double pause_min = 1.0;      ///< pause duration truncation [s]
  double pause_max = 120.0;

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 2.0)) throw std::invalid_argument("LevyWalkParams: alpha must be in (0, 2]");
    if (!(beta > 0.0 && beta <= 2.0)) throw std::invalid_argument("LevyWalkParams: beta must be in (0, 2]");
    if (!(area_max.x > area_min.x && area_max.y > area_min.y)) {
      throw std::invalid_argument("LevyWalkParams: area_max must exceed area_min componentwise");
    }
    if (!(speed_factor > 0.0)) throw std::invalid_argument("LevyWalkParams: speed_factor must be > 0");
    if (!(step_min > 0.0 && step_max >= step_min)) {
      throw std::invalid_argument("LevyWalkParams: step bounds must be positive and ordered");
    }
    if (!(pause_min > 0.0 && pause_max >= pause_min)) {
      throw std::invalid_argument("LevyWalkParams: pause bounds must be positive and ordered");
    }
  }
};

/// True sensor positions at t = tau, 2*tau, ..., duration.
struct Trajectory {
  std::vector<Vec2> positions;
  double tau = 0.0;      ///< sampling interval [s]
  double duration = 0.0; ///< total observation time T [s]
};

/// Inverse-CDF draw from a Pareto(shape) distribution truncated to [lo, hi].
inline double truncated_pareto(double shape, double lo, double hi, double u) {
  if (hi <= lo) return lo;
  const double tail = 1.0 - std::pow(lo / hi, shape);
  return lo / std::pow(1.0 - u * tail, 1.0 / shape);
}

namespace detail {

/// Specular reflection of a scalar coordinate into [lo, hi].
inline double fold_coordinate(double v, double lo, double hi) {
  const double span = hi - lo;
  double r = std::fmod(v - lo, 2.0 * span);
  if (r < 0.0) r += 2.0 * span;
  return lo + (r <= span ? r : 2.0 * span - r);
}

inline Vec2 fold_into_area(Vec2 v, const LevyWalkParams& p) {
  return {fold_coordinate(v.x, p.area_min.x, p.area_max.x),
          fold_coordinate(v.y, p.area_min.y, p.area_max.y)};
}

}  // namespace detail

/// Generates one Levy-Walk trajectory sampled every tau seconds for T seconds.
/// Flight lengths and pause times are truncated Pareto draws; directions are
/// uniform; area walls reflect specularly.
inline Trajectory generate_trajectory(const LevyWalkParams& params, double total_time, double tau,
                                      Rng& rng) {
  params.validate();
  if (!(total_time > 0.0 && tau > 0.0)) {
    throw std::invalid_argument("generate_trajectory: T and tau must be > 0");
  }
  const double ratio = total_time / tau;
  const auto sample_count = static_cast<std::size_t>(std::llround(ratio));
  if (sample_count == 0 || std::abs(ratio - static_cast<double>(sample_count)) > 1e-9 * ratio) {
    throw std::invalid_argument("generate_trajectory: T must be divisible by tau");
  }

  Trajectory traj;
  traj.tau = tau;
  traj.duration = total_time;
  traj.positions.reserve(sample_count);

  Vec2 pos{rng.uniform(params.area_min.x, params.area_max.x),
           rng.uniform(params.area_min.y, params.area_max.y)};
  double t = 0.0;
  std::size_t next = 1;  // next sample index; sample time = next * tau
  bool flying = true;
  while (next <= sample_count) {
    if (flying) {
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double length = truncated_pareto(params.alpha, params.step_min, params.step_max,
                                             rng.uniform01());
      const Vec2 velocity{params.speed_factor * std::cos(angle),
                          params.speed_factor * std::sin(angle)};
      const double dur = length / params.speed_factor;
      while (next <= sample_count && static_cast<double>(next) * tau <= t + dur) {
        const double dt = static_cast<double>(next) * tau - t;
        traj.positions.push_back(detail::fold_into_area(pos + dt * velocity, params));
        ++next;
      }
      pos = detail::fold_into_area(pos + dur * velocity, params);
      t += dur;
    } else {
      const double dur = truncated_pareto(params.beta, params.pause_min, params.pause_max,
                                          rng.uniform01());
      while (next <= sample_count && static_cast<double>(next) * tau <= t + dur) {
        traj.positions.push_back(pos);
        ++next;
      }
      t += dur;
    }
    flying = !flying;
  }
  return traj;
}

}  // namespace radiomap
