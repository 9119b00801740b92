#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace radiomap {

using Objective = std::function<double(const Eigen::VectorXd&)>;
using Gradient = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct OptimOptions {
  int max_iters = 200;
  double f_abs_tol = 1e-9;      ///< absolute objective tolerance
  double f_rel_tol = 1e-8;      ///< relative objective tolerance
  double x_tol = 1e-8;          ///< parameter (simplex spread) tolerance
  double fd_rel_step = 1e-5;    ///< relative finite-difference step
  double learning_rate = 0.1;
  double beta1 = 0.9;           ///< first-moment decay
  double beta2 = 0.999;         ///< second-moment decay
  double adam_eps = 1e-8;
  int warmup = 10;              ///< iterations exempt from divergence detection
  int patience = 50;            ///< window for divergence / stall detection
  int restarts = 3;             ///< random restart count (used by MLE drivers)
  std::uint64_t seed = 0x5eed5eedULL;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double f = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Standard reflect/expand/contract/shrink simplex minimization. Non-finite
/// objective values encountered mid-run are treated as +inf; a non-finite
/// value at the start point is an input error.
inline NelderMeadResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0,
                                    const OptimOptions& opts) {
  if (opts.max_iters < 1) throw std::invalid_argument("nelder_mead: max_iters must be >= 1");
  const auto dim = x0.size();
  if (dim == 0) throw std::invalid_argument("nelder_mead: empty start point");

  const auto eval = [&](const Eigen::VectorXd& x) {
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  const double f0 = f(x0);
  if (!std::isfinite(f0)) throw std::invalid_argument("nelder_mead: objective not finite at x0");

  // Initial simplex: x0 plus 5% per-coordinate perturbations (0.05 absolute
  // for zero coordinates).
  std::vector<Eigen::VectorXd> xs(static_cast<std::size_t>(dim) + 1, x0);
  std::vector<double> fs(xs.size());
  fs[0] = f0;
  for (Eigen::Index i = 0; i < dim; ++i) {
    auto& v = xs[static_cast<std::size_t>(i) + 1];
    v[i] += (v[i] != 0.0) ? 0.05 * v[i] : 0.05;
    fs[static_cast<std::size_t>(i) + 1] = eval(v);
  }

  std::vector<std::size_t> order(xs.size());
  int iters = 0;
  bool converged = false;
  for (; iters < opts.max_iters; ++iters) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];

    double spread = 0.0;
    for (std::size_t i : order) spread = std::max(spread, (xs[i] - xs[best]).lpNorm<Eigen::Infinity>());
    const double fspread = std::isfinite(fs[worst]) ? fs[worst] - fs[best]
                                                    : std::numeric_limits<double>::infinity();
    if (fspread <= opts.f_abs_tol + opts.f_rel_tol * std::abs(fs[best]) || spread <= opts.x_tol) {
      converged = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(dim);
    for (std::size_t i : order) {
      if (i != worst) centroid += xs[i];
    }
    centroid /= static_cast<double>(dim);

    const Eigen::VectorXd reflected = centroid + (centroid - xs[worst]);
    const double fr = eval(reflected);
    if (fr < fs[best]) {
      const Eigen::VectorXd expanded = centroid + 2.0 * (centroid - xs[worst]);
      const double fe = eval(expanded);
      if (fe < fr) {
        xs[worst] = expanded;
        fs[worst] = fe;
      } else {
        xs[worst] = reflected;
        fs[worst] = fr;
      }
    } else if (fr < fs[second]) {
      xs[worst] = reflected;
      fs[worst] = fr;
    } else {
      const bool outside = fr < fs[worst];
      const Eigen::VectorXd contracted =
          outside ? centroid + 0.5 * (reflected - centroid) : centroid - 0.5 * (centroid - xs[worst]);
      const double fc = eval(contracted);
      if (fc < std::min(fr, fs[worst])) {
        xs[worst] = contracted;
        fs[worst] = fc;
      } else {
        for (std::size_t i : order) {
          if (i == best) continue;
          xs[i] = xs[best] + 0.5 * (xs[i] - xs[best]);
          fs[i] = eval(xs[i]);
        }
      }
    }
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < fs.size(); ++i) {
    if (fs[i] < fs[best]) best = i;
  }
  return {xs[best], fs[best], iters, converged};
}

struct AscentTracePoint {
  double objective = 0.0;
  double step_norm = 0.0;
};

struct AscentResult {
  Eigen::VectorXd x;  ///< best-seen iterate
  double f = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool diverged = false;
  std::vector<AscentTracePoint> trace;
};

/// Combined objective: returns the value at x and fills the gradient. Costly
/// objectives share work between the two.
using FgObjective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

/// Rectified adaptive-moment gradient ascent with tail iterate averaging.
/// Maximizes the objective; returns the best-seen iterate (or the tail
/// average when it scores higher). Divergence — the objective strictly
/// decreasing for `patience` consecutive iterations beyond warmup — stops the
/// run with the flag set; the best-seen iterate is still returned.
inline AscentResult adaptive_gradient_ascent(const FgObjective& fg, const Eigen::VectorXd& x0,
                                             const OptimOptions& opts) {
  if (opts.max_iters < 1) {
    throw std::invalid_argument("adaptive_gradient_ascent: max_iters must be >= 1");
  }
  const auto dim = x0.size();
  const double rho_inf = 2.0 / (1.0 - opts.beta2) - 1.0;

  Eigen::VectorXd x = x0;
  Eigen::VectorXd g(dim);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd avg = Eigen::VectorXd::Zero(dim);
  int avg_count = 0;
  const int avg_start = std::max(opts.max_iters / 2, 1);

  AscentResult res;
  res.x = x0;

  double f_prev = std::numeric_limits<double>::infinity();
  double last_step = 0.0;
  int decreasing = 0;
  int stalled = 0;
  double beta1_t = 1.0, beta2_t = 1.0;
  for (int t = 1; t <= opts.max_iters; ++t) {
    res.iterations = t;
    double f_cur = fg(x, g);
    if (t == 1 && !std::isfinite(f_cur)) {
      throw std::invalid_argument("adaptive_gradient_ascent: objective not finite at x0");
    }
    if (!std::isfinite(f_cur) || !g.allFinite()) {
      // Retreat halfway toward the best-seen iterate and retry; give up on
      // repeated failure.
      bool recovered = false;
      for (int attempt = 0; attempt < 8 && !recovered; ++attempt) {
        x = 0.5 * (x + res.x);
        f_cur = fg(x, g);
        recovered = std::isfinite(f_cur) && g.allFinite();
      }
      if (!recovered) {
        res.diverged = true;
        break;
      }
    }
    res.trace.push_back({f_cur, last_step});

    const double improvement = f_cur - res.f;
    if (f_cur > res.f) {
      res.f = f_cur;
      res.x = x;
    }
    if (improvement > opts.f_abs_tol + opts.f_rel_tol * std::abs(res.f)) {
      stalled = 0;
    } else if (++stalled >= opts.patience && t > opts.warmup) {
      break;  // settled
    }
    if (f_cur < f_prev && t > opts.warmup) {
      if (++decreasing >= opts.patience) {
        res.diverged = true;
        break;
      }
    } else {
      decreasing = 0;
    }
    f_prev = f_cur;

    m = opts.beta1 * m + (1.0 - opts.beta1) * g;
    v = opts.beta2 * v + (1.0 - opts.beta2) * g.cwiseProduct(g);
    beta1_t *= opts.beta1;
    beta2_t *= opts.beta2;
    const Eigen::VectorXd m_hat = m / (1.0 - beta1_t);
    const double rho_t = rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t);

    Eigen::VectorXd step;
    if (rho_t > 5.0) {
      const double rect = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                                    ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
      const Eigen::VectorXd v_hat = (v / (1.0 - beta2_t)).cwiseSqrt();
      step = opts.learning_rate * rect *
             m_hat.cwiseQuotient(v_hat + Eigen::VectorXd::Constant(dim, opts.adam_eps));
    } else {
      step = opts.learning_rate * m_hat;
    }
    x += step;
    last_step = step.norm();

    if (t >= avg_start) {
      avg += x;
      ++avg_count;
    }
  }

  if (avg_count > 1) {
    const Eigen::VectorXd mean_x = avg / static_cast<double>(avg_count);
    const double f_avg = fg(mean_x, g);
    if (std::isfinite(f_avg) && f_avg > res.f) {
      res.f = f_avg;
      res.x = mean_x;
    }
  }
  return res;
}

/// Two-callback form; `grad` must be consistent with `f`.
inline AscentResult adaptive_gradient_ascent(const Objective& f, const Gradient& grad,
                                             const Eigen::VectorXd& x0, const OptimOptions& opts) {
  const FgObjective fg = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = grad(x);
    return f(x);
  };
  return adaptive_gradient_ascent(fg, x0, opts);
}

/// Central finite differences with per-coordinate step rel_step * max(|x_i|, 1).
inline Eigen::VectorXd finite_diff_grad(const Objective& f, const Eigen::VectorXd& x,
                                        double rel_step) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = rel_step * std::max(std::abs(x[i]), 1.0);
    xp[i] = x[i] + h;
    const double fp = f(xp);
    xp[i] = x[i] - h;
    const double fm = f(xp);
    xp[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error("finite_diff_grad: non-finite objective at coordinate " +
                               std::to_string(i));
    }
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace radiomap
