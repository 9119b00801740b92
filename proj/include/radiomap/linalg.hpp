#pragma once

#include <Eigen/Dense>
#include <stdexcept>

namespace radiomap {

/// Jitter schedule for ill-conditioned kernel matrices: the first attempt adds
/// rel_start * scale to the diagonal and escalates tenfold up to rel_max *
/// scale before giving up.
struct JitterPolicy {
  double rel_start = 1e-10;
  double rel_max = 1e-4;
};

/// Factors a symmetric positive (semi)definite matrix in place, writing the
/// Cholesky factor L into the lower triangle of `a`. `rebuild(a)` must fill at
/// least the lower triangle; it is called again on each retry because a failed
/// in-place factorization destroys the buffer. Returns the jitter that was
/// added to the diagonal. Throws std::runtime_error when the factorization
/// still fails at the maximum jitter.
template <class Rebuild>
double cholesky_in_place_with_jitter(Eigen::MatrixXd& a, double scale, Rebuild&& rebuild,
                                     JitterPolicy policy = {}) {
  double rel = policy.rel_start;
  for (;;) {
    rebuild(a);
    const double jitter = rel * scale;
    if (jitter > 0.0) a.diagonal().array() += jitter;
    Eigen::LLT<Eigen::Ref<Eigen::MatrixXd>> llt(a);
    if (llt.info() == Eigen::Success) return jitter;
    rel *= 10.0;
    if (rel > policy.rel_max * (1.0 + 1e-12)) {
      throw std::runtime_error("Cholesky factorization failed at maximum jitter");
    }
  }
}

/// log|A| from the in-place factor produced above (lower triangle holds L).
inline double log_det_from_cholesky(const Eigen::MatrixXd& lower) {
  return 2.0 * lower.diagonal().array().log().sum();
}

/// Solves A x = b given the in-place Cholesky factor of A.
inline void cholesky_solve_in_place(const Eigen::MatrixXd& lower, Eigen::Ref<Eigen::VectorXd> x) {
  lower.triangularView<Eigen::Lower>().solveInPlace(x);
  lower.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
}

inline void cholesky_solve_in_place(const Eigen::MatrixXd& lower, Eigen::Ref<Eigen::MatrixXd> x) {
  lower.triangularView<Eigen::Lower>().solveInPlace(x);
  lower.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
}

inline Eigen::VectorXd cholesky_solve(const Eigen::MatrixXd& lower, const Eigen::VectorXd& b) {
  Eigen::VectorXd x = b;
  cholesky_solve_in_place(lower, x);
  return x;
}

/// A^-1 from the in-place Cholesky factor (dense; used by analytic gradients).
inline Eigen::MatrixXd cholesky_inverse(const Eigen::MatrixXd& lower) {
  Eigen::MatrixXd inv = Eigen::MatrixXd::Identity(lower.rows(), lower.cols());
  cholesky_solve_in_place(lower, inv);
  return inv;
}

}  // namespace radiomap
