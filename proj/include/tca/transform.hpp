#pragma once

#include <cmath>
#include <cstdio>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "tca/error.hpp"
#include "tca/linalg.hpp"

namespace tca {

/// Affine alignment z -> (z - mu_t) W + mu_s_hat, applied to row vectors.
struct AlignmentTransform {
  Matrix w;
  Vector mu_t;
  Vector mu_s_hat;

  [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(w.rows()); }

  static AlignmentTransform identity(std::size_t d) {
    const auto n = static_cast<Eigen::Index>(d);
    return {Matrix::Identity(n, n), Vector::Zero(n), Vector::Zero(n)};
  }
};

/// Raised when gradient descent produces a non-finite objective. Carries the
/// last finite iterate.
class DivergedError : public Error {
 public:
  DivergedError(const std::string& what, Matrix last_finite)
      : Error(ErrorKind::Diverged, what), last_finite_(std::move(last_finite)) {}

  [[nodiscard]] const Matrix& last_finite() const noexcept { return last_finite_; }

 private:
  Matrix last_finite_;
};

struct SolverTrace {
  std::vector<double> objective_values;  // entry 0 is the initial iterate
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {

inline void require_same_square(const Matrix& a, const Matrix& b, const Matrix& c) {
  require(a.rows() == a.cols() && a.rows() >= 1 && b.rows() == a.rows() && b.cols() == a.cols() &&
              c.rows() == a.rows() && c.cols() == a.cols(),
          ErrorKind::InvalidInput, "matrices must all be d x d with the same d");
}

}  // namespace detail

/// ||W^T sigma_t W - sigma_s_hat||_F^2.
inline double objective(const Matrix& w, const Matrix& sigma_t, const Matrix& sigma_s_hat) {
  detail::require_same_square(w, sigma_t, sigma_s_hat);
  return (w.transpose() * sigma_t * w - sigma_s_hat).squaredNorm();
}

/// Gradient of objective() with respect to W: 4 sigma_t W (W^T sigma_t W - sigma_s_hat).
inline Matrix objective_gradient(const Matrix& w, const Matrix& sigma_t, const Matrix& sigma_s_hat) {
  detail::require_same_square(w, sigma_t, sigma_s_hat);
  const Matrix residual = w.transpose() * sigma_t * w - sigma_s_hat;
  return 4.0 * sigma_t * w * residual;
}

/// Whitening-recoloring solution W = (sigma_t^reg)^(-1/2) (sigma_s_hat^reg)^(1/2),
/// where ^reg is shrink(., eps). Satisfies W^T sigma_t^reg W = sigma_s_hat^reg.
inline Matrix solve_closed_form(const Matrix& sigma_t, const Matrix& sigma_s_hat, double eps = kDefaultShrink) {
  require(sigma_t.rows() == sigma_s_hat.rows() && sigma_t.cols() == sigma_s_hat.cols(), ErrorKind::InvalidInput,
          "covariances must have the same shape");
  const Matrix whiten = spd_power(shrink(sigma_t, eps), -0.5);
  const Matrix recolor = spd_power(shrink(sigma_s_hat, eps), 0.5);
  return whiten * recolor;
}

struct GradientOptions {
  double lr = 1e-3;
  std::size_t max_iters = 1000;
  double tol = 1e-9;
  std::size_t patience = 10;
  /// Called with (iteration, W, objective) for iteration 0 and after every step.
  std::function<void(std::size_t, const Matrix&, double)> observer;
};

struct GradientResult {
  Matrix w;
  SolverTrace trace;
};

/// Fixed-step gradient descent on objective(). Returns the best iterate seen.
/// Stops early once the relative improvement stays below `tol` for
/// `patience` consecutive steps. Inputs are used as given; callers that want
/// the regularized objective pass shrink()ed covariances.
inline GradientResult solve_gradient(const Matrix& sigma_t, const Matrix& sigma_s_hat, const Matrix& init,
                                     const GradientOptions& opts = {}) {
  detail::require_same_square(init, sigma_t, sigma_s_hat);
  require(opts.lr > 0.0 && std::isfinite(opts.lr), ErrorKind::InvalidInput, "learning rate must be > 0");
  require(opts.max_iters >= 1, ErrorKind::InvalidInput, "max_iters must be >= 1");
  require(init.allFinite(), ErrorKind::InvalidInput, "initial W must be finite");

  GradientResult out{init, {}};
  Matrix w = init;
  double current = objective(w, sigma_t, sigma_s_hat);
  require(std::isfinite(current), ErrorKind::Diverged, "initial objective is not finite");
  double best = current;
  out.trace.objective_values.push_back(current);
  if (opts.observer) opts.observer(0, w, current);

  std::size_t stalled = 0;
  for (std::size_t it = 1; it <= opts.max_iters; ++it) {
    Matrix next_w = w - opts.lr * objective_gradient(w, sigma_t, sigma_s_hat);
    const double next = next_w.allFinite() ? objective(next_w, sigma_t, sigma_s_hat)
                                           : std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(next)) {
      char msg[128];
      std::snprintf(msg, sizeof msg, "gradient descent diverged at iteration %zu; last finite objective %.6g", it,
                    current);
      throw DivergedError(msg, w);
    }
    w = std::move(next_w);
    out.trace.objective_values.push_back(next);
    out.trace.iterations = it;
    if (opts.observer) opts.observer(it, w, next);
    if (next < best) {
      best = next;
      out.w = w;
    }

    const double scale = std::max(std::abs(current), std::numeric_limits<double>::min());
    const double improvement = (current - next) / scale;
    stalled = improvement < opts.tol ? stalled + 1 : 0;
    current = next;
    if (stalled >= opts.patience) {
      out.trace.converged = true;
      break;
    }
  }
  return out;
}

/// Maps each row z_i to (z_i - mu_t) W + mu_s_hat.
inline EmbeddingBatch apply_transform(const EmbeddingBatch& z, const AlignmentTransform& t) {
  require(t.w.rows() == t.w.cols() && z.dim() == t.dim() && static_cast<std::size_t>(t.mu_t.size()) == t.dim() &&
              static_cast<std::size_t>(t.mu_s_hat.size()) == t.dim(),
          ErrorKind::InvalidInput, "transform dimension does not match the embeddings");
  Matrix out = (z.matrix().rowwise() - t.mu_t.transpose()) * t.w;
  out.rowwise() += t.mu_s_hat.transpose();
  return EmbeddingBatch(std::move(out));
}

}  // namespace tca
