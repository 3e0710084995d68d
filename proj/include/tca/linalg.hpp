#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "tca/error.hpp"

namespace tca {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// n x d matrix of embeddings, one instance per row. Always finite and
/// non-empty; everything downstream assumes this.
class EmbeddingBatch {
 public:
  explicit EmbeddingBatch(Matrix data) : data_(std::move(data)) {
    require(data_.rows() >= 1 && data_.cols() >= 1, ErrorKind::InvalidInput,
            "embedding batch must have at least one row and one column");
    require(data_.allFinite(), ErrorKind::InvalidInput, "embedding batch contains non-finite values");
  }

  [[nodiscard]] const Matrix& matrix() const noexcept { return data_; }
  [[nodiscard]] std::size_t rows() const noexcept { return static_cast<std::size_t>(data_.rows()); }
  [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(data_.cols()); }
  [[nodiscard]] auto row(std::size_t i) const { return data_.row(static_cast<Eigen::Index>(i)); }

  /// Rows [first, first + count) as a new batch.
  [[nodiscard]] EmbeddingBatch slice(std::size_t first, std::size_t count) const {
    require(count >= 1 && first + count <= rows(), ErrorKind::InvalidInput, "slice out of range");
    return EmbeddingBatch(data_.middleRows(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(count)));
  }

 private:
  Matrix data_;
};

/// Mean and covariance of a set of embeddings.
struct Moments {
  Vector mean;
  Matrix sigma;
};

namespace detail {

inline double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

inline bool is_symmetric(const Matrix& m, double tol = 1e-9) {
  if (m.rows() != m.cols()) return false;
  return max_abs(m - m.transpose()) <= tol * std::max(1.0, max_abs(m));
}

inline void require_square_symmetric(const Matrix& m, const char* what) {
  require(m.rows() == m.cols() && m.rows() >= 1, ErrorKind::InvalidInput, std::string(what) + " must be square");
  require(is_symmetric(m), ErrorKind::InvalidInput, std::string(what) + " is not symmetric");
}

// Column mean and centered scatter (Z - 1 mu^T)^T (Z - 1 mu^T), two-pass.
inline std::pair<Vector, Matrix> mean_and_scatter(const Matrix& z) {
  Vector mean = z.colwise().mean().transpose();
  Matrix centered = z.rowwise() - mean.transpose();
  Matrix scatter = centered.transpose() * centered;
  scatter = (0.5 * (scatter + scatter.transpose())).eval();
  return {std::move(mean), std::move(scatter)};
}

}  // namespace detail

/// Sample mean and unbiased covariance (centered scatter over n - 1).
inline Moments covariance(const EmbeddingBatch& z) {
  require(z.rows() >= 2, ErrorKind::InsufficientSamples, "covariance needs at least two rows");
  auto [mean, scatter] = detail::mean_and_scatter(z.matrix());
  scatter /= static_cast<double>(z.rows() - 1);
  return {std::move(mean), std::move(scatter)};
}

/// Scaled squared Frobenius distance ||a - b||_F^2 / (4 d^2) between two
/// covariance matrices.
inline double correlation_distance(const Matrix& a, const Matrix& b) {
  require(a.rows() == a.cols() && a.rows() == b.rows() && a.cols() == b.cols() && a.rows() >= 1,
          ErrorKind::InvalidInput, "correlation_distance needs two d x d matrices of the same shape");
  const double d = static_cast<double>(a.rows());
  return (a - b).squaredNorm() / (4.0 * d * d);
}

inline constexpr double kShrinkFloor = 1e-12;
inline constexpr double kDefaultShrink = 1e-3;

/// Trace-scaled ridge: sigma + (eps * trace / d + 1e-12) I.
inline Matrix shrink(const Matrix& sigma, double eps) {
  detail::require_square_symmetric(sigma, "shrink input");
  require(eps >= 0.0 && std::isfinite(eps), ErrorKind::InvalidInput, "shrinkage eps must be finite and >= 0");
  const double d = static_cast<double>(sigma.rows());
  const double lambda = eps * (sigma.trace() / d) + kShrinkFloor;
  Matrix out = sigma;
  out.diagonal().array() += lambda;
  return out;
}

/// Eigenvectors as columns of `vectors`, eigenvalues ascending.
struct EigPair {
  Matrix vectors;
  Vector values;
};

/// Symmetric eigendecomposition. Each eigenvector is signed so that its
/// largest-magnitude component (lowest index on ties) is nonnegative.
inline EigPair sym_eig(const Matrix& sigma) {
  detail::require_square_symmetric(sigma, "sym_eig input");
  const Matrix sym = 0.5 * (sigma + sigma.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) fail(ErrorKind::NumericalFailure, "symmetric eigensolver did not converge");

  EigPair out{solver.eigenvectors(), solver.eigenvalues()};
  if (!out.vectors.allFinite() || !out.values.allFinite()) {
    fail(ErrorKind::NumericalFailure, "symmetric eigensolver produced non-finite output");
  }
  for (Eigen::Index j = 0; j < out.vectors.cols(); ++j) {
    Eigen::Index pivot = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < out.vectors.rows(); ++i) {
      const double mag = std::abs(out.vectors(i, j));
      if (mag > best) {
        best = mag;
        pivot = i;
      }
    }
    if (out.vectors(pivot, j) < 0.0) out.vectors.col(j) = -out.vectors.col(j);
  }
  return out;
}

/// U diag(lambda^p) U^T for a symmetric positive (semi-)definite matrix.
/// Eigenvalues within the PSD round-off band are clamped to zero for p >= 0.
inline Matrix spd_power(const Matrix& sigma, double p) {
  const EigPair eig = sym_eig(sigma);
  const double tol = 1e-9 * std::max(1.0, std::abs(sigma.trace()));
  Vector powered(eig.values.size());
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
    double lambda = eig.values(i);
    if (p < 0.0) {
      require(lambda > 0.0, ErrorKind::SingularMatrix, "negative power of a matrix with a non-positive eigenvalue");
    } else if (lambda < 0.0) {
      require(lambda >= -tol, ErrorKind::InvalidInput, "matrix is not positive semi-definite");
      lambda = 0.0;
    }
    powered(i) = p == 0.0 ? 1.0 : std::pow(lambda, p);
  }
  Matrix out = eig.vectors * powered.asDiagonal() * eig.vectors.transpose();
  return 0.5 * (out + out.transpose());
}

/// Streaming mean/scatter accumulator. Batches are folded in with the
/// pairwise (Chan et al.) combination, so any in-order partition of the rows
/// finalizes to the same moments as covariance() on the concatenation.
class CovarianceStats {
 public:
  explicit CovarianceStats(std::size_t dim)
      : dim_(dim), mean_(Vector::Zero(static_cast<Eigen::Index>(dim))),
        scatter_(Matrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim))) {
    require(dim >= 1, ErrorKind::InvalidInput, "accumulator dimension must be >= 1");
  }

  void accumulate(const EmbeddingBatch& batch) {
    require(batch.dim() == dim_, ErrorKind::InvalidInput,
            "batch dimension " + std::to_string(batch.dim()) + " does not match accumulator dimension " +
                std::to_string(dim_));
    auto [mean, scatter] = detail::mean_and_scatter(batch.matrix());
    merge_moments(batch.rows(), mean, scatter);
  }

  void merge(const CovarianceStats& other) {
    require(other.dim_ == dim_, ErrorKind::InvalidInput, "cannot merge accumulators of different dimension");
    if (other.count_ == 0) return;
    merge_moments(other.count_, other.mean_, other.scatter_);
  }

  [[nodiscard]] Moments finalize() const {
    require(count_ >= 2, ErrorKind::InsufficientSamples, "finalize needs at least two accumulated rows");
    return {mean_, scatter_ / static_cast<double>(count_ - 1)};
  }

  [[nodiscard]] std::size_t count() const noexcept { return count_; }
  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] const Vector& mean() const noexcept { return mean_; }
  [[nodiscard]] const Matrix& scatter() const noexcept { return scatter_; }

 private:
  void merge_moments(std::size_t n_b, const Vector& mean_b, const Matrix& scatter_b) {
    if (count_ == 0) {
      count_ = n_b;
      mean_ = mean_b;
      scatter_ = scatter_b;
      return;
    }
    const double na = static_cast<double>(count_);
    const double nb = static_cast<double>(n_b);
    const double n = na + nb;
    const Vector delta = mean_b - mean_;
    mean_ += delta * (nb / n);
    scatter_ += scatter_b + (delta * delta.transpose()) * (na * nb / n);
    scatter_ = (0.5 * (scatter_ + scatter_.transpose())).eval();
    count_ += n_b;
  }

  std::size_t dim_;
  std::size_t count_ = 0;
  Vector mean_;
  Matrix scatter_;
};

/// Functional form of CovarianceStats::accumulate.
inline CovarianceStats accumulate(CovarianceStats stats, const EmbeddingBatch& batch) {
  stats.accumulate(batch);
  return stats;
}

inline Moments finalize(const CovarianceStats& stats) { return stats.finalize(); }

}  // namespace tca
