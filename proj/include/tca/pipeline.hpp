#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string_view>
#include <vector>

#include "tca/error.hpp"
#include "tca/linalg.hpp"
#include "tca/metrics.hpp"
#include "tca/model_head.hpp"
#include "tca/pseudo_source.hpp"
#include "tca/transform.hpp"

namespace tca {

enum class SolverKind { Closed, Gradient };
enum class AdaptMode { Transductive, Online };

struct AdaptConfig {
  std::size_t k = 30;
  double eps = kDefaultShrink;
  SolverKind solver = SolverKind::Closed;
  double lr = 1e-3;
  std::size_t max_iters = 1000;
  double tol = 1e-9;
  SelectionMode selection = SelectionMode::Global;
  AdaptMode mode = AdaptMode::Transductive;
  std::size_t batch_size = 64;

  void validate() const {
    require(k >= 2, ErrorKind::InvalidConfig, "k must be >= 2");
    require(batch_size >= 1, ErrorKind::InvalidConfig, "batch size must be >= 1");
    require(eps >= 0.0 && std::isfinite(eps), ErrorKind::InvalidConfig, "eps must be finite and >= 0");
    require(lr > 0.0 && std::isfinite(lr), ErrorKind::InvalidConfig, "lr must be > 0");
    require(max_iters >= 1, ErrorKind::InvalidConfig, "max_iters must be >= 1");
  }
};

struct AdaptReport {
  std::optional<double> accuracy_before;
  std::optional<double> accuracy_after;
  double dist_test_to_pseudo_before = 0.0;
  double dist_test_to_pseudo_after = 0.0;
  // Present only when the true source covariance is supplied.
  std::optional<double> dist_test_to_source_before;
  std::optional<double> dist_test_to_source_after;
  std::optional<double> dist_pseudo_to_source;
  std::optional<SolverTrace> solver_trace;
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t c = 0;
  std::size_t bank_size = 0;
  bool class_balance_fell_back = false;
  // Online mode: instances predicted before any statistics existed.
  std::size_t cold_start_instances = 0;
  std::size_t cold_start_batches = 0;

  /// Largest violation of sqrt(d(t,s)) <= sqrt(d(t,p)) + sqrt(d(p,s)) over the
  /// before/after test covariances (p = pseudo-source, s = source). Zero or
  /// negative when the inequality holds; nullopt without source statistics.
  [[nodiscard]] std::optional<double> triangle_violation() const {
    if (!dist_test_to_source_before || !dist_test_to_source_after || !dist_pseudo_to_source) return std::nullopt;
    const double via = std::sqrt(*dist_pseudo_to_source);
    const double before = std::sqrt(*dist_test_to_source_before) - (std::sqrt(dist_test_to_pseudo_before) + via);
    const double after = std::sqrt(*dist_test_to_source_after) - (std::sqrt(dist_test_to_pseudo_after) + via);
    return std::max(before, after);
  }
};

struct AdaptResult {
  PredictionBatch before;
  PredictionBatch after;
  AdaptReport report;
  AlignmentTransform transform;
  Moments test_moments;
  std::vector<BankEntry> bank;
};

namespace detail {

inline void check_inputs(const EmbeddingBatch& test, const SoftmaxHead& head, const AdaptConfig& cfg,
                         const std::optional<Labels>& labels) {
  cfg.validate();
  head.validate();
  require(head.dim() == test.dim(), ErrorKind::InvalidInput, "head dimension does not match the embeddings");
  require(!labels || labels->size() == test.rows(), ErrorKind::InvalidInput, "label count does not match embeddings");
}

inline void fill_bank(PseudoSourceBank& bank, const EmbeddingBatch& batch, const PredictionBatch& preds,
                      std::uint64_t first_arrival) {
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const Vector probs = preds.probs.row(row).transpose();
    bank.insert(make_entry(batch.row(i).transpose(), std::span<const double>(probs.data(), probs.size()),
                           first_arrival + i));
  }
}

inline Matrix solve_w(const AdaptConfig& cfg, const Matrix& sigma_t, const Matrix& sigma_s_hat,
                      std::optional<SolverTrace>* trace) {
  if (cfg.solver == SolverKind::Closed) return solve_closed_form(sigma_t, sigma_s_hat, cfg.eps);
  GradientOptions opts;
  opts.lr = cfg.lr;
  opts.max_iters = cfg.max_iters;
  opts.tol = cfg.tol;
  const auto d = sigma_t.rows();
  auto result = solve_gradient(shrink(sigma_t, cfg.eps), shrink(sigma_s_hat, cfg.eps), Matrix::Identity(d, d), opts);
  if (trace) *trace = std::move(result.trace);
  return std::move(result.w);
}

inline void fill_distances(AdaptReport& report, const Matrix& sigma_t, const Matrix& sigma_after,
                           const Matrix& sigma_s_hat, const std::optional<Matrix>& source_sigma) {
  report.dist_test_to_pseudo_before = correlation_distance(sigma_t, sigma_s_hat);
  report.dist_test_to_pseudo_after = correlation_distance(sigma_after, sigma_s_hat);
  if (source_sigma) {
    report.dist_test_to_source_before = correlation_distance(sigma_t, *source_sigma);
    report.dist_test_to_source_after = correlation_distance(sigma_after, *source_sigma);
    report.dist_pseudo_to_source = correlation_distance(sigma_s_hat, *source_sigma);
  }
}

}  // namespace detail

/// Transductive adaptation: score all test embeddings, build the pseudo-source
/// bank over the whole set, solve W and re-predict the transformed embeddings.
inline AdaptResult adapt_transductive(const EmbeddingBatch& test, const SoftmaxHead& head, const AdaptConfig& cfg,
                                      const std::optional<Labels>& labels = std::nullopt,
                                      const std::optional<Matrix>& source_sigma = std::nullopt) {
  detail::check_inputs(test, head, cfg, labels);
  require(test.rows() >= 2, ErrorKind::InsufficientSamples, "adaptation needs at least two test instances");

  AdaptResult out;
  out.before = predict(head, test);
  PseudoSourceBank bank(cfg.k, cfg.selection);
  detail::fill_bank(bank, test, out.before, 0);
  const Selection selection = bank.selection();
  out.bank = selection.entries;

  const Moments pseudo = pseudo_stats(out.bank);
  out.test_moments = covariance(test);
  const Matrix w = detail::solve_w(cfg, out.test_moments.sigma, pseudo.sigma, &out.report.solver_trace);
  out.transform = AlignmentTransform{w, out.test_moments.mean, pseudo.mean};

  const EmbeddingBatch transformed = apply_transform(test, out.transform);
  out.after = predict(head, transformed);

  auto& r = out.report;
  r.n = test.rows();
  r.d = test.dim();
  r.c = head.classes();
  r.bank_size = out.bank.size();
  r.class_balance_fell_back = selection.fell_back_to_global;
  if (labels) {
    r.accuracy_before = accuracy(out.before, *labels);
    r.accuracy_after = accuracy(out.after, *labels);
  }
  detail::fill_distances(r, out.test_moments.sigma, covariance(transformed).sigma, pseudo.sigma, source_sigma);
  return out;
}

/// Online adaptation: batches are consumed in order. Each batch updates the
/// streaming test statistics and the bank, then is predicted through the
/// transform solved from everything seen so far. Batches that arrive before
/// two instances and two bank entries exist are predicted unadapted.
inline AdaptResult adapt_online(const EmbeddingBatch& test, const SoftmaxHead& head, const AdaptConfig& cfg,
                                const std::optional<Labels>& labels = std::nullopt,
                                const std::optional<Matrix>& source_sigma = std::nullopt) {
  detail::check_inputs(test, head, cfg, labels);
  require(test.rows() >= 2, ErrorKind::InsufficientSamples, "adaptation needs at least two test instances");

  AdaptResult out;
  out.before = predict(head, test);
  out.after.probs.resize(out.before.probs.rows(), out.before.probs.cols());
  out.after.argmax.resize(test.rows());

  CovarianceStats stats(test.dim());
  PseudoSourceBank bank(cfg.k, cfg.selection);
  std::optional<AlignmentTransform> current;
  Moments pseudo;
  for (std::size_t first = 0; first < test.rows(); first += cfg.batch_size) {
    const std::size_t count = std::min(cfg.batch_size, test.rows() - first);
    const EmbeddingBatch batch = test.slice(first, count);
    const PredictionBatch raw = predict(head, batch);
    stats.accumulate(batch);
    detail::fill_bank(bank, batch, raw, first);

    PredictionBatch shown = raw;
    if (stats.count() >= 2 && bank.size() >= 2) {
      const Moments test_m = stats.finalize();
      pseudo = pseudo_stats(bank);
      std::optional<SolverTrace>* trace = &out.report.solver_trace;
      const Matrix w = detail::solve_w(cfg, test_m.sigma, pseudo.sigma, trace);
      current = AlignmentTransform{w, test_m.mean, pseudo.mean};
      shown = predict(head, apply_transform(batch, *current));
    } else {
      out.report.cold_start_instances += count;
      ++out.report.cold_start_batches;
    }
    out.after.probs.middleRows(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(count)) = shown.probs;
    std::copy(shown.argmax.begin(), shown.argmax.end(), out.after.argmax.begin() + static_cast<std::ptrdiff_t>(first));
  }

  // n >= 2 guarantees the last batch saw two instances and two bank entries.
  const Selection selection = bank.selection();
  out.bank = selection.entries;
  out.test_moments = stats.finalize();
  out.transform = *current;

  auto& r = out.report;
  r.n = test.rows();
  r.d = test.dim();
  r.c = head.classes();
  r.bank_size = out.bank.size();
  r.class_balance_fell_back = selection.fell_back_to_global;
  if (labels) {
    r.accuracy_before = accuracy(out.before, *labels);
    r.accuracy_after = accuracy(out.after, *labels);
  }
  const EmbeddingBatch transformed = apply_transform(test, out.transform);
  detail::fill_distances(r, out.test_moments.sigma, covariance(transformed).sigma, pseudo.sigma, source_sigma);
  return out;
}

inline AdaptResult adapt(const EmbeddingBatch& test, const SoftmaxHead& head, const AdaptConfig& cfg,
                         const std::optional<Labels>& labels = std::nullopt,
                         const std::optional<Matrix>& source_sigma = std::nullopt) {
  return cfg.mode == AdaptMode::Online ? adapt_online(test, head, cfg, labels, source_sigma)
                                       : adapt_transductive(test, head, cfg, labels, source_sigma);
}

struct UncertaintyGroup {
  std::size_t group_index = 0;
  std::size_t size = 0;
  double mean_uncertainty = 0.0;
  double distance_to_source = 0.0;
};

/// Sorts test instances by uncertainty (ascending, stable), cuts them into
/// n_groups equal groups with the remainder going to the last one, and
/// measures each group's correlation distance to the source covariance.
inline std::vector<UncertaintyGroup> validate_uncertainty_groups(const EmbeddingBatch& test, const SoftmaxHead& head,
                                                                 const Matrix& source_sigma,
                                                                 std::size_t n_groups = 10) {
  require(n_groups >= 1 && test.rows() / n_groups >= 2, ErrorKind::InvalidConfig,
          "every uncertainty group needs at least two instances");
  const PredictionBatch preds = predict(head, test);
  std::vector<double> omega(test.rows());
  for (std::size_t i = 0; i < test.rows(); ++i) {
    const Vector p = preds.probs.row(static_cast<Eigen::Index>(i)).transpose();
    omega[i] = uncertainty(std::span<const double>(p.data(), p.size()));
  }
  std::vector<std::size_t> order(test.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return omega[a] < omega[b]; });

  const std::size_t base = test.rows() / n_groups;
  std::vector<UncertaintyGroup> groups;
  for (std::size_t g = 0; g < n_groups; ++g) {
    const std::size_t first = g * base;
    const std::size_t size = g + 1 == n_groups ? test.rows() - first : base;
    Matrix members(static_cast<Eigen::Index>(size), static_cast<Eigen::Index>(test.dim()));
    double omega_sum = 0.0;
    for (std::size_t m = 0; m < size; ++m) {
      members.row(static_cast<Eigen::Index>(m)) = test.row(order[first + m]);
      omega_sum += omega[order[first + m]];
    }
    const Moments moments = covariance(EmbeddingBatch(std::move(members)));
    groups.push_back({g, size, omega_sum / static_cast<double>(size),
                      correlation_distance(moments.sigma, source_sigma)});
  }
  return groups;
}

struct TracePoint {
  std::size_t iteration = 0;
  double objective = 0.0;
  double dist_to_pseudo = 0.0;
  double dist_to_source = 0.0;
  double accuracy = 0.0;
};

struct AlignmentTrace {
  std::vector<TracePoint> points;
  SolverTrace solver;
  std::optional<double> spearman_pseudo_source;
  std::optional<double> spearman_pseudo_accuracy;
  std::optional<LinearFit> fit_pseudo_source;
  std::optional<LinearFit> fit_pseudo_accuracy;
};

/// Runs the gradient solver and, at every `every`-th iterate (plus the last),
/// applies W to the test set and records the transformed covariance's
/// distances to the pseudo-source and source covariances and the accuracy.
inline AlignmentTrace validate_alignment_trace(const EmbeddingBatch& test, const SoftmaxHead& head,
                                               const Labels& labels, const AdaptConfig& cfg,
                                               const Matrix& source_sigma, std::size_t every = 10,
                                               const std::optional<Matrix>& init = std::nullopt) {
  detail::check_inputs(test, head, cfg, labels);
  require(every >= 1, ErrorKind::InvalidConfig, "recording interval must be >= 1");
  require(test.rows() >= 2, ErrorKind::InsufficientSamples, "trace needs at least two test instances");

  const PredictionBatch preds = predict(head, test);
  PseudoSourceBank bank(cfg.k, cfg.selection);
  detail::fill_bank(bank, test, preds, 0);
  const Moments pseudo = pseudo_stats(bank);
  const Moments test_m = covariance(test);
  const auto d = static_cast<Eigen::Index>(test.dim());

  AlignmentTrace out;
  auto record = [&](std::size_t it, const Matrix& w, double obj) {
    const AlignmentTransform t{w, test_m.mean, pseudo.mean};
    const EmbeddingBatch moved = apply_transform(test, t);
    const Matrix sigma = covariance(moved).sigma;
    out.points.push_back({it, obj, correlation_distance(sigma, pseudo.sigma),
                          correlation_distance(sigma, source_sigma), accuracy(predict(head, moved), labels)});
  };

  GradientOptions opts;
  opts.lr = cfg.lr;
  opts.max_iters = cfg.max_iters;
  opts.tol = cfg.tol;
  Matrix last_w;
  std::size_t last_it = 0;
  double last_obj = 0.0;
  opts.observer = [&](std::size_t it, const Matrix& w, double obj) {
    if (it % every == 0) record(it, w, obj);
    last_w = w;
    last_it = it;
    last_obj = obj;
  };
  auto result = solve_gradient(shrink(test_m.sigma, cfg.eps), shrink(pseudo.sigma, cfg.eps),
                               init.value_or(Matrix::Identity(d, d)), opts);
  if (last_it % every != 0) record(last_it, last_w, last_obj);
  out.solver = std::move(result.trace);

  std::vector<double> to_pseudo, to_source, acc;
  for (const auto& p : out.points) {
    to_pseudo.push_back(p.dist_to_pseudo);
    to_source.push_back(p.dist_to_source);
    acc.push_back(p.accuracy);
  }
  out.spearman_pseudo_source = spearman(to_pseudo, to_source);
  out.spearman_pseudo_accuracy = spearman(to_pseudo, acc);
  out.fit_pseudo_source = linear_fit_r2(to_pseudo, to_source);
  out.fit_pseudo_accuracy = linear_fit_r2(to_pseudo, acc);
  return out;
}

}  // namespace tca
