#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tca/error.hpp"
#include "tca/linalg.hpp"

namespace tca {

/// Index of the largest entry, lowest index on ties.
inline std::size_t argmax(std::span<const double> p) {
  require(!p.empty(), ErrorKind::InvalidInput, "argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[best]) best = i;
  }
  return best;
}

inline std::vector<double> one_hot(std::span<const double> p) {
  std::vector<double> out(p.size(), 0.0);
  out[argmax(p)] = 1.0;
  return out;
}

/// Squared distance between a probability vector and the one-hot vector of
/// its argmax. Lies in [0, 2); zero for a one-hot input.
inline double uncertainty(std::span<const double> p) {
  require(!p.empty(), ErrorKind::InvalidInput, "uncertainty of an empty probability vector");
  double sum = 0.0;
  for (double v : p) {
    require(std::isfinite(v) && v >= 0.0, ErrorKind::InvalidInput, "probabilities must be finite and >= 0");
    sum += v;
  }
  require(std::abs(sum - 1.0) <= 1e-6, ErrorKind::InvalidInput,
          "probabilities sum to " + std::to_string(sum) + ", expected 1");
  const std::size_t top = argmax(p);
  double omega = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double diff = (i == top ? 1.0 : 0.0) - p[i];
    omega += diff * diff;
  }
  return omega;
}

struct BankEntry {
  Vector embedding;
  double uncertainty = 0.0;
  std::uint32_t predicted_class = 0;
  std::uint64_t arrival_index = 0;
};

/// Scores a prediction and packages it with its embedding.
inline BankEntry make_entry(const Vector& embedding, std::span<const double> probs, std::uint64_t arrival_index) {
  return BankEntry{embedding, uncertainty(probs), static_cast<std::uint32_t>(argmax(probs)), arrival_index};
}

/// Total order used for retention: lower uncertainty first, earlier arrival
/// breaks ties.
inline bool more_certain(const BankEntry& a, const BankEntry& b) noexcept {
  if (a.uncertainty != b.uncertainty) return a.uncertainty < b.uncertainty;
  return a.arrival_index < b.arrival_index;
}

enum class SelectionMode { Global, ClassBalanced };

struct Selection {
  std::vector<BankEntry> entries;      // ordered by more_certain
  std::vector<std::size_t> quotas;     // per class; empty on fallback
  bool fell_back_to_global = false;
};

namespace detail {

// Splits `total` units proportionally to integer weights with the
// largest-remainder rule. Remainder ties go to the larger count, then to the
// lower class index.
inline std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<std::uint64_t>& weights,
                                                  const std::vector<std::uint64_t>& counts) {
  const std::uint64_t weight_sum = std::accumulate(weights.begin(), weights.end(), std::uint64_t{0});
  std::vector<std::size_t> quota(weights.size(), 0);
  if (weight_sum == 0 || total == 0) return quota;

  std::vector<std::uint64_t> remainder(weights.size(), 0);
  std::size_t assigned = 0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    const std::uint64_t scaled = static_cast<std::uint64_t>(total) * weights[j];
    quota[j] = static_cast<std::size_t>(scaled / weight_sum);
    remainder[j] = scaled % weight_sum;
    assigned += quota[j];
  }
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (weights[j] > 0) order.push_back(j);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
    if (counts[a] != counts[b]) return counts[a] > counts[b];
    return a < b;
  });
  for (std::size_t i = 0; assigned < total && i < order.size(); ++i, ++assigned) ++quota[order[i]];
  return quota;
}

}  // namespace detail

/// Global top-k by (uncertainty, arrival).
inline std::vector<BankEntry> select_global(std::vector<BankEntry> entries, std::size_t k) {
  std::sort(entries.begin(), entries.end(), more_certain);
  if (entries.size() > k) entries.resize(k);
  return entries;
}

/// Picks min(k, |entries|) entries whose predicted-class mix follows
/// `class_counts`. Per-class quotas use the largest-remainder rule; classes
/// that cannot fill their quota give everything they have and the shortfall
/// is re-split over the other classes the same way.
inline Selection class_balanced_select(const std::vector<BankEntry>& entries, std::size_t k,
                                       std::vector<std::uint64_t> class_counts) {
  require(k >= 1, ErrorKind::InvalidInput, "selection size k must be >= 1");

  std::size_t n_classes = class_counts.size();
  for (const auto& e : entries) n_classes = std::max<std::size_t>(n_classes, e.predicted_class + 1);
  class_counts.resize(n_classes, 0);

  std::vector<std::vector<BankEntry>> by_class(n_classes);
  for (const auto& e : entries) by_class[e.predicted_class].push_back(e);
  for (auto& pool : by_class) std::sort(pool.begin(), pool.end(), more_certain);

  const std::size_t target = std::min(k, entries.size());
  const bool no_counts = std::all_of(class_counts.begin(), class_counts.end(), [](auto c) { return c == 0; });
  if (no_counts) {
    return Selection{select_global(entries, k), {}, true};
  }

  std::vector<std::size_t> quota(n_classes, 0);
  std::vector<bool> capped(n_classes, false);
  for (;;) {
    std::size_t fixed = 0;
    for (std::size_t j = 0; j < n_classes; ++j) {
      if (capped[j]) fixed += quota[j];
    }
    std::vector<std::uint64_t> weights(n_classes, 0);
    bool any_weight = false;
    for (std::size_t j = 0; j < n_classes; ++j) {
      if (!capped[j]) {
        weights[j] = class_counts[j];
        any_weight = any_weight || weights[j] > 0;
      }
    }
    if (!any_weight) {
      // Remaining classes were never counted; fall back to their availability.
      for (std::size_t j = 0; j < n_classes; ++j) {
        if (!capped[j]) weights[j] = by_class[j].size();
      }
    }
    const auto split = detail::largest_remainder(target - fixed, weights, class_counts);
    bool newly_capped = false;
    for (std::size_t j = 0; j < n_classes; ++j) {
      if (capped[j]) continue;
      quota[j] = split[j];
      if (quota[j] > by_class[j].size()) {
        quota[j] = by_class[j].size();
        capped[j] = true;
        newly_capped = true;
      }
    }
    if (!newly_capped) break;
  }

  if (std::accumulate(quota.begin(), quota.end(), std::size_t{0}) == 0) {
    return Selection{select_global(entries, k), {}, true};
  }

  Selection out;
  out.quotas = quota;
  for (std::size_t j = 0; j < n_classes; ++j) {
    out.entries.insert(out.entries.end(), by_class[j].begin(),
                       by_class[j].begin() + static_cast<std::ptrdiff_t>(quota[j]));
  }
  std::sort(out.entries.begin(), out.entries.end(), more_certain);
  return out;
}

/// Capacity-k store of the most certain embeddings seen so far.
///
/// Global mode keeps exactly the k smallest entries under more_certain, so
/// streaming insertion and offline selection over the full stream agree.
/// Class-balanced mode keeps up to k candidates per predicted class plus the
/// running predicted-class histogram, and selects at most k of them on demand.
class PseudoSourceBank {
 public:
  explicit PseudoSourceBank(std::size_t capacity, SelectionMode mode = SelectionMode::Global)
      : capacity_(capacity), mode_(mode) {
    require(capacity >= 1, ErrorKind::InvalidConfig, "bank capacity must be >= 1");
  }

  void insert(BankEntry entry) {
    if (dim_ == 0) {
      require(entry.embedding.size() >= 1, ErrorKind::InvalidInput, "bank entry has an empty embedding");
      dim_ = static_cast<std::size_t>(entry.embedding.size());
    }
    require(static_cast<std::size_t>(entry.embedding.size()) == dim_, ErrorKind::InvalidInput,
            "bank entry dimension does not match the bank");
    require(entry.uncertainty >= 0.0 && entry.uncertainty < 2.0, ErrorKind::InvalidInput,
            "bank entry uncertainty must lie in [0, 2)");

    if (entry.predicted_class >= class_counts_.size()) class_counts_.resize(entry.predicted_class + 1, 0);
    ++class_counts_[entry.predicted_class];
    ++seen_;

    if (mode_ == SelectionMode::Global) {
      insert_capped(global_, std::move(entry));
    } else {
      if (entry.predicted_class >= per_class_.size()) per_class_.resize(entry.predicted_class + 1);
      insert_capped(per_class_[entry.predicted_class], std::move(entry));
    }
  }

  /// The retained pseudo-source set, ordered by more_certain.
  [[nodiscard]] std::vector<BankEntry> entries() const { return selection().entries; }

  [[nodiscard]] Selection selection() const {
    if (mode_ == SelectionMode::Global) return Selection{global_, {}, false};
    std::vector<BankEntry> pool;
    for (const auto& bucket : per_class_) pool.insert(pool.end(), bucket.begin(), bucket.end());
    if (pool.empty()) return Selection{};
    return class_balanced_select(pool, capacity_, class_counts_);
  }

  [[nodiscard]] std::size_t size() const {
    if (mode_ == SelectionMode::Global) return global_.size();
    std::size_t pooled = 0;
    for (const auto& bucket : per_class_) pooled += bucket.size();
    return std::min(pooled, capacity_);
  }

  [[nodiscard]] std::size_t capacity() const noexcept { return capacity_; }
  [[nodiscard]] SelectionMode mode() const noexcept { return mode_; }
  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] std::uint64_t seen() const noexcept { return seen_; }
  [[nodiscard]] const std::vector<std::uint64_t>& class_counts() const noexcept { return class_counts_; }

 private:
  void insert_capped(std::vector<BankEntry>& sorted, BankEntry entry) const {
    auto pos = std::upper_bound(sorted.begin(), sorted.end(), entry, more_certain);
    sorted.insert(pos, std::move(entry));
    if (sorted.size() > capacity_) sorted.pop_back();
  }

  std::size_t capacity_;
  SelectionMode mode_;
  std::size_t dim_ = 0;
  std::uint64_t seen_ = 0;
  std::vector<BankEntry> global_;
  std::vector<std::vector<BankEntry>> per_class_;
  std::vector<std::uint64_t> class_counts_;
};

/// Mean and covariance of the given entries, stacked in arrival order so the
/// result depends only on the retained set.
inline Moments pseudo_stats(std::vector<BankEntry> entries) {
  require(entries.size() >= 2, ErrorKind::InsufficientSamples, "pseudo-source statistics need at least two entries");
  std::sort(entries.begin(), entries.end(),
            [](const BankEntry& a, const BankEntry& b) { return a.arrival_index < b.arrival_index; });
  const auto d = entries.front().embedding.size();
  Matrix stacked(static_cast<Eigen::Index>(entries.size()), d);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    require(entries[i].embedding.size() == d, ErrorKind::InvalidInput, "bank entries differ in dimension");
    stacked.row(static_cast<Eigen::Index>(i)) = entries[i].embedding.transpose();
  }
  return covariance(EmbeddingBatch(std::move(stacked)));
}

inline Moments pseudo_stats(const PseudoSourceBank& bank) { return pseudo_stats(bank.entries()); }

}  // namespace tca
