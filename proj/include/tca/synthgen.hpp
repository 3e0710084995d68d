#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string_view>
#include <vector>

#include "tca/error.hpp"
#include "tca/linalg.hpp"
#include "tca/model_head.hpp"

namespace tca {

/// Standard normal draws from splitmix64 + Box-Muller. Fully specified so
/// that any implementation following the same recipe reproduces the stream:
///   x      = splitmix64(state)
///   u      = ((x >> 11) + 1) * 2^-53            in (0, 1]
///   z1, z2 = sqrt(-2 ln u1) * (cos, sin)(2 pi u2), returned z1 first.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next_u64() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  double next_uniform() noexcept { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  double next_normal() noexcept {
    if (spare_) {
      const double z = *spare_;
      spare_.reset();
      return z;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    return radius * std::cos(angle);
  }

 private:
  std::uint64_t state_;
  std::optional<double> spare_;
};

struct LabeledBatch {
  EmbeddingBatch features;
  Labels labels;
};

enum class ShiftKind { Linear, Nonlinear };

inline std::string_view to_string(ShiftKind kind) noexcept {
  return kind == ShiftKind::Linear ? "linear" : "nonlinear";
}

struct ShiftDataset {
  LabeledBatch source;
  LabeledBatch target;
  ShiftKind kind;
  std::uint64_t seed;
};

/// One isotropic Gaussian blob: `count` points of scale * N(0, I) + offset.
struct ClusterSpec {
  std::size_t count;
  double scale;
  double offset_x;
  double offset_y;
};

/// Draws the clusters in order; cluster i is labeled i. Each point takes one
/// Box-Muller pair, x from the first draw and y from the second.
inline LabeledBatch draw_clusters(NormalStream& stream, const std::vector<ClusterSpec>& clusters) {
  std::size_t total = 0;
  for (const auto& c : clusters) total += c.count;
  Matrix data(static_cast<Eigen::Index>(total), 2);
  Labels labels;
  labels.reserve(total);
  Eigen::Index row = 0;
  for (std::size_t label = 0; label < clusters.size(); ++label) {
    const auto& c = clusters[label];
    for (std::size_t i = 0; i < c.count; ++i, ++row) {
      const double x = stream.next_normal();
      const double y = stream.next_normal();
      data(row, 0) = c.scale * x + c.offset_x;
      data(row, 1) = c.scale * y + c.offset_y;
      labels.push_back(static_cast<std::uint32_t>(label));
    }
  }
  return {EmbeddingBatch(std::move(data)), std::move(labels)};
}

inline const std::vector<ClusterSpec>& linear_source_clusters() {
  static const std::vector<ClusterSpec> spec{{30, 1.0, 0.0, 0.0}, {30, 1.0, 15.0, 15.0}, {30, 1.0, 0.0, 10.0}};
  return spec;
}

inline const std::vector<ClusterSpec>& linear_target_clusters() {
  static const std::vector<ClusterSpec> spec{{250, 2.0, 7.0, 7.0}, {250, 2.5, 0.0, 20.0}, {250, 3.0, 21.0, 21.0}};
  return spec;
}

inline const std::vector<ClusterSpec>& nonlinear_source_clusters() {
  static const std::vector<ClusterSpec> spec{
      {30, 1.0, 0.0, 0.0}, {30, 1.0, 10.0, 10.0}, {30, 1.0, 0.0, 10.0}, {30, 1.0, -5.0, -10.0}};
  return spec;
}

inline const std::vector<ClusterSpec>& nonlinear_target_clusters() {
  static const std::vector<ClusterSpec> spec{
      {250, 3.0, 5.0, 5.0}, {250, 1.0, 10.0, 10.0}, {250, 2.0, 0.0, 20.0}, {250, 2.5, -9.0, 1.0}};
  return spec;
}

/// Source is drawn first, then target, from a single stream.
inline ShiftDataset gen_linear_shift(std::uint64_t seed) {
  NormalStream stream(seed);
  auto source = draw_clusters(stream, linear_source_clusters());
  auto target = draw_clusters(stream, linear_target_clusters());
  return {std::move(source), std::move(target), ShiftKind::Linear, seed};
}

inline ShiftDataset gen_nonlinear_shift(std::uint64_t seed) {
  NormalStream stream(seed);
  auto source = draw_clusters(stream, nonlinear_source_clusters());
  auto target = draw_clusters(stream, nonlinear_target_clusters());
  return {std::move(source), std::move(target), ShiftKind::Nonlinear, seed};
}

inline ShiftDataset gen_shift(ShiftKind kind, std::uint64_t seed) {
  return kind == ShiftKind::Linear ? gen_linear_shift(seed) : gen_nonlinear_shift(seed);
}

}  // namespace tca
