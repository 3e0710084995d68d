#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tca/error.hpp"
#include "tca/linalg.hpp"

namespace tca {

using Labels = std::vector<std::uint32_t>;

/// Linear softmax decoder: probs = softmax(weight z + bias).
struct SoftmaxHead {
  Matrix weight;  // c x d
  Vector bias;    // c

  [[nodiscard]] std::size_t classes() const noexcept { return static_cast<std::size_t>(weight.rows()); }
  [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(weight.cols()); }

  static SoftmaxHead zeros(std::size_t c, std::size_t d) {
    return {Matrix::Zero(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(d)),
            Vector::Zero(static_cast<Eigen::Index>(c))};
  }

  void validate() const {
    require(weight.rows() >= 2 && weight.cols() >= 1, ErrorKind::InvalidInput, "head needs c >= 2 and d >= 1");
    require(bias.size() == weight.rows(), ErrorKind::InvalidInput, "head bias length must equal class count");
    require(weight.allFinite() && bias.allFinite(), ErrorKind::InvalidInput, "head has non-finite parameters");
  }
};

struct PredictionBatch {
  Matrix probs;  // n x c
  Labels argmax;

  [[nodiscard]] std::size_t rows() const noexcept { return argmax.size(); }
};

namespace detail {

// Row-wise softmax with max subtraction; argmax ties go to the lowest index.
inline PredictionBatch softmax_rows(Matrix logits) {
  PredictionBatch out;
  out.argmax.resize(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index top = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, top)) top = j;
    }
    out.argmax[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(top);
    auto row = logits.row(i);
    row.array() -= logits(i, top);
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  out.probs = std::move(logits);
  return out;
}

}  // namespace detail

inline PredictionBatch predict(const SoftmaxHead& head, const EmbeddingBatch& z) {
  require(z.dim() == head.dim(), ErrorKind::InvalidInput,
          "embedding dimension " + std::to_string(z.dim()) + " does not match head dimension " +
              std::to_string(head.dim()));
  Matrix logits = z.matrix() * head.weight.transpose();
  logits.rowwise() += head.bias.transpose();
  return detail::softmax_rows(std::move(logits));
}

inline double accuracy(const PredictionBatch& preds, const Labels& labels) {
  require(preds.argmax.size() == labels.size(), ErrorKind::InvalidInput, "prediction and label counts differ");
  require(!labels.empty(), ErrorKind::InvalidInput, "accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += preds.argmax[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Mean cross-entropy of the head on labeled data.
inline double cross_entropy(const SoftmaxHead& head, const EmbeddingBatch& z, const Labels& labels) {
  require(labels.size() == z.rows(), ErrorKind::InvalidInput, "label count does not match embeddings");
  const PredictionBatch p = predict(head, z);
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < head.classes(), ErrorKind::InvalidInput, "label out of range");
    loss -= std::log(std::max(p.probs(static_cast<Eigen::Index>(i), labels[i]), 1e-300));
  }
  return loss / static_cast<double>(labels.size());
}

struct TrainOptions {
  double lr = 0.1;
  std::size_t epochs = 2000;
  /// Class count; 0 means max(label) + 1.
  std::size_t classes = 0;
  /// Called with (epoch, loss before that epoch's step).
  std::function<void(std::size_t, double)> on_epoch;
};

/// Full-batch gradient descent on mean cross-entropy from a zero head.
inline SoftmaxHead train_head(const EmbeddingBatch& z, const Labels& labels, const TrainOptions& opts = {}) {
  require(labels.size() == z.rows(), ErrorKind::InvalidInput, "label count does not match embeddings");
  require(opts.lr > 0.0 && std::isfinite(opts.lr), ErrorKind::InvalidInput, "learning rate must be > 0");
  const std::set<std::uint32_t> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) fail(ErrorKind::DegenerateLabels, "training data needs at least two distinct labels");
  const std::size_t c = opts.classes == 0 ? static_cast<std::size_t>(*distinct.rbegin()) + 1 : opts.classes;
  require(*distinct.rbegin() < c, ErrorKind::InvalidInput, "label out of range for the class count");

  const auto n = static_cast<Eigen::Index>(labels.size());
  Matrix onehot = Matrix::Zero(n, static_cast<Eigen::Index>(c));
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, labels[static_cast<std::size_t>(i)]) = 1.0;

  SoftmaxHead head = SoftmaxHead::zeros(c, z.dim());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    const PredictionBatch p = predict(head, z);
    if (opts.on_epoch) {
      double loss = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        loss -= std::log(std::max(p.probs(i, labels[static_cast<std::size_t>(i)]), 1e-300));
      }
      opts.on_epoch(epoch, loss * inv_n);
    }
    const Matrix residual = p.probs - onehot;  // n x c
    head.weight -= opts.lr * inv_n * (residual.transpose() * z.matrix());
    head.bias -= opts.lr * inv_n * residual.colwise().sum().transpose();
  }
  return head;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.16e", v);
  return buf;
}

}  // namespace detail

/// Head file: {"version":1,"c":..,"d":..,"weight":[[..]..],"bias":[..]}, with
/// every number written to 17 significant digits.
inline std::string head_to_json(const SoftmaxHead& head) {
  head.validate();
  std::ostringstream out;
  out << "{\"version\":1,\"c\":" << head.classes() << ",\"d\":" << head.dim() << ",\"weight\":[";
  for (Eigen::Index i = 0; i < head.weight.rows(); ++i) {
    out << (i ? "," : "") << '[';
    for (Eigen::Index j = 0; j < head.weight.cols(); ++j) {
      out << (j ? "," : "") << detail::format_double(head.weight(i, j));
    }
    out << ']';
  }
  out << "],\"bias\":[";
  for (Eigen::Index i = 0; i < head.bias.size(); ++i) out << (i ? "," : "") << detail::format_double(head.bias(i));
  out << "]}\n";
  return out.str();
}

inline SoftmaxHead head_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("head file is not valid JSON: ") + e.what(), e.byte);
  }
  auto field_error = [](const std::string& what) -> ParseError { return ParseError("head file: " + what, 0); };
  if (!doc.is_object()) throw field_error("top level must be an object");
  for (const char* key : {"version", "c", "d", "weight", "bias"}) {
    if (!doc.contains(key)) throw field_error(std::string("missing field \"") + key + "\"");
  }
  if (!doc["version"].is_number_integer() || doc["version"].get<std::int64_t>() != 1) {
    throw field_error("field \"version\" must be 1");
  }
  if (!doc["c"].is_number_unsigned() || !doc["d"].is_number_unsigned()) {
    throw field_error("fields \"c\" and \"d\" must be non-negative integers");
  }
  const auto c = doc["c"].get<std::uint64_t>();
  const auto d = doc["d"].get<std::uint64_t>();
  if (c < 2 || d < 1) throw field_error("need c >= 2 and d >= 1");
  const auto& weight = doc["weight"];
  const auto& bias = doc["bias"];
  if (!weight.is_array() || weight.size() != c) throw field_error("field \"weight\" must have c rows");
  if (!bias.is_array() || bias.size() != c) throw field_error("field \"bias\" must have c entries");

  SoftmaxHead head = SoftmaxHead::zeros(c, d);
  for (std::size_t i = 0; i < c; ++i) {
    const auto& row = weight[i];
    if (!row.is_array() || row.size() != d) {
      throw field_error("weight[" + std::to_string(i) + "] must have d entries");
    }
    for (std::size_t j = 0; j < d; ++j) {
      if (!row[j].is_number()) {
        throw field_error("weight[" + std::to_string(i) + "][" + std::to_string(j) + "] is not a number");
      }
      head.weight(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j].get<double>();
    }
    if (!bias[i].is_number()) throw field_error("bias[" + std::to_string(i) + "] is not a number");
    head.bias(static_cast<Eigen::Index>(i)) = bias[i].get<double>();
  }
  if (!head.weight.allFinite() || !head.bias.allFinite()) throw field_error("non-finite parameter");
  return head;
}

}  // namespace tca
