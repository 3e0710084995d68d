#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tca/error.hpp"
#include "tca/linalg.hpp"
#include "tca/model_head.hpp"

namespace tca {

// Binary layouts (all integers little-endian, no padding):
//   .tcae  "TCAE" | u32 version=1 | u8 dtype (0=f32, 1=f64) | u64 n | u64 d | n*d values, row-major
//   .tcal  "TCAL" | u32 version=1 | u64 n | n * u32 class index

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

inline constexpr std::uint32_t kFormatVersion = 1;

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto bits = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>(bits & 0xFF));
    bits = static_cast<U>(bits >> 8);
  }
}

class ByteReader {
 public:
  ByteReader(std::string_view bytes, const char* what) : bytes_(bytes), what_(what) {}

  template <typename T>
  T get(const char* field) {
    if (bytes_.size() - pos_ < sizeof(T)) {
      throw ParseError(std::string(what_) + ": truncated while reading " + field, bytes_.size());
    }
    std::make_unsigned_t<T> bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(bits);
  }

  void expect_magic(std::string_view magic) {
    if (bytes_.size() < magic.size()) throw ParseError(std::string(what_) + ": truncated magic", bytes_.size());
    for (std::size_t i = 0; i < magic.size(); ++i) {
      if (bytes_[i] != magic[i]) throw ParseError(std::string(what_) + ": bad magic", i);
    }
    pos_ = magic.size();
  }

  void expect_payload(std::uint64_t count, std::uint64_t width) {
    const std::uint64_t remaining = bytes_.size() - pos_;
    if (width != 0 && count > std::numeric_limits<std::uint64_t>::max() / width) {
      throw ParseError(std::string(what_) + ": payload size overflows", pos_);
    }
    const std::uint64_t need = count * width;
    if (remaining < need) {
      throw ParseError(std::string(what_) + ": truncated payload, expected " + std::to_string(need) +
                           " bytes, found " + std::to_string(remaining),
                       bytes_.size());
    }
    if (remaining > need) throw ParseError(std::string(what_) + ": trailing bytes after payload", pos_ + need);
  }

  [[nodiscard]] std::size_t pos() const noexcept { return pos_; }

 private:
  std::string_view bytes_;
  const char* what_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_embeddings(const EmbeddingBatch& batch, DType dtype = DType::F64) {
  std::string out = "TCAE";
  detail::put_le<std::uint32_t>(out, kFormatVersion);
  out.push_back(static_cast<char>(dtype));
  detail::put_le<std::uint64_t>(out, batch.rows());
  detail::put_le<std::uint64_t>(out, batch.dim());
  const auto& m = batch.matrix();
  out.reserve(out.size() + batch.rows() * batch.dim() * (dtype == DType::F64 ? 8 : 4));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (dtype == DType::F64) {
        detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(m(i, j)));
      } else {
        detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(m(i, j))));
      }
    }
  }
  return out;
}

inline EmbeddingBatch decode_embeddings(std::string_view bytes) {
  detail::ByteReader in(bytes, "embedding file");
  in.expect_magic("TCAE");
  const std::size_t version_at = in.pos();
  if (in.get<std::uint32_t>("version") != kFormatVersion) throw ParseError("embedding file: unsupported version", version_at);
  const std::size_t dtype_at = in.pos();
  const auto dtype = in.get<std::uint8_t>("dtype");
  if (dtype > 1) throw ParseError("embedding file: unknown dtype " + std::to_string(dtype), dtype_at);
  const std::size_t n_at = in.pos();
  const auto n = in.get<std::uint64_t>("n");
  const std::size_t d_at = in.pos();
  const auto d = in.get<std::uint64_t>("d");
  if (n == 0) throw ParseError("embedding file: n must be >= 1", n_at);
  if (d == 0) throw ParseError("embedding file: d must be >= 1", d_at);
  if (n > std::numeric_limits<std::uint64_t>::max() / d) throw ParseError("embedding file: n * d overflows", n_at);
  const std::uint64_t width = dtype == 1 ? 8 : 4;
  in.expect_payload(n * d, width);

  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::uint64_t i = 0; i < n; ++i) {
    for (std::uint64_t j = 0; j < d; ++j) {
      const std::size_t at = in.pos();
      const double v = dtype == 1 ? std::bit_cast<double>(in.get<std::uint64_t>("value"))
                                  : static_cast<double>(std::bit_cast<float>(in.get<std::uint32_t>("value")));
      if (!std::isfinite(v)) throw ParseError("embedding file: non-finite value", at);
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  }
  return EmbeddingBatch(std::move(m));
}

inline std::string encode_labels(const Labels& labels) {
  std::string out = "TCAL";
  detail::put_le<std::uint32_t>(out, kFormatVersion);
  detail::put_le<std::uint64_t>(out, labels.size());
  for (auto label : labels) detail::put_le<std::uint32_t>(out, label);
  return out;
}

inline Labels decode_labels(std::string_view bytes) {
  detail::ByteReader in(bytes, "label file");
  in.expect_magic("TCAL");
  const std::size_t version_at = in.pos();
  if (in.get<std::uint32_t>("version") != kFormatVersion) throw ParseError("label file: unsupported version", version_at);
  const auto n = in.get<std::uint64_t>("n");
  in.expect_payload(n, 4);
  Labels labels(static_cast<std::size_t>(n));
  for (auto& label : labels) label = in.get<std::uint32_t>("label");
  return labels;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::InvalidInput, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes through a sibling temp file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::InvalidInput, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    require(static_cast<bool>(out), ErrorKind::InvalidInput, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail(ErrorKind::InvalidInput, "cannot move " + tmp.string() + " to " + path.string());
  }
}

inline void write_embeddings(const std::filesystem::path& path, const EmbeddingBatch& batch,
                             DType dtype = DType::F64) {
  write_file_atomic(path, encode_embeddings(batch, dtype));
}

inline EmbeddingBatch read_embeddings(const std::filesystem::path& path) { return decode_embeddings(read_file(path)); }

inline void write_labels(const std::filesystem::path& path, const Labels& labels) {
  write_file_atomic(path, encode_labels(labels));
}

inline Labels read_labels(const std::filesystem::path& path) { return decode_labels(read_file(path)); }

inline void save_head(const std::filesystem::path& path, const SoftmaxHead& head) {
  write_file_atomic(path, head_to_json(head));
}

inline SoftmaxHead load_head(const std::filesystem::path& path) { return head_from_json(read_file(path)); }

// CSV: header row, comma separated, LF endings, numbers to 17 significant digits.

inline std::string embeddings_to_csv(const EmbeddingBatch& batch) {
  std::string out;
  for (std::size_t j = 0; j < batch.dim(); ++j) out += (j ? ",z" : "z") + std::to_string(j);
  out += '\n';
  const auto& m = batch.matrix();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += detail::format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

inline std::string predictions_to_csv(const PredictionBatch& preds) {
  std::string out = "argmax";
  for (Eigen::Index j = 0; j < preds.probs.cols(); ++j) out += ",p" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < preds.rows(); ++i) {
    out += std::to_string(preds.argmax[i]);
    for (Eigen::Index j = 0; j < preds.probs.cols(); ++j) {
      out += ',';
      out += detail::format_double(preds.probs(static_cast<Eigen::Index>(i), j));
    }
    out += '\n';
  }
  return out;
}

/// Parses predictions_to_csv output. Errors carry the 1-based line number.
inline PredictionBatch predictions_from_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::vector<std::string> fields;
    std::string_view line = text.substr(start, end - start);
    std::size_t f = 0;
    for (;;) {
      const std::size_t comma = line.find(',', f);
      fields.emplace_back(line.substr(f, comma == std::string_view::npos ? std::string_view::npos : comma - f));
      if (comma == std::string_view::npos) break;
      f = comma + 1;
    }
    rows.push_back(std::move(fields));
    start = end + 1;
  }
  if (rows.empty() || rows.front().empty() || rows.front().front() != "argmax") {
    throw ParseError("predictions CSV: missing \"argmax\" header", 1);
  }
  const std::size_t c = rows.front().size() - 1;
  if (c < 1) throw ParseError("predictions CSV: no probability columns", 1);
  if (rows.size() < 2) throw ParseError("predictions CSV: no data rows", 1);

  PredictionBatch preds;
  preds.probs.resize(static_cast<Eigen::Index>(rows.size() - 1), static_cast<Eigen::Index>(c));
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& fields = rows[r];
    if (fields.size() != c + 1) throw ParseError("predictions CSV: wrong field count", r + 1);
    try {
      std::size_t used = 0;
      const unsigned long label = std::stoul(fields[0], &used);
      if (used != fields[0].size() || label >= c) throw std::invalid_argument("argmax");
      preds.argmax.push_back(static_cast<std::uint32_t>(label));
      for (std::size_t j = 0; j < c; ++j) {
        const double v = std::stod(fields[j + 1], &used);
        if (used != fields[j + 1].size() || !std::isfinite(v)) throw std::invalid_argument("prob");
        preds.probs(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(j)) = v;
      }
    } catch (const std::logic_error&) {
      throw ParseError("predictions CSV: malformed field", r + 1);
    }
  }
  return preds;
}

struct ScatterLayer {
  const EmbeddingBatch* points = nullptr;
  const Labels* labels = nullptr;  // optional; selects the marker colour
  std::string name;
  std::string stroke;
};

/// 2-D scatter plot of one or more point sets as a standalone SVG document.
inline std::string render_scatter_svg(const std::vector<ScatterLayer>& layers, int width = 640, int height = 480) {
  require(!layers.empty(), ErrorKind::InvalidInput, "nothing to plot");
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& layer : layers) {
    require(layer.points != nullptr && layer.points->dim() == 2, ErrorKind::InvalidInput,
            "scatter plots need 2-D embeddings");
    require(layer.labels == nullptr || layer.labels->size() == layer.points->rows(), ErrorKind::InvalidInput,
            "label count does not match points");
    const auto& m = layer.points->matrix();
    x0 = std::min(x0, m.col(0).minCoeff());
    x1 = std::max(x1, m.col(0).maxCoeff());
    y0 = std::min(y0, m.col(1).minCoeff());
    y1 = std::max(y1, m.col(1).maxCoeff());
  }
  if (x1 - x0 < 1e-12) { x0 -= 1.0; x1 += 1.0; }
  if (y1 - y0 < 1e-12) { y0 -= 1.0; y1 += 1.0; }
  const double margin = 30.0;
  const double sx = (width - 2 * margin) / (x1 - x0);
  const double sy = (height - 2 * margin) / (y1 - y0);
  static constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                             "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

  std::ostringstream svg;
  char buf[160];
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  int legend_y = 18;
  for (const auto& layer : layers) {
    svg << "<g id=\"" << layer.name << "\" stroke=\"" << layer.stroke << "\" stroke-width=\"1\">\n";
    const auto& m = layer.points->matrix();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const char* fill = layer.labels ? kPalette[(*layer.labels)[static_cast<std::size_t>(i)] % 8] : "none";
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\" fill-opacity=\"0.6\"/>\n",
                    margin + (m(i, 0) - x0) * sx, height - margin - (m(i, 1) - y0) * sy, fill);
      svg << buf;
    }
    svg << "</g>\n";
    svg << "<text x=\"" << width - 150 << "\" y=\"" << legend_y << "\" font-size=\"12\" fill=\"" << layer.stroke
        << "\">" << layer.name << "</text>\n";
    legend_y += 16;
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace tca
