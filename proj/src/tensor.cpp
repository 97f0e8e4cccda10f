#include "mmfuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mmfuse/error.hpp"

namespace mmfuse {

Tensor2::Tensor2(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::span<const double> values)
    : rows_(rows), cols_(cols), values_(values.begin(), values.end()) {
  if (values.size() != rows * cols) {
    throw ConfigError("Tensor2: " + std::to_string(values.size()) + " values for shape " +
                      std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Tensor2 Tensor2::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n = rows.size();
  const std::size_t k = n == 0 ? 0 : rows.begin()->size();
  Tensor2 out(n, k);
  std::size_t r = 0;
  for (const auto& row : rows) {
    if (row.size() != k) throw ConfigError("Tensor2::from_rows: ragged rows");
    std::copy(row.begin(), row.end(), out.row(r++).begin());
  }
  return out;
}

Tensor2 Tensor2::identity(std::size_t n) {
  Tensor2 out(n, n);
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

Tensor2 Tensor2::row_vector(std::span<const double> values) { return Tensor2(1, values.size(), values); }

Tensor2 Tensor2::column_vector(std::span<const double> values) { return Tensor2(values.size(), 1, values); }

void Tensor2::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

bool Tensor2::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor2::require_finite(std::string_view what) const {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw DataError(std::string(what) + ": non-finite value at row " + std::to_string(i / cols_) +
                      ", column " + std::to_string(i % cols_));
    }
  }
}

Tensor2 gather_rows(const Tensor2& source, std::span<const std::size_t> rows) {
  Tensor2 out(rows.size(), source.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= source.rows()) throw ConfigError("gather_rows: row index out of range");
    auto src = source.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

double squared_norm(const Tensor2& t) noexcept {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return s;
}

}  // namespace mmfuse
