#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace mmfuse {

// Dense row-major matrix of doubles. Storage is aligned for Eigen's packet
// width so that kernels see the same memory layout on every run.
class Tensor2 {
 public:
  using Storage = std::vector<double, Eigen::aligned_allocator<double>>;
  using MatrixMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2(std::size_t rows, std::size_t cols, std::span<const double> values);

  static Tensor2 from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor2 identity(std::size_t n);
  static Tensor2 row_vector(std::span<const double> values);
  static Tensor2 column_vector(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  bool same_shape(const Tensor2& other) const noexcept { return rows_ == other.rows_ && cols_ == other.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  MatrixMap matrix() { return {values_.data(), Eigen::Index(rows_), Eigen::Index(cols_)}; }
  ConstMatrixMap matrix() const { return {values_.data(), Eigen::Index(rows_), Eigen::Index(cols_)}; }

  void fill(double value);
  // Throws DataError naming `what` if any entry is NaN or infinite.
  void require_finite(std::string_view what) const;
  bool all_finite() const noexcept;

  bool operator==(const Tensor2& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_ && values_ == other.values_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Storage values_;
};

Tensor2 gather_rows(const Tensor2& source, std::span<const std::size_t> rows);
double squared_norm(const Tensor2& t) noexcept;

}  // namespace mmfuse
