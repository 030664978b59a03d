#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace svgl {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
/// Packet-aligned buffer, so vectorised kernels see the same alignment on every run.
using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

/// Dense row-major array of doubles. Rank-2 views treat every leading extent
/// as rows and the last extent as columns.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::span<const double> data);
  Tensor(std::vector<std::size_t> shape, Storage data);

  /// Rank-1 tensor holding `values`.
  static Tensor vector(std::initializer_list<double> values);
  static Tensor vector(std::span<const double> values);
  /// Rank-2 tensor from nested rows; all rows must share a length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t extent(std::size_t axis) const;

  /// Product of all extents but the last.
  std::size_t rows() const;
  /// Last extent.
  std::size_t cols() const;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  Storage& values() noexcept { return data_; }
  const Storage& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t row, std::size_t col) { return data_[row * cols() + col]; }
  double at(std::size_t row, std::size_t col) const { return data_[row * cols() + col]; }

  std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }

  MatrixMap matrix();
  ConstMatrixMap matrix() const;

  Tensor reshaped(std::vector<std::size_t> shape) const;
  /// Entries [begin, end) of the leading axis, keeping trailing extents.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;
  /// Rows picked by index, in the given order.
  Tensor gather_rows(std::span<const std::size_t> indices) const;

  bool all_finite() const noexcept;
  void fill(double value);

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  std::vector<std::size_t> shape_;
  Storage data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);
void require_same_shape(const Tensor& a, const Tensor& b, const char* context);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
/// y += s * x
void axpy(double s, const Tensor& x, Tensor& y);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
double squared_norm(std::span<const double> a);
/// Concatenate rank-2 tensors along the column axis.
Tensor concat_cols(const Tensor& left, const Tensor& right);
/// Columns [begin, end) of a rank-2 view.
Tensor slice_cols(const Tensor& t, std::size_t begin, std::size_t end);

}  // namespace svgl
