#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

namespace activemark {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;

/// Dense row-major float64 array with an optional gradient buffer of the same length.
///
/// A default-constructed tensor is empty (rank 0, no elements). Every other
/// tensor has strictly positive extents.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

  bool empty() const noexcept { return data_.empty(); }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  /// Rows/cols when the tensor is viewed as [prod(leading) x last].
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols(), cols()}; }
  Tensor row_copy(std::size_t r) const;

  Tensor reshaped(Shape shape) const;

  bool has_grad() const noexcept { return !grad_.empty(); }
  /// Allocates a zeroed gradient if none is attached.
  std::span<double> grad();
  std::span<const double> grad() const noexcept { return grad_; }
  void zero_grad();
  void drop_grad() noexcept { grad_.clear(); }

  bool all_finite() const noexcept;
  /// Throws NumericError naming `where` if any element is NaN or Inf.
  void require_finite(std::string_view where) const;

  /// Value equality (shape and data); gradients are ignored.
  friend bool operator==(const Tensor& a, const Tensor& b) noexcept {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

/// a[..., M, K] x b[K, N] -> [..., M, N], or batched b[..., K, N] with matching leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a^T b for 2-D operands: a[K, M], b[K, N] -> [M, N].
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a b^T for 2-D operands: a[M, K], b[N, K] -> [M, N].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
Tensor& operator+=(Tensor& a, const Tensor& b);

double l2_norm(std::span<const double> v) noexcept;
double l2_distance(std::span<const double> a, std::span<const double> b);
double max_abs_difference(const Tensor& a, const Tensor& b);

}  // namespace activemark
