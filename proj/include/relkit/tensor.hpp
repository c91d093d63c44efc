#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

namespace relkit {

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Rank 0, 1 and 2 tensors are all viewed as matrices by `rows()`/`cols()`:
/// a scalar is 1x1 and a vector of length n is 1xn.
class Tensor {
 public:
  Tensor() : shape_{0, 0} {}
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on);
  /// Throws StateError when the tensor does not track a gradient.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  bool all_finite() const;
  /// Throws ValidationError naming `what` when any element is NaN or infinite.
  void check_finite(std::string_view what) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::vector<double> grad_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

}  // namespace relkit
