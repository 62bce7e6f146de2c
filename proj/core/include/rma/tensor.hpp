#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rma {

using Shape = std::vector<std::size_t>;

/// Thrown when operand shapes do not conform for an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an operation is undefined at its input (e.g. normalizing a
/// zero vector).
class SingularInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Thrown when a NaN or infinity shows up in tensor data.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Every Tensor holds only finite values
/// and `size() == shape_size(shape())`; both are checked on construction.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value) { return Tensor({}, {value}); }
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> mutable_data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  /// Value of a single-element tensor.
  double item() const;

  /// Same data under a new shape with the same element count.
  Tensor reshaped(Shape shape) const;
  /// Rank-1 view of the data in row-major order.
  Tensor flattened() const { return reshaped({size()}); }

  /// Throws NonFiniteError naming `context` if any element is NaN/Inf.
  void check_finite(const char* context) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Elementwise sign with sign(0) == 0.
Tensor sign(const Tensor& t);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace rma
