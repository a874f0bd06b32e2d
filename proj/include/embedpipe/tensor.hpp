#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace embedpipe {

/// Base class for every error raised by the numerical core.
class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Shape;

/// Raised when an op receives operands whose shapes it cannot combine.
/// Carries the op name and the offending shapes so callers can report them.
class ShapeError : public TensorError {
 public:
  ShapeError(std::string op, std::vector<Shape> shapes, const std::string& detail = {});
  const std::string& op() const { return op_; }
  const std::vector<Shape>& shapes() const { return shapes_; }

 private:
  std::string op_;
  std::vector<Shape> shapes_;
};

class NonFiniteError : public TensorError {
 public:
  using TensorError::TensorError;
};

/// Raised when an optimizer is asked to update a tensor that does not require grad.
class FrozenParameterError : public TensorError {
 public:
  using TensorError::TensorError;
};

/// Dimension list with inline storage. Rank 0 denotes a scalar.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::span<const std::size_t> dims);

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t i) const { return dims_[i]; }
  std::size_t numel() const;
  const std::size_t* begin() const { return dims_.data(); }
  const std::size_t* end() const { return dims_.data() + rank_; }

  /// Rows of the matrix view: product of all but the last dimension.
  std::size_t rows() const;
  /// Columns of the matrix view: the last dimension (1 for scalars).
  std::size_t cols() const { return rank_ == 0 ? 1 : dims_[rank_ - 1]; }

  std::string str() const;
  bool operator==(const Shape& other) const;

 private:
  std::array<std::size_t, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

/// Dense row-major float64 array with an optional gradient buffer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t rows() const { return shape_.rows(); }
  std::size_t cols() const { return shape_.cols(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return !grad_.empty(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  /// Sets the gradient buffer to zeros, allocating it if absent.
  void zero_grad();
  void drop_grad() { grad_.clear(); }
  void accumulate_grad(std::span<const double> g);

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::vector<double> grad_;
};

}  // namespace embedpipe
