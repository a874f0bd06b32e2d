#include "embedpipe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace embedpipe {

namespace {

std::string describe_shapes(const std::string& op, const std::vector<Shape>& shapes,
                            const std::string& detail) {
  std::ostringstream os;
  os << op << ": incompatible shapes";
  for (std::size_t i = 0; i < shapes.size(); ++i) os << (i ? ", " : " ") << shapes[i].str();
  if (!detail.empty()) os << " (" << detail << ")";
  return os.str();
}

}  // namespace

ShapeError::ShapeError(std::string op, std::vector<Shape> shapes, const std::string& detail)
    : TensorError(describe_shapes(op, shapes, detail)), op_(std::move(op)), shapes_(std::move(shapes)) {}

Shape::Shape(std::initializer_list<std::size_t> dims)
    : Shape(std::span<const std::size_t>(dims.begin(), dims.size())) {}

Shape::Shape(std::span<const std::size_t> dims) {
  if (dims.size() > kMaxRank) throw TensorError("shape rank exceeds " + std::to_string(kMaxRank));
  for (std::size_t d : dims) {
    if (d == 0) throw TensorError("shape dimensions must be positive");
  }
  std::copy(dims.begin(), dims.end(), dims_.begin());
  rank_ = dims.size();
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
  return n;
}

std::size_t Shape::rows() const {
  std::size_t n = 1;
  for (std::size_t i = 0; i + 1 < rank_; ++i) n *= dims_[i];
  return n;
}

std::string Shape::str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < rank_; ++i) {
    if (i) s += ",";
    s += std::to_string(dims_[i]);
  }
  return s + "]";
}

bool Shape::operator==(const Shape& other) const {
  return rank_ == other.rank_ && std::equal(begin(), end(), other.begin());
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw TensorError("tensor data length " + std::to_string(data_.size()) +
                      " does not match shape " + shape_.str());
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw TensorError("matrix literal needs at least one row");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> data;
  for (const auto& r : rows) {
    if (r.size() != cols) throw TensorError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor(Shape{rows.size(), cols}, std::move(data));
}

double Tensor::item() const {
  if (data_.size() != 1) throw TensorError("item() on tensor of shape " + shape_.str());
  return data_[0];
}

void Tensor::zero_grad() { grad_.assign(data_.size(), 0.0); }

void Tensor::accumulate_grad(std::span<const double> g) {
  if (g.size() != data_.size()) {
    throw ShapeError("accumulate_grad", {shape_}, "gradient has " + std::to_string(g.size()) + " values");
  }
  if (grad_.empty()) grad_.assign(data_.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) grad_[i] += g[i];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != data_.size()) throw ShapeError("reshape", {shape_, shape});
  return Tensor(shape, data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace embedpipe
