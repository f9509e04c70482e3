#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace stylegrow {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

// Dense double-precision array. Copies share the underlying buffer; ops in
// the autodiff layer treat produced tensors as immutable. Use clone() before
// mutating a tensor that may be shared.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int64_t dim() const { return static_cast<int64_t>(shape_.size()); }
  int64_t size(int64_t axis) const;
  int64_t numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  double item() const;

  Tensor clone() const;
  // Same buffer, new shape (numel must match).
  Tensor reshaped(Shape shape) const;

  double& at(std::initializer_list<int64_t> idx);
  double at(std::initializer_list<int64_t> idx) const;

  bool all_finite() const;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
};

// Row-major strides for a shape.
std::vector<int64_t> strides_for(const Shape& s);

// numpy-style broadcast of two shapes; throws on mismatch.
Shape broadcast_shapes(const Shape& a, const Shape& b);

}  // namespace stylegrow
