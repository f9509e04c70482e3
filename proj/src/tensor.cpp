#include "stylegrow/tensor.hpp"

#include <cmath>
#include <sstream>

namespace stylegrow {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (int64_t d : shape_) {
    if (d < 0) throw std::invalid_argument("Tensor: negative dimension in " + shape_str(shape_));
  }
  data_ = std::make_shared<std::vector<double>>(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  if (shape_numel(shape_) != static_cast<int64_t>(values.size())) {
    throw std::invalid_argument("Tensor: data size " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape_));
  }
  data_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_->begin(), t.data_->end(), value);
  return t;
}

Tensor Tensor::scalar(double value) {
  Tensor t{Shape{}};
  (*t.data_)[0] = value;
  return t;
}

int64_t Tensor::size(int64_t axis) const {
  if (axis < 0) axis += dim();
  if (axis < 0 || axis >= dim()) throw std::out_of_range("Tensor::size axis out of range");
  return shape_[static_cast<size_t>(axis)];
}

double Tensor::item() const {
  if (numel() != 1) throw std::logic_error("Tensor::item on tensor with numel " + std::to_string(numel()));
  return (*data_)[0];
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  if (data_) t.data_ = std::make_shared<std::vector<double>>(*data_);
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw std::invalid_argument("Tensor::reshaped: numel mismatch " + shape_str(shape_) + " -> " + shape_str(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

double& Tensor::at(std::initializer_list<int64_t> idx) {
  auto st = strides_for(shape_);
  if (idx.size() != shape_.size()) throw std::invalid_argument("Tensor::at rank mismatch");
  int64_t off = 0;
  size_t k = 0;
  for (int64_t i : idx) off += i * st[k++];
  return (*data_)[static_cast<size_t>(off)];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  return const_cast<Tensor*>(this)->at(idx);
}

bool Tensor::all_finite() const {
  if (!data_) return true;
  for (double v : *data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::vector<int64_t> strides_for(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int64_t i = static_cast<int64_t>(s.size()) - 2; i >= 0; --i) {
    st[i] = st[i + 1] * s[i + 1];
  }
  return st;
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  size_t n = std::max(a.size(), b.size());
  Shape out(n, 1);
  for (size_t i = 0; i < n; ++i) {
    int64_t da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    int64_t db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw std::invalid_argument("broadcast mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

}  // namespace stylegrow
