#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "stylegrow/tensor.hpp"

namespace stylegrow {

class Var;

namespace detail {
struct Node {
  Tensor value;
  bool requires_grad = false;
  std::vector<Var> parents;
  // Maps the output cotangent to one cotangent per parent. Parent slots that
  // do not require grad may be returned as undefined Vars. Backward closures
  // are written in terms of graph ops on the parents (never the node itself),
  // which keeps the graph acyclic and makes higher-order grads work.
  std::function<std::vector<Var>(const Var& g)> backward;
};
}  // namespace detail

// Handle to an autodiff graph node holding a Tensor value.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& val() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t size(int64_t axis) const { return node_->value.size(axis); }
  int64_t numel() const { return node_ ? node_->value.numel() : 0; }
  double item() const { return node_->value.item(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  Var detach() const;

  detail::Node* node() const { return node_.get(); }

  // Leaf-only: replace the stored value (used by optimizers). The previous
  // graph, if any retained, still refers to old buffers.
  void set_value(Tensor t);

  static Var make(Tensor value, std::vector<Var> parents,
                  std::function<std::vector<Var>(const Var&)> backward);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Thread-local switch: when disabled, ops produce values without graph edges.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

struct GradOptions {
  bool create_graph = false;
  // When set, used as the seed cotangent instead of ones.
  std::optional<Tensor> grad_output;
  // When false, missing wrt entries come back as zero tensors.
  bool allow_unused = true;
};

// Reverse-mode gradient of `output` w.r.t. each entry of `wrt`.
std::vector<Var> grad(const Var& output, const std::vector<Var>& wrt, const GradOptions& opt = {});

// ---- scalar-ish constructors ----
Var constant(Tensor t);
Var constant(double v);
Var zeros_like(const Var& v);
Var ones_like(const Var& v);

// ---- elementwise (numpy broadcasting) ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add(const Var& a, double b);
Var mul(const Var& a, double b);
Var neg(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator+(const Var& a, double b) { return add(a, b); }
inline Var operator-(const Var& a, double b) { return add(a, -b); }
inline Var operator*(const Var& a, double b) { return mul(a, b); }
inline Var operator/(const Var& a, double b) { return mul(a, 1.0 / b); }
inline Var operator*(double a, const Var& b) { return mul(b, a); }
inline Var operator-(const Var& a) { return neg(a); }

Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var sin(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var pow_const(const Var& a, double p);
Var square(const Var& a);

// ---- shape ----
Var reshape(const Var& a, Shape shape);
Var transpose(const Var& a, std::vector<int64_t> perm);
Var broadcast_to(const Var& a, Shape shape);
// Sum over broadcast axes so the result has `shape` (inverse of broadcast_to).
Var reduce_to(const Var& a, const Shape& shape);
Var slice(const Var& a, int64_t axis, int64_t start, int64_t len);
Var concat(const std::vector<Var>& vs, int64_t axis);
Var index_select(const Var& a, int64_t axis, const std::vector<int64_t>& idx);
Var pad2d(const Var& a, int64_t top, int64_t bottom, int64_t left, int64_t right);

// ---- reductions ----
Var sum(const Var& a);
Var sum(const Var& a, const std::vector<int64_t>& axes, bool keepdim = false);
Var mean(const Var& a);
Var mean(const Var& a, const std::vector<int64_t>& axes, bool keepdim = false);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);               // [m,k]x[k,n]
Var bmm(const Var& a, const Var& b);                  // [b,m,k]x[b,k,n]

// ---- convolution family (NCHW) ----
// x: [N, G*Ci, H, W], w: [G*Co, Ci, kh, kw], zero padding handled by pad2d.
Var conv2d(const Var& x, const Var& w, int64_t stride = 1, int64_t groups = 1);
// Adjoint of conv2d w.r.t. its input; g: [N, G*Co, Ho, Wo] -> [N, G*Ci, H, W].
Var conv2d_input_grad(const Var& g, const Var& w, int64_t stride, int64_t groups,
                      int64_t in_h, int64_t in_w);
// Adjoint of conv2d w.r.t. its weight.
Var conv2d_weight_grad(const Var& x, const Var& g, int64_t stride, int64_t groups,
                       int64_t kh, int64_t kw);

// Zero-stuffing upsample of the last two dims by integer factors.
Var dilate2d(const Var& a, int64_t fy, int64_t fx);
// Keep every fy/fx-th sample starting at (oy, ox).
Var subsample2d(const Var& a, int64_t fy, int64_t fx, int64_t oy = 0, int64_t ox = 0);

// ---- misc ----
// max over all elements (value utility, not differentiable).
double tensor_max(const Tensor& t);
double tensor_min(const Tensor& t);

}  // namespace stylegrow
