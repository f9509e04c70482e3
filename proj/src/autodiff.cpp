#include "stylegrow/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_map>
#include <unordered_set>

namespace stylegrow {

namespace {

thread_local bool t_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

// Effective strides of `shape` when broadcast to `out`: 0 on expanded axes.
std::vector<int64_t> broadcast_strides(const Shape& shape, const Shape& out) {
  auto st = strides_for(shape);
  std::vector<int64_t> eff(out.size(), 0);
  size_t off = out.size() - shape.size();
  for (size_t i = 0; i < shape.size(); ++i) {
    eff[off + i] = (shape[i] == 1 && out[off + i] != 1) ? 0 : st[i];
  }
  return eff;
}

template <typename F>
Tensor binary_broadcast(const Tensor& a, const Tensor& b, F f) {
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  Shape os = broadcast_shapes(a.shape(), b.shape());
  Tensor out(os);
  auto sa = broadcast_strides(a.shape(), os);
  auto sb = broadcast_strides(b.shape(), os);
  size_t rank = os.size();
  std::vector<int64_t> idx(rank, 0);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  int64_t total = out.numel();
  int64_t oa = 0, ob = 0;
  for (int64_t lin = 0; lin < total; ++lin) {
    po[lin] = f(pa[oa], pb[ob]);
    for (int64_t d = static_cast<int64_t>(rank) - 1; d >= 0; --d) {
      idx[d]++;
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < os[d]) break;
      idx[d] = 0;
      oa -= sa[d] * os[d];
      ob -= sb[d] * os[d];
    }
  }
  return out;
}

template <typename F>
Tensor unary_map(const Tensor& a, F f) {
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  return out;
}

Tensor reduce_sum_axes(const Tensor& a, const std::vector<bool>& reduce_axis, bool keepdim) {
  const Shape& in = a.shape();
  Shape out_shape;
  for (size_t i = 0; i < in.size(); ++i) {
    if (reduce_axis[i]) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(in[i]);
    }
  }
  Tensor out(out_shape);
  auto in_strides = strides_for(in);
  // strides of output viewed in input rank, 0 on reduced axes
  std::vector<int64_t> ost(in.size(), 0);
  {
    Shape kept;
    for (size_t i = 0; i < in.size(); ++i) kept.push_back(reduce_axis[i] ? 1 : in[i]);
    auto kst = strides_for(kept);
    for (size_t i = 0; i < in.size(); ++i) ost[i] = reduce_axis[i] ? 0 : kst[i];
  }
  const double* pa = a.data();
  double* po = out.data();
  std::vector<int64_t> idx(in.size(), 0);
  int64_t oi = 0;
  int64_t total = a.numel();
  for (int64_t lin = 0; lin < total; ++lin) {
    po[oi] += pa[lin];
    for (int64_t d = static_cast<int64_t>(in.size()) - 1; d >= 0; --d) {
      idx[d]++;
      oi += ost[d];
      if (idx[d] < in[d]) break;
      idx[d] = 0;
      oi -= ost[d] * in[d];
    }
  }
  return out;
}

std::vector<bool> axes_mask(const Shape& s, const std::vector<int64_t>& axes) {
  std::vector<bool> m(s.size(), false);
  for (int64_t ax : axes) {
    if (ax < 0) ax += static_cast<int64_t>(s.size());
    if (ax < 0 || ax >= static_cast<int64_t>(s.size())) throw std::out_of_range("reduce axis out of range");
    m[static_cast<size_t>(ax)] = true;
  }
  return m;
}

// im2col for one (n, group) slice: x [Ci, H, W] -> M [Ci*kh*kw, Ho*Wo]
void im2col(const double* x, int64_t ci, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t stride, int64_t ho, int64_t wo, double* m) {
  for (int64_t c = 0; c < ci; ++c) {
    for (int64_t u = 0; u < kh; ++u) {
      for (int64_t v = 0; v < kw; ++v) {
        double* row = m + ((c * kh + u) * kw + v) * (ho * wo);
        const double* src = x + c * h * w;
        for (int64_t i = 0; i < ho; ++i) {
          const double* s = src + (i * stride + u) * w + v;
          if (stride == 1) {
            std::memcpy(row + i * wo, s, sizeof(double) * static_cast<size_t>(wo));
          } else {
            for (int64_t j = 0; j < wo; ++j) row[i * wo + j] = s[j * stride];
          }
        }
      }
    }
  }
}

// scatter-add of columns back into an image slice (adjoint of im2col)
void col2im(const double* m, int64_t ci, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t stride, int64_t ho, int64_t wo, double* x) {
  for (int64_t c = 0; c < ci; ++c) {
    for (int64_t u = 0; u < kh; ++u) {
      for (int64_t v = 0; v < kw; ++v) {
        const double* row = m + ((c * kh + u) * kw + v) * (ho * wo);
        double* dst = x + c * h * w;
        for (int64_t i = 0; i < ho; ++i) {
          double* s = dst + (i * stride + u) * w + v;
          for (int64_t j = 0; j < wo; ++j) s[j * stride] += row[i * wo + j];
        }
      }
    }
  }
}

struct ConvDims {
  int64_t n, gci, h, w, gco, ci, co, kh, kw, ho, wo, groups, stride;
};

ConvDims conv_dims(const Shape& xs, const Shape& ws, int64_t stride, int64_t groups) {
  if (xs.size() != 4 || ws.size() != 4) throw std::invalid_argument("conv2d: rank-4 tensors required");
  ConvDims d;
  d.n = xs[0];
  d.gci = xs[1];
  d.h = xs[2];
  d.w = xs[3];
  d.kh = ws[2];
  d.kw = ws[3];
  d.groups = groups;
  d.stride = stride;
  if (d.gci % groups != 0) throw std::invalid_argument("conv2d: channels not divisible by groups");
  d.ci = d.gci / groups;
  if (ws[1] != d.ci) throw std::invalid_argument("conv2d: weight in-channels mismatch");
  if (ws[0] % groups != 0) throw std::invalid_argument("conv2d: out channels not divisible by groups");
  d.gco = ws[0];
  d.co = d.gco / groups;
  if (d.h < d.kh || d.w < d.kw) throw std::invalid_argument("conv2d: kernel larger than input");
  d.ho = (d.h - d.kh) / stride + 1;
  d.wo = (d.w - d.kw) / stride + 1;
  return d;
}

Tensor conv2d_raw(const Tensor& x, const Tensor& w, int64_t stride, int64_t groups) {
  ConvDims d = conv_dims(x.shape(), w.shape(), stride, groups);
  Tensor out({d.n, d.gco, d.ho, d.wo});
  std::vector<double> colbuf(static_cast<size_t>(d.ci * d.kh * d.kw * d.ho * d.wo));
  for (int64_t n = 0; n < d.n; ++n) {
    for (int64_t g = 0; g < d.groups; ++g) {
      const double* xs = x.data() + (n * d.gci + g * d.ci) * d.h * d.w;
      im2col(xs, d.ci, d.h, d.w, d.kh, d.kw, d.stride, d.ho, d.wo, colbuf.data());
      CMapMat W(w.data() + g * d.co * d.ci * d.kh * d.kw, d.co, d.ci * d.kh * d.kw);
      CMapMat M(colbuf.data(), d.ci * d.kh * d.kw, d.ho * d.wo);
      MapMat O(out.data() + (n * d.gco + g * d.co) * d.ho * d.wo, d.co, d.ho * d.wo);
      O.noalias() = W * M;
    }
  }
  return out;
}

Tensor conv2d_input_grad_raw(const Tensor& g, const Tensor& w, int64_t stride, int64_t groups,
                             int64_t in_h, int64_t in_w) {
  Shape xs{g.shape()[0], w.shape()[1] * groups, in_h, in_w};
  ConvDims d = conv_dims(xs, w.shape(), stride, groups);
  if (d.ho != g.shape()[2] || d.wo != g.shape()[3] || d.gco != g.shape()[1]) {
    throw std::invalid_argument("conv2d_input_grad: cotangent shape mismatch");
  }
  Tensor dx(xs);
  std::vector<double> colbuf(static_cast<size_t>(d.ci * d.kh * d.kw * d.ho * d.wo));
  for (int64_t n = 0; n < d.n; ++n) {
    for (int64_t gi = 0; gi < d.groups; ++gi) {
      CMapMat W(w.data() + gi * d.co * d.ci * d.kh * d.kw, d.co, d.ci * d.kh * d.kw);
      CMapMat G(g.data() + (n * d.gco + gi * d.co) * d.ho * d.wo, d.co, d.ho * d.wo);
      MapMat M(colbuf.data(), d.ci * d.kh * d.kw, d.ho * d.wo);
      M.noalias() = W.transpose() * G;
      double* xd = dx.data() + (n * d.gci + gi * d.ci) * d.h * d.w;
      col2im(colbuf.data(), d.ci, d.h, d.w, d.kh, d.kw, d.stride, d.ho, d.wo, xd);
    }
  }
  return dx;
}

Tensor conv2d_weight_grad_raw(const Tensor& x, const Tensor& g, int64_t stride, int64_t groups,
                              int64_t kh, int64_t kw) {
  Shape ws{g.shape()[1], x.shape()[1] / groups, kh, kw};
  ConvDims d = conv_dims(x.shape(), ws, stride, groups);
  if (d.ho != g.shape()[2] || d.wo != g.shape()[3]) {
    throw std::invalid_argument("conv2d_weight_grad: cotangent shape mismatch");
  }
  Tensor dw(ws);
  std::vector<double> colbuf(static_cast<size_t>(d.ci * d.kh * d.kw * d.ho * d.wo));
  for (int64_t n = 0; n < d.n; ++n) {
    for (int64_t gi = 0; gi < d.groups; ++gi) {
      const double* xs = x.data() + (n * d.gci + gi * d.ci) * d.h * d.w;
      im2col(xs, d.ci, d.h, d.w, d.kh, d.kw, d.stride, d.ho, d.wo, colbuf.data());
      CMapMat M(colbuf.data(), d.ci * d.kh * d.kw, d.ho * d.wo);
      CMapMat G(g.data() + (n * d.gco + gi * d.co) * d.ho * d.wo, d.co, d.ho * d.wo);
      MapMat W(dw.data() + gi * d.co * d.ci * d.kh * d.kw, d.co, d.ci * d.kh * d.kw);
      W.noalias() += G * M.transpose();
    }
  }
  return dw;
}

}  // namespace

// ---------------------------------------------------------------------------

Var::Var(Tensor value, bool requires_grad) {
  node_ = std::make_shared<detail::Node>();
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::detach() const {
  Var v;
  v.node_ = std::make_shared<detail::Node>();
  v.node_->value = node_->value;
  v.node_->requires_grad = false;
  return v;
}

void Var::set_value(Tensor t) {
  if (node_->backward) throw std::logic_error("Var::set_value on non-leaf");
  node_->value = std::move(t);
}

Var Var::make(Tensor value, std::vector<Var> parents,
              std::function<std::vector<Var>(const Var&)> backward) {
  bool track = false;
  if (t_grad_enabled) {
    for (const auto& p : parents) track = track || p.requires_grad();
  }
  Var v;
  v.node_ = std::make_shared<detail::Node>();
  v.node_->value = std::move(value);
  if (track) {
    v.node_->requires_grad = true;
    v.node_->parents = std::move(parents);
    v.node_->backward = std::move(backward);
  }
  return v;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

std::vector<Var> grad(const Var& output, const std::vector<Var>& wrt, const GradOptions& opt) {
  if (!output.defined()) throw std::invalid_argument("grad: undefined output");
  // Topological order: every node appears before its parents when reversed.
  std::vector<detail::Node*> topo;
  {
    std::unordered_set<detail::Node*> done;
    std::vector<std::pair<detail::Node*, size_t>> stack;
    std::unordered_set<detail::Node*> onstack;
    if (output.requires_grad()) {
      stack.push_back({output.node(), 0});
      onstack.insert(output.node());
    }
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        detail::Node* p = n->parents[i].node();
        ++i;
        if (p->requires_grad && !done.count(p) && !onstack.count(p)) {
          stack.push_back({p, 0});
          onstack.insert(p);
        }
      } else {
        topo.push_back(n);
        done.insert(n);
        onstack.erase(n);
        stack.pop_back();
      }
    }
  }

  std::unordered_map<detail::Node*, Var> grads;
  {
    Tensor seed = opt.grad_output ? *opt.grad_output : Tensor::full(output.shape(), 1.0);
    if (seed.shape() != output.shape()) throw std::invalid_argument("grad: grad_output shape mismatch");
    grads[output.node()] = Var(std::move(seed));
  }

  {
    std::optional<NoGradGuard> ng;
    if (!opt.create_graph) ng.emplace();
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      detail::Node* n = *it;
      auto git = grads.find(n);
      if (git == grads.end() || !n->backward) continue;
      std::vector<Var> pg = n->backward(git->second);
      if (pg.size() != n->parents.size()) throw std::logic_error("grad: backward arity mismatch");
      for (size_t i = 0; i < pg.size(); ++i) {
        if (!n->parents[i].requires_grad() || !pg[i].defined()) continue;
        detail::Node* p = n->parents[i].node();
        auto ex = grads.find(p);
        if (ex == grads.end()) {
          grads[p] = pg[i];
        } else {
          ex->second = add(ex->second, pg[i]);
        }
      }
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const auto& v : wrt) {
    auto it = grads.find(v.node());
    if (it != grads.end()) {
      out.push_back(opt.create_graph ? it->second : it->second.detach());
    } else {
      if (!opt.allow_unused) throw std::invalid_argument("grad: an input is unused in the graph");
      out.push_back(Var(Tensor::zeros(v.shape())));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Var constant(Tensor t) { return Var(std::move(t), false); }
Var constant(double v) { return Var(Tensor::scalar(v), false); }
Var zeros_like(const Var& v) { return Var(Tensor::zeros(v.shape())); }
Var ones_like(const Var& v) { return Var(Tensor::full(v.shape(), 1.0)); }

Var reduce_to(const Var& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  const Shape& in = a.shape();
  size_t extra = in.size() - shape.size();
  std::vector<bool> mask(in.size(), false);
  bool any = false;
  for (size_t i = 0; i < in.size(); ++i) {
    if (i < extra) {
      mask[i] = true;
    } else {
      int64_t want = shape[i - extra];
      if (want == in[i]) continue;
      if (want != 1) throw std::invalid_argument("reduce_to: incompatible shapes");
      mask[i] = true;
    }
    any = any || mask[i];
  }
  Tensor val = reduce_sum_axes(a.val(), mask, true);
  val = val.reshaped(shape);
  Shape orig = in;
  return Var::make(std::move(val), {a}, [orig](const Var& g) -> std::vector<Var> {
    return {broadcast_to(g, orig)};
  });
}

namespace {

// Generic binary op with broadcast-aware backward.
template <typename F, typename BW>
Var binary_op(const Var& a, const Var& b, F f, BW bw) {
  Tensor val = binary_broadcast(a.val(), b.val(), f);
  return Var::make(std::move(val), {a, b}, [a, b, bw](const Var& g) -> std::vector<Var> {
    auto [ga, gb] = bw(g, a, b);
    if (ga.defined()) ga = reduce_to(ga, a.shape());
    if (gb.defined()) gb = reduce_to(gb, b.shape());
    return {ga, gb};
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; },
      [](const Var& g, const Var&, const Var&) { return std::pair<Var, Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; },
      [](const Var& g, const Var&, const Var&) { return std::pair<Var, Var>{g, neg(g)}; });
}

Var mul(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; },
      [](const Var& g, const Var& a, const Var& b) { return std::pair<Var, Var>{mul(g, b), mul(g, a)}; });
}

Var div(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](double x, double y) { return x / y; },
      [](const Var& g, const Var& a, const Var& b) {
        Var ga = div(g, b);
        Var gb = neg(mul(g, div(a, mul(b, b))));
        return std::pair<Var, Var>{ga, gb};
      });
}

Var add(const Var& a, double b) {
  Tensor val = unary_map(a.val(), [b](double x) { return x + b; });
  return Var::make(std::move(val), {a}, [](const Var& g) -> std::vector<Var> { return {g}; });
}

Var mul(const Var& a, double b) {
  Tensor val = unary_map(a.val(), [b](double x) { return x * b; });
  return Var::make(std::move(val), {a}, [b](const Var& g) -> std::vector<Var> { return {mul(g, b)}; });
}

Var neg(const Var& a) { return mul(a, -1.0); }

namespace {
Var cos_op(const Var& a);
}

Var exp(const Var& a) {
  Tensor val = unary_map(a.val(), [](double x) { return std::exp(x); });
  return Var::make(std::move(val), {a},
                   [a](const Var& g) -> std::vector<Var> { return {mul(g, exp(a))}; });
}

Var log(const Var& a) {
  Tensor val = unary_map(a.val(), [](double x) { return std::log(x); });
  return Var::make(std::move(val), {a},
                   [a](const Var& g) -> std::vector<Var> { return {div(g, a)}; });
}

Var sqrt(const Var& a) {
  Tensor val = unary_map(a.val(), [](double x) { return std::sqrt(x); });
  return Var::make(std::move(val), {a}, [a](const Var& g) -> std::vector<Var> {
    return {mul(div(g, sqrt(a)), 0.5)};
  });
}

Var sin(const Var& a) {
  Tensor val = unary_map(a.val(), [](double x) { return std::sin(x); });
  return Var::make(std::move(val), {a},
                   [a](const Var& g) -> std::vector<Var> { return {mul(g, cos_op(a))}; });
}

namespace {
Var cos_op(const Var& a) {
  Tensor val = unary_map(a.val(), [](double x) { return std::cos(x); });
  return Var::make(std::move(val), {a},
                   [a](const Var& g) -> std::vector<Var> { return {neg(mul(g, sin(a)))}; });
}
}  // namespace

Var tanh(const Var& a) {
  Tensor val = unary_map(a.val(), [](double x) { return std::tanh(x); });
  return Var::make(std::move(val), {a}, [a](const Var& g) -> std::vector<Var> {
    Var t = tanh(a);
    return {mul(g, sub(constant(1.0), mul(t, t)))};
  });
}

Var sigmoid(const Var& a) {
  Tensor val = unary_map(a.val(), [](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  return Var::make(std::move(val), {a}, [a](const Var& g) -> std::vector<Var> {
    Var s = sigmoid(a);
    return {mul(g, mul(s, sub(constant(1.0), s)))};
  });
}

Var softplus(const Var& a) {
  // log(1 + e^x), stable form
  Tensor val = unary_map(a.val(), [](double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  return Var::make(std::move(val), {a}, [a](const Var& g) -> std::vector<Var> {
    return {mul(g, sigmoid(a))};
  });
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var leaky_relu(const Var& a, double slope) {
  Tensor val = unary_map(a.val(), [slope](double x) { return x >= 0 ? x : slope * x; });
  // Mask frozen at the forward value; second derivative w.r.t. a is 0 a.e.
  Tensor mask = unary_map(a.val(), [slope](double x) { return x >= 0 ? 1.0 : slope; });
  return Var::make(std::move(val), {a}, [mask](const Var& g) -> std::vector<Var> {
    return {mul(g, constant(mask))};
  });
}

Var pow_const(const Var& a, double p) {
  Tensor val = unary_map(a.val(), [p](double x) { return std::pow(x, p); });
  return Var::make(std::move(val), {a}, [a, p](const Var& g) -> std::vector<Var> {
    return {mul(g, mul(pow_const(a, p - 1.0), p))};
  });
}

Var square(const Var& a) { return mul(a, a); }

// ---------------------------------------------------------------------------

Var reshape(const Var& a, Shape shape) {
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      int64_t rest = 1;
      for (size_t j = 0; j < shape.size(); ++j)
        if (j != i) rest *= shape[j];
      shape[i] = a.numel() / rest;
    }
  }
  Tensor val = a.val().reshaped(shape);
  Shape orig = a.shape();
  return Var::make(std::move(val), {a}, [orig](const Var& g) -> std::vector<Var> {
    return {reshape(g, orig)};
  });
}

Var transpose(const Var& a, std::vector<int64_t> perm) {
  const Shape& in = a.shape();
  if (perm.size() != in.size()) throw std::invalid_argument("transpose: perm rank mismatch");
  Shape os(in.size());
  for (size_t i = 0; i < perm.size(); ++i) os[i] = in[static_cast<size_t>(perm[i])];
  Tensor out(os);
  auto ist = strides_for(in);
  std::vector<int64_t> src_stride(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) src_stride[i] = ist[static_cast<size_t>(perm[i])];
  const double* pa = a.val().data();
  double* po = out.data();
  std::vector<int64_t> idx(os.size(), 0);
  int64_t off = 0;
  int64_t total = out.numel();
  for (int64_t lin = 0; lin < total; ++lin) {
    po[lin] = pa[off];
    for (int64_t d = static_cast<int64_t>(os.size()) - 1; d >= 0; --d) {
      idx[d]++;
      off += src_stride[d];
      if (idx[d] < os[d]) break;
      idx[d] = 0;
      off -= src_stride[d] * os[d];
    }
  }
  std::vector<int64_t> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int64_t>(i);
  return Var::make(std::move(out), {a}, [inv](const Var& g) -> std::vector<Var> {
    return {transpose(g, inv)};
  });
}

Var broadcast_to(const Var& a, Shape shape) {
  if (a.shape() == shape) return a;
  if (broadcast_shapes(a.shape(), shape) != shape) {
    throw std::invalid_argument("broadcast_to: cannot expand " + shape_str(a.shape()) + " to " +
                                shape_str(shape));
  }
  Tensor out = binary_broadcast(a.val(), Tensor::zeros(shape), [](double x, double) { return x; });
  Shape orig = a.shape();
  return Var::make(std::move(out), {a}, [orig](const Var& g) -> std::vector<Var> {
    return {reduce_to(g, orig)};
  });
}

Var slice(const Var& a, int64_t axis, int64_t start, int64_t len) {
  const Shape& in = a.shape();
  if (axis < 0) axis += static_cast<int64_t>(in.size());
  if (start < 0 || start + len > in[static_cast<size_t>(axis)]) {
    throw std::out_of_range("slice out of range");
  }
  Shape os = in;
  os[static_cast<size_t>(axis)] = len;
  Tensor out(os);
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= in[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < in.size(); ++i) inner *= in[i];
  int64_t in_ax = in[static_cast<size_t>(axis)];
  const double* pa = a.val().data();
  double* po = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(po + o * len * inner, pa + (o * in_ax + start) * inner,
                sizeof(double) * static_cast<size_t>(len * inner));
  }
  int64_t ax = axis, st = start;
  Shape orig = in;
  return Var::make(std::move(out), {a}, [ax, st, orig](const Var& g) -> std::vector<Var> {
    std::vector<Var> parts;
    int64_t before = st;
    int64_t after = orig[static_cast<size_t>(ax)] - st - g.shape()[static_cast<size_t>(ax)];
    if (before > 0) {
      Shape s = orig;
      s[static_cast<size_t>(ax)] = before;
      parts.push_back(constant(Tensor::zeros(s)));
    }
    parts.push_back(g);
    if (after > 0) {
      Shape s = orig;
      s[static_cast<size_t>(ax)] = after;
      parts.push_back(constant(Tensor::zeros(s)));
    }
    return {parts.size() == 1 ? g : concat(parts, ax)};
  });
}

Var concat(const std::vector<Var>& vs, int64_t axis) {
  if (vs.empty()) throw std::invalid_argument("concat: empty");
  const Shape& s0 = vs[0].shape();
  if (axis < 0) axis += static_cast<int64_t>(s0.size());
  Shape os = s0;
  int64_t total_ax = 0;
  for (const auto& v : vs) total_ax += v.shape()[static_cast<size_t>(axis)];
  os[static_cast<size_t>(axis)] = total_ax;
  Tensor out(os);
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= s0[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s0.size(); ++i) inner *= s0[i];
  int64_t off_ax = 0;
  for (const auto& v : vs) {
    int64_t ax_len = v.shape()[static_cast<size_t>(axis)];
    const double* pv = v.val().data();
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(out.data() + (o * total_ax + off_ax) * inner, pv + o * ax_len * inner,
                  sizeof(double) * static_cast<size_t>(ax_len * inner));
    }
    off_ax += ax_len;
  }
  std::vector<int64_t> lens;
  for (const auto& v : vs) lens.push_back(v.shape()[static_cast<size_t>(axis)]);
  int64_t ax = axis;
  return Var::make(std::move(out), vs, [lens, ax](const Var& g) -> std::vector<Var> {
    std::vector<Var> gs;
    int64_t off = 0;
    for (int64_t len : lens) {
      gs.push_back(slice(g, ax, off, len));
      off += len;
    }
    return gs;
  });
}

namespace {
Var index_scatter_add(const Var& src, int64_t axis, const std::vector<int64_t>& idx, Shape base_shape);
}

Var index_select(const Var& a, int64_t axis, const std::vector<int64_t>& idx) {
  const Shape& in = a.shape();
  if (axis < 0) axis += static_cast<int64_t>(in.size());
  Shape os = in;
  os[static_cast<size_t>(axis)] = static_cast<int64_t>(idx.size());
  Tensor out(os);
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= in[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < in.size(); ++i) inner *= in[i];
  int64_t in_ax = in[static_cast<size_t>(axis)];
  for (size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= in_ax) throw std::out_of_range("index_select index out of range");
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(out.data() + (o * static_cast<int64_t>(idx.size()) + static_cast<int64_t>(k)) * inner,
                  a.val().data() + (o * in_ax + idx[k]) * inner,
                  sizeof(double) * static_cast<size_t>(inner));
    }
  }
  int64_t ax = axis;
  Shape orig = in;
  return Var::make(std::move(out), {a}, [ax, idx, orig](const Var& g) -> std::vector<Var> {
    return {index_scatter_add(g, ax, idx, orig)};
  });
}

namespace {
Var index_scatter_add(const Var& src, int64_t axis, const std::vector<int64_t>& idx, Shape base_shape) {
  Tensor out(base_shape);
  const Shape& ss = src.shape();
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= ss[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < ss.size(); ++i) inner *= ss[i];
  int64_t base_ax = base_shape[static_cast<size_t>(axis)];
  int64_t src_ax = ss[static_cast<size_t>(axis)];
  const double* ps = src.val().data();
  for (size_t k = 0; k < idx.size(); ++k) {
    for (int64_t o = 0; o < outer; ++o) {
      double* dst = out.data() + (o * base_ax + idx[k]) * inner;
      const double* s = ps + (o * src_ax + static_cast<int64_t>(k)) * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += s[i];
    }
  }
  return Var::make(std::move(out), {src}, [axis, idx](const Var& g) -> std::vector<Var> {
    return {index_select(g, axis, idx)};
  });
}
}  // namespace

Var pad2d(const Var& a, int64_t top, int64_t bottom, int64_t left, int64_t right) {
  const Shape& in = a.shape();
  if (in.size() != 4) throw std::invalid_argument("pad2d: rank-4 required");
  if (top == 0 && bottom == 0 && left == 0 && right == 0) return a;
  Shape os = in;
  os[2] += top + bottom;
  os[3] += left + right;
  Tensor out(os);
  int64_t nc = in[0] * in[1], h = in[2], w = in[3], W = os[3];
  for (int64_t c = 0; c < nc; ++c) {
    for (int64_t i = 0; i < h; ++i) {
      std::memcpy(out.data() + (c * os[2] + top + i) * W + left, a.val().data() + (c * h + i) * w,
                  sizeof(double) * static_cast<size_t>(w));
    }
  }
  return Var::make(std::move(out), {a}, [top, left, h, w](const Var& g) -> std::vector<Var> {
    return {slice(slice(g, 2, top, h), 3, left, w)};
  });
}

// ---------------------------------------------------------------------------

Var sum(const Var& a) {
  double s = 0;
  const double* p = a.val().data();
  for (int64_t i = 0; i < a.numel(); ++i) s += p[i];
  Shape orig = a.shape();
  return Var::make(Tensor::scalar(s), {a}, [orig](const Var& g) -> std::vector<Var> {
    return {broadcast_to(reshape(g, Shape(orig.size(), 1)), orig)};
  });
}

Var sum(const Var& a, const std::vector<int64_t>& axes, bool keepdim) {
  auto mask = axes_mask(a.shape(), axes);
  Tensor val = reduce_sum_axes(a.val(), mask, keepdim);
  Shape orig = a.shape();
  return Var::make(std::move(val), {a}, [orig, mask](const Var& g) -> std::vector<Var> {
    Shape keep;
    for (size_t i = 0; i < orig.size(); ++i) keep.push_back(mask[i] ? 1 : orig[i]);
    return {broadcast_to(reshape(g, keep), orig)};
  });
}

Var mean(const Var& a) { return mul(sum(a), 1.0 / static_cast<double>(a.numel())); }

Var mean(const Var& a, const std::vector<int64_t>& axes, bool keepdim) {
  auto mask = axes_mask(a.shape(), axes);
  int64_t k = 1;
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) k *= a.shape()[i];
  return mul(sum(a, axes, keepdim), 1.0 / static_cast<double>(k));
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
    throw std::invalid_argument("matmul: bad shapes " + shape_str(as) + " x " + shape_str(bs));
  }
  Tensor out({as[0], bs[1]});
  CMapMat A(a.val().data(), as[0], as[1]);
  CMapMat B(b.val().data(), bs[0], bs[1]);
  MapMat O(out.data(), as[0], bs[1]);
  O.noalias() = A * B;
  return Var::make(std::move(out), {a, b}, [a, b](const Var& g) -> std::vector<Var> {
    return {matmul(g, transpose(b, {1, 0})), matmul(transpose(a, {1, 0}), g)};
  });
}

Var bmm(const Var& a, const Var& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[1]) {
    throw std::invalid_argument("bmm: bad shapes " + shape_str(as) + " x " + shape_str(bs));
  }
  Tensor out({as[0], as[1], bs[2]});
  for (int64_t i = 0; i < as[0]; ++i) {
    CMapMat A(a.val().data() + i * as[1] * as[2], as[1], as[2]);
    CMapMat B(b.val().data() + i * bs[1] * bs[2], bs[1], bs[2]);
    MapMat O(out.data() + i * as[1] * bs[2], as[1], bs[2]);
    O.noalias() = A * B;
  }
  return Var::make(std::move(out), {a, b}, [a, b](const Var& g) -> std::vector<Var> {
    return {bmm(g, transpose(b, {0, 2, 1})), bmm(transpose(a, {0, 2, 1}), g)};
  });
}

// ---------------------------------------------------------------------------

Var conv2d(const Var& x, const Var& w, int64_t stride, int64_t groups) {
  Tensor val = conv2d_raw(x.val(), w.val(), stride, groups);
  int64_t in_h = x.shape()[2], in_w = x.shape()[3];
  int64_t kh = w.shape()[2], kw = w.shape()[3];
  return Var::make(std::move(val), {x, w},
                   [x, w, stride, groups, in_h, in_w, kh, kw](const Var& g) -> std::vector<Var> {
                     Var gx, gw;
                     if (x.requires_grad()) gx = conv2d_input_grad(g, w, stride, groups, in_h, in_w);
                     if (w.requires_grad()) gw = conv2d_weight_grad(x, g, stride, groups, kh, kw);
                     return {gx, gw};
                   });
}

Var conv2d_input_grad(const Var& g, const Var& w, int64_t stride, int64_t groups, int64_t in_h,
                      int64_t in_w) {
  Tensor val = conv2d_input_grad_raw(g.val(), w.val(), stride, groups, in_h, in_w);
  int64_t kh = w.shape()[2], kw = w.shape()[3];
  return Var::make(std::move(val), {g, w},
                   [g, w, stride, groups, kh, kw](const Var& h) -> std::vector<Var> {
                     Var gg, gw;
                     if (g.requires_grad()) gg = conv2d(h, w, stride, groups);
                     if (w.requires_grad()) gw = conv2d_weight_grad(h, g, stride, groups, kh, kw);
                     return {gg, gw};
                   });
}

Var conv2d_weight_grad(const Var& x, const Var& g, int64_t stride, int64_t groups, int64_t kh,
                       int64_t kw) {
  Tensor val = conv2d_weight_grad_raw(x.val(), g.val(), stride, groups, kh, kw);
  int64_t in_h = x.shape()[2], in_w = x.shape()[3];
  return Var::make(std::move(val), {x, g},
                   [x, g, stride, groups, in_h, in_w](const Var& q) -> std::vector<Var> {
                     Var gx, gg;
                     if (x.requires_grad()) gx = conv2d_input_grad(g, q, stride, groups, in_h, in_w);
                     if (g.requires_grad()) gg = conv2d(x, q, stride, groups);
                     return {gx, gg};
                   });
}

namespace {
Var zero_embed2d(const Var& a, int64_t fy, int64_t fx, int64_t oy, int64_t ox, int64_t out_h,
                 int64_t out_w) {
  const Shape& in = a.shape();
  Shape os = in;
  os[2] = out_h;
  os[3] = out_w;
  Tensor out(os);
  int64_t nc = in[0] * in[1], h = in[2], w = in[3];
  const double* pa = a.val().data();
  for (int64_t c = 0; c < nc; ++c) {
    for (int64_t i = 0; i < h; ++i) {
      double* row = out.data() + (c * out_h + oy + i * fy) * out_w + ox;
      const double* src = pa + (c * h + i) * w;
      for (int64_t j = 0; j < w; ++j) row[j * fx] = src[j];
    }
  }
  return Var::make(std::move(out), {a}, [fy, fx, oy, ox](const Var& g) -> std::vector<Var> {
    return {subsample2d(g, fy, fx, oy, ox)};
  });
}
}  // namespace

Var dilate2d(const Var& a, int64_t fy, int64_t fx) {
  const Shape& in = a.shape();
  if (in.size() != 4) throw std::invalid_argument("dilate2d: rank-4 required");
  if (fy == 1 && fx == 1) return a;
  return zero_embed2d(a, fy, fx, 0, 0, (in[2] - 1) * fy + 1, (in[3] - 1) * fx + 1);
}

Var subsample2d(const Var& a, int64_t fy, int64_t fx, int64_t oy, int64_t ox) {
  const Shape& in = a.shape();
  if (in.size() != 4) throw std::invalid_argument("subsample2d: rank-4 required");
  if (fy == 1 && fx == 1 && oy == 0 && ox == 0) return a;
  int64_t h = in[2], w = in[3];
  int64_t oh = (h - 1 - oy) / fy + 1;
  int64_t ow = (w - 1 - ox) / fx + 1;
  Shape os = in;
  os[2] = oh;
  os[3] = ow;
  Tensor out(os);
  int64_t nc = in[0] * in[1];
  const double* pa = a.val().data();
  for (int64_t c = 0; c < nc; ++c) {
    for (int64_t i = 0; i < oh; ++i) {
      const double* row = pa + (c * h + oy + i * fy) * w + ox;
      double* dst = out.data() + (c * oh + i) * ow;
      for (int64_t j = 0; j < ow; ++j) dst[j] = row[j * fx];
    }
  }
  return Var::make(std::move(out), {a}, [fy, fx, oy, ox, h, w](const Var& g) -> std::vector<Var> {
    return {zero_embed2d(g, fy, fx, oy, ox, h, w)};
  });
}

double tensor_max(const Tensor& t) {
  const double* p = t.data();
  double m = p[0];
  for (int64_t i = 1; i < t.numel(); ++i) m = std::max(m, p[i]);
  return m;
}

double tensor_min(const Tensor& t) {
  const double* p = t.data();
  double m = p[0];
  for (int64_t i = 1; i < t.numel(); ++i) m = std::min(m, p[i]);
  return m;
}

}  // namespace stylegrow
