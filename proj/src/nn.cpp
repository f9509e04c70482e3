#include "stylegrow/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace stylegrow {

Linear::Linear(const std::string& name, int64_t in, int64_t out, Rng& rng, double lr_mul,
               double bias_init)
    : weight(name + ".weight", rng.normal_tensor({out, in}, 1.0 / lr_mul)),
      bias(name + ".bias", Tensor::full({out}, bias_init / lr_mul)),
      wscale(lr_mul / std::sqrt(static_cast<double>(in))),
      bscale(lr_mul) {}

Var Linear::forward(const Var& x, bool detach_params) const {
  Var wv = detach_params ? weight.value.detach() : weight.value;
  Var bv = detach_params ? bias.value.detach() : bias.value;
  Var y = matmul(x, transpose(mul(wv, wscale), {1, 0}));
  return add(y, reshape(mul(bv, bscale), {1, bias.value.size(0)}));
}

void Linear::collect(ParamRefs& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Conv2dLayer::Conv2dLayer(const std::string& name, int64_t in_ch, int64_t out_ch, int64_t kernel,
                         int64_t stride_, Rng& rng, bool same_pad)
    : weight(name + ".weight", rng.normal_tensor({out_ch, in_ch, kernel, kernel})),
      bias(name + ".bias", Tensor::zeros({out_ch})),
      stride(stride_),
      pad(same_pad ? (kernel - 1) / 2 : 0),
      wscale(1.0 / std::sqrt(static_cast<double>(in_ch * kernel * kernel))) {}

Var Conv2dLayer::forward(const Var& x) const {
  Var xin = pad > 0 ? pad2d(x, pad, pad, pad, pad) : x;
  Var y = conv2d(xin, effective_weight(), stride, 1);
  return add(y, reshape(bias.value, {1, bias.value.size(0), 1, 1}));
}

void Conv2dLayer::collect(ParamRefs& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

void Adam::step(const ParamRefs& params, const std::vector<Var>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("Adam::step size mismatch");
  ++t_;
  double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    Param* p = params[i];
    if (!p->trainable) continue;
    const Tensor& g = grads[i].val();
    auto it = states_.find(p->name);
    if (it == states_.end()) {
      it = states_.emplace(p->name, State{Tensor::zeros(g.shape()), Tensor::zeros(g.shape())}).first;
    }
    State& s = it->second;
    Tensor value = p->value.val().clone();
    double* pm = s.m.data();
    double* pv = s.v.data();
    double* pw = value.data();
    const double* pg = g.data();
    int64_t n = g.numel();
    for (int64_t k = 0; k < n; ++k) {
      pm[k] = cfg_.beta1 * pm[k] + (1.0 - cfg_.beta1) * pg[k];
      pv[k] = cfg_.beta2 * pv[k] + (1.0 - cfg_.beta2) * pg[k] * pg[k];
      double mhat = pm[k] / c1;
      double vhat = pv[k] / c2;
      pw[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    p->value.set_value(std::move(value));
  }
}

void EmaParams::update(const ParamRefs& params, double decay) {
  for (const Param* p : params) {
    auto it = values_.find(p->name);
    if (it == values_.end()) {
      values_.emplace(p->name, p->value.val().clone());
      continue;
    }
    Tensor& e = it->second;
    const double* pw = p->value.val().data();
    double* pe = e.data();
    int64_t n = e.numel();
    for (int64_t k = 0; k < n; ++k) pe[k] = decay * pe[k] + (1.0 - decay) * pw[k];
  }
}

const Tensor* EmaParams::lookup(const std::string& name) const {
  auto it = values_.find(name);
  return it == values_.end() ? nullptr : &it->second;
}

Var softmax_rows(const Var& logits) {
  if (logits.shape().size() != 2) throw std::invalid_argument("softmax_rows: rank-2 required");
  // subtract a detached row max for stability
  Tensor mx({logits.size(0), 1});
  const double* p = logits.val().data();
  for (int64_t i = 0; i < logits.size(0); ++i) {
    double m = p[i * logits.size(1)];
    for (int64_t j = 1; j < logits.size(1); ++j) m = std::max(m, p[i * logits.size(1) + j]);
    mx.data()[i] = m;
  }
  Var shifted = sub(logits, constant(mx));
  Var e = exp(shifted);
  Var z = sum(e, {1}, true);
  return div(e, z);
}

Var l2_normalize_rows(const Var& x, double eps) {
  Var n = sqrt(add(sum(square(x), {1}, true), eps));
  return div(x, n);
}

Var pixel_norm(const Var& x, double eps) {
  Var ms = mean(square(x), {1}, true);
  return div(x, sqrt(add(ms, eps)));
}

Var apply_axis_matrix(const Var& x, const Tensor& m, int64_t axis) {
  const Shape& s = x.shape();
  int64_t rank = static_cast<int64_t>(s.size());
  if (axis < 0) axis += rank;
  std::vector<int64_t> perm;
  perm.push_back(axis);
  for (int64_t i = 0; i < rank; ++i)
    if (i != axis) perm.push_back(i);
  Var xt = transpose(x, perm);
  Shape ts = xt.shape();
  Var xm = reshape(xt, {ts[0], xt.numel() / ts[0]});
  Var y = matmul(constant(m), xm);
  Shape ys = ts;
  ys[0] = m.shape()[0];
  Var yr = reshape(y, ys);
  std::vector<int64_t> inv(static_cast<size_t>(rank));
  for (int64_t i = 0; i < rank; ++i) inv[static_cast<size_t>(perm[static_cast<size_t>(i)])] = i;
  return transpose(yr, inv);
}

Tensor bilinear_matrix(int64_t out_n, int64_t in_n) {
  Tensor m({out_n, in_n});
  double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
  for (int64_t i = 0; i < out_n; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    double f = std::floor(src);
    double frac = src - f;
    int64_t i0 = static_cast<int64_t>(f);
    int64_t i1 = i0 + 1;
    i0 = std::min(std::max<int64_t>(i0, 0), in_n - 1);
    i1 = std::min(std::max<int64_t>(i1, 0), in_n - 1);
    m.at({i, i0}) += 1.0 - frac;
    m.at({i, i1}) += frac;
  }
  return m;
}

Var bilinear_resize(const Var& x, int64_t out_h, int64_t out_w) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("bilinear_resize: rank-4 required");
  Var y = x;
  if (s[2] != out_h) y = apply_axis_matrix(y, bilinear_matrix(out_h, s[2]), 2);
  if (s[3] != out_w) y = apply_axis_matrix(y, bilinear_matrix(out_w, s[3]), 3);
  return y;
}

namespace {
Tensor blur_matrix(int64_t n, double sigma) {
  int64_t r = static_cast<int64_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<size_t>(2 * r + 1));
  double total = 0;
  for (int64_t j = -r; j <= r; ++j) {
    double v = std::exp(-0.5 * (static_cast<double>(j) * j) / (sigma * sigma));
    k[static_cast<size_t>(j + r)] = v;
    total += v;
  }
  for (double& v : k) v /= total;
  Tensor m({n, n});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = -r; j <= r; ++j) {
      int64_t t = i + j;
      if (t < 0) t = -t - 1;          // symmetric reflection
      if (t >= n) t = 2 * n - t - 1;
      t = std::min(std::max<int64_t>(t, 0), n - 1);
      m.at({i, t}) += k[static_cast<size_t>(j + r)];
    }
  }
  return m;
}
}  // namespace

Var gaussian_blur(const Var& x, double sigma) {
  if (sigma <= 0.0) return x;
  const Shape& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("gaussian_blur: rank-4 required");
  Var y = apply_axis_matrix(x, blur_matrix(s[2], sigma), 2);
  return apply_axis_matrix(y, blur_matrix(s[3], sigma), 3);
}

Var avg_pool(const Var& x, int64_t factor) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("avg_pool: rank-4 required");
  if (factor == 1) return x;
  if (s[2] % factor != 0 || s[3] % factor != 0) throw std::invalid_argument("avg_pool: size not divisible");
  Var r = reshape(x, {s[0], s[1], s[2] / factor, factor, s[3] / factor, factor});
  return mean(r, {3, 5}, false);
}

Var global_avg_pool(const Var& x) {
  return mean(x, {2, 3}, false);
}

}  // namespace stylegrow
