#include "stylegrow/discriminator.hpp"
#include <cstring>

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace stylegrow {

namespace {
constexpr double kSigmaFloor = 1e-8;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
}  // namespace

Var spectral_normalize(const Var& weight, Tensor& u_state, int64_t n_iter, double* sigma_out) {
  if (n_iter < 1) throw std::invalid_argument("spectral_normalize: n_iter must be >= 1");
  const Shape& ws = weight.shape();
  int64_t rows = ws[0];
  int64_t cols = weight.numel() / rows;
  if (u_state.numel() != rows) throw std::invalid_argument("spectral_normalize: bad state size");

  Eigen::Map<const RowMat> W(weight.val().data(), rows, cols);
  Eigen::Map<Eigen::VectorXd> u(u_state.data(), rows);
  Eigen::VectorXd v(cols);
  for (int64_t i = 0; i < n_iter; ++i) {
    v = W.transpose() * u;
    double nv = v.norm();
    v /= std::max(nv, 1e-12);
    Eigen::VectorXd un = W * v;
    double nu = un.norm();
    u = un / std::max(nu, 1e-12);
  }
  // sigma as a graph node: u^T W v with u, v frozen
  Tensor ut({1, rows});
  Tensor vt({cols, 1});
  std::memcpy(ut.data(), u.data(), sizeof(double) * static_cast<size_t>(rows));
  std::memcpy(vt.data(), v.data(), sizeof(double) * static_cast<size_t>(cols));
  Var wm = reshape(weight, {rows, cols});
  Var sigma = reshape(matmul(matmul(constant(ut), wm), constant(vt)), Shape{});
  double sval = sigma.val().item();
  if (sigma_out) *sigma_out = sval;
  if (!(sval > kSigmaFloor)) {
    // zero / degenerate weight: fall back to a constant floor divisor
    return mul(weight, 1.0 / kSigmaFloor);
  }
  return div(weight, reshape(sigma, Shape{}));
}

SpectralConv::SpectralConv(const std::string& name, int64_t in_ch, int64_t out_ch, int64_t kernel,
                           int64_t stride_, Rng& rng)
    : weight(name + ".weight", rng.normal_tensor({out_ch, in_ch, kernel, kernel},
                                                 1.0 / std::sqrt(static_cast<double>(in_ch * kernel * kernel)))),
      bias(name + ".bias", Tensor::zeros({out_ch})),
      u(rng.normal_tensor({out_ch})),
      stride(stride_),
      pad((kernel - 1) / 2) {}

Var SpectralConv::forward(const Var& x, int64_t sn_iters) {
  Var w = spectral_normalize(weight.value, u, sn_iters);
  Var xin = pad > 0 ? pad2d(x, pad, pad, pad, pad) : x;
  Var y = conv2d(xin, w, stride, 1);
  return add(y, reshape(bias.value, {1, bias.value.size(0), 1, 1}));
}

void SpectralConv::collect(ParamRefs& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Var DiscriminatorHead::forward(const Var& features, const Var& class_vec, int64_t sn_iters) {
  Var x = features;
  for (auto& c : convs) x = mul(leaky_relu(c.forward(x, sn_iters), 0.2), 1.4142135623730951);
  Var logits = logit.forward(x, sn_iters);  // [N,1,h,w]
  // projection conditioning on the penultimate features
  Var proj = matmul(class_vec, transpose(class_proj.value, {1, 0}));  // [N, C_pen]
  Var inner = sum(mul(x, reshape(proj, {proj.size(0), proj.size(1), 1, 1})), {1}, true);
  return add(logits, inner);
}

void DiscriminatorHead::collect(ParamRefs& out) {
  for (auto& c : convs) c.collect(out);
  logit.collect(out);
  out.push_back(&class_proj);
}

MultiScaleDiscriminator::MultiScaleDiscriminator(const DiscriminatorConfig& cfg,
                                                 const std::vector<Shape>& pyramid_shapes,
                                                 uint64_t seed)
    : cfg_(cfg) {
  if (pyramid_shapes.size() != 4) {
    throw std::invalid_argument("MultiScaleDiscriminator: four pyramid shapes required");
  }
  Rng rng(derive_seed(seed, "discriminator"));
  // rank scales by spatial size: largest map gets the deepest head
  std::vector<int64_t> sizes;
  for (const Shape& s : pyramid_shapes) sizes.push_back(s[s.size() - 1]);
  for (size_t l = 0; l < 4; ++l) {
    int64_t larger = 0;
    for (size_t m = 0; m < 4; ++m)
      if (sizes[m] > sizes[l]) larger++;
    DiscriminatorHead head;
    head.input_size = sizes[l];
    head.depth = std::min(cfg.max_depth, std::max(cfg.min_depth, cfg.max_depth - larger));
    int64_t in_ch = pyramid_shapes[l][pyramid_shapes[l].size() - 3];
    int64_t ch = cfg.base_channels;
    int64_t size = sizes[l];
    std::string base = "d.head" + std::to_string(l);
    for (int64_t k = 0; k < head.depth; ++k) {
      int64_t stride = size > 4 ? 2 : 1;
      head.convs.emplace_back(base + ".conv" + std::to_string(k), in_ch, ch, 3, stride, rng);
      if (stride == 2) size = (size + 1) / 2;
      in_ch = ch;
      ch = std::min(cfg.max_channels, ch * 2);
    }
    head.logit = SpectralConv(base + ".logit", in_ch, 1, 1, 1, rng);
    head.class_proj = Param(base + ".proj", rng.normal_tensor({in_ch, cfg.class_dim},
                                                              1.0 / std::sqrt(static_cast<double>(cfg.class_dim))));
    heads_.push_back(std::move(head));
  }
}

std::vector<Var> MultiScaleDiscriminator::discriminate(const FeaturePyramid& pyramid,
                                                       const Var& class_vec) {
  if (pyramid.maps.size() != heads_.size()) {
    throw std::invalid_argument("discriminate: pyramid has " + std::to_string(pyramid.maps.size()) +
                                " maps for " + std::to_string(heads_.size()) + " heads");
  }
  std::vector<Var> logits;
  for (size_t l = 0; l < heads_.size(); ++l) {
    logits.push_back(heads_[l].forward(pyramid.maps[l], class_vec, cfg_.sn_iterations));
  }
  return logits;
}

ParamRefs MultiScaleDiscriminator::params() {
  ParamRefs out;
  for (auto& h : heads_) h.collect(out);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> MultiScaleDiscriminator::sn_states() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (size_t l = 0; l < heads_.size(); ++l) {
    for (size_t k = 0; k < heads_[l].convs.size(); ++k) {
      out.emplace_back("d.head" + std::to_string(l) + ".conv" + std::to_string(k) + ".u",
                       &heads_[l].convs[k].u);
    }
    out.emplace_back("d.head" + std::to_string(l) + ".logit.u", &heads_[l].logit.u);
  }
  return out;
}

Var blur_for_warmup(const Var& images, int64_t images_seen, const BlurSchedule& schedule) {
  if (schedule.sigma < 0) throw std::invalid_argument("blur_for_warmup: sigma must be >= 0");
  if (images_seen >= schedule.cutoff_images || schedule.sigma == 0.0) return images;
  double sigma = schedule.sigma;
  if (schedule.linear_ramp) {
    sigma *= 1.0 - static_cast<double>(images_seen) / static_cast<double>(schedule.cutoff_images);
  }
  return gaussian_blur(images, sigma);
}

}  // namespace stylegrow
