#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "stylegrow/autodiff.hpp"
#include "stylegrow/rng.hpp"

namespace stylegrow {

// Named leaf parameter. `trainable=false` keeps it out of optimizer updates
// (frozen stems, mapping network after growth).
struct Param {
  std::string name;
  Var value;
  bool trainable = true;

  Param() = default;
  Param(std::string n, Tensor init, bool train = true)
      : name(std::move(n)), value(Var(std::move(init), true)), trainable(train) {}
};

using ParamRefs = std::vector<Param*>;

// Fully connected layer with runtime weight scaling (equalized learning rate).
struct Linear {
  Param weight;  // [out, in]
  Param bias;    // [out]
  double wscale = 1.0;
  double bscale = 1.0;

  Linear() = default;
  Linear(const std::string& name, int64_t in, int64_t out, Rng& rng, double lr_mul = 1.0,
         double bias_init = 0.0);
  // detach_params skips weight-gradient work for frozen layers; activations
  // still carry gradient.
  Var forward(const Var& x, bool detach_params = false) const;  // [N, in] -> [N, out]
  void collect(ParamRefs& out);
};

// Plain conv layer (discriminator heads, extractors). Zero 'same' padding.
struct Conv2dLayer {
  Param weight;  // [O, I, k, k]
  Param bias;    // [O]
  int64_t stride = 1;
  int64_t pad = 0;
  double wscale = 1.0;

  Conv2dLayer() = default;
  Conv2dLayer(const std::string& name, int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride,
              Rng& rng, bool same_pad = true);
  Var forward(const Var& x) const;
  Var effective_weight() const { return mul(weight.value, wscale); }
  void collect(ParamRefs& out);
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  // grads[i] pairs with params[i]; non-trainable entries are skipped.
  void step(const ParamRefs& params, const std::vector<Var>& grads);
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  // moment access for checkpointing
  struct State {
    Tensor m, v;
  };
  std::unordered_map<std::string, State>& states() { return states_; }
  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::unordered_map<std::string, State> states_;
  int64_t t_ = 0;
};

// Exponential moving average over a parameter set, keyed by name.
class EmaParams {
 public:
  void update(const ParamRefs& params, double decay);
  bool empty() const { return values_.empty(); }
  const Tensor* lookup(const std::string& name) const;
  std::unordered_map<std::string, Tensor>& values() { return values_; }
  const std::unordered_map<std::string, Tensor>& values() const { return values_; }

 private:
  std::unordered_map<std::string, Tensor> values_;
};

// ---- common graph helpers ----
Var softmax_rows(const Var& logits);             // [N, C] stable softmax
Var l2_normalize_rows(const Var& x, double eps = 1e-12);
Var pixel_norm(const Var& x, double eps = 1e-8);  // normalize feature axis 1

// Linear map along one spatial axis of an NCHW tensor: y = M @ x (axis view).
Var apply_axis_matrix(const Var& x, const Tensor& m, int64_t axis);

// Bilinear resize of NCHW images (half-pixel centers), differentiable.
Var bilinear_resize(const Var& x, int64_t out_h, int64_t out_w);
Tensor bilinear_matrix(int64_t out_n, int64_t in_n);

// Gaussian blur with symmetric boundary handling; sigma<=0 is identity.
Var gaussian_blur(const Var& x, double sigma);

// Average pool with kernel == stride (exact division required).
Var avg_pool(const Var& x, int64_t factor);
// Mean over spatial dims: [N,C,H,W] -> [N,C]
Var global_avg_pool(const Var& x);

}  // namespace stylegrow
