#pragma once

#include <vector>

#include "stylegrow/projector.hpp"

namespace stylegrow {

// weight / sigma_hat with sigma_hat from power iteration on the matricized
// kernel [rows = out channels]. `u_state` is updated in place; gradients flow
// through the normalized weight (u, v held constant). A 1e-8 floor guards
// zero weights.
Var spectral_normalize(const Var& weight, Tensor& u_state, int64_t n_iter,
                       double* sigma_out = nullptr);

struct SpectralConv {
  Param weight;  // [O, I, k, k]
  Param bias;    // [O]
  Tensor u;      // [O]
  int64_t stride = 1;
  int64_t pad = 0;

  SpectralConv() = default;
  SpectralConv(const std::string& name, int64_t in_ch, int64_t out_ch, int64_t kernel,
               int64_t stride, Rng& rng);
  Var forward(const Var& x, int64_t sn_iters);
  void collect(ParamRefs& out);
};

// Strided conv stack over one pyramid scale; spatial logits plus projection
// conditioning (inner product of the projected class vector with penultimate
// features, added to every logit).
struct DiscriminatorHead {
  std::vector<SpectralConv> convs;
  SpectralConv logit;  // 1x1 to a single channel
  Param class_proj;    // [C_penultimate, class_dim]
  int64_t input_size = 0;
  int64_t depth = 0;

  Var forward(const Var& features, const Var& class_vec, int64_t sn_iters);
  void collect(ParamRefs& out);
};

struct DiscriminatorConfig {
  int64_t class_dim = 64;
  int64_t base_channels = 32;
  int64_t max_channels = 256;
  int64_t sn_iterations = 1;
  int64_t min_depth = 4;
  int64_t max_depth = 7;
};

// Four independent heads over the feature pyramid; deeper heads for larger
// maps. The discriminator never grows across stages.
class MultiScaleDiscriminator {
 public:
  MultiScaleDiscriminator(const DiscriminatorConfig& cfg, const std::vector<Shape>& pyramid_shapes,
                          uint64_t seed);

  // Returns one spatial logit map per head.
  std::vector<Var> discriminate(const FeaturePyramid& pyramid, const Var& class_vec);

  std::vector<DiscriminatorHead>& heads() { return heads_; }
  const DiscriminatorConfig& config() const { return cfg_; }
  ParamRefs params();
  // power-iteration state, for checkpointing
  std::vector<std::pair<std::string, Tensor*>> sn_states();

 private:
  DiscriminatorConfig cfg_;
  std::vector<DiscriminatorHead> heads_;
};

struct BlurSchedule {
  double sigma = 2.0;
  int64_t cutoff_images = 200000;
  bool linear_ramp = false;  // fade sigma to zero over the window instead of a hard stop
};

// Gaussian warm-up blur: active while images_seen < cutoff, identity after.
Var blur_for_warmup(const Var& images, int64_t images_seen, const BlurSchedule& schedule = {});

}  // namespace stylegrow
