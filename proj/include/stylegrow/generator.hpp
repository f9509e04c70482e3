#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "stylegrow/filters.hpp"
#include "stylegrow/layerspec.hpp"
#include "stylegrow/nn.hpp"

namespace stylegrow {

struct GeneratorConfig {
  int64_t latent_dim = 64;
  int64_t style_dim = 512;
  int64_t class_dim = 64;
  int64_t mapping_layers = 2;
  double mapping_lr_mul = 0.01;
  int64_t fourier_channels = 32;
  int64_t channel_base = 128;  // channels at sampling rate 16
  int64_t channel_min = 8;
  int64_t channel_max = 256;
  int64_t margin = 10;  // canvas margin in pixels, every rate
  int64_t taps_per_factor = 6;
  bool alias_filters = true;
  double lrelu_slope = 0.2;

  int64_t channels_for_rate(int64_t rate) const;
};

// Sinusoid bank the synthesis network starts from. Translation is continuous
// and expressed in output pixels; integer values reproduce exact pixel shifts.
struct FourierInputGrid {
  Tensor freqs;   // [C, 2], |f| <= first-layer cutoff
  Tensor phases;  // [C], cycles
  double extent_scale = 1.0;
  double tx = 0.0;
  double ty = 0.0;

  static FourierInputGrid make(int64_t channels, double max_freq, uint64_t seed);
};

// offset adds to the grid translation; scale >= 1 enlarges the canvas.
FourierInputGrid translate_input_grid(const FourierInputGrid& grid, double dx, double dy,
                                      double scale = 1.0);

struct SynthesisLayer {
  LayerSpec in_spec;
  LayerSpec spec;
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  Linear affine;      // style -> per-input-channel modulation
  Param conv_weight;  // [out, in, 3, 3]
  Param conv_bias;    // [out]
  bool frozen = false;
};

struct ToRgbLayer {
  Linear affine;
  Param weight;  // [3, in, 1, 1]
  Param bias;    // [3]
  int64_t in_channels = 0;
};

struct SynthesisResult {
  Var image;
  std::vector<Var> activations;  // per-layer outputs when recording
};

class GeneratorNet {
 public:
  GeneratorNet(const GeneratorConfig& cfg, const GrowthStage& stage, std::vector<LayerSpec> specs,
               uint64_t seed);

  // Concatenates the (normalized) latent and projected class vector, then
  // runs the mapping layers. Deterministic.
  Var map_latent(const Var& z, const Var& class_vec) const;

  // One style per synthesis layer; the RGB projection uses styles.back().
  Var synthesize(const std::vector<Var>& styles, const FourierInputGrid* grid = nullptr) const;
  SynthesisResult synthesize_detailed(const std::vector<Var>& styles,
                                      const FourierInputGrid* grid, bool record_activations) const;
  Var synthesize_broadcast(const Var& w, const FourierInputGrid* grid = nullptr) const;

  // Growth surgery: drop the critical pair, append fresh layers with the given
  // specs, freeze every kept layer and the mapping network.
  void grow(const GrowthStage& next_stage, const std::vector<LayerSpec>& next_specs);

  // Deep copy (independent parameter storage); PTI fine-tunes the copy.
  std::unique_ptr<GeneratorNet> clone() const;

  int64_t layer_count() const { return static_cast<int64_t>(layers_.size()); }
  int64_t resolution() const { return stage_.resolution; }
  const GrowthStage& stage() const { return stage_; }
  const GeneratorConfig& config() const { return cfg_; }
  const std::vector<LayerSpec>& specs() const { return specs_; }
  const FourierInputGrid& input_grid() const { return grid_; }
  FourierInputGrid& mutable_input_grid() { return grid_; }
  std::vector<SynthesisLayer>& layers() { return layers_; }
  const std::vector<SynthesisLayer>& layers() const { return layers_; }

  ParamRefs params();
  ParamRefs trainable_params();
  uint64_t seed() const { return seed_; }
  int64_t growth_count() const { return growth_count_; }
  void set_growth_count(int64_t v) { growth_count_ = v; }

 private:
  GeneratorConfig cfg_;
  GrowthStage stage_;
  std::vector<LayerSpec> specs_;
  FourierInputGrid grid_;
  std::vector<Linear> mapping_;
  std::vector<SynthesisLayer> layers_;
  ToRgbLayer torgb_;
  uint64_t seed_ = 0;
  int64_t growth_count_ = 0;

  SynthesisLayer make_layer(int64_t index, const LayerSpec& in_spec, const LayerSpec& spec,
                            int64_t in_ch, Rng& rng) const;
  ToRgbLayer make_torgb(int64_t in_ch, Rng& rng) const;
};

// w_avg + psi * (w - w_avg)
Var truncate_style(const Var& w, const Var& w_avg, double psi);

// Deterministic (z, class) stream backing compute_mean_style: [n, latent_dim]
// latents and [n, class_dim] class vectors. The sampler returns a batch of
// class vectors.
std::pair<Tensor, Tensor> sample_style_inputs(const GeneratorConfig& cfg, int64_t n,
                                              const std::function<Tensor(int64_t, Rng&)>& class_sampler,
                                              uint64_t seed);

// Empirical mean style over n sampled (z, class) pairs.
Tensor compute_mean_style(const GeneratorNet& net, int64_t n,
                          const std::function<Tensor(int64_t, Rng&)>& class_sampler, uint64_t seed);

// Layers with index < split get w_a, the rest (and the RGB projection when
// split < layer count) get w_b.
Var style_mix(const GeneratorNet& net, const Var& w_a, const Var& w_b, int64_t split,
              const FourierInputGrid* grid = nullptr);

}  // namespace stylegrow
