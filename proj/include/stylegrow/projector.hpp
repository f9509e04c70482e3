#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stylegrow/nn.hpp"
#include "stylegrow/rng.hpp"

namespace stylegrow {

// Pluggable feature network: four taps at strictly decreasing spatial sizes,
// deterministic in evaluation mode. Gradients always flow to the input image.
class FeatureNetworkInterface {
 public:
  virtual ~FeatureNetworkInterface() = default;
  virtual const std::string& name() const = 0;
  virtual int64_t input_resolution() const = 0;
  virtual std::vector<int64_t> tap_channels() const = 0;
  // images: [N, 3, input_resolution, input_resolution]
  virtual std::vector<Var> forward(const Var& images) const = 0;
  virtual std::vector<std::pair<std::string, Tensor>> named_weights() const = 0;
  virtual void load_named_weights(const std::map<std::string, Tensor>& weights) = 0;
};

// Small strided conv stack with fixed random weights; taps after each block.
class RandomConvExtractor : public FeatureNetworkInterface {
 public:
  RandomConvExtractor(std::string name, int64_t input_resolution, int64_t base_channels,
                      uint64_t seed);
  const std::string& name() const override { return name_; }
  int64_t input_resolution() const override { return input_res_; }
  std::vector<int64_t> tap_channels() const override;
  std::vector<Var> forward(const Var& images) const override;
  std::vector<std::pair<std::string, Tensor>> named_weights() const override;
  void load_named_weights(const std::map<std::string, Tensor>& weights) override;

 private:
  std::string name_;
  int64_t input_res_;
  std::vector<Conv2dLayer> blocks_;
};

// Patch tokens + self-attention blocks with token-grid pooling between taps.
class RandomAttentionExtractor : public FeatureNetworkInterface {
 public:
  RandomAttentionExtractor(std::string name, int64_t input_resolution, int64_t embed_dim,
                           uint64_t seed);
  const std::string& name() const override { return name_; }
  int64_t input_resolution() const override { return input_res_; }
  std::vector<int64_t> tap_channels() const override;
  std::vector<Var> forward(const Var& images) const override;
  std::vector<std::pair<std::string, Tensor>> named_weights() const override;
  void load_named_weights(const std::map<std::string, Tensor>& weights) override;

 private:
  std::string name_;
  int64_t input_res_;
  int64_t dim_;
  Conv2dLayer patchify_;
  struct Block {
    Linear qkv;
    Linear out;
    Linear mlp1;
    Linear mlp2;
  };
  std::vector<Block> blocks_;
  Var attention_block(const Block& b, const Var& tokens) const;  // [N,T,D]
};

// Differentiable augmentation: color jitter, integer translation, cutout.
// One transform per image, sampled once per forward pass and shared by every
// extractor consuming that pass.
struct AugmentationParams {
  Tensor brightness;  // [N]
  Tensor contrast;    // [N]
  Tensor saturation;  // [N]
  std::vector<std::pair<int64_t, int64_t>> shifts;
  std::vector<std::optional<std::pair<int64_t, int64_t>>> cutouts;  // center, per image
  int64_t cutout_size = 0;
};

struct AugmentationConfig {
  bool color = true;
  bool translate = true;
  bool cutout = true;
  double probability = 0.5;  // per transform, per image
  double translate_frac = 0.125;
  double cutout_frac = 0.3;
};

AugmentationParams sample_augmentation(int64_t n, int64_t resolution, const AugmentationConfig& cfg,
                                       Rng& rng);
Var apply_augmentation(const Var& images, const AugmentationParams& params);

// Resize to the extractor's training resolution (bilinear, differentiable),
// then run the taps. Augmentation, when given, is applied before resizing.
std::vector<Var> extract_feature_pyramid(const Var& images, const FeatureNetworkInterface& extractor,
                                         const AugmentationParams* augment = nullptr);

// Fixed random projections: per-scale 1x1 cross-channel mixing and residual
// 3x3 cross-scale mixing with bilinear upsampling. Never optimized.
struct RandomProjectionParams {
  std::vector<Tensor> ccm;  // [C_l, C_l, 1, 1] per scale
  std::vector<Tensor> csm;  // [C_l, C_{l+1}, 3, 3] per scale except deepest
  uint64_t seed = 0;
};

RandomProjectionParams init_random_projections(const std::vector<Shape>& feature_shapes,
                                               uint64_t seed);

struct FeaturePyramid {
  std::vector<Var> maps;  // shallow (largest) to deep (smallest)
};

FeaturePyramid project_pyramid(const std::vector<Var>& raw_features,
                               const RandomProjectionParams& params);

// Extractor weight container (binary, little-endian): used to persist or load
// externally supplied weights behind the same interface.
void save_extractor_weights(const FeatureNetworkInterface& extractor, const std::string& path);
void load_extractor_weights(FeatureNetworkInterface& extractor, const std::string& path);

}  // namespace stylegrow
