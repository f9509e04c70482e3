#include "stylegrow/projector.hpp"

#include <cmath>
#include <stdexcept>

#include "stylegrow/blob_io.hpp"

namespace stylegrow {

namespace {

constexpr uint32_t kExtractorMagic = 0x53475854;  // "SGXT"

// Extractor weights are fixed: strip gradient tracking so backward passes
// never spend time on them.
void make_constant(Param& p) {
  p.trainable = false;
  p.value = p.value.detach();
}

Var lrelu_gain(const Var& x) { return mul(leaky_relu(x, 0.2), 1.4142135623730951); }

}  // namespace

// ---------------------------------------------------------------------------
// RandomConvExtractor

RandomConvExtractor::RandomConvExtractor(std::string name, int64_t input_resolution,
                                         int64_t base_channels, uint64_t seed)
    : name_(std::move(name)), input_res_(input_resolution) {
  if (input_resolution % 16 != 0) {
    throw std::invalid_argument("RandomConvExtractor: input resolution must be divisible by 16");
  }
  Rng rng(derive_seed(seed, "extractor." + name_));
  int64_t chans[5] = {3, base_channels, 2 * base_channels, 4 * base_channels, 4 * base_channels};
  for (int i = 0; i < 4; ++i) {
    blocks_.emplace_back(name_ + ".block" + std::to_string(i), chans[i], chans[i + 1], 3, 2, rng);
    make_constant(blocks_.back().weight);
    make_constant(blocks_.back().bias);
  }
}

std::vector<int64_t> RandomConvExtractor::tap_channels() const {
  std::vector<int64_t> out;
  for (const auto& b : blocks_) out.push_back(b.weight.value.size(0));
  return out;
}

std::vector<Var> RandomConvExtractor::forward(const Var& images) const {
  if (images.shape().size() != 4 || images.size(1) != 3 || images.size(2) != input_res_ ||
      images.size(3) != input_res_) {
    throw std::invalid_argument("extractor '" + name_ + "': expected [N,3," +
                                std::to_string(input_res_) + "," + std::to_string(input_res_) + "]");
  }
  std::vector<Var> taps;
  Var x = images;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    x = lrelu_gain(blocks_[i].forward(x));
    if (!x.val().all_finite()) {
      throw std::runtime_error("extractor '" + name_ + "' tap block" + std::to_string(i) +
                               ": non-finite activations");
    }
    taps.push_back(x);
  }
  return taps;
}

std::vector<std::pair<std::string, Tensor>> RandomConvExtractor::named_weights() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    out.emplace_back("block" + std::to_string(i) + ".weight", blocks_[i].weight.value.val());
    out.emplace_back("block" + std::to_string(i) + ".bias", blocks_[i].bias.value.val());
  }
  return out;
}

void RandomConvExtractor::load_named_weights(const std::map<std::string, Tensor>& weights) {
  for (size_t i = 0; i < blocks_.size(); ++i) {
    for (const char* part : {"weight", "bias"}) {
      std::string key = "block" + std::to_string(i) + "." + part;
      auto it = weights.find(key);
      if (it == weights.end()) throw std::runtime_error("extractor weights missing " + key);
      Param& p = std::string(part) == "weight" ? blocks_[i].weight : blocks_[i].bias;
      if (it->second.shape() != p.value.shape()) {
        throw std::runtime_error("extractor weight shape mismatch for " + key);
      }
      p.value.set_value(it->second.clone());
    }
  }
}

// ---------------------------------------------------------------------------
// RandomAttentionExtractor

RandomAttentionExtractor::RandomAttentionExtractor(std::string name, int64_t input_resolution,
                                                   int64_t embed_dim, uint64_t seed)
    : name_(std::move(name)), input_res_(input_resolution), dim_(embed_dim) {
  if (input_resolution % 64 != 0) {
    throw std::invalid_argument("RandomAttentionExtractor: input resolution must be divisible by 64");
  }
  Rng rng(derive_seed(seed, "extractor." + name_));
  patchify_ = Conv2dLayer(name_ + ".patch", 3, dim_, 8, 8, rng, false);
  make_constant(patchify_.weight);
  make_constant(patchify_.bias);
  for (int i = 0; i < 3; ++i) {
    Block b;
    b.qkv = Linear(name_ + ".b" + std::to_string(i) + ".qkv", dim_, 3 * dim_, rng);
    b.out = Linear(name_ + ".b" + std::to_string(i) + ".out", dim_, dim_, rng);
    b.mlp1 = Linear(name_ + ".b" + std::to_string(i) + ".mlp1", dim_, 2 * dim_, rng);
    b.mlp2 = Linear(name_ + ".b" + std::to_string(i) + ".mlp2", 2 * dim_, dim_, rng);
    for (Linear* l : {&b.qkv, &b.out, &b.mlp1, &b.mlp2}) {
      make_constant(l->weight);
      make_constant(l->bias);
    }
    blocks_.push_back(std::move(b));
  }
}

std::vector<int64_t> RandomAttentionExtractor::tap_channels() const {
  return {dim_, dim_, dim_, dim_};
}

Var RandomAttentionExtractor::attention_block(const Block& b, const Var& tokens) const {
  int64_t n = tokens.size(0), t = tokens.size(1), d = tokens.size(2);
  // token-wise normalization keeps the random-weight stack bounded
  Var x = div(tokens, sqrt(add(mean(square(tokens), {2}, true), 1e-8)));
  Var qkv = reshape(b.qkv.forward(reshape(x, {n * t, d})), {n, t, 3 * d});
  Var q = slice(qkv, 2, 0, d);
  Var k = slice(qkv, 2, d, d);
  Var v = slice(qkv, 2, 2 * d, d);
  Var attn = bmm(q, transpose(k, {0, 2, 1}));
  attn = mul(attn, 1.0 / std::sqrt(static_cast<double>(d)));
  attn = reshape(softmax_rows(reshape(attn, {n * t, t})), {n, t, t});
  Var mixed = bmm(attn, v);
  Var y = add(x, reshape(b.out.forward(reshape(mixed, {n * t, d})), {n, t, d}));
  Var h = lrelu_gain(b.mlp1.forward(reshape(y, {n * t, d})));
  Var m = reshape(b.mlp2.forward(h), {n, t, d});
  return add(y, m);
}

std::vector<Var> RandomAttentionExtractor::forward(const Var& images) const {
  if (images.shape().size() != 4 || images.size(1) != 3 || images.size(2) != input_res_ ||
      images.size(3) != input_res_) {
    throw std::invalid_argument("extractor '" + name_ + "': expected [N,3," +
                                std::to_string(input_res_) + "," + std::to_string(input_res_) + "]");
  }
  std::vector<Var> taps;
  Var grid = patchify_.forward(images);  // [N, D, g, g]
  taps.push_back(grid);
  Var x = grid;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    int64_t n = x.size(0), g = x.size(2);
    Var tokens = transpose(reshape(x, {n, dim_, g * g}), {0, 2, 1});
    tokens = attention_block(blocks_[i], tokens);
    Var back = reshape(transpose(tokens, {0, 2, 1}), {n, dim_, g, g});
    x = g >= 2 ? avg_pool(back, 2) : back;
    if (!x.val().all_finite()) {
      throw std::runtime_error("extractor '" + name_ + "' tap b" + std::to_string(i) +
                               ": non-finite activations");
    }
    taps.push_back(x);
  }
  return taps;
}

std::vector<std::pair<std::string, Tensor>> RandomAttentionExtractor::named_weights() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("patch.weight", patchify_.weight.value.val());
  out.emplace_back("patch.bias", patchify_.bias.value.val());
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const Block& b = blocks_[i];
    std::string p = "b" + std::to_string(i) + ".";
    out.emplace_back(p + "qkv.weight", b.qkv.weight.value.val());
    out.emplace_back(p + "qkv.bias", b.qkv.bias.value.val());
    out.emplace_back(p + "out.weight", b.out.weight.value.val());
    out.emplace_back(p + "out.bias", b.out.bias.value.val());
    out.emplace_back(p + "mlp1.weight", b.mlp1.weight.value.val());
    out.emplace_back(p + "mlp1.bias", b.mlp1.bias.value.val());
    out.emplace_back(p + "mlp2.weight", b.mlp2.weight.value.val());
    out.emplace_back(p + "mlp2.bias", b.mlp2.bias.value.val());
  }
  return out;
}

void RandomAttentionExtractor::load_named_weights(const std::map<std::string, Tensor>& weights) {
  auto assign = [&](const std::string& key, Param& p) {
    auto it = weights.find(key);
    if (it == weights.end()) throw std::runtime_error("extractor weights missing " + key);
    if (it->second.shape() != p.value.shape()) {
      throw std::runtime_error("extractor weight shape mismatch for " + key);
    }
    p.value.set_value(it->second.clone());
  };
  assign("patch.weight", patchify_.weight);
  assign("patch.bias", patchify_.bias);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    Block& b = blocks_[i];
    std::string p = "b" + std::to_string(i) + ".";
    assign(p + "qkv.weight", b.qkv.weight);
    assign(p + "qkv.bias", b.qkv.bias);
    assign(p + "out.weight", b.out.weight);
    assign(p + "out.bias", b.out.bias);
    assign(p + "mlp1.weight", b.mlp1.weight);
    assign(p + "mlp1.bias", b.mlp1.bias);
    assign(p + "mlp2.weight", b.mlp2.weight);
    assign(p + "mlp2.bias", b.mlp2.bias);
  }
}

// ---------------------------------------------------------------------------
// Augmentation

AugmentationParams sample_augmentation(int64_t n, int64_t resolution, const AugmentationConfig& cfg,
                                       Rng& rng) {
  AugmentationParams p;
  p.brightness = Tensor::zeros({n});
  p.contrast = Tensor::full({n}, 1.0);
  p.saturation = Tensor::full({n}, 1.0);
  p.cutout_size = std::max<int64_t>(1, static_cast<int64_t>(cfg.cutout_frac * resolution));
  int64_t max_shift = std::max<int64_t>(1, static_cast<int64_t>(cfg.translate_frac * resolution));
  for (int64_t i = 0; i < n; ++i) {
    if (cfg.color && rng.uniform() < cfg.probability) p.brightness.data()[i] = rng.uniform(-0.25, 0.25);
    if (cfg.color && rng.uniform() < cfg.probability) p.contrast.data()[i] = rng.uniform(0.5, 1.5);
    if (cfg.color && rng.uniform() < cfg.probability) p.saturation.data()[i] = rng.uniform(0.0, 2.0);
    if (cfg.translate && rng.uniform() < cfg.probability) {
      p.shifts.emplace_back(rng.uniform_int(-max_shift, max_shift), rng.uniform_int(-max_shift, max_shift));
    } else {
      p.shifts.emplace_back(0, 0);
    }
    if (cfg.cutout && rng.uniform() < cfg.probability) {
      p.cutouts.emplace_back(std::pair<int64_t, int64_t>{rng.uniform_int(0, resolution - 1),
                                                         rng.uniform_int(0, resolution - 1)});
    } else {
      p.cutouts.emplace_back(std::nullopt);
    }
  }
  return p;
}

Var apply_augmentation(const Var& images, const AugmentationParams& params) {
  const Shape& s = images.shape();
  int64_t n = s[0], h = s[2], w = s[3];
  if (static_cast<int64_t>(params.shifts.size()) != n) {
    throw std::invalid_argument("apply_augmentation: batch size mismatch");
  }
  auto all_eq = [](const Tensor& t, double v) {
    for (int64_t i = 0; i < t.numel(); ++i)
      if (t.data()[i] != v) return false;
    return true;
  };
  // color: saturation about the per-pixel channel mean, contrast about the
  // per-image mean, then brightness; neutral batches skip the op so the
  // disabled path is an exact identity
  Var x = images;
  if (!all_eq(params.saturation, 1.0)) {
    Var chan_mean = mean(x, {1}, true);
    Var sat = reshape(constant(params.saturation), {n, 1, 1, 1});
    x = add(chan_mean, mul(sub(x, chan_mean), sat));
  }
  if (!all_eq(params.contrast, 1.0)) {
    Var img_mean = mean(x, {1, 2, 3}, true);
    Var con = reshape(constant(params.contrast), {n, 1, 1, 1});
    x = add(img_mean, mul(sub(x, img_mean), con));
  }
  if (!all_eq(params.brightness, 0.0)) {
    x = add(x, reshape(constant(params.brightness), {n, 1, 1, 1}));
  }

  // per-image integer translation (zero fill) and cutout
  std::vector<Var> rows;
  for (int64_t i = 0; i < n; ++i) {
    Var xi = slice(x, 0, i, 1);
    auto [dy, dx] = params.shifts[static_cast<size_t>(i)];
    if (dy != 0 || dx != 0) {
      xi = pad2d(xi, std::max<int64_t>(dy, 0), std::max<int64_t>(-dy, 0), std::max<int64_t>(dx, 0),
                 std::max<int64_t>(-dx, 0));
      xi = slice(slice(xi, 2, std::max<int64_t>(-dy, 0), h), 3, std::max<int64_t>(-dx, 0), w);
    }
    if (params.cutouts[static_cast<size_t>(i)]) {
      auto [cy, cx] = *params.cutouts[static_cast<size_t>(i)];
      Tensor mask = Tensor::full({1, 1, h, w}, 1.0);
      int64_t r = params.cutout_size / 2;
      for (int64_t y = std::max<int64_t>(cy - r, 0); y < std::min(cy - r + params.cutout_size, h); ++y)
        for (int64_t xx = std::max<int64_t>(cx - r, 0); xx < std::min(cx - r + params.cutout_size, w); ++xx)
          mask.at({0, 0, y, xx}) = 0.0;
      xi = mul(xi, constant(mask));
    }
    rows.push_back(xi);
  }
  return concat(rows, 0);
}

std::vector<Var> extract_feature_pyramid(const Var& images, const FeatureNetworkInterface& extractor,
                                         const AugmentationParams* augment) {
  if (images.shape().size() != 4 || images.size(1) != 3) {
    throw std::invalid_argument("extract_feature_pyramid: expected [N,3,H,W] images");
  }
  Var x = images;
  if (augment) x = apply_augmentation(x, *augment);
  int64_t r = extractor.input_resolution();
  if (x.size(2) != r || x.size(3) != r) x = bilinear_resize(x, r, r);
  return extractor.forward(x);
}

// ---------------------------------------------------------------------------
// Random projections

RandomProjectionParams init_random_projections(const std::vector<Shape>& feature_shapes,
                                               uint64_t seed) {
  if (feature_shapes.size() != 4) {
    throw std::invalid_argument("init_random_projections: four feature shapes required");
  }
  RandomProjectionParams p;
  p.seed = seed;
  Rng rng(derive_seed(seed, "random_projections"));
  std::vector<int64_t> chans;
  for (const Shape& s : feature_shapes) chans.push_back(s[s.size() - 3]);
  for (int l = 0; l < 4; ++l) {
    p.ccm.push_back(rng.normal_tensor({chans[l], chans[l], 1, 1},
                                      1.0 / std::sqrt(static_cast<double>(chans[l]))));
  }
  for (int l = 0; l < 3; ++l) {
    p.csm.push_back(rng.normal_tensor({chans[l], chans[l + 1], 3, 3},
                                      1.0 / std::sqrt(static_cast<double>(chans[l + 1] * 9))));
  }
  return p;
}

FeaturePyramid project_pyramid(const std::vector<Var>& raw_features,
                               const RandomProjectionParams& params) {
  if (raw_features.size() != 4) throw std::invalid_argument("project_pyramid: four maps required");
  for (int l = 0; l < 4; ++l) {
    if (raw_features[static_cast<size_t>(l)].shape()[1] != params.ccm[static_cast<size_t>(l)].shape()[0]) {
      throw std::invalid_argument("project_pyramid: channel mismatch at scale " + std::to_string(l));
    }
  }
  std::vector<Var> mixed(4);
  // cross-channel mixing per scale
  for (int l = 0; l < 4; ++l) {
    mixed[static_cast<size_t>(l)] = conv2d(raw_features[static_cast<size_t>(l)],
                                           constant(params.ccm[static_cast<size_t>(l)]), 1, 1);
  }
  // cross-scale mixing, deepest to shallowest
  FeaturePyramid out;
  out.maps.resize(4);
  out.maps[3] = mixed[3];
  for (int l = 2; l >= 0; --l) {
    Var up = conv2d(pad2d(out.maps[static_cast<size_t>(l) + 1], 1, 1, 1, 1),
                    constant(params.csm[static_cast<size_t>(l)]), 1, 1);
    up = bilinear_resize(up, mixed[static_cast<size_t>(l)].size(2), mixed[static_cast<size_t>(l)].size(3));
    out.maps[static_cast<size_t>(l)] = add(mixed[static_cast<size_t>(l)], up);
  }
  return out;
}

void save_extractor_weights(const FeatureNetworkInterface& extractor, const std::string& path) {
  BlobFile f;
  f.text = "{\"name\":\"" + extractor.name() + "\",\"input_resolution\":" +
           std::to_string(extractor.input_resolution()) + "}";
  for (auto& [name, t] : extractor.named_weights()) f.blobs.emplace_back(name, t);
  write_blob_file(path, kExtractorMagic, f);
}

void load_extractor_weights(FeatureNetworkInterface& extractor, const std::string& path) {
  BlobFile f = read_blob_file(path, kExtractorMagic, 1);
  std::map<std::string, Tensor> weights;
  for (auto& [name, t] : f.blobs) weights.emplace(name, std::move(t));
  extractor.load_named_weights(weights);
}

}  // namespace stylegrow
