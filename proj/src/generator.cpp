#include "stylegrow/generator.hpp"

#include <cstring>

#include <cmath>
#include <stdexcept>

namespace stylegrow {

namespace {
constexpr double kSqrt2 = 1.4142135623730951;

int64_t even_round(double v) { return 2 * static_cast<int64_t>(std::llround(v / 2.0)); }

CanvasSpec canvas_for(int64_t rate, int64_t core, int64_t margin) {
  return CanvasSpec{rate, -core / 2 - margin, core + 2 * margin};
}

Var maybe_detached(const Param& p, bool frozen) {
  return frozen ? p.value.detach() : p.value;
}

// Per-sample modulated 3x3/1x1 convolution, optional demodulation.
Var modulated_conv(const Var& x, const Var& weight, double wscale, const Var& styles,
                   bool demodulate) {
  const Shape& ws = weight.shape();
  int64_t out_ch = ws[0], in_ch = ws[1], kh = ws[2], kw = ws[3];
  int64_t n = styles.size(0);
  Var w_eff = mul(weight, wscale);
  Var w1 = mul(reshape(w_eff, {1, out_ch, in_ch, kh, kw}), reshape(styles, {n, 1, in_ch, 1, 1}));
  if (demodulate) {
    Var denom = sqrt(add(sum(square(w1), {2, 3, 4}, true), 1e-8));
    w1 = div(w1, denom);
  }
  Var wg = reshape(w1, {n * out_ch, in_ch, kh, kw});
  const Shape& xs = x.shape();
  if (xs[0] != n || xs[1] != in_ch) throw std::invalid_argument("modulated_conv: shape mismatch");
  Var xg = reshape(x, {1, n * in_ch, xs[2], xs[3]});
  int64_t pad = (kh - 1) / 2;
  if (pad > 0) xg = pad2d(xg, pad, pad, pad, pad);
  Var y = conv2d(xg, wg, 1, n);
  return reshape(y, {n, out_ch, y.shape()[2], y.shape()[3]});
}

}  // namespace

int64_t GeneratorConfig::channels_for_rate(int64_t rate) const {
  int64_t ch = channel_base * 16 / rate;
  return std::min(channel_max, std::max(channel_min, ch));
}

FourierInputGrid FourierInputGrid::make(int64_t channels, double max_freq, uint64_t seed) {
  Rng rng(seed);
  FourierInputGrid g;
  g.freqs = Tensor({channels, 2});
  g.phases = Tensor({channels});
  for (int64_t c = 0; c < channels; ++c) {
    double ang = rng.uniform(0.0, 2.0 * M_PI);
    double mag = max_freq * std::sqrt(rng.uniform());  // uniform over the disc
    g.freqs.at({c, 0}) = mag * std::cos(ang);
    g.freqs.at({c, 1}) = mag * std::sin(ang);
    g.phases.at({c}) = rng.uniform();
  }
  return g;
}

FourierInputGrid translate_input_grid(const FourierInputGrid& grid, double dx, double dy,
                                      double scale) {
  if (scale < 1.0) throw std::invalid_argument("translate_input_grid: scale must be >= 1");
  FourierInputGrid g = grid;
  g.tx += dx;
  g.ty += dy;
  g.extent_scale = grid.extent_scale * scale;
  return g;
}

SynthesisLayer GeneratorNet::make_layer(int64_t index, const LayerSpec& in_spec,
                                        const LayerSpec& spec, int64_t in_ch, Rng& rng) const {
  SynthesisLayer l;
  l.in_spec = in_spec;
  l.spec = spec;
  l.in_channels = in_ch;
  l.out_channels = cfg_.channels_for_rate(spec.sampling_rate);
  std::string base = "g.synth" + std::to_string(growth_count_) + "_" + std::to_string(index);
  l.affine = Linear(base + ".affine", cfg_.style_dim, in_ch, rng, 1.0, 1.0);
  l.conv_weight = Param(base + ".weight", rng.normal_tensor({l.out_channels, in_ch, 3, 3}));
  l.conv_bias = Param(base + ".bias", Tensor::zeros({l.out_channels}));
  return l;
}

ToRgbLayer GeneratorNet::make_torgb(int64_t in_ch, Rng& rng) const {
  ToRgbLayer t;
  t.in_channels = in_ch;
  std::string base = "g.torgb" + std::to_string(growth_count_);
  t.affine = Linear(base + ".affine", cfg_.style_dim, in_ch, rng, 1.0, 1.0);
  t.weight = Param(base + ".weight", rng.normal_tensor({3, in_ch, 1, 1}));
  t.bias = Param(base + ".bias", Tensor::zeros({3}));
  return t;
}

GeneratorNet::GeneratorNet(const GeneratorConfig& cfg, const GrowthStage& stage,
                           std::vector<LayerSpec> specs, uint64_t seed)
    : cfg_(cfg), stage_(stage), specs_(std::move(specs)), seed_(seed) {
  if (static_cast<int64_t>(specs_.size()) != stage_.layer_count) {
    throw std::invalid_argument("GeneratorNet: spec count does not match stage layer count");
  }
  grid_ = FourierInputGrid::make(cfg_.fourier_channels, specs_[0].cutoff, derive_seed(seed, "g.fourier"));
  Rng rng(derive_seed(seed, "g.init"));
  int64_t map_in = cfg_.latent_dim + cfg_.class_dim;
  for (int64_t i = 0; i < cfg_.mapping_layers; ++i) {
    mapping_.emplace_back("g.map" + std::to_string(i), i == 0 ? map_in : cfg_.style_dim,
                          cfg_.style_dim, rng, cfg_.mapping_lr_mul, 0.0);
  }
  int64_t in_ch = cfg_.fourier_channels;
  for (size_t i = 0; i < specs_.size(); ++i) {
    const LayerSpec& in_spec = i == 0 ? specs_[0] : specs_[i - 1];
    layers_.push_back(make_layer(static_cast<int64_t>(i), in_spec, specs_[i], in_ch, rng));
    in_ch = layers_.back().out_channels;
  }
  torgb_ = make_torgb(in_ch, rng);
}

Var GeneratorNet::map_latent(const Var& z, const Var& class_vec) const {
  if (z.shape().size() != 2 || z.size(1) != cfg_.latent_dim) {
    throw std::invalid_argument("map_latent: latent must be [N," + std::to_string(cfg_.latent_dim) + "]");
  }
  if (class_vec.shape().size() != 2 || class_vec.size(1) != cfg_.class_dim ||
      class_vec.size(0) != z.size(0)) {
    throw std::invalid_argument("map_latent: class vector must be [N," + std::to_string(cfg_.class_dim) + "]");
  }
  Var x = concat({pixel_norm(z), pixel_norm(class_vec)}, 1);
  for (const Linear& l : mapping_) {
    Var y = l.forward(x, !l.weight.trainable);
    x = mul(leaky_relu(y, cfg_.lrelu_slope), kSqrt2);
  }
  return x;
}

SynthesisResult GeneratorNet::synthesize_detailed(const std::vector<Var>& styles,
                                                  const FourierInputGrid* grid_in,
                                                  bool record_activations) const {
  const FourierInputGrid& grid = grid_in ? *grid_in : grid_;
  if (static_cast<int64_t>(styles.size()) != layer_count()) {
    throw std::invalid_argument("synthesize: expected " + std::to_string(layer_count()) +
                                " styles, got " + std::to_string(styles.size()));
  }
  int64_t n = styles[0].size(0);
  double eta = grid.extent_scale;
  int64_t final_rate = specs_.back().sampling_rate;

  // Derived canvas cores: exact rate ratios from the first layer's core.
  int64_t core0 = even_round(static_cast<double>(specs_[0].sampling_rate) * eta);
  CanvasSpec cv = canvas_for(specs_[0].sampling_rate, core0, cfg_.margin);

  // Fourier features on the first canvas.
  Tensor feat({1, cfg_.fourier_channels, cv.size, cv.size});
  double shift_x = grid.tx / static_cast<double>(final_rate);
  double shift_y = grid.ty / static_cast<double>(final_rate);
  for (int64_t c = 0; c < cfg_.fourier_channels; ++c) {
    double fx = grid.freqs.at({c, 0});
    double fy = grid.freqs.at({c, 1});
    double ph = grid.phases.at({c}) - (fx * shift_x + fy * shift_y);
    for (int64_t i = 0; i < cv.size; ++i) {
      double py = static_cast<double>(cv.off + i) / static_cast<double>(cv.rate);
      for (int64_t j = 0; j < cv.size; ++j) {
        double px = static_cast<double>(cv.off + j) / static_cast<double>(cv.rate);
        feat.at({0, c, i, j}) = std::sin(2.0 * M_PI * (fx * px + fy * py + ph));
      }
    }
  }
  Var x = broadcast_to(constant(feat), {n, cfg_.fourier_channels, cv.size, cv.size});

  SynthesisResult res;
  for (size_t i = 0; i < layers_.size(); ++i) {
    const SynthesisLayer& l = layers_[i];
    Var s = l.affine.forward(styles[i], l.frozen);
    Var y = modulated_conv(x, maybe_detached(l.conv_weight, l.frozen),
                           1.0 / std::sqrt(static_cast<double>(l.in_channels * 9)), s, true);
    y = add(y, reshape(maybe_detached(l.conv_bias, l.frozen), {1, l.out_channels, 1, 1}));

    int64_t out_rate = l.spec.sampling_rate;
    int64_t out_core = cv.size - 2 * cfg_.margin;
    out_core = out_core * out_rate / cv.rate;
    CanvasSpec out_cv = canvas_for(out_rate, out_core, cfg_.margin);

    if (cfg_.alias_filters) {
      int64_t tmp_rate = std::max(cv.rate, out_rate) * 2;
      int64_t up = tmp_rate / cv.rate;
      int64_t down = tmp_rate / out_rate;
      CanvasSpec tmp_cv = canvas_for(tmp_rate, out_core * tmp_rate / out_rate, cfg_.margin);
      Tensor up_k = design_kaiser_lowpass(cfg_.taps_per_factor * up + 1, l.in_spec.cutoff,
                                          l.in_spec.half_width, static_cast<double>(tmp_rate));
      y = resample2d(y, cv, tmp_cv, up, 1, up_k, static_cast<double>(up));
      y = mul(leaky_relu(y, cfg_.lrelu_slope), kSqrt2);
      Tensor down_k = design_kaiser_lowpass(cfg_.taps_per_factor * down + 1, l.spec.cutoff,
                                            l.spec.half_width, static_cast<double>(tmp_rate));
      y = resample2d(y, tmp_cv, out_cv, 1, down, down_k, 1.0);
    } else {
      y = mul(leaky_relu(y, cfg_.lrelu_slope), kSqrt2);
      y = nearest_resample2d(y, cv, out_cv);
    }
    x = y;
    cv = out_cv;
    if (record_activations) res.activations.push_back(x);
  }

  // RGB projection at the final rate, then margin crop and smooth squash.
  {
    const Var& w_rgb = styles.back();
    bool frz = torgb_.weight.trainable == false;
    Var s = torgb_.affine.forward(w_rgb, frz);
    Var img = modulated_conv(x, maybe_detached(torgb_.weight, frz),
                             1.0 / std::sqrt(static_cast<double>(torgb_.in_channels)), s, false);
    img = add(img, reshape(maybe_detached(torgb_.bias, frz), {1, 3, 1, 1}));
    int64_t core = cv.size - 2 * cfg_.margin;
    img = slice(slice(img, 2, cfg_.margin, core), 3, cfg_.margin, core);
    res.image = tanh(img);
  }
  return res;
}

Var GeneratorNet::synthesize(const std::vector<Var>& styles, const FourierInputGrid* grid) const {
  return synthesize_detailed(styles, grid, false).image;
}

Var GeneratorNet::synthesize_broadcast(const Var& w, const FourierInputGrid* grid) const {
  std::vector<Var> styles(static_cast<size_t>(layer_count()), w);
  return synthesize(styles, grid);
}

void GeneratorNet::grow(const GrowthStage& next_stage, const std::vector<LayerSpec>& next_specs) {
  if (next_stage.resolution != 2 * stage_.resolution) {
    throw std::invalid_argument("grow: next stage must double the resolution");
  }
  if (static_cast<int64_t>(next_specs.size()) != next_stage.layer_count) {
    throw std::invalid_argument("grow: spec count mismatch");
  }
  int64_t kept = static_cast<int64_t>(layers_.size()) - next_stage.layers_cut;
  for (size_t i = 0; i < static_cast<size_t>(kept); ++i) {
    if (!(next_specs[i] == layers_[i].spec)) {
      throw std::invalid_argument("grow: kept layer specs must be retained verbatim");
    }
  }
  ++growth_count_;
  layers_.resize(static_cast<size_t>(kept));
  // Freeze the stem and the mapping network; the class projection stays
  // trainable but lives in the conditioning module.
  for (auto& l : layers_) {
    l.frozen = true;
    l.affine.weight.trainable = false;
    l.affine.bias.trainable = false;
    l.conv_weight.trainable = false;
    l.conv_bias.trainable = false;
  }
  for (auto& m : mapping_) {
    m.weight.trainable = false;
    m.bias.trainable = false;
  }
  Rng rng(derive_seed(seed_, "g.grow" + std::to_string(growth_count_)));
  int64_t in_ch = layers_.back().out_channels;
  for (int64_t i = next_stage.layer_count - next_stage.layers_added; i < next_stage.layer_count; ++i) {
    const LayerSpec& in_spec = next_specs[static_cast<size_t>(i - 1)];
    layers_.push_back(make_layer(i, in_spec, next_specs[static_cast<size_t>(i)], in_ch, rng));
    in_ch = layers_.back().out_channels;
  }
  torgb_ = make_torgb(in_ch, rng);
  stage_ = next_stage;
  specs_ = next_specs;
}

std::unique_ptr<GeneratorNet> GeneratorNet::clone() const {
  auto copy = std::make_unique<GeneratorNet>(cfg_, stage_, specs_, seed_);
  copy->grid_.freqs = grid_.freqs.clone();
  copy->grid_.phases = grid_.phases.clone();
  copy->grid_.extent_scale = grid_.extent_scale;
  copy->grid_.tx = grid_.tx;
  copy->grid_.ty = grid_.ty;
  copy->growth_count_ = growth_count_;
  // positional parameter copy: the layer/channel structure is a pure function
  // of (config, specs), so a fresh net lines up slot for slot
  for (size_t i = 0; i < mapping_.size(); ++i) {
    copy->mapping_[i].weight.value.set_value(mapping_[i].weight.value.val().clone());
    copy->mapping_[i].bias.value.set_value(mapping_[i].bias.value.val().clone());
    copy->mapping_[i].weight.trainable = mapping_[i].weight.trainable;
    copy->mapping_[i].bias.trainable = mapping_[i].bias.trainable;
  }
  for (size_t i = 0; i < layers_.size(); ++i) {
    auto& src = layers_[i];
    auto& dst = copy->layers_[i];
    dst.affine.weight.value.set_value(src.affine.weight.value.val().clone());
    dst.affine.bias.value.set_value(src.affine.bias.value.val().clone());
    dst.conv_weight.value.set_value(src.conv_weight.value.val().clone());
    dst.conv_bias.value.set_value(src.conv_bias.value.val().clone());
    dst.frozen = src.frozen;
    dst.affine.weight.trainable = src.affine.weight.trainable;
    dst.affine.bias.trainable = src.affine.bias.trainable;
    dst.conv_weight.trainable = src.conv_weight.trainable;
    dst.conv_bias.trainable = src.conv_bias.trainable;
  }
  copy->torgb_.affine.weight.value.set_value(torgb_.affine.weight.value.val().clone());
  copy->torgb_.affine.bias.value.set_value(torgb_.affine.bias.value.val().clone());
  copy->torgb_.weight.value.set_value(torgb_.weight.value.val().clone());
  copy->torgb_.bias.value.set_value(torgb_.bias.value.val().clone());
  copy->torgb_.weight.trainable = torgb_.weight.trainable;
  copy->torgb_.bias.trainable = torgb_.bias.trainable;
  return copy;
}

ParamRefs GeneratorNet::params() {
  ParamRefs out;
  for (auto& m : mapping_) m.collect(out);
  for (auto& l : layers_) {
    l.affine.collect(out);
    out.push_back(&l.conv_weight);
    out.push_back(&l.conv_bias);
  }
  torgb_.affine.collect(out);
  out.push_back(&torgb_.weight);
  out.push_back(&torgb_.bias);
  return out;
}

ParamRefs GeneratorNet::trainable_params() {
  ParamRefs all = params();
  ParamRefs out;
  for (Param* p : all)
    if (p->trainable) out.push_back(p);
  return out;
}

Var truncate_style(const Var& w, const Var& w_avg, double psi) {
  return add(w_avg, mul(sub(w, w_avg), psi));
}

std::pair<Tensor, Tensor> sample_style_inputs(const GeneratorConfig& cfg, int64_t n,
                                              const std::function<Tensor(int64_t, Rng&)>& class_sampler,
                                              uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_style_inputs: n must be >= 1");
  Rng rng(derive_seed(seed, "mean_style"));
  Tensor z = rng.normal_tensor({n, cfg.latent_dim});
  Tensor c({n, cfg.class_dim});
  int64_t done = 0;
  while (done < n) {
    int64_t b = std::min<int64_t>(64, n - done);
    Tensor batch = class_sampler(b, rng);
    std::memcpy(c.data() + done * cfg.class_dim, batch.data(),
                sizeof(double) * static_cast<size_t>(b * cfg.class_dim));
    done += b;
  }
  return {z, c};
}

Tensor compute_mean_style(const GeneratorNet& net, int64_t n,
                          const std::function<Tensor(int64_t, Rng&)>& class_sampler, uint64_t seed) {
  auto [z_all, c_all] = sample_style_inputs(net.config(), n, class_sampler, seed);
  NoGradGuard ng;
  int64_t style_dim = net.config().style_dim;
  int64_t latent_dim = net.config().latent_dim;
  int64_t class_dim = net.config().class_dim;
  Tensor acc({style_dim});
  int64_t done = 0;
  while (done < n) {
    int64_t b = std::min<int64_t>(64, n - done);
    Tensor zb({b, latent_dim});
    Tensor cb({b, class_dim});
    std::memcpy(zb.data(), z_all.data() + done * latent_dim, sizeof(double) * static_cast<size_t>(b * latent_dim));
    std::memcpy(cb.data(), c_all.data() + done * class_dim, sizeof(double) * static_cast<size_t>(b * class_dim));
    Var w = net.map_latent(Var(std::move(zb)), Var(std::move(cb)));
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < style_dim; ++j) acc.data()[j] += w.val().at({i, j});
    done += b;
  }
  for (int64_t j = 0; j < style_dim; ++j) acc.data()[j] /= static_cast<double>(n);
  return acc;
}

Var style_mix(const GeneratorNet& net, const Var& w_a, const Var& w_b, int64_t split,
              const FourierInputGrid* grid) {
  if (split < 0 || split > net.layer_count()) throw std::out_of_range("style_mix: split out of range");
  std::vector<Var> styles;
  for (int64_t i = 0; i < net.layer_count(); ++i) styles.push_back(i < split ? w_a : w_b);
  return net.synthesize(styles, grid);
}

}  // namespace stylegrow
