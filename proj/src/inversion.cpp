#include "stylegrow/inversion.hpp"

#include <Eigen/Dense>
#include <cmath>

#include <json.hpp>

#include "stylegrow/blob_io.hpp"

namespace stylegrow {

double inversion_lr(const InversionConfig& cfg, int64_t t) {
  if (cfg.ramp_up + cfg.ramp_down > cfg.iterations) {
    throw std::invalid_argument("inversion_lr: ramp_up + ramp_down must be <= iterations");
  }
  if (t < 0 || t > cfg.iterations) throw std::out_of_range("inversion_lr: t outside schedule");
  double lr = cfg.lr_max;
  if (cfg.ramp_up > 0 && t < cfg.ramp_up) {
    lr *= static_cast<double>(t) / static_cast<double>(cfg.ramp_up);
  }
  int64_t down_start = cfg.iterations - cfg.ramp_down;
  if (cfg.ramp_down > 0 && t > down_start) {
    double u = static_cast<double>(t - down_start) / static_cast<double>(cfg.ramp_down);
    lr *= 0.5 * (1.0 + std::cos(M_PI * u));
  }
  return lr;
}

Var perceptual_distance(const Var& a, const Var& b, const FeatureNetworkInterface& extractor) {
  auto ta = extract_feature_pyramid(a, extractor);
  auto tb = extract_feature_pyramid(b, extractor);
  Var d = constant(0.0);
  for (size_t l = 0; l < ta.size(); ++l) {
    d = add(d, mean(square(sub(ta[l], tb[l]))));
  }
  return d;
}

int64_t sample_class_for_image(const Tensor& image, const SmallConvClassifier& classifier,
                               uint64_t seed) {
  NoGradGuard ng;
  Shape s = image.shape();
  Var batch(image.reshaped({1, s[0], s[1], s[2]}));
  Tensor probs = classifier.probabilities(batch, true).val();
  std::vector<double> weights;
  for (int64_t j = 0; j < probs.size(1); ++j) weights.push_back(probs.at({0, j}));
  Rng rng(derive_seed(seed, "class_sample"));
  return rng.multinomial(weights);
}

InversionResult invert_latent(const Tensor& target, const GeneratorNet& net,
                              const InversionConfig& cfg, const FeatureNetworkInterface& perceptual,
                              const ClassVecSampler& class_sampler, uint64_t seed) {
  if (target.dim() != 3 || target.size(0) != 3 || target.size(1) != net.resolution()) {
    throw std::invalid_argument("invert_latent: target must be [3,R,R] at the net resolution");
  }
  Tensor mean_w = compute_mean_style(net, cfg.mean_style_samples, class_sampler, derive_seed(seed, "wbar"));
  Var w(mean_w.reshaped({1, net.config().style_dim}).clone(), true);
  Param w_param("invert.w", w.val());
  w_param.value = w;

  Var target_batch(target.reshaped({1, 3, net.resolution(), net.resolution()}));
  Adam opt({cfg.lr_max, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});

  InversionResult res;
  double best = std::numeric_limits<double>::infinity();
  res.w_best = w.val().clone();
  for (int64_t t = 0; t < cfg.iterations; ++t) {
    Var img = net.synthesize_broadcast(w);
    Var loss = perceptual_distance(img, target_batch, perceptual);
    double lv = loss.item();
    if (!std::isfinite(lv)) {
      throw std::runtime_error("invert_latent: non-finite loss at iteration " + std::to_string(t));
    }
    res.loss_trace.push_back(lv);
    if (lv < best) {
      best = lv;
      res.w_best = w.val().clone();
    }
    res.best_trace.push_back(best);
    auto gs = grad(loss, {w});
    opt.set_lr(inversion_lr(cfg, t));
    ParamRefs refs{&w_param};
    opt.step(refs, gs);
  }
  res.w_final = w.val().clone();
  {
    NoGradGuard ng;
    res.reconstruction = net.synthesize_broadcast(Var(res.w_final)).val();
  }
  return res;
}

PivotalTuneResult pivotal_tune(const Tensor& target, const Tensor& pivot, GeneratorNet& net,
                               const PivotalTuneConfig& cfg, const FeatureNetworkInterface& perceptual,
                               const ClassVecSampler& class_sampler, uint64_t seed) {
  if (pivot.dim() != 2 || pivot.size(0) != 1) {
    throw std::invalid_argument("pivotal_tune: pivot must be [1, style_dim]");
  }
  Rng rng(derive_seed(seed, "pti"));
  Var target_batch(target.reshaped({1, 3, net.resolution(), net.resolution()}));
  Var pivot_var(pivot.clone());  // never trained

  Tensor mean_w = compute_mean_style(net, cfg.mean_style_samples, class_sampler, derive_seed(seed, "pti.wbar"));
  Var w_bar(mean_w.reshaped({1, net.config().style_dim}));

  // reference outputs of the untouched generator at locality probes
  ParamRefs params = net.trainable_params();
  auto distance = [&]() {
    NoGradGuard ng;
    Var img = net.synthesize_broadcast(pivot_var);
    return perceptual_distance(img, target_batch, perceptual).item();
  };

  PivotalTuneResult res;
  res.initial_distance = distance();
  double best = res.initial_distance;
  std::vector<Tensor> best_params;
  for (Param* p : params) best_params.push_back(p->value.val().clone());

  Adam opt({cfg.lr, 0.9, 0.999, 1e-8});
  double initial_locality = -1;
  for (int64_t t = 0; t < cfg.steps; ++t) {
    // locality probes: styles near the mean, outputs pinned to the pre-step net
    Tensor w_probe({cfg.locality_samples, net.config().style_dim});
    for (int64_t i = 0; i < cfg.locality_samples; ++i) {
      Tensor z = rng.normal_tensor({1, net.config().latent_dim});
      Tensor cv = class_sampler(1, rng);
      Tensor w_rand;
      {
        NoGradGuard ng;
        w_rand = net.map_latent(Var(z), Var(cv)).val();
      }
      for (int64_t j = 0; j < net.config().style_dim; ++j) {
        double wb = w_bar.val().at({0, j});
        w_probe.at({i, j}) = wb + cfg.locality_epsilon * (w_rand.at({0, j}) - wb);
      }
    }
    Tensor ref_probe;
    {
      NoGradGuard ng;
      ref_probe = net.synthesize_broadcast(Var(w_probe)).val();
    }

    Var recon = net.synthesize_broadcast(pivot_var);
    Var loss = perceptual_distance(recon, target_batch, perceptual);
    loss = add(loss, mul(mean(square(sub(recon, target_batch))), cfg.pixel_weight));
    Var locality = mean(square(sub(net.synthesize_broadcast(Var(w_probe)), constant(ref_probe))));
    double loc_v = locality.item();
    if (initial_locality < 0) initial_locality = std::max(loc_v, 1e-12);
    if (!std::isfinite(loc_v) || loc_v > cfg.divergence_factor * std::max(initial_locality, 1e-6)) {
      throw std::runtime_error("pivotal_tune: locality term diverged at step " + std::to_string(t));
    }
    loss = add(loss, mul(locality, cfg.locality_weight));

    std::vector<Var> wrt;
    for (Param* p : params) wrt.push_back(p->value);
    auto gs = grad(loss, wrt);
    opt.step(params, gs);

    double d = distance();
    res.distance_trace.push_back(d);
    if (d < best) {
      best = d;
      for (size_t i = 0; i < params.size(); ++i) best_params[i] = params[i]->value.val().clone();
    }
  }
  // keep the best iterate: the final net never reconstructs worse than the input
  for (size_t i = 0; i < params.size(); ++i) params[i]->value.set_value(best_params[i].clone());
  res.final_distance = best;
  return res;
}

std::vector<EditDirection> pca_of_styles(const Tensor& styles, int64_t k, int64_t layer_count,
                                         std::vector<double>* variances) {
  int64_t n = styles.size(0), dim = styles.size(1);
  if (k >= dim) throw std::invalid_argument("pca: k must be < style dimension");
  if (n <= k) throw std::invalid_argument("pca: need more samples than components");
  Eigen::MatrixXd ws(n, dim);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < dim; ++j) ws(i, j) = styles.at({i, j});
  Eigen::RowVectorXd mean = ws.colwise().mean();
  ws.rowwise() -= mean;
  Eigen::MatrixXd cov = (ws.transpose() * ws) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  std::vector<EditDirection> dirs;
  for (int64_t i = 0; i < k; ++i) {
    // eigenvalues ascend; take from the top
    int64_t idx = dim - 1 - i;
    EditDirection d;
    d.vector = Tensor({dim});
    Eigen::VectorXd v = es.eigenvectors().col(idx).normalized();
    for (int64_t j = 0; j < dim; ++j) d.vector.data()[j] = v(j);
    d.layer_lo = 0;
    d.layer_hi = layer_count - 1;
    d.source = "pca";
    dirs.push_back(std::move(d));
    if (variances) variances->push_back(std::max(es.eigenvalues()(idx), 0.0));
  }
  return dirs;
}

std::vector<EditDirection> pca_directions(const GeneratorNet& net, int64_t n_samples, int64_t k,
                                          const ClassVecSampler& class_sampler, uint64_t seed,
                                          std::vector<double>* variances) {
  int64_t dim = net.config().style_dim;
  if (k >= dim) throw std::invalid_argument("pca_directions: k must be < style dimension");
  if (n_samples <= k) throw std::invalid_argument("pca_directions: need more samples than components");
  NoGradGuard ng;
  Rng rng(derive_seed(seed, "pca"));
  Tensor ws({n_samples, dim});
  int64_t done = 0;
  while (done < n_samples) {
    int64_t b = std::min<int64_t>(64, n_samples - done);
    Var z(rng.normal_tensor({b, net.config().latent_dim}));
    Var c(class_sampler(b, rng));
    Tensor w = net.map_latent(z, c).val();
    std::memcpy(ws.data() + done * dim, w.data(), sizeof(double) * static_cast<size_t>(w.numel()));
    done += b;
  }
  return pca_of_styles(ws, k, net.layer_count(), variances);
}

Var apply_latent_edit(const Var& w, const EditDirection& dir, double strength,
                      const GeneratorNet& net, const FourierInputGrid* grid) {
  if (dir.layer_lo < 0 || dir.layer_hi < dir.layer_lo || dir.layer_hi >= net.layer_count()) {
    throw std::out_of_range("apply_latent_edit: layer range invalid");
  }
  Var shifted = add(w, mul(constant(dir.vector.reshaped({1, dir.vector.numel()})), strength));
  std::vector<Var> styles;
  for (int64_t i = 0; i < net.layer_count(); ++i) {
    styles.push_back(i >= dir.layer_lo && i <= dir.layer_hi ? shifted : w);
  }
  return net.synthesize(styles, grid);
}

namespace {
constexpr uint32_t kDirectionsMagic = 0x53474449;  // "SGDI"
}

void save_directions(const std::vector<EditDirection>& dirs, const std::string& path) {
  BlobFile f;
  nlohmann::json meta = nlohmann::json::array();
  for (const auto& d : dirs) {
    meta.push_back({{"layer_lo", d.layer_lo}, {"layer_hi", d.layer_hi}, {"source", d.source}});
  }
  f.text = meta.dump();
  for (size_t i = 0; i < dirs.size(); ++i) {
    f.blobs.emplace_back("dir" + std::to_string(i), dirs[i].vector);
  }
  write_blob_file(path, kDirectionsMagic, f);
}

std::vector<EditDirection> load_directions(const std::string& path) {
  BlobFile f = read_blob_file(path, kDirectionsMagic, 1);
  nlohmann::json meta = nlohmann::json::parse(f.text);
  std::vector<EditDirection> dirs;
  for (size_t i = 0; i < meta.size(); ++i) {
    const Tensor* t = f.find("dir" + std::to_string(i));
    if (!t) throw std::runtime_error("directions file is missing blob dir" + std::to_string(i));
    EditDirection d;
    d.vector = t->clone();
    d.layer_lo = meta[i].at("layer_lo").get<int64_t>();
    d.layer_hi = meta[i].at("layer_hi").get<int64_t>();
    d.source = meta[i].at("source").get<std::string>();
    dirs.push_back(std::move(d));
  }
  return dirs;
}

}  // namespace stylegrow
