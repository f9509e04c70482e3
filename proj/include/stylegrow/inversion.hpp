#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stylegrow/classifier.hpp"
#include "stylegrow/generator.hpp"
#include "stylegrow/projector.hpp"

namespace stylegrow {

struct InversionConfig {
  int64_t iterations = 1000;
  double lr_max = 0.05;
  int64_t ramp_up = 50;
  int64_t ramp_down = 250;
  int64_t mean_style_samples = 10000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

// Learning-rate schedule: linear ramp from zero over the first ramp_up
// iterations, cosine decay to zero over the final ramp_down. Valid for
// t in [0, iterations].
double inversion_lr(const InversionConfig& cfg, int64_t t);

// Feature-space L2 over the extractor's four taps, normalized per tap.
Var perceptual_distance(const Var& a, const Var& b, const FeatureNetworkInterface& extractor);

// Class drawn from the classifier's softmax as a multinomial; seeded.
int64_t sample_class_for_image(const Tensor& image, const SmallConvClassifier& classifier,
                               uint64_t seed);

using ClassVecSampler = std::function<Tensor(int64_t batch, Rng&)>;

struct InversionResult {
  Tensor w_final;  // [1, style_dim]
  Tensor w_best;
  std::vector<double> loss_trace;
  std::vector<double> best_trace;  // running minimum, non-increasing
  Tensor reconstruction;           // synthesis at w_final
};

// Latent optimization in W: w starts at the empirical mean style and is the
// only trainable quantity. Throws (naming the iteration) on non-finite loss.
InversionResult invert_latent(const Tensor& target, const GeneratorNet& net,
                              const InversionConfig& cfg, const FeatureNetworkInterface& perceptual,
                              const ClassVecSampler& class_sampler, uint64_t seed);

struct PivotalTuneConfig {
  int64_t steps = 100;
  double lr = 3e-4;
  double locality_weight = 1.0;
  double locality_epsilon = 0.5;
  int64_t locality_samples = 4;
  double pixel_weight = 1.0;
  double divergence_factor = 100.0;  // abort when locality exceeds this x initial
  int64_t mean_style_samples = 256;
};

struct PivotalTuneResult {
  double initial_distance = 0;
  double final_distance = 0;
  std::vector<double> distance_trace;
};

// Fine-tunes generator parameters around a fixed pivot style; keeps the best
// iterate, so the reconstruction distance never increases.
PivotalTuneResult pivotal_tune(const Tensor& target, const Tensor& pivot, GeneratorNet& net,
                               const PivotalTuneConfig& cfg, const FeatureNetworkInterface& perceptual,
                               const ClassVecSampler& class_sampler, uint64_t seed);

struct EditDirection {
  Tensor vector;  // unit 512-d style direction
  int64_t layer_lo = 0;
  int64_t layer_hi = 0;  // inclusive
  std::string source = "pca";
};

// PCA core over explicit style rows [n, dim]: top-k unit-norm components
// ordered by explained variance.
std::vector<EditDirection> pca_of_styles(const Tensor& styles, int64_t k, int64_t layer_count,
                                         std::vector<double>* variances = nullptr);

// Top-k principal components of sampled style codes, unit norm, ordered by
// explained variance. Also reports the variances.
std::vector<EditDirection> pca_directions(const GeneratorNet& net, int64_t n_samples, int64_t k,
                                          const ClassVecSampler& class_sampler, uint64_t seed,
                                          std::vector<double>* variances = nullptr);

// Layers inside [layer_lo, layer_hi] receive w + strength * vector.
Var apply_latent_edit(const Var& w, const EditDirection& dir, double strength,
                      const GeneratorNet& net, const FourierInputGrid* grid = nullptr);

void save_directions(const std::vector<EditDirection>& dirs, const std::string& path);
std::vector<EditDirection> load_directions(const std::string& path);

}  // namespace stylegrow
