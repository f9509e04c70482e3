#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "stylegrow/generator.hpp"
#include "stylegrow/projector.hpp"

namespace stylegrow {

struct FeatureStatistics {
  Tensor mean;        // [d]
  Tensor covariance;  // [d, d], biased (1/n)
  int64_t count = 0;
};

// Sample mean and biased covariance of row-vector features [n, d].
FeatureStatistics compute_feature_stats(const Tensor& features);

// Spatially pooled deepest-tap features of image batches: [total, d].
Tensor extract_pooled_features(const std::vector<Tensor>& image_batches,
                               const FeatureNetworkInterface& extractor);
// Second-shallowest tap, flattened per sample and truncated to max_dims
// (spatial-structure features for sFID).
Tensor extract_spatial_features(const std::vector<Tensor>& image_batches,
                                const FeatureNetworkInterface& extractor, int64_t max_dims = 768);

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2), eigendecomposition
// square root with negative-eigenvalue clipping.
double frechet_distance(const FeatureStatistics& a, const FeatureStatistics& b);

// exp(mean KL(p(y|x) || E_x p(y|x))) over rows of an [n, C] probability table.
double inception_score(const Tensor& class_probabilities);

// k-NN manifold membership (Kynkaanniemi-style): precision = fraction of fake
// points inside the real manifold, recall = fraction of real points inside
// the fake manifold.
std::pair<double, double> precision_recall(const Tensor& real_features, const Tensor& fake_features,
                                           int64_t k = 3);

inline constexpr double kPsnrCap = 100.0;

// 10 log10(range^2 / MSE); identical inputs report the cap.
double psnr(const Tensor& a, const Tensor& b, double range = 2.0);

// Synthesis callback for equivariance probing: (style row, tx, ty) -> image.
using TranslatedSynthFn = std::function<Tensor(const Tensor& w, double tx, double ty)>;

struct EqtConfig {
  int64_t n_samples = 16;
  int64_t max_offset = 4;
  int64_t guard = 2;  // border ring excluded from the comparison
  uint64_t seed = 1;
};

// Translation equivariance in dB: input-grid translation versus output-space
// translation, integer offsets, aggregated MSE over all draws, clamped at the
// PSNR cap. Protocol notes in the README.
double eq_t_fn(const TranslatedSynthFn& synth, int64_t style_dim, const EqtConfig& cfg);
double eq_t(const GeneratorNet& net, const EqtConfig& cfg);

}  // namespace stylegrow
