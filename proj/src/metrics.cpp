#include "stylegrow/metrics.hpp"
#include <cstring>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stylegrow {

namespace {
using Mat = Eigen::MatrixXd;
}

FeatureStatistics compute_feature_stats(const Tensor& features) {
  if (features.dim() != 2 || features.size(0) < 1) {
    throw std::invalid_argument("compute_feature_stats: nonempty [n,d] features required");
  }
  int64_t n = features.size(0), d = features.size(1);
  FeatureStatistics st;
  st.count = n;
  st.mean = Tensor({d});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) st.mean.data()[j] += features.at({i, j});
  for (int64_t j = 0; j < d; ++j) st.mean.data()[j] /= static_cast<double>(n);
  st.covariance = Tensor({d, d});
  std::vector<double> c(static_cast<size_t>(d));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < d; ++j) c[static_cast<size_t>(j)] = features.at({i, j}) - st.mean.data()[j];
    for (int64_t a = 0; a < d; ++a) {
      double ca = c[static_cast<size_t>(a)];
      double* row = st.covariance.data() + a * d;
      for (int64_t b = 0; b < d; ++b) row[b] += ca * c[static_cast<size_t>(b)];
    }
  }
  for (int64_t i = 0; i < d * d; ++i) st.covariance.data()[i] /= static_cast<double>(n);
  return st;
}

Tensor extract_pooled_features(const std::vector<Tensor>& image_batches,
                               const FeatureNetworkInterface& extractor) {
  if (image_batches.empty()) throw std::invalid_argument("extract_pooled_features: no batches");
  NoGradGuard ng;
  int64_t d = extractor.tap_channels().back();
  int64_t total = 0;
  for (const Tensor& b : image_batches) total += b.size(0);
  Tensor out({total, d});
  int64_t row = 0;
  for (const Tensor& b : image_batches) {
    auto taps = extract_feature_pyramid(Var(b), extractor);
    Tensor pooled = global_avg_pool(taps.back()).val();
    std::memcpy(out.data() + row * d, pooled.data(), sizeof(double) * static_cast<size_t>(pooled.numel()));
    row += b.size(0);
  }
  return out;
}

Tensor extract_spatial_features(const std::vector<Tensor>& image_batches,
                                const FeatureNetworkInterface& extractor, int64_t max_dims) {
  if (image_batches.empty()) throw std::invalid_argument("extract_spatial_features: no batches");
  NoGradGuard ng;
  int64_t total = 0;
  for (const Tensor& b : image_batches) total += b.size(0);
  Tensor out;
  int64_t row = 0;
  for (const Tensor& b : image_batches) {
    auto taps = extract_feature_pyramid(Var(b), extractor);
    const Var& tap = taps[1];  // second-shallowest
    int64_t per = tap.numel() / tap.size(0);
    int64_t d = std::min<int64_t>(per, max_dims);
    if (!out.defined()) out = Tensor({total, d});
    for (int64_t i = 0; i < tap.size(0); ++i) {
      std::memcpy(out.data() + (row + i) * d, tap.val().data() + i * per,
                  sizeof(double) * static_cast<size_t>(d));
    }
    row += b.size(0);
  }
  return out;
}

namespace {

// PSD square root via eigendecomposition, negative eigenvalues clipped to 0.
Mat sqrtm_psd(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FeatureStatistics& a, const FeatureStatistics& b) {
  int64_t d = a.mean.numel();
  if (b.mean.numel() != d) throw std::invalid_argument("frechet_distance: dimension mismatch");
  Eigen::Map<const Eigen::VectorXd> ma(a.mean.data(), d);
  Eigen::Map<const Eigen::VectorXd> mb(b.mean.data(), d);
  Eigen::Map<const Mat> sa(a.covariance.data(), d, d);
  Eigen::Map<const Mat> sb(b.covariance.data(), d, d);

  Mat ra = sqrtm_psd(sa);
  Mat inner = ra * sb * ra;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (inner + inner.transpose()));
  double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  double fid = (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  if (!std::isfinite(fid)) throw std::runtime_error("frechet_distance: non-finite result");
  return std::max(fid, 0.0);
}

double inception_score(const Tensor& class_probabilities) {
  if (class_probabilities.dim() != 2) throw std::invalid_argument("inception_score: [n,C] table required");
  int64_t n = class_probabilities.size(0), c = class_probabilities.size(1);
  for (int64_t i = 0; i < n; ++i) {
    double s = 0;
    for (int64_t j = 0; j < c; ++j) s += class_probabilities.at({i, j});
    if (std::abs(s - 1.0) > 1e-6) {
      throw std::invalid_argument("inception_score: row " + std::to_string(i) +
                                  " not normalized (sum " + std::to_string(s) + ")");
    }
  }
  std::vector<double> marginal(static_cast<size_t>(c), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) marginal[static_cast<size_t>(j)] += class_probabilities.at({i, j});
  for (double& m : marginal) m /= static_cast<double>(n);
  double mean_kl = 0;
  for (int64_t i = 0; i < n; ++i) {
    double kl = 0;
    for (int64_t j = 0; j < c; ++j) {
      double p = class_probabilities.at({i, j});
      if (p > 0) kl += p * (std::log(p) - std::log(marginal[static_cast<size_t>(j)]));
    }
    mean_kl += kl;
  }
  return std::exp(mean_kl / static_cast<double>(n));
}

std::pair<double, double> precision_recall(const Tensor& real_features, const Tensor& fake_features,
                                           int64_t k) {
  if (real_features.dim() != 2 || fake_features.dim() != 2 ||
      real_features.size(1) != fake_features.size(1)) {
    throw std::invalid_argument("precision_recall: [n,d]/[m,d] features required");
  }
  int64_t n = real_features.size(0), m = fake_features.size(0);
  if (k >= std::min(n, m)) throw std::invalid_argument("precision_recall: k must be < min(n, m)");
  int64_t d = real_features.size(1);

  auto sq_dist = [d](const double* a, const double* b) {
    double s = 0;
    for (int64_t j = 0; j < d; ++j) {
      double t = a[j] - b[j];
      s += t * t;
    }
    return s;
  };
  auto knn_radii = [&](const Tensor& pts) {
    int64_t count = pts.size(0);
    std::vector<double> radii(static_cast<size_t>(count));
    std::vector<double> dists(static_cast<size_t>(count - 1));
    for (int64_t i = 0; i < count; ++i) {
      size_t w = 0;
      for (int64_t j = 0; j < count; ++j) {
        if (j != i) dists[w++] = sq_dist(pts.data() + i * d, pts.data() + j * d);
      }
      std::nth_element(dists.begin(), dists.begin() + (k - 1), dists.end());
      radii[static_cast<size_t>(i)] = dists[static_cast<size_t>(k - 1)];
    }
    return radii;
  };
  auto membership = [&](const Tensor& probes, const Tensor& manifold, const std::vector<double>& radii) {
    int64_t inside = 0;
    for (int64_t i = 0; i < probes.size(0); ++i) {
      for (int64_t j = 0; j < manifold.size(0); ++j) {
        if (sq_dist(probes.data() + i * d, manifold.data() + j * d) <= radii[static_cast<size_t>(j)]) {
          ++inside;
          break;
        }
      }
    }
    return static_cast<double>(inside) / static_cast<double>(probes.size(0));
  };
  auto real_radii = knn_radii(real_features);
  auto fake_radii = knn_radii(fake_features);
  double precision = membership(fake_features, real_features, real_radii);
  double recall = membership(real_features, fake_features, fake_radii);
  return {precision, recall};
}

double psnr(const Tensor& a, const Tensor& b, double range) {
  if (a.shape() != b.shape()) throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double t = a.data()[i] - b.data()[i];
    mse += t * t;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0.0) return kPsnrCap;
  return 10.0 * std::log10(range * range / mse);
}

double eq_t_fn(const TranslatedSynthFn& synth, int64_t style_dim, const EqtConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "eqt"));
  double total_se = 0;
  int64_t total_px = 0;
  for (int64_t s = 0; s < cfg.n_samples; ++s) {
    Tensor w = rng.normal_tensor({1, style_dim});
    int64_t tx = rng.uniform_int(-cfg.max_offset, cfg.max_offset);
    int64_t ty = rng.uniform_int(-cfg.max_offset, cfg.max_offset);
    Tensor base = synth(w, 0.0, 0.0);
    Tensor moved = synth(w, static_cast<double>(tx), static_cast<double>(ty));
    const Shape& sh = base.shape();
    int64_t res = sh[sh.size() - 1];
    int64_t y0 = std::max<int64_t>(ty, 0) + cfg.guard, y1 = res + std::min<int64_t>(ty, 0) - cfg.guard;
    int64_t x0 = std::max<int64_t>(tx, 0) + cfg.guard, x1 = res + std::min<int64_t>(tx, 0) - cfg.guard;
    for (int64_t c = 0; c < sh[1]; ++c) {
      for (int64_t y = y0; y < y1; ++y) {
        for (int64_t x = x0; x < x1; ++x) {
          double dv = moved.at({0, c, y, x}) - base.at({0, c, y - ty, x - tx});
          total_se += dv * dv;
          ++total_px;
        }
      }
    }
  }
  if (total_px == 0) throw std::runtime_error("eq_t: empty comparison region");
  double mse = total_se / static_cast<double>(total_px);
  if (mse == 0.0) return kPsnrCap;
  return std::min(10.0 * std::log10(4.0 / mse), kPsnrCap);
}

double eq_t(const GeneratorNet& net, const EqtConfig& cfg) {
  NoGradGuard ng;
  TranslatedSynthFn synth = [&net](const Tensor& w, double tx, double ty) {
    auto grid = translate_input_grid(net.input_grid(), tx, ty);
    return net.synthesize_broadcast(Var(w), &grid).val();
  };
  return eq_t_fn(synth, net.config().style_dim, cfg);
}

}  // namespace stylegrow
