#include <doctest.h>

#include <cmath>
#include <cstring>

#include "stylegrow/metrics.hpp"
#include "testutil.hpp"

using namespace stylegrow;

TEST_CASE("feature stats: single sample, duplicates, hand arithmetic") {
  Tensor one({1, 3}, {1.0, -2.0, 0.5});
  auto st = compute_feature_stats(one);
  CHECK(testutil::max_abs(st.covariance) == 0.0);
  CHECK(st.mean.at({0}) == 1.0);

  Rng rng(1);
  Tensor x = rng.normal_tensor({6, 4});
  Tensor xx({12, 4});
  std::memcpy(xx.data(), x.data(), sizeof(double) * 24);
  std::memcpy(xx.data() + 24, x.data(), sizeof(double) * 24);
  auto st1 = compute_feature_stats(x);
  auto st2 = compute_feature_stats(xx);
  CHECK(testutil::max_abs_diff(st1.mean, st2.mean) < 1e-12);
  CHECK(testutil::max_abs_diff(st1.covariance, st2.covariance) < 1e-12);

  // 10 hand-written 2-d points against explicit arithmetic
  Tensor pts({10, 2});
  double vals[10][2] = {{0, 1}, {2, -1}, {1, 1}, {3, 0}, {-2, 2},
                        {0.5, 0.5}, {1.5, -0.25}, {-1, 0}, {2, 2}, {0, -2}};
  for (int i = 0; i < 10; ++i) {
    pts.at({i, 0}) = vals[i][0];
    pts.at({i, 1}) = vals[i][1];
  }
  auto st3 = compute_feature_stats(pts);
  double m0 = 0, m1 = 0;
  for (int i = 0; i < 10; ++i) {
    m0 += vals[i][0];
    m1 += vals[i][1];
  }
  m0 /= 10;
  m1 /= 10;
  double c00 = 0, c01 = 0, c11 = 0;
  for (int i = 0; i < 10; ++i) {
    c00 += (vals[i][0] - m0) * (vals[i][0] - m0);
    c01 += (vals[i][0] - m0) * (vals[i][1] - m1);
    c11 += (vals[i][1] - m1) * (vals[i][1] - m1);
  }
  CHECK(std::abs(st3.mean.at({0}) - m0) < 1e-9);
  CHECK(std::abs(st3.mean.at({1}) - m1) < 1e-9);
  CHECK(std::abs(st3.covariance.at({0, 0}) - c00 / 10) < 1e-9);
  CHECK(std::abs(st3.covariance.at({0, 1}) - c01 / 10) < 1e-9);
  CHECK(std::abs(st3.covariance.at({1, 1}) - c11 / 10) < 1e-9);
  CHECK_THROWS(compute_feature_stats(Tensor({0, 3})));
}

TEST_CASE("frechet distance: closed forms, symmetry, zero on equal") {
  // identical stats -> 0
  Rng rng(2);
  Tensor f = rng.normal_tensor({32, 3});
  auto st = compute_feature_stats(f);
  CHECK(frechet_distance(st, st) < 1e-9);

  // 1-D Gaussians (0,1) vs (1,1) -> 1
  FeatureStatistics a, b;
  a.mean = Tensor({1}, {0.0});
  a.covariance = Tensor({1, 1}, {1.0});
  b.mean = Tensor({1}, {1.0});
  b.covariance = Tensor({1, 1}, {1.0});
  CHECK(frechet_distance(a, b) == doctest::Approx(1.0).epsilon(1e-9));

  // diagonal 3-D case: sum of per-coordinate (dmu^2 + (s1 - s2)^2)
  FeatureStatistics c, d;
  c.mean = Tensor({3}, {0.0, 1.0, -2.0});
  d.mean = Tensor({3}, {0.5, 0.0, 1.0});
  c.covariance = Tensor({3, 3});
  d.covariance = Tensor({3, 3});
  double sc[3] = {1.0, 4.0, 0.25};
  double sd[3] = {2.25, 1.0, 1.0};
  double expect = 0;
  for (int i = 0; i < 3; ++i) {
    c.covariance.at({i, i}) = sc[i];
    d.covariance.at({i, i}) = sd[i];
    double dm = c.mean.at({i}) - d.mean.at({i});
    expect += dm * dm + (std::sqrt(sc[i]) - std::sqrt(sd[i])) * (std::sqrt(sc[i]) - std::sqrt(sd[i]));
  }
  CHECK(std::abs(frechet_distance(c, d) - expect) < 1e-6);

  // symmetry + zero-on-equal over random pairs
  for (int rep = 0; rep < 100; ++rep) {
    Tensor fa = rng.normal_tensor({12, 4});
    Tensor fb = rng.normal_tensor({15, 4});
    auto sa = compute_feature_stats(fa);
    auto sb = compute_feature_stats(fb);
    double ab = frechet_distance(sa, sb);
    double ba = frechet_distance(sb, sa);
    CHECK(ab >= 0.0);
    CHECK(std::abs(ab - ba) < 1e-6 * std::max(1.0, ab));
    CHECK(frechet_distance(sa, sa) < 1e-9);
  }
  FeatureStatistics wrong;
  wrong.mean = Tensor({2});
  wrong.covariance = Tensor({2, 2});
  CHECK_THROWS(frechet_distance(a, wrong));
}

TEST_CASE("inception score closed forms and double-loop oracle") {
  // identical rows -> 1
  Tensor same({7, 4});
  for (int64_t i = 0; i < 7; ++i)
    for (int64_t j = 0; j < 4; ++j) same.at({i, j}) = 0.25;
  CHECK(inception_score(same) == doctest::Approx(1.0).epsilon(1e-12));

  // one-hot per class -> C
  Tensor onehot({4, 4});
  for (int64_t i = 0; i < 4; ++i) onehot.at({i, i}) = 1.0;
  CHECK(inception_score(onehot) == doctest::Approx(4.0).epsilon(1e-9));

  // random table vs direct double loop
  Rng rng(3);
  Tensor table({5, 4});
  for (int64_t i = 0; i < 5; ++i) {
    double s = 0;
    for (int64_t j = 0; j < 4; ++j) {
      table.at({i, j}) = rng.uniform(0.05, 1.0);
      s += table.at({i, j});
    }
    for (int64_t j = 0; j < 4; ++j) table.at({i, j}) /= s;
  }
  double marg[4] = {0, 0, 0, 0};
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < 4; ++j) marg[j] += table.at({i, j}) / 5.0;
  double kl = 0;
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < 4; ++j) kl += table.at({i, j}) * std::log(table.at({i, j}) / marg[j]) / 5.0;
  CHECK(std::abs(inception_score(table) - std::exp(kl)) < 1e-9);

  // IS stays within [1, C]
  CHECK(inception_score(table) >= 1.0 - 1e-12);
  CHECK(inception_score(table) <= 4.0 + 1e-12);

  Tensor bad({1, 3}, {0.5, 0.2, 0.2});
  CHECK_THROWS(inception_score(bad));
}

namespace {
// Exhaustive O(n^2) membership oracle, written as the straightest possible
// translation of the definition.
std::pair<double, double> pr_oracle(const Tensor& real, const Tensor& fake, int64_t k) {
  int64_t n = real.size(0), m = fake.size(0), d = real.size(1);
  auto dist = [&](const Tensor& a, int64_t i, const Tensor& b, int64_t j) {
    double s = 0;
    for (int64_t t = 0; t < d; ++t) {
      double u = a.at({i, t}) - b.at({j, t});
      s += u * u;
    }
    return std::sqrt(s);
  };
  auto radius = [&](const Tensor& pts, int64_t i, int64_t k_) {
    std::vector<double> ds;
    for (int64_t j = 0; j < pts.size(0); ++j)
      if (j != i) ds.push_back(dist(pts, i, pts, j));
    std::sort(ds.begin(), ds.end());
    return ds[static_cast<size_t>(k_ - 1)];
  };
  int64_t pin = 0;
  for (int64_t j = 0; j < m; ++j) {
    bool inside = false;
    for (int64_t i = 0; i < n && !inside; ++i) inside = dist(fake, j, real, i) <= radius(real, i, k);
    if (inside) pin++;
  }
  int64_t rin = 0;
  for (int64_t i = 0; i < n; ++i) {
    bool inside = false;
    for (int64_t j = 0; j < m && !inside; ++j) inside = dist(real, i, fake, j) <= radius(fake, j, k);
    if (inside) rin++;
  }
  return {static_cast<double>(pin) / m, static_cast<double>(rin) / n};
}
}  // namespace

TEST_CASE("precision/recall: identical sets, separated clusters, hand-placed oracle") {
  Rng rng(4);
  Tensor x = rng.normal_tensor({20, 2});
  auto [p, r] = precision_recall(x, x, 3);
  CHECK(p == 1.0);
  CHECK(r == 1.0);

  Tensor far = rng.normal_tensor({20, 2});
  for (int64_t i = 0; i < far.numel(); ++i) far.data()[i] += 1e6;
  auto [p2, r2] = precision_recall(x, far, 3);
  CHECK(p2 == 0.0);
  CHECK(r2 == 0.0);

  // 20+20 hand-placed points: exact agreement with the exhaustive oracle
  Tensor real = rng.uniform_tensor({20, 2}, -1, 1);
  Tensor fake = rng.uniform_tensor({20, 2}, -0.5, 1.5);
  auto got = precision_recall(real, fake, 3);
  auto want = pr_oracle(real, fake, 3);
  CHECK(got.first == want.first);
  CHECK(got.second == want.second);

  CHECK_THROWS(precision_recall(real, fake, 20));
}

TEST_CASE("precision/recall matches the oracle over random instances and k values") {
  Rng rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    int64_t n = rng.uniform_int(8, 40);
    int64_t m = rng.uniform_int(8, 40);
    Tensor real = rng.normal_tensor({n, 3});
    Tensor fake = rng.normal_tensor({m, 3});
    for (int64_t i = 0; i < fake.numel(); ++i) fake.data()[i] = 0.6 * fake.data()[i] + 0.3;
    for (int64_t k : {1, 3, 5}) {
      if (k >= std::min(n, m)) continue;
      auto got = precision_recall(real, fake, k);
      auto want = pr_oracle(real, fake, k);
      CHECK(got.first == want.first);
      CHECK(got.second == want.second);
    }
  }
}

TEST_CASE("psnr formula and cap") {
  Tensor a({2, 3}, {0.1, -0.4, 0.9, 0.0, 1.0, -1.0});
  CHECK(psnr(a, a) == kPsnrCap);

  // MSE = range^2/100 -> 20 dB
  Tensor b = a.clone();
  double delta = std::sqrt(4.0 / 100.0);
  for (int64_t i = 0; i < b.numel(); ++i) b.data()[i] += delta;
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));

  Rng rng(6);
  Tensor x = rng.uniform_tensor({4, 4}, -1, 1);
  Tensor y = rng.uniform_tensor({4, 4}, -1, 1);
  double mse = 0;
  for (int64_t i = 0; i < 16; ++i) {
    double d = x.data()[i] - y.data()[i];
    mse += d * d / 16.0;
  }
  CHECK(std::abs(psnr(x, y) - 10.0 * std::log10(4.0 / mse)) < 1e-9);
  CHECK_THROWS(psnr(x, Tensor({2, 8})));
}

TEST_CASE("eq_t: exactly equivariant single-Fourier-layer generator reports the cap") {
  // one Fourier feature bank, fixed linear readout, no nonlinearity
  Rng rng(7);
  auto grid = FourierInputGrid::make(8, 2.0, 42);
  Tensor readout = rng.normal_tensor({3, 8});
  int64_t res = 16;
  TranslatedSynthFn synth = [&](const Tensor& w, double tx, double ty) {
    (void)w;
    Tensor img({1, 3, res, res});
    for (int64_t c = 0; c < 8; ++c) {
      double fx = grid.freqs.at({c, 0});
      double fy = grid.freqs.at({c, 1});
      double ph = grid.phases.at({c}) - (fx * tx + fy * ty) / static_cast<double>(res);
      for (int64_t y = 0; y < res; ++y)
        for (int64_t x = 0; x < res; ++x) {
          double px = (static_cast<double>(x) - res / 2) / res;
          double py = (static_cast<double>(y) - res / 2) / res;
          double v = std::sin(2.0 * M_PI * (fx * px + fy * py + ph));
          for (int64_t o = 0; o < 3; ++o) img.at({0, o, y, x}) += readout.at({o, c}) * v;
        }
    }
    return img;
  };
  EqtConfig cfg;
  cfg.n_samples = 4;
  cfg.max_offset = 3;
  cfg.guard = 0;
  double db = eq_t_fn(synth, 512, cfg);
  CHECK(db == kPsnrCap);
}

TEST_CASE("eq_t: alias-aware filters beat disabled filters on the same seed") {
  auto sched = build_growth_schedule(16, 32);
  GeneratorConfig cfg;
  cfg.fourier_channels = 16;
  cfg.channel_base = 32;
  cfg.channel_max = 64;
  GeneratorNet on(cfg, sched.stages.back(), sched.per_stage_specs.back(), 2024);
  GeneratorConfig off_cfg = cfg;
  off_cfg.alias_filters = false;
  GeneratorNet off(off_cfg, sched.stages.back(), sched.per_stage_specs.back(), 2024);
  EqtConfig ec;
  ec.n_samples = 6;
  ec.max_offset = 4;
  ec.seed = 5;
  double db_on = eq_t(on, ec);
  double db_off = eq_t(off, ec);
  INFO("eq_t on=", db_on, " off=", db_off);
  CHECK(db_on > db_off);
}
