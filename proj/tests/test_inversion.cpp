#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "stylegrow/inversion.hpp"
#include "stylegrow/layerspec.hpp"
#include "testutil.hpp"

using namespace stylegrow;

namespace {

GeneratorNet tiny_net(uint64_t seed = 21) {
  GeneratorConfig cfg;
  cfg.fourier_channels = 8;
  cfg.channel_base = 16;
  cfg.channel_max = 16;
  cfg.margin = 2;
  GrowthStage st{16, 4, 0, 0, 4};
  return GeneratorNet(cfg, st, compute_layer_specs(16, 4), seed);
}

ClassVecSampler zero_sampler() {
  return [](int64_t b, Rng&) { return Tensor::zeros({b, 64}); };
}

}  // namespace

TEST_CASE("inversion learning-rate trace matches the stated schedule") {
  InversionConfig cfg;  // 1000 iterations, lr 0.05, 50 up / 250 down
  CHECK(inversion_lr(cfg, 0) == 0.0);
  CHECK(inversion_lr(cfg, 50) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(inversion_lr(cfg, 400) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(inversion_lr(cfg, 1000) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(inversion_lr(cfg, 875) == doctest::Approx(0.025).epsilon(1e-9));  // cosine midpoint
  CHECK(inversion_lr(cfg, 25) == doctest::Approx(0.025).epsilon(1e-12));  // linear ramp midpoint
  InversionConfig bad;
  bad.ramp_up = 600;
  bad.ramp_down = 600;
  CHECK_THROWS(inversion_lr(bad, 10));
}

TEST_CASE("zero-iteration inversion returns the mean style and leaves the net untouched") {
  auto net = tiny_net();
  RandomConvExtractor percep("p", 16, 4, 33);
  Rng rng(1);
  Tensor target = rng.uniform_tensor({3, 16, 16}, -1, 1);

  std::vector<Tensor> before;
  for (Param* p : net.params()) before.push_back(p->value.val().clone());

  InversionConfig cfg;
  cfg.iterations = 0;
  cfg.ramp_up = 0;
  cfg.ramp_down = 0;
  cfg.mean_style_samples = 64;
  auto res = invert_latent(target, net, cfg, percep, zero_sampler(), 5);

  Tensor wbar = compute_mean_style(net, 64, zero_sampler(), derive_seed(5, "wbar"));
  for (int64_t j = 0; j < 512; ++j) {
    CHECK(res.w_final.at({0, j}) == wbar.data()[j]);
  }
  auto params = net.params();
  for (size_t i = 0; i < params.size(); ++i) {
    CHECK(testutil::max_abs_diff(before[i], params[i]->value.val()) == 0.0);
  }
}

TEST_CASE("short inversion run reduces the loss and keeps a non-increasing best trace") {
  auto net = tiny_net(22);
  RandomConvExtractor percep("p", 16, 4, 34);
  // target from the generator itself, so a good optimum exists
  Rng rng(2);
  Var w_star(rng.normal_tensor({1, 512}));
  Tensor target;
  {
    NoGradGuard ng;
    target = net.synthesize_broadcast(w_star).val().reshaped({3, 16, 16});
  }
  InversionConfig cfg;
  cfg.iterations = 60;
  cfg.ramp_up = 5;
  cfg.ramp_down = 15;
  cfg.mean_style_samples = 32;
  auto res = invert_latent(target, net, cfg, percep, zero_sampler(), 6);
  CHECK(res.loss_trace.size() == 60);
  for (size_t i = 1; i < res.best_trace.size(); ++i) CHECK(res.best_trace[i] <= res.best_trace[i - 1]);
  CHECK(res.best_trace.back() < res.loss_trace.front());
}

TEST_CASE("pca: orthogonality, variance ordering, subspace recovery, isotropy") {
  Rng rng(3);
  // synthetic rows on a known 2-d subspace of a 32-d space
  int64_t dim = 32, n = 400;
  Tensor u = rng.normal_tensor({dim});
  Tensor v = rng.normal_tensor({dim});
  {  // orthonormalize the pair
    double nu = 0;
    for (int64_t j = 0; j < dim; ++j) nu += u.data()[j] * u.data()[j];
    for (int64_t j = 0; j < dim; ++j) u.data()[j] /= std::sqrt(nu);
    double uv = 0;
    for (int64_t j = 0; j < dim; ++j) uv += u.data()[j] * v.data()[j];
    for (int64_t j = 0; j < dim; ++j) v.data()[j] -= uv * u.data()[j];
    double nv = 0;
    for (int64_t j = 0; j < dim; ++j) nv += v.data()[j] * v.data()[j];
    for (int64_t j = 0; j < dim; ++j) v.data()[j] /= std::sqrt(nv);
  }
  Tensor rows({n, dim});
  for (int64_t i = 0; i < n; ++i) {
    double a = rng.normal() * 3.0, b = rng.normal();
    for (int64_t j = 0; j < dim; ++j) rows.at({i, j}) = a * u.data()[j] + b * v.data()[j];
  }
  std::vector<double> vars;
  auto dirs = pca_of_styles(rows, 3, 5, &vars);
  REQUIRE(dirs.size() == 3);
  // components pairwise orthogonal, unit norm
  for (size_t a = 0; a < dirs.size(); ++a) {
    double nrm = 0;
    for (int64_t j = 0; j < dim; ++j) nrm += dirs[a].vector.data()[j] * dirs[a].vector.data()[j];
    CHECK(std::abs(std::sqrt(nrm) - 1.0) < 1e-9);
    for (size_t b = a + 1; b < dirs.size(); ++b) {
      double dot = 0;
      for (int64_t j = 0; j < dim; ++j) dot += dirs[a].vector.data()[j] * dirs[b].vector.data()[j];
      CHECK(std::abs(dot) < 1e-6);
    }
  }
  CHECK(vars[0] >= vars[1]);
  CHECK(vars[1] >= vars[2]);
  CHECK(vars[2] < 1e-9);  // rank-2 data
  // first two components span {u, v}: principal angles below 1e-3
  for (int comp = 0; comp < 2; ++comp) {
    double cu = 0, cv = 0;
    for (int64_t j = 0; j < dim; ++j) {
      cu += dirs[comp].vector.data()[j] * u.data()[j];
      cv += dirs[comp].vector.data()[j] * v.data()[j];
    }
    double in_span = std::sqrt(cu * cu + cv * cv);
    CHECK(std::acos(std::min(1.0, in_span)) < 1e-3);
  }

  // isotropic samples: explained variances roughly equal
  Tensor iso = rng.normal_tensor({10000, 8});
  std::vector<double> ivars;
  (void)pca_of_styles(iso, 7, 3, &ivars);
  CHECK(ivars.front() / ivars.back() < 1.5);
}

TEST_CASE("pca_directions over a generator: determinism and k validation") {
  auto net = tiny_net(23);
  auto dirs1 = pca_directions(net, 128, 4, zero_sampler(), 9);
  auto dirs2 = pca_directions(net, 128, 4, zero_sampler(), 9);
  REQUIRE(dirs1.size() == 4);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(testutil::max_abs_diff(dirs1[i].vector, dirs2[i].vector) == 0.0);
  }
  CHECK_THROWS(pca_directions(net, 1024, 512, zero_sampler(), 9));
  CHECK_THROWS(pca_directions(net, 3, 4, zero_sampler(), 9));
}

TEST_CASE("latent edits: zero strength, full range, commuting orthogonal edits") {
  auto net = tiny_net(24);
  Rng rng(4);
  Var w(rng.normal_tensor({1, 512}));
  EditDirection d1;
  d1.vector = rng.normal_tensor({512});
  double n1 = 0;
  for (int64_t j = 0; j < 512; ++j) n1 += d1.vector.data()[j] * d1.vector.data()[j];
  for (int64_t j = 0; j < 512; ++j) d1.vector.data()[j] /= std::sqrt(n1);
  d1.layer_lo = 0;
  d1.layer_hi = net.layer_count() - 1;

  Var base = net.synthesize_broadcast(w);
  Var zero_edit = apply_latent_edit(w, d1, 0.0, net);
  CHECK(testutil::max_abs_diff(base.val(), zero_edit.val()) == 0.0);

  Var full = apply_latent_edit(w, d1, 2.5, net);
  Var manual = net.synthesize_broadcast(add(w, mul(constant(d1.vector.reshaped({1, 512})), 2.5)));
  CHECK(testutil::max_abs_diff(full.val(), manual.val()) == 0.0);

  // orthogonal second direction: order of edits does not matter
  EditDirection d2 = d1;
  d2.vector = rng.normal_tensor({512});
  double dot = 0, n2 = 0;
  for (int64_t j = 0; j < 512; ++j) dot += d1.vector.data()[j] * d2.vector.data()[j];
  for (int64_t j = 0; j < 512; ++j) d2.vector.data()[j] -= dot * d1.vector.data()[j];
  for (int64_t j = 0; j < 512; ++j) n2 += d2.vector.data()[j] * d2.vector.data()[j];
  for (int64_t j = 0; j < 512; ++j) d2.vector.data()[j] /= std::sqrt(n2);
  Var w12 = add(add(w, mul(constant(d1.vector.reshaped({1, 512})), 1.5)),
                mul(constant(d2.vector.reshaped({1, 512})), -0.7));
  Var w21 = add(add(w, mul(constant(d2.vector.reshaped({1, 512})), -0.7)),
                mul(constant(d1.vector.reshaped({1, 512})), 1.5));
  CHECK(testutil::max_abs_diff(w12.val(), w21.val()) < 1e-12);
  Var img12 = net.synthesize_broadcast(w12);
  Var img21 = net.synthesize_broadcast(w21);
  // the styles agree up to addition reordering, so the images do too
  CHECK(testutil::max_abs_diff(img12.val(), img21.val()) < 1e-12);

  EditDirection bad = d1;
  bad.layer_hi = net.layer_count();
  CHECK_THROWS(apply_latent_edit(w, bad, 1.0, net));
}

TEST_CASE("translate_input_grid: identity, accumulation, scale validation") {
  auto grid = FourierInputGrid::make(8, 2.0, 99);
  auto same = translate_input_grid(grid, 0.0, 0.0, 1.0);
  CHECK(same.tx == grid.tx);
  CHECK(same.ty == grid.ty);
  CHECK(same.extent_scale == grid.extent_scale);
  auto moved = translate_input_grid(translate_input_grid(grid, 1.5, -2.0), 0.5, 1.0);
  CHECK(moved.tx == 2.0);
  CHECK(moved.ty == -1.0);
  CHECK_THROWS(translate_input_grid(grid, 0, 0, 0.5));
}

TEST_CASE("class sampling from classifier posteriors") {
  // one-hot classifier: huge logit margin makes the draw certain
  SmallConvClassifier clf(8, 3, 2, 6);
  Rng rng(5);
  Tensor img = rng.uniform_tensor({3, 8, 8}, -1, 1);
  // bias the head so class 1 dominates regardless of input
  for (Param* p : clf.params()) {
    if (p->name == "clf.head.bias") {
      Tensor b = Tensor::zeros(p->value.shape());
      b.data()[1] = 1e4;
      p->value.set_value(b);
    } else if (p->name == "clf.head.weight") {
      p->value.set_value(Tensor::zeros(p->value.shape()));
    }
  }
  for (uint64_t s = 0; s < 5; ++s) CHECK(sample_class_for_image(img, clf, s) == 1);

  // uniform classifier: empirical frequencies within 3 sigma of 1/C
  SmallConvClassifier uni(8, 4, 2, 7);
  for (Param* p : uni.params()) p->value.set_value(Tensor::zeros(p->value.shape()));
  int64_t counts[4] = {0, 0, 0, 0};
  int64_t draws = 10000;
  for (int64_t s = 0; s < draws; ++s) counts[sample_class_for_image(img, uni, static_cast<uint64_t>(s))]++;
  double expect = draws / 4.0;
  double sigma = std::sqrt(draws * 0.25 * 0.75);
  for (int c = 0; c < 4; ++c) CHECK(std::abs(counts[c] - expect) <= 3.0 * sigma);

  // fixed seed reproduces the draw
  CHECK(sample_class_for_image(img, uni, 1234) == sample_class_for_image(img, uni, 1234));
}

TEST_CASE("perceptual distance axioms") {
  RandomConvExtractor percep("p", 16, 4, 35);
  Rng rng(6);
  Var a(rng.uniform_tensor({1, 3, 16, 16}, -1, 1));
  Var b(rng.uniform_tensor({1, 3, 16, 16}, -1, 1));
  CHECK(perceptual_distance(a, a, percep).item() == 0.0);
  CHECK(perceptual_distance(a, b, percep).item() ==
        doctest::Approx(perceptual_distance(b, a, percep).item()).epsilon(1e-12));
  CHECK(perceptual_distance(a, b, percep).item() > 0.0);
}

TEST_CASE("pivotal tuning: zero steps is identity, best iterate never regresses, pivot fixed") {
  auto net = tiny_net(25);
  RandomConvExtractor percep("p", 16, 4, 36);
  Rng rng(7);
  Tensor target = rng.uniform_tensor({3, 16, 16}, -1, 1);
  Tensor pivot = rng.normal_tensor({1, 512});
  Tensor pivot_copy = pivot.clone();

  PivotalTuneConfig cfg;
  cfg.steps = 0;
  std::vector<Tensor> before;
  for (Param* p : net.params()) before.push_back(p->value.val().clone());
  auto res0 = pivotal_tune(target, pivot, net, cfg, percep, zero_sampler(), 8);
  auto params = net.params();
  for (size_t i = 0; i < params.size(); ++i) {
    CHECK(testutil::max_abs_diff(before[i], params[i]->value.val()) == 0.0);
  }
  CHECK(res0.final_distance == res0.initial_distance);

  cfg.steps = 8;
  cfg.lr = 1e-3;
  cfg.mean_style_samples = 16;
  auto res = pivotal_tune(target, pivot, net, cfg, percep, zero_sampler(), 8);
  CHECK(res.final_distance <= res.initial_distance);
  CHECK(testutil::max_abs_diff(pivot, pivot_copy) == 0.0);
}

TEST_CASE("directions file round-trips") {
  Rng rng(8);
  std::vector<EditDirection> dirs(2);
  dirs[0].vector = rng.normal_tensor({512});
  dirs[0].layer_lo = 1;
  dirs[0].layer_hi = 3;
  dirs[1].vector = rng.normal_tensor({512});
  dirs[1].layer_lo = 0;
  dirs[1].layer_hi = 10;
  dirs[1].source = "manual";
  std::string path = "/tmp/stylegrow_dirs_test.bin";
  save_directions(dirs, path);
  auto loaded = load_directions(path);
  REQUIRE(loaded.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(testutil::max_abs_diff(dirs[i].vector, loaded[i].vector) == 0.0);
    CHECK(dirs[i].layer_lo == loaded[i].layer_lo);
    CHECK(dirs[i].layer_hi == loaded[i].layer_hi);
  }
  CHECK(loaded[1].source == "manual");
  std::remove(path.c_str());
}
