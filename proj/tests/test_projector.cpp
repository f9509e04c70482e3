#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "stylegrow/projector.hpp"
#include "testutil.hpp"

using namespace stylegrow;

TEST_CASE("small inputs are resized to the extractor's training resolution") {
  RandomConvExtractor f("f224", 224, 4, 9);
  Rng rng(1);
  Var img(rng.uniform_tensor({1, 3, 32, 32}, -1, 1));
  auto taps = extract_feature_pyramid(img, f);
  REQUIRE(taps.size() == 4);
  CHECK(taps[0].shape()[2] == 112);
  CHECK(taps[1].shape()[2] == 56);
  CHECK(taps[2].shape()[2] == 28);
  CHECK(taps[3].shape()[2] == 14);
  // strictly decreasing tap sizes
  for (size_t i = 0; i + 1 < 4; ++i) CHECK(taps[i].shape()[2] > taps[i + 1].shape()[2]);
}

TEST_CASE("pyramid gradient w.r.t. input pixels matches finite differences") {
  RandomConvExtractor f("f16", 16, 2, 10);
  Rng rng(2);
  Var img(rng.uniform_tensor({1, 3, 16, 16}, -1, 1), true);
  auto loss_fn = [&]() {
    auto taps = extract_feature_pyramid(img, f);
    Var s = constant(0.0);
    for (auto& t : taps) s = add(s, sum(t));
    return s;
  };
  auto gs = grad(loss_fn(), {img});
  CHECK(testutil::max_abs(gs[0].val()) > 0.0);  // nonzero d(pyramid)/d(image)
  Tensor fd = testutil::fd_grad([&] { return loss_fn().item(); }, img, 1e-5);
  CHECK(testutil::rel_err(gs[0].val(), fd) < 1e-3);
}

TEST_CASE("attention extractor: four strictly decreasing finite taps, deterministic") {
  RandomAttentionExtractor f("vit", 64, 16, 11);
  Rng rng(3);
  Var img(rng.uniform_tensor({2, 3, 64, 64}, -1, 1));
  auto taps = f.forward(img);
  REQUIRE(taps.size() == 4);
  CHECK(taps[0].shape() == Shape{2, 16, 8, 8});
  CHECK(taps[1].shape() == Shape{2, 16, 4, 4});
  CHECK(taps[2].shape() == Shape{2, 16, 2, 2});
  CHECK(taps[3].shape() == Shape{2, 16, 1, 1});
  for (auto& t : taps) CHECK(t.val().all_finite());
  auto taps2 = f.forward(img);
  for (size_t i = 0; i < 4; ++i) CHECK(testutil::max_abs_diff(taps[i].val(), taps2[i].val()) == 0.0);
  // gradient reaches the image through attention
  Var img_g(img.val(), true);
  auto taps3 = f.forward(img_g);
  auto gs = grad(sum(taps3[3]), {img_g});
  CHECK(testutil::max_abs(gs[0].val()) > 0.0);
}

TEST_CASE("random projections: seeded reproducibility and shape contract") {
  std::vector<Shape> shapes = {{4, 8, 8}, {8, 4, 4}, {16, 2, 2}, {16, 1, 1}};
  auto a = init_random_projections(shapes, 55);
  auto b = init_random_projections(shapes, 55);
  for (int l = 0; l < 4; ++l) CHECK(testutil::max_abs_diff(a.ccm[l], b.ccm[l]) == 0.0);
  for (int l = 0; l < 3; ++l) CHECK(testutil::max_abs_diff(a.csm[l], b.csm[l]) == 0.0);
  auto c = init_random_projections(shapes, 56);
  CHECK(testutil::max_abs_diff(a.ccm[0], c.ccm[0]) > 0.0);
  CHECK(a.ccm[2].shape() == Shape{16, 16, 1, 1});
  CHECK(a.csm[0].shape() == Shape{4, 8, 3, 3});
}

TEST_CASE("project_pyramid: determinism, zero propagation, dense oracle on 1x1 maps") {
  std::vector<Shape> shapes = {{2, 1, 1}, {3, 1, 1}, {2, 1, 1}, {2, 1, 1}};
  auto params = init_random_projections(shapes, 77);
  Rng rng(4);
  std::vector<Var> raw;
  for (auto& s : shapes) raw.push_back(Var(rng.normal_tensor({1, s[0], s[1], s[2]})));

  auto p1 = project_pyramid(raw, params);
  auto p2 = project_pyramid(raw, params);
  REQUIRE(p1.maps.size() == 4);
  for (int l = 0; l < 4; ++l) CHECK(testutil::max_abs_diff(p1.maps[l].val(), p2.maps[l].val()) == 0.0);

  // zero features give a zero pyramid (all paths are bias-free convolutions)
  std::vector<Var> zeros;
  for (auto& s : shapes) zeros.push_back(Var(Tensor::zeros({1, s[0], s[1], s[2]})));
  auto pz = project_pyramid(zeros, params);
  for (int l = 0; l < 4; ++l) CHECK(testutil::max_abs(pz.maps[l].val()) == 0.0);

  // dense recomputation: y3 = C3 x3 ; y_l = C_l x_l + S_l y_{l+1} (1x1 maps,
  // so the 3x3 kernels act through their center taps only after padding)
  auto matvec = [](const Tensor& k, const std::vector<double>& x, int64_t kh_center) {
    std::vector<double> y(static_cast<size_t>(k.shape()[0]), 0.0);
    for (int64_t o = 0; o < k.shape()[0]; ++o)
      for (int64_t i = 0; i < k.shape()[1]; ++i)
        y[static_cast<size_t>(o)] +=
            (k.dim() == 4 && k.shape()[2] == 3 ? k.at({o, i, kh_center, kh_center}) : k.at({o, i, 0, 0})) *
            x[static_cast<size_t>(i)];
    return y;
  };
  std::vector<std::vector<double>> xs;
  for (auto& r : raw) {
    std::vector<double> v;
    for (int64_t i = 0; i < r.numel(); ++i) v.push_back(r.val().data()[i]);
    xs.push_back(v);
  }
  std::vector<double> y3 = matvec(params.ccm[3], xs[3], 0);
  std::vector<std::vector<double>> expect(4);
  expect[3] = y3;
  for (int l = 2; l >= 0; --l) {
    auto own = matvec(params.ccm[l], xs[static_cast<size_t>(l)], 0);
    auto up = matvec(params.csm[l], expect[static_cast<size_t>(l) + 1], 1);
    for (size_t i = 0; i < own.size(); ++i) own[i] += up[i];
    expect[static_cast<size_t>(l)] = own;
  }
  for (int l = 0; l < 4; ++l) {
    for (int64_t i = 0; i < p1.maps[l].numel(); ++i) {
      CHECK(std::abs(p1.maps[l].val().data()[i] - expect[static_cast<size_t>(l)][static_cast<size_t>(i)]) < 1e-6);
    }
  }
}

TEST_CASE("augmentation: deterministic under fixed params, differentiable, identity when disabled") {
  Rng rng(5);
  AugmentationConfig cfg;
  auto params = sample_augmentation(4, 16, cfg, rng);
  Var imgs(rng.uniform_tensor({4, 3, 16, 16}, -1, 1), true);
  Var a1 = apply_augmentation(imgs, params);
  Var a2 = apply_augmentation(imgs, params);
  CHECK(testutil::max_abs_diff(a1.val(), a2.val()) == 0.0);

  auto gs = grad(sum(square(a1)), {imgs});
  CHECK(testutil::max_abs(gs[0].val()) > 0.0);

  AugmentationConfig off;
  off.probability = 0.0;
  auto idp = sample_augmentation(4, 16, off, rng);
  Var same = apply_augmentation(imgs, idp);
  CHECK(testutil::max_abs_diff(same.val(), imgs.val()) == 0.0);
}

TEST_CASE("extractor weight container round-trips bitwise") {
  RandomConvExtractor f("save-me", 16, 4, 123);
  Rng rng(6);
  Var img(rng.uniform_tensor({1, 3, 16, 16}, -1, 1));
  auto before = f.forward(img);
  std::string path = "/tmp/stylegrow_extractor_test.bin";
  save_extractor_weights(f, path);
  RandomConvExtractor g("save-me", 16, 4, 999);  // different seed, then overwritten
  load_extractor_weights(g, path);
  auto after = g.forward(img);
  for (size_t i = 0; i < 4; ++i) CHECK(testutil::max_abs_diff(before[i].val(), after[i].val()) == 0.0);
  std::remove(path.c_str());
}
