#include <doctest.h>

#include <cmath>

#include <cstring>

#include "stylegrow/conditioning.hpp"
#include "stylegrow/generator.hpp"
#include "stylegrow/layerspec.hpp"
#include "testutil.hpp"

using namespace stylegrow;

namespace {

// Serves fixed images in batches of up to `bs`.
BatchSource make_source(const std::vector<Tensor>& images, const std::vector<int64_t>& labels,
                        int64_t bs = 4) {
  auto idx = std::make_shared<size_t>(0);
  return [images, labels, idx, bs]() -> std::optional<LabeledBatch> {
    if (*idx >= images.size()) return std::nullopt;
    int64_t n = std::min<int64_t>(bs, static_cast<int64_t>(images.size() - *idx));
    const Shape& s = images[0].shape();
    LabeledBatch b;
    b.images = Tensor({n, s[0], s[1], s[2]});
    for (int64_t i = 0; i < n; ++i) {
      std::memcpy(b.images.data() + i * shape_numel(s), images[*idx + static_cast<size_t>(i)].data(),
                  sizeof(double) * static_cast<size_t>(shape_numel(s)));
      b.labels.push_back(labels[*idx + static_cast<size_t>(i)]);
    }
    *idx += static_cast<size_t>(n);
    return b;
  };
}

Tensor pooled_feature(const Tensor& image, const FeatureNetworkInterface& f) {
  Shape s = image.shape();
  Var batch(image.reshaped({1, s[0], s[1], s[2]}));
  auto taps = extract_feature_pyramid(batch, f);
  return global_avg_pool(taps.back()).val();
}

}  // namespace

TEST_CASE("class of identical images embeds to that image's pooled feature") {
  RandomConvExtractor f("emb", 16, 4, 5);
  Rng rng(1);
  Tensor img = rng.uniform_tensor({3, 16, 16}, -1, 1);
  auto table = compute_class_embeddings(make_source({img, img, img}, {0, 0, 0}), 1, f);
  Tensor expect = pooled_feature(img, f);
  for (int64_t j = 0; j < table.dim; ++j) {
    CHECK(table.embeddings.value.val().at({0, j}) == doctest::Approx(expect.data()[j]).epsilon(1e-9));
  }
  CHECK(table.source == "emb");
}

TEST_CASE("two classes with identical image sets embed identically") {
  RandomConvExtractor f("emb", 16, 4, 5);
  Rng rng(2);
  Tensor a = rng.uniform_tensor({3, 16, 16}, -1, 1);
  Tensor b = rng.uniform_tensor({3, 16, 16}, -1, 1);
  auto table = compute_class_embeddings(make_source({a, b, a, b}, {0, 0, 1, 1}), 2, f);
  for (int64_t j = 0; j < table.dim; ++j) {
    CHECK(table.embeddings.value.val().at({0, j}) ==
          doctest::Approx(table.embeddings.value.val().at({1, j})).epsilon(1e-12));
  }
}

TEST_CASE("three-image class matches the brute-force mean") {
  RandomConvExtractor f("emb", 16, 4, 5);
  Rng rng(3);
  std::vector<Tensor> imgs = {rng.uniform_tensor({3, 16, 16}, -1, 1),
                              rng.uniform_tensor({3, 16, 16}, -1, 1),
                              rng.uniform_tensor({3, 16, 16}, -1, 1)};
  auto table = compute_class_embeddings(make_source(imgs, {0, 0, 0}, 2), 1, f);
  for (int64_t j = 0; j < table.dim; ++j) {
    double mean = 0;
    for (const Tensor& img : imgs) mean += pooled_feature(img, f).data()[j];
    mean /= 3.0;
    CHECK(std::abs(table.embeddings.value.val().at({0, j}) - mean) < 1e-6);
  }
}

TEST_CASE("empty class fails naming the class") {
  RandomConvExtractor f("emb", 16, 4, 5);
  Rng rng(4);
  Tensor img = rng.uniform_tensor({3, 16, 16}, -1, 1);
  CHECK_THROWS_WITH_AS(compute_class_embeddings(make_source({img}, {0}), 2, f),
                       doctest::Contains("class 1"), std::runtime_error);
}

TEST_CASE("table recomputation is deterministic") {
  RandomConvExtractor f("emb", 16, 4, 5);
  Rng rng(5);
  std::vector<Tensor> imgs = {rng.uniform_tensor({3, 16, 16}, -1, 1),
                              rng.uniform_tensor({3, 16, 16}, -1, 1)};
  auto t1 = compute_class_embeddings(make_source(imgs, {0, 1}), 2, f);
  auto t2 = compute_class_embeddings(make_source(imgs, {0, 1}), 2, f);
  CHECK(testutil::max_abs_diff(t1.embeddings.value.val(), t2.embeddings.value.val()) == 0.0);
}

TEST_CASE("embed_class: zero projector, identity projector, matvec oracle") {
  Rng rng(6);
  ClassEmbeddingTable table;
  table.class_count = 3;
  table.dim = 64;
  table.embeddings = Param("t", rng.normal_tensor({3, 64}));

  EmbeddingProjector zero("pz", 64, 64, rng);
  zero.normalize = false;
  zero.proj.weight.value.set_value(Tensor::zeros({64, 64}));
  zero.proj.bias.value.set_value(Tensor::zeros({64}));
  Var e0 = embed_class(table, zero, {1});
  CHECK(testutil::max_abs(e0.val()) == 0.0);

  // identity-like projector returns the raw row (normalization off)
  EmbeddingProjector ident("pi", 64, 64, rng);
  ident.normalize = false;
  Tensor eye({64, 64});
  for (int64_t i = 0; i < 64; ++i) eye.at({i, i}) = 1.0 / ident.proj.wscale;
  ident.proj.weight.value.set_value(eye);
  ident.proj.bias.value.set_value(Tensor::zeros({64}));
  Var e1 = embed_class(table, ident, {2});
  for (int64_t j = 0; j < 64; ++j) {
    CHECK(e1.val().at({0, j}) == doctest::Approx(table.embeddings.value.val().at({2, j})).epsilon(1e-9));
  }

  // random projector (with default normalization) against explicit arithmetic
  EmbeddingProjector proj("pr", 64, 64, rng);
  Var out = embed_class(table, proj, {0});
  std::vector<double> row(64);
  double nrm = 0;
  for (int64_t j = 0; j < 64; ++j) {
    row[static_cast<size_t>(j)] = table.embeddings.value.val().at({0, j});
    nrm += row[static_cast<size_t>(j)] * row[static_cast<size_t>(j)];
  }
  nrm = std::sqrt(nrm + 1e-12);
  for (int64_t i = 0; i < 64; ++i) {
    double acc = 0;
    for (int64_t j = 0; j < 64; ++j) {
      acc += proj.proj.weight.value.val().at({i, j}) * proj.proj.wscale * row[static_cast<size_t>(j)] / nrm;
    }
    acc += proj.proj.bias.value.val().at({i});
    CHECK(std::abs(out.val().at({0, i}) - acc) < 1e-6);
  }

  CHECK_THROWS(embed_class(table, proj, {3}));
  CHECK_THROWS(embed_class(table, proj, {-1}));
}

TEST_CASE("gradient flows through table entries into a generator loss") {
  Rng rng(7);
  GeneratorConfig gcfg;
  gcfg.fourier_channels = 4;
  gcfg.channel_base = 8;
  gcfg.channel_max = 8;
  gcfg.margin = 2;
  GrowthStage st{16, 3, 0, 0, 4};
  GeneratorNet net(gcfg, st, compute_layer_specs(16, 3), 11);

  ClassEmbeddingTable table;
  table.class_count = 2;
  table.dim = 8;
  table.embeddings = Param("t", rng.normal_tensor({2, 8}));
  EmbeddingProjector proj("p", 8, 64, rng);

  Tensor z = rng.normal_tensor({1, 64});
  auto loss_fn = [&]() {
    Var c = embed_class(table, proj, {1});
    Var w = net.map_latent(Var(z), c);
    Var img = net.synthesize_broadcast(w);
    return sum(square(img));
  };
  auto gs = grad(loss_fn(), {table.embeddings.value});
  Tensor fd = testutil::fd_grad([&] { return loss_fn().item(); }, table.embeddings.value, 1e-5);
  CHECK(testutil::rel_err(gs[0].val(), fd) < 1e-3);
  // only the selected row receives gradient
  for (int64_t j = 0; j < 8; ++j) CHECK(gs[0].val().at({0, j}) == 0.0);
}

TEST_CASE("embedding sidecar file round-trips through float32 rows") {
  Rng rng(8);
  ClassEmbeddingTable table;
  table.class_count = 5;
  table.dim = 12;
  table.source = "emb-test";
  table.embeddings = Param("t", rng.normal_tensor({5, 12}));
  std::string path = "/tmp/stylegrow_table_test.bin";
  save_embedding_table(table, path);
  auto loaded = load_embedding_table(path);
  CHECK(loaded.class_count == 5);
  CHECK(loaded.dim == 12);
  CHECK(loaded.source == "emb-test");
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < 12; ++j) {
      double a = table.embeddings.value.val().at({i, j});
      double b = loaded.embeddings.value.val().at({i, j});
      CHECK(std::abs(a - b) <= std::abs(a) * 1e-6 + 1e-7);  // float32 storage
    }
}
