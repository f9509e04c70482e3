#include <doctest.h>

#include <cmath>

#include "stylegrow/autodiff.hpp"
#include "stylegrow/nn.hpp"
#include "stylegrow/rng.hpp"
#include "testutil.hpp"

using namespace stylegrow;
using testutil::fd_grad;
using testutil::rel_err;

TEST_CASE("elementwise broadcast forward and grad") {
  Rng rng(1);
  Var a(rng.normal_tensor({3, 4}), true);
  Var b(rng.normal_tensor({1, 4}), true);
  auto f = [&]() { return sum(mul(add(a, b), sub(a, mul(b, 0.5)))).item(); };
  Var loss = sum(mul(add(a, b), sub(a, mul(b, 0.5))));
  auto gs = grad(loss, {a, b});
  CHECK(rel_err(gs[0].val(), fd_grad(f, a)) < 1e-7);
  CHECK(rel_err(gs[1].val(), fd_grad(f, b)) < 1e-7);
}

TEST_CASE("unary ops gradients") {
  Rng rng(2);
  Var a(rng.uniform_tensor({2, 5}, 0.2, 2.0), true);
  auto build = [&]() {
    Var t = add(mul(sin(a), tanh(a)), mul(sqrt(a), log(a)));
    t = add(t, add(softplus(a), sigmoid(a)));
    t = add(t, add(leaky_relu(a, 0.2), pow_const(a, 1.7)));
    return sum(mul(t, exp(mul(a, 0.3))));
  };
  auto f = [&]() { return build().item(); };
  auto gs = grad(build(), {a});
  CHECK(rel_err(gs[0].val(), fd_grad(f, a)) < 1e-6);
}

TEST_CASE("matmul bmm transpose reshape grads") {
  Rng rng(3);
  Var a(rng.normal_tensor({3, 4}), true);
  Var b(rng.normal_tensor({4, 2}), true);
  Var c(rng.normal_tensor({2, 3, 2}), true);
  auto build = [&]() {
    Var m = matmul(a, b);                       // [3,2]
    Var r = reshape(m, {1, 3, 2});
    Var t = concat({r, mul(r, 2.0)}, 0);        // [2,3,2]
    Var z = bmm(transpose(c, {0, 2, 1}), t);    // [2,2,2]
    return sum(square(z));
  };
  auto f = [&]() { return build().item(); };
  auto gs = grad(build(), {a, b, c});
  CHECK(rel_err(gs[0].val(), fd_grad(f, a)) < 1e-6);
  CHECK(rel_err(gs[1].val(), fd_grad(f, b)) < 1e-6);
  CHECK(rel_err(gs[2].val(), fd_grad(f, c)) < 1e-6);
}

TEST_CASE("slice concat pad index_select grads") {
  Rng rng(4);
  Var a(rng.normal_tensor({2, 3, 5, 5}), true);
  Var t(rng.normal_tensor({4, 3}), true);
  auto build = [&]() {
    Var s = slice(a, 2, 1, 3);
    Var p = pad2d(s, 1, 0, 2, 1);
    Var rows = index_select(t, 0, {1, 1, 3, 0});
    return add(sum(square(p)), sum(mul(rows, rows)));
  };
  auto f = [&]() { return build().item(); };
  auto gs = grad(build(), {a, t});
  CHECK(rel_err(gs[0].val(), fd_grad(f, a)) < 1e-6);
  CHECK(rel_err(gs[1].val(), fd_grad(f, t)) < 1e-6);
}

TEST_CASE("reductions grads") {
  Rng rng(5);
  Var a(rng.normal_tensor({2, 3, 4}), true);
  auto build = [&]() {
    Var m = mean(a, {1}, true);
    Var s = sum(square(sub(a, m)), {0, 2}, false);
    return mean(s);
  };
  auto f = [&]() { return build().item(); };
  auto gs = grad(build(), {a});
  CHECK(rel_err(gs[0].val(), fd_grad(f, a)) < 1e-6);
}

TEST_CASE("conv2d against naive loops") {
  Rng rng(6);
  for (auto [groups, stride] : std::vector<std::pair<int64_t, int64_t>>{{1, 1}, {1, 2}, {2, 1}, {3, 2}}) {
    int64_t ci = 2, co = 2, n = 2, h = 9, w = 8, kh = 3, kw = 2;
    Var x(rng.normal_tensor({n, groups * ci, h, w}), true);
    Var wt(rng.normal_tensor({groups * co, ci, kh, kw}), true);
    Var y = conv2d(x, wt, stride, groups);
    int64_t ho = (h - kh) / stride + 1, wo = (w - kw) / stride + 1;
    REQUIRE(y.shape() == Shape{n, groups * co, ho, wo});
    // naive
    for (int64_t b = 0; b < n; ++b)
      for (int64_t g = 0; g < groups; ++g)
        for (int64_t o = 0; o < co; ++o)
          for (int64_t i = 0; i < ho; ++i)
            for (int64_t j = 0; j < wo; ++j) {
              double acc = 0;
              for (int64_t c = 0; c < ci; ++c)
                for (int64_t u = 0; u < kh; ++u)
                  for (int64_t v = 0; v < kw; ++v)
                    acc += x.val().at({b, g * ci + c, i * stride + u, j * stride + v}) *
                           wt.val().at({g * co + o, c, u, v});
              CHECK(y.val().at({b, g * co + o, i, j}) == doctest::Approx(acc).epsilon(1e-12));
            }
    // gradients
    auto build = [&]() { return sum(mul(y, y)); };
    (void)build;
    auto loss = [&]() {
      Var yy = conv2d(x, wt, stride, groups);
      return sum(square(yy));
    };
    auto f = [&]() { return loss().item(); };
    auto gs = grad(loss(), {x, wt});
    CHECK(rel_err(gs[0].val(), fd_grad(f, x)) < 1e-6);
    CHECK(rel_err(gs[1].val(), fd_grad(f, wt)) < 1e-6);
  }
}

TEST_CASE("dilate subsample grads") {
  Rng rng(7);
  Var a(rng.normal_tensor({1, 2, 5, 4}), true);
  auto loss = [&]() {
    Var u = dilate2d(a, 2, 3);
    Var s = subsample2d(u, 3, 2, 1, 0);
    return sum(square(s));
  };
  auto f = [&]() { return loss().item(); };
  auto gs = grad(loss(), {a});
  CHECK(rel_err(gs[0].val(), fd_grad(f, a)) < 1e-6);
}

TEST_CASE("second-order gradients through norm of first gradient") {
  // d/dx of ||dL/dy|| style expressions must see through the backward pass.
  Rng rng(8);
  Var w(rng.normal_tensor({3, 4}), true);
  Var x(rng.normal_tensor({2, 4}), true);
  auto penalty = [&]() {
    Var y = tanh(matmul(x, transpose(w, {1, 0})));
    Var s = sum(square(y));
    auto g = grad(s, {x}, {.create_graph = true});
    return sum(square(g[0]));  // ||dS/dx||^2, a function of w and x
  };
  auto f = [&]() { return penalty().item(); };
  auto gs = grad(penalty(), {w, x});
  CHECK(rel_err(gs[0].val(), fd_grad(f, w, 1e-5)) < 1e-5);
  CHECK(rel_err(gs[1].val(), fd_grad(f, x, 1e-5)) < 1e-5);
}

TEST_CASE("second-order through conv and resampling") {
  Rng rng(9);
  Var x(rng.normal_tensor({1, 2, 6, 6}), true);
  Var w(rng.normal_tensor({2, 2, 3, 3}), true);
  auto penalty = [&]() {
    Var u = dilate2d(x, 2, 2);
    Var y = conv2d(pad2d(u, 1, 1, 1, 1), w, 2, 1);
    Var s = sum(square(leaky_relu(y, 0.1)));
    auto g = grad(s, {x}, {.create_graph = true});
    return sum(square(g[0]));
  };
  auto f = [&]() { return penalty().item(); };
  auto gs = grad(penalty(), {w});
  CHECK(rel_err(gs[0].val(), fd_grad(f, w, 1e-5)) < 1e-5);
}

TEST_CASE("grad accumulates over shared subexpressions") {
  Var a(Tensor::scalar(2.0), true);
  Var b = mul(a, a);       // a^2
  Var c = add(mul(b, b), b);  // a^4 + a^2
  auto gs = grad(c, {a});
  CHECK(gs[0].val().item() == doctest::Approx(4 * 8 + 2 * 2));  // 4a^3 + 2a
}

TEST_CASE("detach blocks gradient") {
  Var a(Tensor::scalar(3.0), true);
  Var y = mul(a.detach(), a);  // derivative w.r.t. a is a_detached = 3
  auto gs = grad(y, {a});
  CHECK(gs[0].val().item() == doctest::Approx(3.0));
}

TEST_CASE("helpers: softmax rows sum to one and grads flow") {
  Rng rng(10);
  Var logits(rng.normal_tensor({3, 5}), true);
  Var p = softmax_rows(logits);
  for (int64_t i = 0; i < 3; ++i) {
    double s = 0;
    for (int64_t j = 0; j < 5; ++j) s += p.val().at({i, j});
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  auto loss = [&]() { return sum(square(softmax_rows(logits))); };
  auto f = [&]() { return loss().item(); };
  auto gs = grad(loss(), {logits});
  CHECK(rel_err(gs[0].val(), fd_grad(f, logits)) < 1e-6);
}

TEST_CASE("bilinear resize preserves constants and matches axis matrices") {
  Var x(Tensor::full({1, 1, 7, 5}, 3.25), true);
  Var y = bilinear_resize(x, 11, 13);
  for (int64_t i = 0; i < 11; ++i)
    for (int64_t j = 0; j < 13; ++j) CHECK(y.val().at({0, 0, i, j}) == doctest::Approx(3.25).epsilon(1e-12));
  Rng rng(11);
  Var z(rng.normal_tensor({2, 3, 6, 6}), true);
  auto loss = [&]() { return sum(square(bilinear_resize(z, 9, 4))); };
  auto f = [&]() { return loss().item(); };
  auto gs = grad(loss(), {z});
  CHECK(rel_err(gs[0].val(), fd_grad(f, z)) < 1e-6);
}

TEST_CASE("gaussian blur: constant image unchanged, rows stochastic") {
  Var x(Tensor::full({1, 2, 8, 8}, -0.7));
  Var y = gaussian_blur(x, 2.0);
  for (int64_t i = 0; i < 8; ++i)
    for (int64_t j = 0; j < 8; ++j) {
      CHECK(y.val().at({0, 0, i, j}) == doctest::Approx(-0.7).epsilon(1e-12));
      CHECK(y.val().at({0, 1, i, j}) == doctest::Approx(-0.7).epsilon(1e-12));
    }
}

TEST_CASE("adam step moves params and respects trainable flag") {
  Rng rng(12);
  Param p1("p1", rng.normal_tensor({3}));
  Param p2("p2", rng.normal_tensor({3}));
  p2.trainable = false;
  Tensor before1 = p1.value.val().clone();
  Tensor before2 = p2.value.val().clone();
  Adam opt({.lr = 0.1, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8});
  Var loss = add(sum(square(p1.value)), sum(square(p2.value)));
  auto gs = grad(loss, {p1.value, p2.value});
  ParamRefs refs{&p1, &p2};
  opt.step(refs, gs);
  CHECK(testutil::max_abs_diff(before1, p1.value.val()) > 0);
  CHECK(testutil::max_abs_diff(before2, p2.value.val()) == 0);
}
