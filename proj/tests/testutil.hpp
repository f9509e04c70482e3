#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "stylegrow/autodiff.hpp"

namespace stylegrow::testutil {

// Central finite differences of a scalar function w.r.t. one leaf Var.
inline Tensor fd_grad(const std::function<double()>& f, Var& leaf, double h = 1e-5) {
  Tensor g(leaf.shape());
  Tensor base = leaf.val().clone();
  for (int64_t i = 0; i < base.numel(); ++i) {
    Tensor up = base.clone();
    up.data()[i] += h;
    leaf.set_value(up);
    double fp = f();
    Tensor dn = base.clone();
    dn.data()[i] -= h;
    leaf.set_value(dn);
    double fm = f();
    g.data()[i] = (fp - fm) / (2.0 * h);
  }
  leaf.set_value(base);
  return g;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline double max_abs(const Tensor& a) {
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i]));
  return m;
}

inline double rel_err(const Tensor& a, const Tensor& b) {
  double scale = std::max(1e-12, std::max(max_abs(a), max_abs(b)));
  return max_abs_diff(a, b) / scale;
}

}  // namespace stylegrow::testutil
