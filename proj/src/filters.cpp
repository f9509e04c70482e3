#include "stylegrow/filters.hpp"

#include <cmath>
#include <stdexcept>

#include "stylegrow/nn.hpp"

namespace stylegrow {

namespace {

double bessel_i0(double x) {
  // power series; converges quickly for the beta range used here
  double sum = 1.0, term = 1.0;
  double x2 = x * x / 4.0;
  for (int k = 1; k < 64; ++k) {
    term *= x2 / (static_cast<double>(k) * k);
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}

double kaiser_atten(int64_t taps, double width_norm) {
  return 2.285 * static_cast<double>(taps - 1) * M_PI * width_norm + 7.95;
}

double kaiser_beta(double atten) {
  if (atten > 50.0) return 0.1102 * (atten - 8.7);
  if (atten > 21.0) return 0.5842 * std::pow(atten - 21.0, 0.4) + 0.07886 * (atten - 21.0);
  return 0.0;
}

double sinc(double x) {
  if (x == 0.0) return 1.0;
  double px = M_PI * x;
  return std::sin(px) / px;
}

}  // namespace

Tensor design_kaiser_lowpass(int64_t taps, double cutoff, double half_width, double rate) {
  if (taps < 1 || taps % 2 == 0) throw std::invalid_argument("design_kaiser_lowpass: odd tap count required");
  double nyq = rate / 2.0;
  double fc = std::min(cutoff / nyq, 1.0);
  double fw = std::max(1e-6, 2.0 * half_width / nyq);
  double beta = kaiser_beta(kaiser_atten(taps, fw));
  double c = static_cast<double>(taps - 1) / 2.0;
  double i0b = bessel_i0(beta);
  Tensor k({taps});
  double total = 0;
  for (int64_t i = 0; i < taps; ++i) {
    double t = static_cast<double>(i) - c;
    double win = c > 0 ? bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - (t / c) * (t / c)))) / i0b : 1.0;
    double v = fc * sinc(fc * t) * win;
    k.data()[i] = v;
    total += v;
  }
  for (int64_t i = 0; i < taps; ++i) k.data()[i] /= total;
  return k;
}

Tensor resample_axis_matrix(const CanvasSpec& in, const CanvasSpec& out, int64_t up, int64_t down,
                            const Tensor& kernel, double gain) {
  if (in.rate * up != out.rate * down) {
    throw std::invalid_argument("resample_axis_matrix: rate mismatch");
  }
  int64_t taps = kernel.numel();
  int64_t r = (taps - 1) / 2;
  Tensor m({out.size, in.size});
  const double* k = kernel.data();
  for (int64_t i = 0; i < out.size; ++i) {
    int64_t fine_out = down * (out.off + i);
    for (int64_t j = 0; j < in.size; ++j) {
      int64_t idx = fine_out - up * (in.off + j) + r;
      if (idx >= 0 && idx < taps) m.at({i, j}) = gain * k[idx];
    }
  }
  return m;
}

Tensor nearest_axis_matrix(const CanvasSpec& in, const CanvasSpec& out) {
  Tensor m({out.size, in.size});
  for (int64_t i = 0; i < out.size; ++i) {
    double pos = static_cast<double>(out.off + i) / static_cast<double>(out.rate);
    // floor(x+0.5): rounding direction independent of sign, so the hold
    // pattern is consistent under shifts
    int64_t j = static_cast<int64_t>(std::floor(pos * static_cast<double>(in.rate) + 0.5)) - in.off;
    j = std::min(std::max<int64_t>(j, 0), in.size - 1);
    m.at({i, j}) = 1.0;
  }
  return m;
}

Var resample2d(const Var& x, const CanvasSpec& in, const CanvasSpec& out, int64_t up, int64_t down,
               const Tensor& kernel, double gain) {
  Tensor m = resample_axis_matrix(in, out, up, down, kernel, gain);
  Var y = apply_axis_matrix(x, m, 2);
  return apply_axis_matrix(y, m, 3);
}

Var nearest_resample2d(const Var& x, const CanvasSpec& in, const CanvasSpec& out) {
  Tensor m = nearest_axis_matrix(in, out);
  Var y = apply_axis_matrix(x, m, 2);
  return apply_axis_matrix(y, m, 3);
}

}  // namespace stylegrow
