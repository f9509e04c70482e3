#pragma once

#include "stylegrow/autodiff.hpp"

namespace stylegrow {

// Square signal canvas: pixel j sits at continuous position (off + j) / rate
// along each axis, in units where the output image spans one unit per side.
struct CanvasSpec {
  int64_t rate = 0;
  int64_t off = 0;
  int64_t size = 0;

  bool operator==(const CanvasSpec&) const = default;
};

// Kaiser-windowed sinc low-pass, DC gain 1. `cutoff` and `half_width` are in
// cycles per unit; `rate` is the sampling rate the filter operates at.
Tensor design_kaiser_lowpass(int64_t taps, double cutoff, double half_width, double rate);

// One-axis resampling operator: combined zero-stuff (up), FIR, subsample
// (down), pad/crop between the two canvases. out.rate == in.rate * up / down.
// kernel is designed at rate in.rate * up; gain multiplies every row (use the
// up factor when upsampling).
Tensor resample_axis_matrix(const CanvasSpec& in, const CanvasSpec& out, int64_t up, int64_t down,
                            const Tensor& kernel, double gain);

// Zero-order-hold / decimation operator used by the filters-disabled mode.
Tensor nearest_axis_matrix(const CanvasSpec& in, const CanvasSpec& out);

// Apply an axis operator to both spatial dims of an NCHW tensor.
Var resample2d(const Var& x, const CanvasSpec& in, const CanvasSpec& out, int64_t up, int64_t down,
               const Tensor& kernel, double gain);
Var nearest_resample2d(const Var& x, const CanvasSpec& in, const CanvasSpec& out);

}  // namespace stylegrow
