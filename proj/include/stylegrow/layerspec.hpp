#pragma once

#include <cstdint>
#include <vector>

namespace stylegrow {

// Anti-aliasing filter parameters of one synthesis layer. Frequencies are in
// cycles per unit (the image spans one unit per side).
struct LayerSpec {
  int64_t index = 0;
  int64_t sampling_rate = 0;  // pixels per side of the layer's internal signal
  double cutoff = 0;          // f_c
  double stopband = 0;        // f_t
  double half_width = 0;      // transition band half-width
  bool is_critical = false;   // cutoff == sampling_rate / 2

  bool operator==(const LayerSpec&) const = default;
};

struct GrowthStage {
  int64_t resolution = 0;
  int64_t layer_count = 0;
  int64_t layers_cut = 0;
  int64_t layers_added = 0;
  int64_t batch_size = 0;
};

struct GrowthSchedule {
  std::vector<GrowthStage> stages;
  std::vector<std::vector<LayerSpec>> per_stage_specs;
};

struct ScheduleOptions {
  // Resolution at which the reduced growth step (cut 2, add 5) applies.
  int64_t max_target = 1024;
  // Apply the reduced step at the last stage even when final < max_target.
  bool treat_final_as_max = false;
  // Divisor applied to the stock batch schedule for small-machine runs.
  int64_t batch_divisor = 1;
};

// First-layer / last-layer anchors of the geometric filter progression.
inline constexpr double kFirstCutoff = 2.0;          // f_c0
inline constexpr double kFirstStopbandExp = 2.1;     // f_t0 = 2^2.1
inline constexpr double kLastStopbandRelExp = 0.3;   // f_tN = (res/2) * 2^0.3
inline constexpr int64_t kCriticalLayers = 2;
inline constexpr int64_t kBaseLayerCount = 11;
inline constexpr int64_t kBaseResolution = 16;

// Geometric cutoff/stopband interpolation with the exponent clamped so the
// last two layers are identical and critically sampled.
std::vector<LayerSpec> compute_layer_specs(int64_t resolution, int64_t n_layers);

// Stock batch schedule (2048 / 256 / 128 by resolution band), divided by
// `divisor` for small runs (minimum 1).
int64_t batch_size_for_resolution(int64_t resolution, int64_t divisor = 1);

// Doubling schedule from start to final. Kept layers retain the specs they
// were created with; appended layers take the tail of the grown configuration.
GrowthSchedule build_growth_schedule(int64_t start_resolution, int64_t final_resolution,
                                     const ScheduleOptions& opts = {});

bool is_power_of_two(int64_t v);

}  // namespace stylegrow
