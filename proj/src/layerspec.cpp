#include "stylegrow/layerspec.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace stylegrow {

bool is_power_of_two(int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

namespace {
int64_t next_pow2(double v) {
  int64_t p = 1;
  while (static_cast<double>(p) < v) p <<= 1;
  return p;
}
}  // namespace

std::vector<LayerSpec> compute_layer_specs(int64_t resolution, int64_t n_layers) {
  if (!is_power_of_two(resolution) || resolution < kBaseResolution) {
    throw std::invalid_argument("compute_layer_specs: resolution must be a power of two >= 16, got " +
                                std::to_string(resolution));
  }
  if (n_layers < kCriticalLayers) {
    throw std::invalid_argument("compute_layer_specs: need at least 2 layers for the critical pair");
  }
  const double first_cutoff = kFirstCutoff;
  const double first_stopband = std::pow(2.0, kFirstStopbandExp);
  const double last_cutoff = static_cast<double>(resolution) / 2.0;
  const double last_stopband = last_cutoff * std::pow(2.0, kLastStopbandRelExp);

  std::vector<LayerSpec> specs(static_cast<size_t>(n_layers));
  for (int64_t i = 0; i < n_layers; ++i) {
    double e = n_layers > kCriticalLayers
                   ? std::min(static_cast<double>(i) / static_cast<double>(n_layers - kCriticalLayers), 1.0)
                   : 1.0;
    LayerSpec& s = specs[static_cast<size_t>(i)];
    s.index = i;
    if (e >= 1.0) {  // clamped tail: take the anchors exactly
      s.cutoff = last_cutoff;
      s.stopband = last_stopband;
    } else {
      s.cutoff = first_cutoff * std::pow(last_cutoff / first_cutoff, e);
      s.stopband = first_stopband * std::pow(last_stopband / first_stopband, e);
    }
    // Sampling rate: next power of two covering twice the stopband, capped at
    // the stage resolution so the final pair lands exactly on the bandlimit.
    s.sampling_rate = next_pow2(std::min(2.0 * s.stopband, static_cast<double>(resolution)));
    s.half_width = std::max(s.stopband, static_cast<double>(s.sampling_rate) / 2.0) - s.cutoff;
    s.is_critical = s.cutoff == static_cast<double>(s.sampling_rate) / 2.0;
  }
  return specs;
}

int64_t batch_size_for_resolution(int64_t resolution, int64_t divisor) {
  if (!is_power_of_two(resolution) || resolution < 16 || resolution > 1024) {
    throw std::invalid_argument("batch_size_for_resolution: resolution outside 16..1024: " +
                                std::to_string(resolution));
  }
  if (divisor < 1) throw std::invalid_argument("batch_size_for_resolution: divisor must be >= 1");
  int64_t base = resolution <= 64 ? 2048 : (resolution <= 256 ? 256 : 128);
  return std::max<int64_t>(1, base / divisor);
}

GrowthSchedule build_growth_schedule(int64_t start_resolution, int64_t final_resolution,
                                     const ScheduleOptions& opts) {
  if (start_resolution > final_resolution) {
    throw std::invalid_argument("build_growth_schedule: start > final");
  }
  if (!is_power_of_two(start_resolution) || !is_power_of_two(final_resolution) ||
      start_resolution < kBaseResolution) {
    throw std::invalid_argument("build_growth_schedule: resolutions must be powers of two >= 16");
  }
  if (final_resolution > opts.max_target) {
    throw std::invalid_argument("build_growth_schedule: final resolution exceeds max target");
  }

  GrowthSchedule sched;
  int64_t count = kBaseLayerCount;
  for (int64_t res = start_resolution; res <= final_resolution; res *= 2) {
    GrowthStage st;
    st.resolution = res;
    if (res == start_resolution) {
      st.layers_cut = 0;
      st.layers_added = 0;
    } else {
      bool reduced = res == opts.max_target || (opts.treat_final_as_max && res == final_resolution);
      st.layers_cut = 2;
      st.layers_added = reduced ? 5 : 7;
      count = count - st.layers_cut + st.layers_added;
    }
    st.layer_count = count;
    st.batch_size = batch_size_for_resolution(res, opts.batch_divisor);
    sched.stages.push_back(st);
  }

  sched.per_stage_specs.resize(sched.stages.size());
  for (size_t k = 0; k < sched.stages.size(); ++k) {
    const GrowthStage& st = sched.stages[k];
    auto grown = compute_layer_specs(st.resolution, st.layer_count);
    if (k == 0) {
      sched.per_stage_specs[k] = std::move(grown);
      continue;
    }
    const auto& prev = sched.per_stage_specs[k - 1];
    std::vector<LayerSpec> merged(prev.begin(), prev.end() - st.layers_cut);
    for (int64_t i = st.layer_count - st.layers_added; i < st.layer_count; ++i) {
      LayerSpec s = grown[static_cast<size_t>(i)];
      // Keep the frequency progression monotone across the splice. For
      // schedules anchored at 16^2 this never triggers; stages that start at
      // a higher base resolution have a steeper stem progression than the
      // grown configuration's tail.
      const LayerSpec& left = merged.back();
      if (s.cutoff < left.cutoff || s.stopband < left.stopband) {
        s.cutoff = std::max(s.cutoff, left.cutoff);
        s.stopband = std::max(s.stopband, left.stopband);
        s.sampling_rate = next_pow2(std::min(2.0 * s.stopband, static_cast<double>(st.resolution)));
        s.half_width = std::max(s.stopband, static_cast<double>(s.sampling_rate) / 2.0) - s.cutoff;
        s.is_critical = s.cutoff == static_cast<double>(s.sampling_rate) / 2.0;
      }
      merged.push_back(s);
    }
    sched.per_stage_specs[k] = std::move(merged);
  }
  return sched;
}

}  // namespace stylegrow
