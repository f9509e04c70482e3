#include <doctest.h>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>

#include "stylegrow/layerspec.hpp"

using namespace stylegrow;
namespace mp = boost::multiprecision;
using big = mp::cpp_bin_float_50;

namespace {

// Independent recomputation of the geometric progression in 50-digit floats.
struct BigSpec {
  big cutoff, stopband;
};

std::vector<BigSpec> big_progression(int64_t res, int64_t n) {
  big fc0 = 2;
  big ft0 = pow(big(2), big("2.1"));
  big fcN = big(res) / 2;
  big ftN = fcN * pow(big(2), big("0.3"));
  std::vector<BigSpec> out;
  for (int64_t i = 0; i < n; ++i) {
    big e = n > 2 ? big(i) / big(n - 2) : big(1);
    if (e > 1) e = 1;
    out.push_back({fc0 * pow(fcN / fc0, e), ft0 * pow(ftN / ft0, e)});
  }
  return out;
}

}  // namespace

TEST_CASE("16x16 with 11 layers: exactly the last two critical") {
  auto specs = compute_layer_specs(16, 11);
  REQUIRE(specs.size() == 11);
  for (size_t i = 0; i < 9; ++i) CHECK_FALSE(specs[i].is_critical);
  CHECK(specs[9].is_critical);
  CHECK(specs[10].is_critical);
  CHECK(specs[10].cutoff == 8.0);
  CHECK(specs[10].sampling_rate == 16);
}

TEST_CASE("two-layer configuration is the bare critical pair") {
  auto specs = compute_layer_specs(16, 2);
  REQUIRE(specs.size() == 2);
  CHECK(specs[0].is_critical);
  CHECK(specs[1].is_critical);
  CHECK(specs[0].cutoff == 8.0);
  CHECK(specs[1].cutoff == 8.0);
}

TEST_CASE("cutoff sequence matches the closed form recomputed at high precision") {
  // Frozen from the 50-digit evaluation of 2*(8/2)^(min(i/9,1)).
  const double frozen[11] = {2.0,
                             2.333058079152233,
                             2.7215800003487543,
                             3.1748021039363994,
                             3.7034988491491617,
                             4.320238955569224,
                             5.0396841995794926,
                             5.878937969102395,
                             6.857951862824582,
                             8.0,
                             8.0};
  auto specs = compute_layer_specs(16, 11);
  auto oracle = big_progression(16, 11);
  for (int64_t i = 0; i < 11; ++i) {
    CHECK(specs[i].cutoff == doctest::Approx(frozen[i]).epsilon(1e-14));
    CHECK(specs[i].cutoff ==
          doctest::Approx(static_cast<double>(oracle[static_cast<size_t>(i)].cutoff)).epsilon(1e-13));
    CHECK(specs[i].stopband ==
          doctest::Approx(static_cast<double>(oracle[static_cast<size_t>(i)].stopband)).epsilon(1e-13));
  }
}

TEST_CASE("growth schedule 16 -> 1024 reproduces the 39-layer progression") {
  auto sched = build_growth_schedule(16, 1024);
  std::vector<int64_t> counts;
  for (const auto& st : sched.stages) counts.push_back(st.layer_count);
  CHECK(counts == std::vector<int64_t>{11, 16, 21, 26, 31, 36, 39});
  CHECK(sched.stages.back().layers_added == 5);
  CHECK(sched.stages[1].layers_added == 7);
  CHECK(sched.stages[1].layers_cut == 2);
}

TEST_CASE("degenerate schedule: no growth events") {
  auto sched = build_growth_schedule(16, 16);
  REQUIRE(sched.stages.size() == 1);
  CHECK(sched.stages[0].layer_count == 11);
  CHECK(sched.stages[0].resolution == 16);
}

TEST_CASE("mid schedule 16 -> 64 and cross-check against the full run") {
  auto sched = build_growth_schedule(16, 64);
  std::vector<int64_t> counts;
  for (const auto& st : sched.stages) counts.push_back(st.layer_count);
  CHECK(counts == std::vector<int64_t>{11, 16, 21});
  auto full = build_growth_schedule(16, 1024);
  for (size_t k = 0; k < sched.stages.size(); ++k) {
    CHECK(full.stages[k].layer_count == sched.stages[k].layer_count);
    CHECK(full.per_stage_specs[k] == sched.per_stage_specs[k]);
  }
  CHECK(full.stages.back().layer_count == 39);
}

TEST_CASE("reduced final step below the maximum target is opt-in") {
  ScheduleOptions opts;
  opts.treat_final_as_max = true;
  auto sched = build_growth_schedule(16, 64, opts);
  std::vector<int64_t> counts;
  for (const auto& st : sched.stages) counts.push_back(st.layer_count);
  CHECK(counts == std::vector<int64_t>{11, 16, 19});
}

TEST_CASE("batch size schedule") {
  CHECK(batch_size_for_resolution(16) == 2048);
  CHECK(batch_size_for_resolution(64) == 2048);
  CHECK(batch_size_for_resolution(128) == 256);
  CHECK(batch_size_for_resolution(256) == 256);
  CHECK(batch_size_for_resolution(512) == 128);
  CHECK(batch_size_for_resolution(1024) == 128);
  CHECK(batch_size_for_resolution(16, 16) == 128);
  CHECK(batch_size_for_resolution(1024, 256) == 1);  // floors at 1
  CHECK_THROWS(batch_size_for_resolution(8));
  CHECK_THROWS(batch_size_for_resolution(2048));
  CHECK_THROWS(batch_size_for_resolution(48));
}

TEST_CASE("schedule invariants hold for every start/final pair in 16..1024") {
  for (int64_t start = 16; start <= 1024; start *= 2) {
    for (int64_t fin = start; fin <= 1024; fin *= 2) {
      auto sched = build_growth_schedule(start, fin);
      for (size_t k = 0; k < sched.stages.size(); ++k) {
        const auto& st = sched.stages[k];
        const auto& specs = sched.per_stage_specs[k];
        REQUIRE(static_cast<int64_t>(specs.size()) == st.layer_count);
        if (k == 0) {
          CHECK(st.layer_count == 11);
        } else {
          int64_t expect_delta = st.resolution == 1024 ? 3 : 5;
          CHECK(st.layer_count == sched.stages[k - 1].layer_count + expect_delta);
          CHECK(st.resolution == 2 * sched.stages[k - 1].resolution);
        }
        // cutoff monotonicity + critical pair + sampling-rate bounds
        for (size_t i = 0; i + 1 < specs.size(); ++i) CHECK(specs[i].cutoff <= specs[i + 1].cutoff);
        for (size_t i = 0; i < specs.size(); ++i) {
          bool last_two = i + 2 >= specs.size();
          CHECK(specs[i].is_critical == last_two);
          if (!specs[i].is_critical) CHECK(specs[i].stopband > specs[i].cutoff);
          CHECK(is_power_of_two(specs[i].sampling_rate));
          CHECK(specs[i].sampling_rate <= 2 * st.resolution);  // margin-factor bound
          CHECK(specs[i].half_width >= 0);
        }
      }
    }
  }
}

TEST_CASE("pure function: identical inputs give identical outputs") {
  auto a = compute_layer_specs(64, 21);
  auto b = compute_layer_specs(64, 21);
  CHECK(a == b);
}

TEST_CASE("layerspec input validation") {
  CHECK_THROWS(compute_layer_specs(16, 1));
  CHECK_THROWS(compute_layer_specs(17, 11));
  CHECK_THROWS(compute_layer_specs(8, 11));
  CHECK_THROWS(build_growth_schedule(64, 16));
  CHECK_THROWS(build_growth_schedule(16, 2048));
}
