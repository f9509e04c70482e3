#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stylegrow/tensor.hpp"

namespace stylegrow {

// Derive a stream seed from a root seed and a purpose tag, so independent
// consumers (init, data order, eval, ...) never share a stream.
uint64_t derive_seed(uint64_t root, const std::string& tag);

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  double normal() { return normal_(gen_); }
  double uniform() { return uniform_(gen_); }                   // [0,1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int64_t uniform_int(int64_t lo, int64_t hi);                  // inclusive

  Tensor normal_tensor(Shape shape, double stddev = 1.0);
  Tensor uniform_tensor(Shape shape, double lo, double hi);

  // Fisher-Yates permutation of 0..n-1.
  std::vector<int64_t> permutation(int64_t n);

  // Draw from an explicit discrete distribution (weights need not be normalized).
  int64_t multinomial(const std::vector<double>& weights);

  std::mt19937_64& engine() { return gen_; }

  std::string state_string() const;
  void set_state_string(const std::string& s);

 private:
  std::mt19937_64 gen_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace stylegrow
