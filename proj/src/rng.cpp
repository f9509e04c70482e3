#include "stylegrow/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace stylegrow {

uint64_t derive_seed(uint64_t root, const std::string& tag) {
  // splitmix64 over root mixed with a FNV-1a hash of the tag
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ull;
  }
  uint64_t x = root ^ h;
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  std::uniform_int_distribution<int64_t> d(lo, hi);
  return d(gen_);
}

Tensor Rng::normal_tensor(Shape shape, double stddev) {
  Tensor t(std::move(shape));
  double* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = normal() * stddev;
  return t;
}

Tensor Rng::uniform_tensor(Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  double* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = uniform(lo, hi);
  return t;
}

std::vector<int64_t> Rng::permutation(int64_t n) {
  std::vector<int64_t> p(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
  for (int64_t i = n - 1; i > 0; --i) {
    int64_t j = uniform_int(0, i);
    std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
  }
  return p;
}

int64_t Rng::multinomial(const std::vector<double>& weights) {
  double total = 0;
  for (double w : weights) {
    if (w < 0) throw std::invalid_argument("multinomial: negative weight");
    total += w;
  }
  if (total <= 0) throw std::invalid_argument("multinomial: all-zero weights");
  double r = uniform() * total;
  double acc = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (r < acc) return static_cast<int64_t>(i);
  }
  return static_cast<int64_t>(weights.size()) - 1;
}

std::string Rng::state_string() const {
  std::ostringstream os;
  os << gen_;
  return os.str();
}

void Rng::set_state_string(const std::string& s) {
  std::istringstream is(s);
  is >> gen_;
  if (!is) throw std::invalid_argument("Rng: bad state string");
  normal_.reset();
  uniform_.reset();
}

}  // namespace stylegrow
