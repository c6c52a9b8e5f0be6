// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace appo {

// Error categories; the CLI maps these onto exit codes (config=2, numeric=3, io=4).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles. All numeric state in this project is
/// double precision; shapes are fixed at construction.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Hash a seed with stream indices so parallel workers get independent,
/// reproducible substreams (rollout g of instance b at step s, etc.).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
                              std::uint64_t d = 0) {
  std::uint64_t s = a;
  std::uint64_t h = splitmix64(s);
  s ^= b + 0x9e3779b97f4a7c15ULL;
  h ^= splitmix64(s);
  s ^= c + 0xc2b2ae3d27d4eb4fULL;
  h ^= splitmix64(s);
  s ^= d + 0x165667b19e3779f9ULL;
  h ^= splitmix64(s);
  return h;
}

// mt19937_64 is fully specified by the standard, so sequences are identical on
// every platform; the uniform/normal transforms are spelled out here because
// std::*_distribution is implementation-defined.
class Prng {
 public:
  explicit Prng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Uniform integer in [0, n).
  int uniform_int(int n) { return static_cast<int>(gen_() % static_cast<std::uint64_t>(n)); }

 private:
  std::mt19937_64 gen_;
};

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace appo
