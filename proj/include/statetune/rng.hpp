// Copyright 2026 statetune authors. Apache 2.0 License.
//
// Deterministic random source.
//
// std::mt19937_64 output is pinned by the standard, but the stdlib
// distribution adaptors are not, so uniform and normal variates are derived
// here with fixed algorithms (53-bit mantissa scaling, Box-Muller). Every
// stream a run needs is derived from the run seed plus a stream name, so two
// components never share or race on a generator.

#pragma once

#include "statetune/common.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace statetune {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Independent sub-seed for a named stream of a run.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) {
  return splitmix64(root ^ fnv1a64(stream.data(), stream.size()));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t u64() { return gen_(); }

  // Uniform on [0, 1).
  double uniform() {
    return std::ldexp(static_cast<double>(gen_() >> 11), -53);
  }

  // Uniform on (0, 1]; safe as a log argument.
  double uniform_pos() {
    return std::ldexp(static_cast<double>((gen_() >> 11) + 1), -53);
  }

  // Standard normal via Box-Muller (one variate per two draws; no cache, so
  // the stream position is a pure function of the call count).
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  // Uniform integer in [0, n); rejection sampled, bias-free.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw InputError("Rng::below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  int below_int(int n) { return static_cast<int>(below(static_cast<std::uint64_t>(n))); }

  // First k slots of a seeded Fisher-Yates shuffle of {0..n-1}.
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (k > n) k = n;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(below(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  Vec normal_vec(Eigen::Index n, double scale = 1.0) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal() * scale;
    return v;
  }

  Mat normal_mat(Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal() * scale;
    }
    return m;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace statetune
