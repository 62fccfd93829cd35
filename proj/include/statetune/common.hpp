// Copyright 2026 statetune authors. Apache 2.0 License.
//
// Shared aliases, error taxonomy, and content digests.
//
// All training and accumulation arithmetic is 64-bit; tensors are persisted
// as little-endian 32-bit floats (see checkpoint.hpp). Digests are FNV-1a 64
// over the serialized f32 payload so that every artifact (weights, supports,
// checkpoints, datasets) can be fingerprinted and re-verified cheaply.

#pragma once

#include <Eigen/Dense>

#include <bit>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace statetune {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

static_assert(std::endian::native == std::endian::little,
              "statetune persists raw little-endian f32 tensors and only "
              "supports little-endian hosts");

// ---------------------------------------------------------------------------
// Error taxonomy. Exit-code mapping lives in the CLI.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dimension disagreement between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Caller handed us something out of contract (token out of range,
// infeasible task spec, empty batch, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// State norm ceiling breached. Never silently clamped.
class OverflowError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Malformed persisted artifact (dataset, checkpoint, manifest).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Remote teacher answered with something that violates the wire contract.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Transient transport failure (timeout, connect error); retriable.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Inconsistent or invalid configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// FNV-1a 64-bit.

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t seed = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t seed = kFnvOffset) {
  return fnv1a64(s.data(), s.size(), seed);
}

// Digest of a tensor as it would be persisted: row-major little-endian f32.
inline std::uint64_t digest_f32(const Mat& m,
                                std::uint64_t seed = kFnvOffset) {
  std::uint64_t h = seed;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const float f = static_cast<float>(m(i, j));
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof(bits));
      h = fnv1a64(&bits, sizeof(bits), h);
    }
  }
  return h;
}

inline std::uint64_t digest_f32(const Vec& v,
                                std::uint64_t seed = kFnvOffset) {
  std::uint64_t h = seed;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const float f = static_cast<float>(v(i));
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof(bits));
    h = fnv1a64(&bits, sizeof(bits), h);
  }
  return h;
}

inline std::string hex64(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Finiteness helpers.

inline bool all_finite(const Mat& m) { return m.allFinite(); }
inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline void require_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) {
    throw NumericalError(std::string(what) + ": non-finite entries");
  }
}

inline void require_finite(const Vec& v, const char* what) {
  if (!v.allFinite()) {
    throw NumericalError(std::string(what) + ": non-finite entries");
  }
}

inline void require_same_size(const Vec& a, const Vec& b, const char* what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": length mismatch (" +
                     std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + ")");
  }
}

}  // namespace statetune
