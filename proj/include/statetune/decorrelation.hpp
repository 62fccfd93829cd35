// Copyright 2026 statetune authors. Apache 2.0 License.
//
// Decorrelated backpropagation for lifted bundles. A square matrix R, shared
// by all heads, transforms every kernel feature vector (x = R phi); R itself
// is trained by the closed-form local rule
//
//   R <- R - eps < (1-kappa) C + kappa V > R
//   C = x x^T - diag(x o x),   V = diag(x o x - 1)
//
// with <.> averaged over a seeded subsample of the batch of transformed
// vectors. The task loss never flows into R; conversely the decorrelation
// loss does not depend on the state, so the state receives only the task
// gradient.

#pragma once

#include "statetune/kernel.hpp"

#include <Eigen/SVD>

#include <vector>

namespace statetune {

struct Decorrelator {
  Mat r;
  double epsilon = 1e-4;
  double kappa = 0.5;
  long long steps = 0;

  static Decorrelator identity(int m, double epsilon = 1e-4,
                               double kappa = 0.5) {
    if (kappa < 0.0 || kappa > 1.0) {
      throw ConfigError("Decorrelator: kappa must be in [0,1]");
    }
    if (!(epsilon > 0.0)) {
      throw ConfigError("Decorrelator: epsilon must be positive");
    }
    Decorrelator d;
    d.r = Mat::Identity(m, m);
    d.epsilon = epsilon;
    d.kappa = kappa;
    return d;
  }

  int dim() const { return static_cast<int>(r.rows()); }

  // 2-norm condition number; the tuning loop raises an alarm above 1e6.
  double condition_estimate() const {
    const Eigen::JacobiSVD<Mat> svd(r);
    const double smin = svd.singularValues().minCoeff();
    if (smin <= 0.0) return std::numeric_limits<double>::infinity();
    return svd.singularValues().maxCoeff() / smin;
  }
};

inline Vec decorrelate_vector(const Decorrelator& d, const Vec& x) {
  if (d.r.cols() != x.size()) {
    throw ShapeError("decorrelate: R dim " + std::to_string(d.r.cols()) +
                     " vs vector length " + std::to_string(x.size()));
  }
  return d.r * x;
}

// All five feature vectors are transformed; w/k/a/v feed the state update,
// r is used at readout time.
inline LiftedBundle decorrelate(const Decorrelator& d, const LiftedBundle& lb) {
  LiftedBundle out;
  out.w = decorrelate_vector(d, lb.w);
  out.k = decorrelate_vector(d, lb.k);
  out.a = decorrelate_vector(d, lb.a);
  out.v = decorrelate_vector(d, lb.v);
  out.r = decorrelate_vector(d, lb.r);
  return out;
}

// L = (1-kappa) * 1/2 * sum_{i != j} (x_i x_j)^2
//   + kappa     * 1/4 * sum_i (x_i^2 - 1)^2
inline double decorr_loss(const Vec& x, double kappa) {
  if (kappa < 0.0 || kappa > 1.0) {
    throw ConfigError("decorr_loss: kappa must be in [0,1]");
  }
  const Eigen::Index m = x.size();
  double off = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i == j) continue;
      const double p = x(i) * x(j);
      off += p * p;
    }
  }
  double var = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double d = x(i) * x(i) - 1.0;
    var += d * d;
  }
  return (1.0 - kappa) * 0.5 * off + kappa * 0.25 * var;
}

struct DecorrStats {
  Mat corr;      // x x^T with an exactly zero diagonal
  Vec var_diag;  // x o x - 1 (the diagonal of V)
};

inline DecorrStats decorr_stats(const Vec& x) {
  require_finite(x, "decorr_stats");
  DecorrStats s;
  s.corr = x * x.transpose();
  s.corr.diagonal().setZero();
  s.var_diag = x.cwiseProduct(x).array() - 1.0;
  return s;
}

// Gradient of decorr_loss w.r.t. x: 2(1-kappa) C x + kappa V x. The stats
// matrices carry the loss's structure up to these constant factors.
inline Vec decorr_loss_grad(const Vec& x, double kappa) {
  const DecorrStats s = decorr_stats(x);
  return 2.0 * (1.0 - kappa) * (s.corr * x) +
         kappa * s.var_diag.cwiseProduct(x);
}

// One local update of R from a batch of already-decorrelated vectors.
// A seeded uniform subsample of ceil(frac * batch), floor 1, is averaged.
inline void update_R(Decorrelator& d, const std::vector<Vec>& batch,
                     double subsample_frac, std::uint64_t subsample_seed) {
  if (batch.empty()) {
    throw InputError("update_R: empty batch");
  }
  if (!(subsample_frac > 0.0) || subsample_frac > 1.0) {
    throw ConfigError("update_R: subsample_frac must be in (0,1]");
  }
  const int m = d.dim();
  const auto take = static_cast<std::size_t>(std::max(
      1.0, std::ceil(subsample_frac * static_cast<double>(batch.size()))));
  Rng rng(subsample_seed);
  const auto idx = rng.sample_indices(batch.size(), take);

  Mat avg = Mat::Zero(m, m);
  for (const auto i : idx) {
    const Vec& x = batch[i];
    if (x.size() != m) {
      throw ShapeError("update_R: vector length " + std::to_string(x.size()) +
                       " vs R dim " + std::to_string(m));
    }
    const DecorrStats s = decorr_stats(x);
    avg += (1.0 - d.kappa) * s.corr;
    avg += (d.kappa * s.var_diag).asDiagonal();
  }
  avg /= static_cast<double>(idx.size());

  d.r -= d.epsilon * (avg * d.r);
  require_finite(d.r, "update_R");
  ++d.steps;
}

}  // namespace statetune
