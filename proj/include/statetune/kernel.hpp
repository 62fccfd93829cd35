// Copyright 2026 statetune authors. Apache 2.0 License.
//
// Kernel lifting of per-step vectors: each N-vector x is replaced by its
// Gaussian-kernel evaluations against M fixed support vectors,
//
//   phi(x) = (K(x,u_1), ..., K(x,u_M)),  K(u,v) = exp(-gamma ||u-v||^2),
//
// and the recurrence runs with an M x M state. Readouts are projected back
// to N dimensions by a fixed matrix Q. Supports and Q are generated once and
// digest-checked for the lifetime of an experiment.
//
// Lifted vectors are used raw: phi(k) is not re-normalized and phi(w) is not
// re-squashed, so unlike the base recurrence the lifted transition can be
// expansive. Small gamma keeps every feature close to 1 and the erasure term
// then has a rank-one eigenvalue near phi(a).(phi(k) o phi(k)) ~ M, which
// blows the state up within a few steps; the state norm ceiling turns that
// into a loud error. Training configurations calibrate gamma (and the
// support selection) so the transition stays contractive; see the tuning
// presets.
//
// Note there is no choice of M = N supports that reduces the lifted
// recurrence to the base one: kernel features are a genuinely different
// parameterization (all-positive, distance-based), so no "reduction to
// base" equivalence holds or should be tested for.

#pragma once

#include "statetune/recurrence.hpp"

#include <limits>

namespace statetune {

enum class SupportSelection { kRandomGaussian, kDataCentroids };

inline const char* to_string(SupportSelection s) {
  return s == SupportSelection::kRandomGaussian ? "random-gaussian"
                                                : "data-centroids";
}

inline SupportSelection support_selection_from_string(const std::string& s) {
  if (s == "random-gaussian") return SupportSelection::kRandomGaussian;
  if (s == "data-centroids") return SupportSelection::kDataCentroids;
  throw ConfigError("unknown support selection '" + s + "'");
}

struct KernelConfig {
  int m = 32;
  double gamma = 1.0 / 16.0;  // 1/(2N) at the default N = 8
  SupportSelection selection = SupportSelection::kRandomGaussian;
  std::uint64_t seed = 0;

  void validate(int n) const {
    if (m <= n) {
      throw ConfigError("KernelConfig: M (" + std::to_string(m) +
                        ") must exceed N (" + std::to_string(n) + ")");
    }
    if (!(gamma > 0.0)) {
      throw ConfigError("KernelConfig: gamma must be positive");
    }
  }
};

// Bandwidth suggested for head dimension n (used by default configs).
inline double default_gamma(int n) { return 1.0 / (2.0 * n); }

// Large-run preset: gamma 0.1 with a 512-dimensional lifted state.
inline constexpr double kGammaLargePreset = 0.1;
inline constexpr int kLiftedDimLargePreset = 512;

inline double gaussian_kernel(const Vec& u, const Vec& v, double gamma) {
  require_same_size(u, v, "gaussian_kernel");
  if (!(gamma > 0.0)) {
    throw ConfigError("gaussian_kernel: gamma must be positive");
  }
  return std::exp(-gamma * (u - v).squaredNorm());
}

struct SupportSet {
  Mat vectors;  // M x N, one support per row
  std::uint64_t digest = 0;

  int count() const { return static_cast<int>(vectors.rows()); }
  int dim() const { return static_cast<int>(vectors.cols()); }

  std::uint64_t compute_digest() const { return digest_f32(vectors); }
  void verify_digest() const {
    if (compute_digest() != digest) {
      throw FormatError("SupportSet: content digest mismatch");
    }
  }
};

struct ProjectionQ {
  Mat q;  // N x M
  std::uint64_t digest = 0;

  static ProjectionQ generate(int n, int m, std::uint64_t seed) {
    ProjectionQ p;
    Rng rng(derive_seed(seed, "kernel-q"));
    p.q = rng.normal_mat(n, m, 1.0 / std::sqrt(static_cast<double>(m)));
    p.digest = digest_f32(p.q);
    return p;
  }

  std::uint64_t compute_digest() const { return digest_f32(q); }
  void verify_digest() const {
    if (compute_digest() != digest) {
      throw FormatError("ProjectionQ: content digest mismatch");
    }
  }
};

// ---------------------------------------------------------------------------
// Support selection.

namespace detail {

// Lloyd's iterations, pinned: seeded farthest-point initialization, 25
// iterations, empty clusters re-seeded to the point farthest from its
// assigned centroid. Ties break to the lowest index.
inline Mat kmeans_centroids(const Mat& sample, int m, Rng& rng) {
  const Eigen::Index n_pts = sample.rows();
  const Eigen::Index dim = sample.cols();

  std::vector<Eigen::Index> centers;
  centers.push_back(static_cast<Eigen::Index>(
      rng.below(static_cast<std::uint64_t>(n_pts))));
  std::vector<double> min_d2(static_cast<std::size_t>(n_pts),
                             std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < m) {
    const Eigen::Index last = centers.back();
    Eigen::Index far_idx = 0;
    double far_d2 = -1.0;
    for (Eigen::Index i = 0; i < n_pts; ++i) {
      const double d2 = (sample.row(i) - sample.row(last)).squaredNorm();
      auto& slot = min_d2[static_cast<std::size_t>(i)];
      slot = std::min(slot, d2);
      if (slot > far_d2) {
        far_d2 = slot;
        far_idx = i;
      }
    }
    centers.push_back(far_idx);
  }

  Mat centroids(m, dim);
  for (int c = 0; c < m; ++c) {
    centroids.row(c) = sample.row(centers[static_cast<std::size_t>(c)]);
  }

  std::vector<int> assign(static_cast<std::size_t>(n_pts), 0);
  for (int iter = 0; iter < 25; ++iter) {
    // Assignment.
    for (Eigen::Index i = 0; i < n_pts; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int best_c = 0;
      for (int c = 0; c < m; ++c) {
        const double d2 = (sample.row(i) - centroids.row(c)).squaredNorm();
        if (d2 < best) {
          best = d2;
          best_c = c;
        }
      }
      assign[static_cast<std::size_t>(i)] = best_c;
    }
    // Update.
    Mat sums = Mat::Zero(m, dim);
    std::vector<int> counts(static_cast<std::size_t>(m), 0);
    for (Eigen::Index i = 0; i < n_pts; ++i) {
      const int c = assign[static_cast<std::size_t>(i)];
      sums.row(c) += sample.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < m; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centroids.row(c) =
            sums.row(c) / counts[static_cast<std::size_t>(c)];
      } else {
        // Re-seed to the point farthest from its assigned centroid.
        Eigen::Index far_idx = 0;
        double far_d2 = -1.0;
        for (Eigen::Index i = 0; i < n_pts; ++i) {
          const int ci = assign[static_cast<std::size_t>(i)];
          const double d2 =
              (sample.row(i) - centroids.row(ci)).squaredNorm();
          if (d2 > far_d2) {
            far_d2 = d2;
            far_idx = i;
          }
        }
        centroids.row(c) = sample.row(far_idx);
      }
    }
  }
  return centroids;
}

}  // namespace detail

// sample: optional rows of N-vectors (required for data-centroids).
inline SupportSet select_supports(SupportSelection method, const Mat* sample,
                                  int m, int n, std::uint64_t seed) {
  SupportSet s;
  Rng rng(derive_seed(seed, "kernel-supports"));
  switch (method) {
    case SupportSelection::kRandomGaussian:
      s.vectors = rng.normal_mat(m, n, 1.0 / std::sqrt(static_cast<double>(n)));
      break;
    case SupportSelection::kDataCentroids: {
      if (sample == nullptr) {
        throw InputError("select_supports: data-centroids needs a sample");
      }
      if (sample->rows() < m) {
        throw InputError("select_supports: sample size " +
                         std::to_string(sample->rows()) +
                         " is below M = " + std::to_string(m));
      }
      if (sample->cols() != n) {
        throw ShapeError("select_supports: sample dim " +
                         std::to_string(sample->cols()) + " != N " +
                         std::to_string(n));
      }
      s.vectors = detail::kmeans_centroids(*sample, m, rng);
      break;
    }
  }
  require_finite(s.vectors, "select_supports");
  s.digest = s.compute_digest();
  return s;
}

// ---------------------------------------------------------------------------
// Lifting.

// Kernel features of the five bundle vectors; entries in (0, 1].
struct LiftedBundle {
  Vec w;
  Vec k;
  Vec a;
  Vec v;
  Vec r;
};

inline Vec lift_vector(const Vec& x, const SupportSet& supports,
                       double gamma) {
  const int m = supports.count();
  Vec phi(m);
  for (int i = 0; i < m; ++i) {
    phi(i) = gaussian_kernel(x, supports.vectors.row(i).transpose(), gamma);
  }
  return phi;
}

inline LiftedBundle lift(const ProjectionBundle& p, const SupportSet& supports,
                         double gamma) {
  if (p.w.size() != supports.dim()) {
    throw ShapeError("lift: bundle dim " + std::to_string(p.w.size()) +
                     " vs support dim " + std::to_string(supports.dim()));
  }
  LiftedBundle lb;
  lb.w = lift_vector(p.w, supports, gamma);
  lb.k = lift_vector(p.k, supports, gamma);
  lb.a = lift_vector(p.a, supports, gamma);
  lb.v = lift_vector(p.v, supports, gamma);
  lb.r = lift_vector(p.r, supports, gamma);
  return lb;
}

// Same algebra as the base step with (phi_w, phi_k, phi_a, phi_v) in place
// of (w, k, a, v). No invariant squashing on purpose; overflow surfaces as
// OverflowError from the shared update.
inline Mat lifted_state_step(const Mat& s_prev, const LiftedBundle& lb,
                             const RecurrenceConfig& cfg = {}) {
  return apply_state_update(s_prev, transition_matrix(lb.w, lb.k, lb.a), lb.v,
                            lb.k, cfg);
}

// y = S phi_r (contraction over the second index, like the base readout),
// then projected back to N dimensions by Q.
inline Vec lifted_readout(const Mat& s, const Vec& phi_r,
                          const ProjectionQ& q) {
  if (s.cols() != phi_r.size() || q.q.cols() != s.rows()) {
    throw ShapeError("lifted_readout: dimension mismatch");
  }
  return q.q * (s * phi_r);
}

// Everything fixed that the lifted recurrence needs.
struct LiftContext {
  KernelConfig config;
  SupportSet supports;
  ProjectionQ q;

  void verify_digests() const {
    supports.verify_digest();
    q.verify_digest();
  }
};

}  // namespace statetune
