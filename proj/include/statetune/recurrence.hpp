// Copyright 2026 statetune authors. Apache 2.0 License.
//
// Matrix-valued state recurrence and readout.
//
// Convention, used everywhere in this library: per-step vectors are rows,
// outer(v, k)_{ij} = v_i * k_j, and the readout contracts the state over its
// second index:
//
//   T_t  = diag(w_t) - k_t^T (a_t o k_t)      (o = elementwise product)
//   S_t  = S_{t-1} T_t + v_t^T k_t
//   y_i  = sum_j S_{ij} r_j
//
// With w in (0,1), a in [0,1] and ||k|| = 1 the transition has spectral
// radius <= 1, so a rollout from a bounded state stays bounded. The Frobenius
// norm of the state is still checked against a configurable ceiling after
// every update; a breach is an error, never a silent clamp.

#pragma once

#include "statetune/frozen.hpp"

#include <optional>
#include <vector>

namespace statetune {

// Per-head, per-step projection vectors. w is decay, k the (unit) key, a the
// erasure gate, v the value, r the receptance.
struct ProjectionBundle {
  Vec w;
  Vec k;
  Vec a;
  Vec v;
  Vec r;

  void validate() const {
    const Eigen::Index n = w.size();
    if (k.size() != n || a.size() != n || v.size() != n || r.size() != n) {
      throw ShapeError("ProjectionBundle: vector lengths disagree");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!(w(i) > 0.0 && w(i) < 1.0)) {
        throw InputError("ProjectionBundle: w out of (0,1)");
      }
      if (!(a(i) >= 0.0 && a(i) <= 1.0)) {
        throw InputError("ProjectionBundle: a out of [0,1]");
      }
    }
    if (std::abs(k.norm() - 1.0) > 1e-6) {
      throw InputError("ProjectionBundle: k not unit-norm");
    }
  }
};

struct RecurrenceConfig {
  double norm_ceiling = 1e4;  // Frobenius ceiling on any state matrix
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Projections of one token, one bundle per head. The squash maps live here:
// logistic for w and a (with the frozen stack's biases), L2 normalization
// for k; v and r are used raw.
inline std::vector<ProjectionBundle> derive_projections(
    const FrozenWeights& weights, int token) {
  const ModelDims& d = weights.dims;
  if (token < 0 || token >= d.vocab_size) {
    throw InputError("derive_projections: token " + std::to_string(token) +
                     " out of range [0," + std::to_string(d.vocab_size) + ")");
  }
  const Vec e = weights.embedding.row(token).transpose();
  const Vec raw_w = weights.proj_w * e;
  const Vec raw_k = weights.proj_k * e;
  const Vec raw_a = weights.proj_a * e;
  const Vec raw_v = weights.proj_v * e;
  const Vec raw_r = weights.proj_r * e;

  const int n = d.head_dim;
  std::vector<ProjectionBundle> heads(static_cast<std::size_t>(d.num_heads));
  for (int h = 0; h < d.num_heads; ++h) {
    ProjectionBundle& b = heads[static_cast<std::size_t>(h)];
    const int off = h * n;
    b.w = raw_w.segment(off, n).unaryExpr(
        [&](double x) { return logistic(x + weights.w_bias); });
    b.a = raw_a.segment(off, n).unaryExpr(
        [&](double x) { return logistic(x + weights.a_bias); });
    Vec k = raw_k.segment(off, n);
    const double norm = k.norm();
    if (norm < 1e-12) {
      throw NumericalError("derive_projections: key projection is ~zero, "
                           "cannot normalize");
    }
    b.k = k / norm;
    b.v = raw_v.segment(off, n);
    b.r = raw_r.segment(off, n);
  }
  return heads;
}

// T = diag(w) - k^T (a o k); entry (i,j) = delta_ij w_j - k_i a_j k_j.
inline Mat transition_matrix(const Vec& w, const Vec& k, const Vec& a) {
  require_same_size(w, k, "transition_matrix");
  require_same_size(w, a, "transition_matrix");
  Mat t = Mat(w.asDiagonal());
  t.noalias() -= k * a.cwiseProduct(k).transpose();
  return t;
}

inline Mat transition_matrix(const ProjectionBundle& p) {
  return transition_matrix(p.w, p.k, p.a);
}

// Shared by the base and lifted recurrences: S <- S*T + outer(v, k), with
// finiteness and ceiling enforcement.
inline Mat apply_state_update(const Mat& s_prev, const Mat& transition,
                              const Vec& v, const Vec& k,
                              const RecurrenceConfig& cfg = {}) {
  if (s_prev.rows() != s_prev.cols()) {
    throw ShapeError("state_step: state must be square");
  }
  if (s_prev.cols() != transition.rows() || v.size() != s_prev.rows() ||
      k.size() != s_prev.cols()) {
    throw ShapeError("state_step: dimension mismatch between state (" +
                     std::to_string(s_prev.rows()) + ") and inputs");
  }
  Mat s = s_prev * transition;
  s.noalias() += v * k.transpose();
#ifndef NDEBUG
  require_finite(s, "state_step");
#endif
  const double norm = s.norm();
  if (!std::isfinite(norm) || norm > cfg.norm_ceiling) {
    throw OverflowError("state_step: state Frobenius norm " +
                        std::to_string(norm) + " exceeds ceiling " +
                        std::to_string(cfg.norm_ceiling));
  }
  return s;
}

inline Mat state_step(const Mat& s_prev, const ProjectionBundle& p,
                      const RecurrenceConfig& cfg = {}) {
  p.validate();
  return apply_state_update(s_prev, transition_matrix(p), p.v, p.k, cfg);
}

// y_i = sum_j S_{ij} r_j.
inline Vec readout(const Mat& s, const Vec& r) {
  if (s.cols() != r.size()) {
    throw ShapeError("readout: state cols " + std::to_string(s.cols()) +
                     " vs receptance length " + std::to_string(r.size()));
  }
  return s * r;
}

// ---------------------------------------------------------------------------
// Rollout bookkeeping.

// What the backward pass needs from one head-step. state_after is also what
// test-time refinement perturbs.
struct StepRecord {
  Mat transition;
  Vec receptance;
  Mat state_after;
};

// Per-head, per-step records; heads[h][t]. Dimension-agnostic: the lifted
// recurrence fills the same structure with M x M objects.
struct StateTrace {
  std::vector<std::vector<StepRecord>> heads;

  std::size_t length() const { return heads.empty() ? 0 : heads[0].size(); }
};

struct RolloutResult {
  std::vector<Vec> logits;        // one vocab-sized vector per step
  std::vector<Mat> final_states;  // one per head
  std::optional<StateTrace> trace;
};

inline std::vector<Mat> zero_states(int num_heads, int dim) {
  return std::vector<Mat>(static_cast<std::size_t>(num_heads),
                          Mat::Zero(dim, dim));
}

// Teacher-forced rollout over a token sequence. Heads evolve independently;
// their readouts are concatenated and pushed through the output head.
inline RolloutResult rollout(const FrozenWeights& weights,
                             const std::vector<Mat>& initial_states,
                             const std::vector<int>& tokens,
                             bool record_trace = false,
                             const RecurrenceConfig& cfg = {}) {
  const ModelDims& d = weights.dims;
  if (tokens.empty()) {
    throw InputError("rollout: empty token sequence");
  }
  if (initial_states.size() != static_cast<std::size_t>(d.num_heads)) {
    throw ShapeError("rollout: expected " + std::to_string(d.num_heads) +
                     " head states, got " +
                     std::to_string(initial_states.size()));
  }

  RolloutResult out;
  out.final_states = initial_states;
  out.logits.reserve(tokens.size());
  if (record_trace) {
    out.trace.emplace();
    out.trace->heads.resize(static_cast<std::size_t>(d.num_heads));
  }

  Vec ycat(d.embed_dim);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    std::vector<ProjectionBundle> heads;
    try {
      heads = derive_projections(weights, tokens[t]);
      for (int h = 0; h < d.num_heads; ++h) {
        const auto hi = static_cast<std::size_t>(h);
        const ProjectionBundle& p = heads[hi];
        Mat trans = transition_matrix(p);
        out.final_states[hi] =
            apply_state_update(out.final_states[hi], trans, p.v, p.k, cfg);
        ycat.segment(h * d.head_dim, d.head_dim) =
            readout(out.final_states[hi], p.r);
        if (record_trace) {
          out.trace->heads[hi].push_back(
              StepRecord{std::move(trans), p.r, out.final_states[hi]});
        }
      }
    } catch (const OverflowError& e) {
      throw OverflowError(std::string(e.what()) + " (at timestep " +
                          std::to_string(t) + ")");
    } catch (const InputError& e) {
      throw InputError(std::string(e.what()) + " (at timestep " +
                       std::to_string(t) + ")");
    }
    out.logits.push_back(weights.output_head.transpose() * ycat);
  }
  return out;
}

}  // namespace statetune
