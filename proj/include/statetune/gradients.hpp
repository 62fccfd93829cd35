// Copyright 2026 statetune authors. Apache 2.0 License.
//
// Reverse-mode differentiation through the recurrence, with respect to the
// state only. Everything else (frozen weights, supports, projection matrix)
// is fixed, so the backward pass is a single adjoint recursion over the
// stored transitions:
//
//   S_t = S_{t-1} T_t + O_t,   y_t = S_t r_t
//   G_t = outer(dL/dy_t, r_t)
//   A_{T-1} = G_{T-1};  A_{t} = A_{t+1} T_{t+1}^T + G_t;  dL/dS_0 = A_0 T_0^T
//
// (all indices 0-based over the trace). The recursion is shape-parametric:
// the lifted recurrence reuses it unchanged with M-dimensional records.

#pragma once

#include "statetune/recurrence.hpp"

#include <functional>

namespace statetune {

// Gradient of a scalar loss w.r.t. the state the trace started from, for one
// head. output_grads[t] is dL/dy_t where y_t is the pre-output-head readout
// of this head at step t (same dimension as the trace).
inline Mat backprop_state(const std::vector<StepRecord>& steps,
                          const std::vector<Vec>& output_grads) {
  if (steps.empty()) {
    throw ShapeError("backprop_state: empty trace");
  }
  if (steps.size() != output_grads.size()) {
    throw ShapeError("backprop_state: trace length " +
                     std::to_string(steps.size()) + " vs gradient length " +
                     std::to_string(output_grads.size()));
  }
  const std::size_t t_end = steps.size() - 1;
  Mat adjoint = output_grads[t_end] * steps[t_end].receptance.transpose();
  for (std::size_t t = t_end; t-- > 0;) {
    Mat next = adjoint * steps[t + 1].transition.transpose();
    next.noalias() += output_grads[t] * steps[t].receptance.transpose();
    adjoint = std::move(next);
  }
  return adjoint * steps[0].transition.transpose();
}

// Single-step gradient used by test-time refinement: d(y)/dS for y = S r
// contracted with dL/dy gives outer(dL/dy, r).
inline Mat grad_wrt_current_state(const Mat& s, const Vec& r,
                                  const Vec& dl_dy) {
  if (s.cols() != r.size() || s.rows() != dl_dy.size()) {
    throw ShapeError("grad_wrt_current_state: dimension mismatch");
  }
  return dl_dy * r.transpose();
}

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  Eigen::Index worst_row = 0;
  Eigen::Index worst_col = 0;
};

// Central finite differences of loss_fn against an analytic gradient.
// Relative error denominator: max(|analytic|, |numeric|, 1e-12).
inline FiniteDiffReport finite_diff_check(
    const std::function<double(const Mat&)>& loss_fn, const Mat& point,
    const Mat& analytic_grad, double step = 1e-5) {
  if (step <= 0.0) {
    throw InputError("finite_diff_check: step must be positive");
  }
  if (analytic_grad.rows() != point.rows() ||
      analytic_grad.cols() != point.cols()) {
    throw ShapeError("finite_diff_check: gradient shape mismatch");
  }
  FiniteDiffReport report;
  Mat probe = point;
  for (Eigen::Index i = 0; i < point.rows(); ++i) {
    for (Eigen::Index j = 0; j < point.cols(); ++j) {
      const double saved = probe(i, j);
      probe(i, j) = saved + step;
      const double up = loss_fn(probe);
      probe(i, j) = saved - step;
      const double down = loss_fn(probe);
      probe(i, j) = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericalError("finite_diff_check: non-finite loss at entry (" +
                             std::to_string(i) + "," + std::to_string(j) +
                             ")");
      }
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = analytic_grad(i, j);
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), 1e-12});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_row = i;
        report.worst_col = j;
      }
    }
  }
  return report;
}

}  // namespace statetune
