// Copyright 2026 statetune authors. Apache 2.0 License.
//
// Adaptive-moment (Adam-style) update with bias correction, on matrices.
// Deterministic: no state beyond the two moment matrices and a step count.

#pragma once

#include "statetune/common.hpp"

namespace statetune {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  Mat m;  // first moment
  Mat v;  // second moment
  long long step = 0;

  static AdamMoments zeros(Eigen::Index rows, Eigen::Index cols) {
    return AdamMoments{Mat::Zero(rows, cols), Mat::Zero(rows, cols), 0};
  }
};

inline void adam_step(Mat& param, const Mat& grad, AdamMoments& state,
                      double lr, const AdamConfig& cfg = {}) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols() ||
      param.rows() != state.m.rows() || param.cols() != state.m.cols()) {
    throw ShapeError("adam_step: parameter/gradient/moment shape mismatch");
  }
  require_finite(grad, "adam_step gradient");

  ++state.step;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v +
            (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double c1 =
      1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 =
      1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const Mat m_hat = state.m / c1;
  const Mat v_hat = state.v / c2;
  param.array() -=
      lr * m_hat.array() / (v_hat.array().sqrt() + cfg.eps);
}

// Plain gradient descent; used by the full-batch descent checks where
// per-step monotonicity is asserted.
inline void sgd_step(Mat& param, const Mat& grad, double lr) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols()) {
    throw ShapeError("sgd_step: parameter/gradient shape mismatch");
  }
  require_finite(grad, "sgd_step gradient");
  param -= lr * grad;
}

}  // namespace statetune
