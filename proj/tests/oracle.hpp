// Copyright 2026 statetune authors. Apache 2.0 License.
//
// Scalar reference implementations used as test oracles. Everything here is
// written as plain index loops over std::vector<double>, independent of the
// Eigen-backed implementation paths it checks.

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Grid = std::vector<std::vector<double>>;
using Row = std::vector<double>;

inline Grid from_eigen(const Eigen::MatrixXd& m) {
  Grid g(static_cast<std::size_t>(m.rows()),
         Row(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  return g;
}

inline Row from_eigen(const Eigen::VectorXd& v) {
  Row r(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i)
    r[static_cast<std::size_t>(i)] = v(i);
  return r;
}

inline Row matvec(const Grid& m, const Row& x) {
  Row y(m.size(), 0.0);
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j) y[i] += m[i][j] * x[j];
  return y;
}

// T_{lj} = delta_lj * w_j - k_l * a_j * k_j
inline Grid transition(const Row& w, const Row& k, const Row& a) {
  const std::size_t n = w.size();
  Grid t(n, Row(n, 0.0));
  for (std::size_t l = 0; l < n; ++l) {
    for (std::size_t j = 0; j < n; ++j) {
      t[l][j] = (l == j ? w[j] : 0.0) - k[l] * a[j] * k[j];
    }
  }
  return t;
}

// S_{ij} = sum_l S_prev_{il} T_{lj} + v_i k_j, evaluated entrywise.
inline Grid state_step(const Grid& s_prev, const Row& w, const Row& k,
                       const Row& a, const Row& v) {
  const std::size_t n = s_prev.size();
  const Grid t = transition(w, k, a);
  Grid s(n, Row(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < n; ++l) acc += s_prev[i][l] * t[l][j];
      s[i][j] = acc + v[i] * k[j];
    }
  }
  return s;
}

inline Row readout(const Grid& s, const Row& r) {
  Row y(s.size(), 0.0);
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < r.size(); ++j) y[i] += s[i][j] * r[j];
  return y;
}

inline double gaussian_kernel(const Row& u, const Row& v, double gamma) {
  double d2 = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u[i] - v[i];
    d2 += d * d;
  }
  return std::exp(-gamma * d2);
}

inline Row log_softmax(const Row& logits) {
  double mx = logits[0];
  for (double x : logits) mx = std::max(mx, x);
  double z = 0.0;
  for (double x : logits) z += std::exp(x - mx);
  const double lse = mx + std::log(z);
  Row out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

inline double max_abs_diff(const Grid& a, const Grid& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j)
      m = std::max(m, std::abs(a[i][j] - b[i][j]));
  return m;
}

inline double max_abs_diff(const Row& a, const Row& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Grid& a, const Eigen::MatrixXd& b) {
  return max_abs_diff(a, from_eigen(b));
}

inline double max_abs_diff(const Row& a, const Eigen::VectorXd& b) {
  return max_abs_diff(a, from_eigen(b));
}

}  // namespace oracle
