// Copyright 2026 statetune authors. Apache 2.0 License.

#include "statetune/decorrelation.hpp"

#include "statetune/gradients.hpp"

#include "catch_amalgamated.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace statetune;

namespace {

LiftedBundle random_lifted(int m, Rng& rng) {
  LiftedBundle lb;
  lb.w = rng.normal_vec(m);
  lb.k = rng.normal_vec(m);
  lb.a = rng.normal_vec(m);
  lb.v = rng.normal_vec(m);
  lb.r = rng.normal_vec(m);
  return lb;
}

// Fixed batch with unit per-coordinate second moments and zero cross
// moments: the two M=2 sign patterns (1,1) and (1,-1).
std::vector<Vec> hadamard_batch() {
  Vec a(2), b(2);
  a << 1.0, 1.0;
  b << 1.0, -1.0;
  return {a, b};
}

// x_i = sqrt(rho) z0 + sqrt(1-rho) z_i: unit variance, pairwise corr rho.
std::vector<Vec> correlated_batch(int m, int count, double rho, Rng& rng) {
  std::vector<Vec> batch;
  for (int b = 0; b < count; ++b) {
    const double shared = rng.normal();
    Vec x(m);
    for (int i = 0; i < m; ++i) {
      x(i) = std::sqrt(rho) * shared + std::sqrt(1.0 - rho) * rng.normal();
    }
    batch.push_back(x);
  }
  return batch;
}

}  // namespace

TEST_CASE("decorrelate with identity and scaled identity") {
  Rng rng(70);
  const auto lb = random_lifted(4, rng);

  const auto d1 = Decorrelator::identity(4);
  const auto same = decorrelate(d1, lb);
  CHECK((same.w - lb.w).cwiseAbs().maxCoeff() == 0.0);
  CHECK((same.r - lb.r).cwiseAbs().maxCoeff() == 0.0);

  auto d2 = Decorrelator::identity(4);
  d2.r *= 2.0;
  const auto doubled = decorrelate(d2, lb);
  CHECK((doubled.k - 2.0 * lb.k).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((doubled.v - 2.0 * lb.v).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("decorrelate matches scalar matvec oracle") {
  Rng rng(71);
  auto d = Decorrelator::identity(4);
  d.r = rng.normal_mat(4, 4);
  const auto lb = random_lifted(4, rng);
  const auto out = decorrelate(d, lb);
  const auto rg = oracle::from_eigen(d.r);
  CHECK(oracle::max_abs_diff(oracle::matvec(rg, oracle::from_eigen(lb.w)),
                             out.w) < 1e-12);
  CHECK(oracle::max_abs_diff(oracle::matvec(rg, oracle::from_eigen(lb.a)),
                             out.a) < 1e-12);

  Vec wrong(3);
  wrong.setZero();
  CHECK_THROWS_AS(decorrelate_vector(d, wrong), ShapeError);
}

TEST_CASE("decorr_loss hand values") {
  Vec pm(2);
  pm << 1.0, -1.0;
  CHECK(decorr_loss(pm, 0.5) == Catch::Approx(0.5).margin(1e-15));

  CHECK(decorr_loss(Vec::Zero(3), 0.5) == Catch::Approx(0.375).margin(1e-15));

  Vec one(1);
  one << -1.0;
  CHECK(decorr_loss(one, 0.5) == 0.0);

  CHECK_THROWS_AS(decorr_loss(pm, 1.5), ConfigError);
}

TEST_CASE("decorr_loss is nonnegative and zero only at the target stats") {
  Rng rng(72);
  for (int rep = 0; rep < 50; ++rep) {
    const Vec x = rng.normal_vec(2 + rep % 6);
    CHECK(decorr_loss(x, 0.3) >= 0.0);
  }
  // Unit second moments kill the variance term alone.
  Vec sign(4);
  sign << 1.0, -1.0, 1.0, 1.0;
  const double loss = decorr_loss(sign, 1.0);  // kappa = 1: variance only
  CHECK(loss == 0.0);
}

TEST_CASE("decorr_stats hand values and oracle") {
  Vec x(2);
  x << 1.0, 1.0;
  const auto s = decorr_stats(x);
  CHECK(s.corr(0, 0) == 0.0);
  CHECK(s.corr(1, 1) == 0.0);
  CHECK(s.corr(0, 1) == 1.0);
  CHECK(s.corr(1, 0) == 1.0);
  CHECK(s.var_diag(0) == 0.0);
  CHECK(s.var_diag(1) == 0.0);

  const auto z = decorr_stats(Vec::Zero(3));
  CHECK(z.corr.cwiseAbs().maxCoeff() == 0.0);
  CHECK((z.var_diag + Vec::Ones(3)).cwiseAbs().maxCoeff() == 0.0);

  Rng rng(73);
  const Vec y = rng.normal_vec(5);
  const auto sy = decorr_stats(y);
  for (int i = 0; i < 5; ++i) {
    CHECK(sy.var_diag(i) == Catch::Approx(y(i) * y(i) - 1.0).margin(1e-15));
    for (int j = 0; j < 5; ++j) {
      const double expect = i == j ? 0.0 : y(i) * y(j);
      CHECK(sy.corr(i, j) == Catch::Approx(expect).margin(1e-15));
    }
  }
}

TEST_CASE("decorr_loss gradient matches stats composition and FD") {
  Rng rng(74);
  const int m = 6;
  const Vec x = rng.normal_vec(m);
  const double kappa = 0.5;

  const Vec analytic = decorr_loss_grad(x, kappa);
  // Finite differences through a 1 x M view.
  Mat point(1, m);
  point.row(0) = x.transpose();
  Mat grad(1, m);
  grad.row(0) = analytic.transpose();
  const auto report = finite_diff_check(
      [&](const Mat& p) { return decorr_loss(p.row(0).transpose(), kappa); },
      point, grad, 1e-6);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("update_R is a no-op at the decorrelated fixed point") {
  auto d = Decorrelator::identity(2, 0.1, 0.5);
  const Mat before = d.r;
  update_R(d, hadamard_batch(), 1.0, 99);
  CHECK((d.r - before).cwiseAbs().maxCoeff() == 0.0);
  CHECK(d.steps == 1);
}

TEST_CASE("update_R hand example") {
  auto d = Decorrelator::identity(2, 0.1, 0.5);
  Vec x(2);
  x << 1.0, 1.0;
  update_R(d, {x}, 1.0, 0);
  CHECK(d.r(0, 0) == 1.0);
  CHECK(d.r(1, 1) == 1.0);
  CHECK(d.r(0, 1) == Catch::Approx(-0.05).margin(1e-15));
  CHECK(d.r(1, 0) == Catch::Approx(-0.05).margin(1e-15));
}

TEST_CASE("update_R input validation") {
  auto d = Decorrelator::identity(3);
  CHECK_THROWS_AS(update_R(d, {}, 0.1, 0), InputError);
  Vec x(3);
  x.setOnes();
  CHECK_THROWS_AS(update_R(d, {x}, 0.0, 0), ConfigError);
  Vec wrong(2);
  wrong.setOnes();
  CHECK_THROWS_AS(update_R(d, {wrong}, 1.0, 0), ShapeError);
}

TEST_CASE("update_R subsampling is seed-deterministic") {
  Rng rng(75);
  const auto batch = correlated_batch(6, 64, 0.8, rng);
  auto d1 = Decorrelator::identity(6, 0.01, 0.5);
  auto d2 = Decorrelator::identity(6, 0.01, 0.5);
  update_R(d1, batch, 0.1, 1234);
  update_R(d2, batch, 0.1, 1234);
  CHECK((d1.r - d2.r).cwiseAbs().maxCoeff() == 0.0);

  auto d3 = Decorrelator::identity(6, 0.01, 0.5);
  update_R(d3, batch, 0.1, 4321);
  CHECK((d1.r - d3.r).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("repeated update_R halves the decorrelation loss on correlated "
          "gaussians") {
  Rng rng(76);
  const int m = 8;
  const auto batch = correlated_batch(m, 256, 0.9, rng);
  auto d = Decorrelator::identity(m, 0.02, 0.5);

  const auto mean_loss = [&]() {
    double acc = 0.0;
    for (const auto& x : batch) {
      acc += decorr_loss(d.r * x, d.kappa);
    }
    return acc / static_cast<double>(batch.size());
  };

  const double initial = mean_loss();
  for (int iter = 0; iter < 200; ++iter) {
    std::vector<Vec> transformed;
    transformed.reserve(batch.size());
    for (const auto& x : batch) transformed.push_back(d.r * x);
    update_R(d, transformed, 0.1, derive_seed(500, std::to_string(iter)));
  }
  const double final = mean_loss();
  INFO("decorr loss " << initial << " -> " << final);
  CHECK(final < 0.5 * initial);
  CHECK(d.condition_estimate() < 1e6);
}
