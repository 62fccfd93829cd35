// Copyright 2026 statetune authors. Apache 2.0 License.

#include "statetune/optimizer.hpp"

#include "statetune/rng.hpp"

#include "catch_amalgamated.hpp"

using namespace statetune;

TEST_CASE("adam: zero gradient leaves the parameter unchanged") {
  Rng rng(80);
  Mat p = rng.normal_mat(4, 4);
  const Mat before = p;
  auto st = AdamMoments::zeros(4, 4);
  for (int i = 0; i < 10; ++i) {
    adam_step(p, Mat::Zero(4, 4), st, 0.1);
  }
  CHECK((p - before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam: first step moves by ~lr * sign(grad)") {
  Mat p = Mat::Zero(2, 2);
  Mat g(2, 2);
  g << 3.0, -0.25, 1e-3, 7.0;
  auto st = AdamMoments::zeros(2, 2);
  const double lr = 0.05;
  adam_step(p, g, st, lr);
  // Bias-corrected first step: delta = lr * g / (|g| + eps) ~ lr * sign(g).
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double expect = -lr * g(i, j) / (std::abs(g(i, j)) + 1e-8);
      CHECK(p(i, j) == Catch::Approx(expect).margin(1e-12));
    }
  }
}

TEST_CASE("adam: deterministic across identical runs") {
  Rng rng1(81), rng2(81);
  Mat p1 = Mat::Zero(3, 3), p2 = Mat::Zero(3, 3);
  auto s1 = AdamMoments::zeros(3, 3), s2 = AdamMoments::zeros(3, 3);
  for (int i = 0; i < 100; ++i) {
    const Mat g1 = rng1.normal_mat(3, 3);
    const Mat g2 = rng2.normal_mat(3, 3);
    adam_step(p1, g1, s1, 0.01);
    adam_step(p2, g2, s2, 0.01);
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      REQUIRE(p1(i, j) == p2(i, j));
    }
  }
}

TEST_CASE("adam: converges on a quadratic") {
  Mat target(2, 2);
  target << 1.0, -2.0, 0.5, 3.0;
  Mat p = Mat::Zero(2, 2);
  auto st = AdamMoments::zeros(2, 2);
  for (int i = 0; i < 2000; ++i) {
    const Mat g = 2.0 * (p - target);
    adam_step(p, g, st, 0.01);
  }
  CHECK((p - target).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("adam: rejects malformed inputs") {
  Mat p = Mat::Zero(2, 2);
  auto st = AdamMoments::zeros(2, 2);
  CHECK_THROWS_AS(adam_step(p, Mat::Zero(3, 3), st, 0.1), ShapeError);
  Mat bad = Mat::Zero(2, 2);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(adam_step(p, bad, st, 0.1), NumericalError);
}

TEST_CASE("sgd step is exactly param - lr*grad") {
  Mat p(1, 2);
  p << 1.0, 2.0;
  Mat g(1, 2);
  g << 0.5, -1.0;
  sgd_step(p, g, 0.1);
  CHECK(p(0, 0) == Catch::Approx(0.95).margin(1e-15));
  CHECK(p(0, 1) == Catch::Approx(2.1).margin(1e-15));
}
