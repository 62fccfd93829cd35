// Copyright 2026 statetune authors. Apache 2.0 License.

#include "statetune/loss.hpp"

#include "statetune/gradients.hpp"
#include "statetune/rng.hpp"

#include "catch_amalgamated.hpp"
#include "oracle.hpp"

using namespace statetune;

TEST_CASE("task_loss on uniform logits is ln(vocab)") {
  const std::vector<Vec> logits(3, Vec::Zero(64));
  const std::vector<int> targets{5, 0, 63};
  const auto l = task_loss(logits, targets);
  CHECK(l.value == Catch::Approx(std::log(64.0)).epsilon(1e-12));
  CHECK(l.value == Catch::Approx(4.15888308).margin(1e-6));
}

TEST_CASE("task_loss vanishes on a huge-margin one-hot") {
  Vec v = Vec::Zero(16);
  v(9) = 200.0;
  const auto l = task_loss({v}, {9});
  CHECK(l.value < 1e-12);
  CHECK(l.value >= 0.0);
}

TEST_CASE("task_loss matches scalar oracle on random logits") {
  Rng rng(90);
  std::vector<Vec> logits;
  std::vector<int> targets;
  for (int t = 0; t < 5; ++t) {
    logits.push_back(rng.normal_vec(16) * 3.0);
    targets.push_back(rng.below_int(16));
  }
  const auto l = task_loss(logits, targets);

  double expect = 0.0;
  for (int t = 0; t < 5; ++t) {
    const auto lsm =
        oracle::log_softmax(oracle::from_eigen(logits[static_cast<std::size_t>(t)]));
    expect -= lsm[static_cast<std::size_t>(targets[static_cast<std::size_t>(t)])] / 5.0;
  }
  CHECK(l.value == Catch::Approx(expect).margin(1e-10));
}

TEST_CASE("task_loss gradient is (softmax - onehot)/count and FD-checks") {
  Rng rng(91);
  const int vocab = 12;
  const Vec base = rng.normal_vec(vocab);
  const int target = 7;

  const auto l = task_loss({base}, {target});
  REQUIRE(l.logit_grads.size() == 1);
  const Vec p = softmax(base);
  for (int j = 0; j < vocab; ++j) {
    const double expect = p(j) - (j == target ? 1.0 : 0.0);
    CHECK(l.logit_grads[0](j) == Catch::Approx(expect).margin(1e-12));
  }

  // FD through a 1 x vocab view.
  Mat point(1, vocab);
  point.row(0) = base.transpose();
  Mat grad(1, vocab);
  grad.row(0) = l.logit_grads[0].transpose();
  const auto report = finite_diff_check(
      [&](const Mat& x) {
        return task_loss({x.row(0).transpose()}, {target}).value;
      },
      point, grad, 1e-6);
  CHECK(report.max_rel_error < 1e-7);
}

TEST_CASE("task_loss input validation") {
  CHECK_THROWS_AS(task_loss({}, {}), InputError);
  CHECK_THROWS_AS(task_loss({Vec::Zero(4)}, {0, 1}), ShapeError);
  CHECK_THROWS_AS(task_loss({Vec::Zero(4)}, {4}), InputError);
}

TEST_CASE("softmax and log_softmax are consistent and stable") {
  Rng rng(92);
  const Vec logits = rng.normal_vec(10) * 50.0;  // large spread
  const Vec p = softmax(logits);
  const Vec lsm = log_softmax(logits);
  CHECK(p.sum() == Catch::Approx(1.0).margin(1e-12));
  for (int i = 0; i < 10; ++i) {
    CHECK(std::exp(lsm(i)) == Catch::Approx(p(i)).margin(1e-12));
  }

  // Shift invariance.
  const Vec shifted = logits.array() + 1000.0;
  CHECK((softmax(shifted) - p).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(softmax(logits, 0.0), ConfigError);
}
