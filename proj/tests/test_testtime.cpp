// Copyright 2026 statetune authors. Apache 2.0 License.

#include "statetune/testtime.hpp"

#include "catch_amalgamated.hpp"
#include "oracle.hpp"

using namespace statetune;

namespace {

// Single head, large head dimension, tiny vocabulary: maximizes how far a
// state-gradient step at the pinned step size can move the logits relative
// to their spread, which is what per-token lock-on needs.
struct LockOnFixture {
  ModelDims dims{4, 64, 1, 64};
  FrozenWeights weights;
  std::vector<int> prompt;
  std::vector<int> teacher_seq;

  explicit LockOnFixture(std::uint64_t seed)
      : weights(FrozenWeights::generate(dims, seed, 0.0, 0.0)) {
    Rng inst(seed * 77 + 1);
    prompt = {inst.below_int(4)};
    for (int i = 0; i < 5; ++i) teacher_seq.push_back(inst.below_int(4));
  }
};

}  // namespace

TEST_CASE("reward is the teacher's log-probability plus terminal bonus") {
  CHECK(reward(Vec::Zero(64), 7) ==
        Catch::Approx(-std::log(64.0)).epsilon(1e-12));

  Vec onehot = Vec::Zero(16);
  onehot(3) = 200.0;
  CHECK(reward(onehot, 3) == Catch::Approx(0.0).margin(1e-12));

  Rng rng(101);
  const Vec logits = rng.normal_vec(16) * 2.0;
  const auto lsm = oracle::log_softmax(oracle::from_eigen(logits));
  for (int t = 0; t < 16; ++t) {
    CHECK(reward(logits, t) ==
          Catch::Approx(lsm[static_cast<std::size_t>(t)]).margin(1e-10));
  }
  CHECK(reward(logits, 5, true, 1.0) ==
        Catch::Approx(lsm[5] + 1.0).margin(1e-10));
  CHECK_THROWS_AS(reward(logits, 16), InputError);
}

TEST_CASE("scripted teacher confidence shapes its distribution") {
  // c = 2, vocab 8: P(truth) = e^2 / (e^2 + 7).
  auto teacher = scripted_teacher(1, {3}, 8, 2.0);
  const auto step = teacher->next({0});
  REQUIRE(step.has_value());
  CHECK(step->token == 3);
  CHECK(step->terminal);
  const Vec p = softmax(step->logits);
  CHECK(p(3) == Catch::Approx(std::exp(2.0) / (std::exp(2.0) + 7.0))
                    .epsilon(1e-12));
  CHECK(p(3) == Catch::Approx(0.5135).margin(5e-4));

  // c = 0: uniform teacher; the reward channel is constant in the token.
  auto uniform = scripted_teacher(1, {3}, 8, 0.0);
  const auto ustep = uniform->next({0});
  for (int t = 0; t < 8; ++t) {
    CHECK(reward(ustep->logits, t) ==
          Catch::Approx(-std::log(8.0)).epsilon(1e-12));
  }

  // c large: effectively one-hot.
  auto sharp = scripted_teacher(1, {3}, 8, 200.0);
  CHECK(softmax(sharp->next({0})->logits)(3) ==
        Catch::Approx(1.0).margin(1e-12));

  // Sequence end.
  CHECK(!teacher->next({0, 3}).has_value());
}

TEST_CASE("eta = 0 leaves the state untouched with constant diagnostics") {
  const auto weights = FrozenWeights::generate(ModelDims{64, 32, 4, 8}, 21);
  const BaseModel model(weights);
  auto states = model.zero_state();
  std::vector<Vec> recepts;
  AdvanceHooks hooks;
  hooks.recepts = &recepts;
  model.advance(states, 5, hooks);
  const auto before = states;

  TeacherStep step;
  step.token = 9;
  step.logits = Vec::Zero(64);
  step.logits(9) = 50.0;

  TestTimeConfig cfg;
  cfg.eta = 0.0;
  Rng rng(3);
  const auto diag = tune_state_step(model, states, recepts, step, cfg, rng);
  for (std::size_t h = 0; h < states.size(); ++h) {
    CHECK((states[h] - before[h]).cwiseAbs().maxCoeff() == 0.0);
  }
  REQUIRE(diag.objective.size() == 5);
  for (double obj : diag.objective) {
    CHECK(obj == diag.objective[0]);
  }
  CHECK(diag.teacher_prob_after == diag.teacher_prob_before);
}

TEST_CASE("single distill iteration matches the hand chain rule at N=2") {
  const ModelDims dims{2, 2, 1, 2};
  const auto weights = FrozenWeights::generate(dims, 31, 0.0, 0.0);
  const BaseModel model(weights);
  auto states = model.zero_state();
  std::vector<Vec> recepts;
  AdvanceHooks hooks;
  hooks.recepts = &recepts;
  model.advance(states, 1, hooks);
  const auto before = states;

  TeacherStep step;
  step.token = 0;
  step.logits = Vec::Zero(2);
  step.logits(0) = 50.0;

  TestTimeConfig cfg;
  cfg.iterations = 1;
  cfg.eta = 0.01;
  Rng rng(4);
  tune_state_step(model, states, recepts, step, cfg, rng);

  // Hand oracle: dObj/dlogits = onehot - softmax; dy = W_out dlogits;
  // S' = S + eta * outer(dy, r).
  const Vec logits = model.logits_from(before, recepts);
  const auto p = oracle::log_softmax(oracle::from_eigen(logits));
  oracle::Row dlogits{1.0 - std::exp(p[0]), -std::exp(p[1])};
  const auto wout = oracle::from_eigen(Mat(weights.output_head));
  oracle::Row dy{wout[0][0] * dlogits[0] + wout[0][1] * dlogits[1],
                 wout[1][0] * dlogits[0] + wout[1][1] * dlogits[1]};
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double expect =
          before[0](i, j) + 0.01 * dy[static_cast<std::size_t>(i)] *
                                recepts[0](j);
      CHECK(states[0](i, j) == Catch::Approx(expect).margin(1e-10));
    }
  }
}

TEST_CASE("distill ascent raises the teacher token's logit and probability") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto weights =
        FrozenWeights::generate(ModelDims{32, 32, 4, 8}, seed);
    const BaseModel model(weights);
    auto states = model.zero_state();
    std::vector<Vec> recepts;
    AdvanceHooks hooks;
    hooks.recepts = &recepts;
    Rng toks(seed);
    for (int t = 0; t < 4; ++t) {
      recepts.clear();
      model.advance(states, toks.below_int(32), hooks);
    }
    const int target = toks.below_int(32);
    const Vec logits_before = model.logits_from(states, recepts);

    TeacherStep step;
    step.token = target;
    step.logits = Vec::Zero(32);
    step.logits(target) = 50.0;
    TestTimeConfig cfg;
    Rng rng(seed);
    const auto diag =
        tune_state_step(model, states, recepts, step, cfg, rng);

    const Vec logits_after = model.logits_from(states, recepts);
    CHECK(logits_after(target) > logits_before(target));
    CHECK(diag.teacher_prob_after >= diag.teacher_prob_before);
    for (std::size_t i = 1; i < diag.objective.size(); ++i) {
      CHECK(diag.objective[i] >= diag.objective[i - 1] - 1e-12);
    }
  }
}

TEST_CASE("reinforce with a uniform teacher drifts nowhere after the "
          "baseline primes") {
  const ModelDims dims{2, 2, 1, 2};
  const auto weights = FrozenWeights::generate(dims, 41, 0.0, 0.0);
  const BaseModel model(weights);
  auto states = model.zero_state();
  std::vector<Vec> recepts;
  AdvanceHooks hooks;
  hooks.recepts = &recepts;
  model.advance(states, 0, hooks);

  TeacherStep step;
  step.token = 1;
  step.logits = Vec::Zero(2);  // uniform: constant reward channel

  TestTimeConfig cfg;
  cfg.mode = TestTimeMode::kReinforce;
  cfg.iterations = 5;
  Rng rng(5);
  RewardBaseline baseline;
  const auto before = states;
  tune_state_step(model, states, recepts, step, cfg, rng, &baseline);
  // First sample primes the baseline (advantage 0); every later advantage
  // is reward - mean = 0 exactly, so no iteration ever moves the state.
  for (std::size_t h = 0; h < states.size(); ++h) {
    CHECK((states[h] - before[h]).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("a non-finite objective aborts the inner loop with a flag") {
  const auto weights = FrozenWeights::generate(ModelDims{16, 16, 2, 8}, 42);
  const BaseModel model(weights);
  auto states = model.zero_state();
  states[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
  std::vector<Vec> recepts{Vec::Ones(8), Vec::Ones(8)};

  TeacherStep step;
  step.token = 1;
  step.logits = Vec::Zero(16);
  TestTimeConfig cfg;
  Rng rng(7);
  const auto diag = tune_state_step(model, states, recepts, step, cfg, rng);
  CHECK(diag.aborted_non_finite);
  CHECK(diag.objective.empty());
}

TEST_CASE("reinforce mode moves toward a confident teacher") {
  const auto weights = FrozenWeights::generate(ModelDims{16, 16, 2, 8}, 43);
  const BaseModel model(weights);
  auto states = model.zero_state();
  std::vector<Vec> recepts;
  AdvanceHooks hooks;
  hooks.recepts = &recepts;
  model.advance(states, 3, hooks);

  TeacherStep step;
  step.token = 7;
  step.logits = Vec::Zero(16);
  step.logits(7) = 6.0;
  step.terminal = true;

  TestTimeConfig cfg;
  cfg.mode = TestTimeMode::kReinforce;
  cfg.iterations = 50;
  cfg.eta = 0.05;
  Rng rng(6);
  RewardBaseline baseline;
  const auto diag =
      tune_state_step(model, states, recepts, step, cfg, rng, &baseline);
  CHECK(diag.teacher_prob_after > diag.teacher_prob_before);
}

TEST_CASE("guided generation locks onto a one-hot teacher under greedy "
          "decoding") {
  for (std::uint64_t seed : {2ull, 3ull, 5ull}) {
    LockOnFixture fx(seed);
    const BaseModel model(fx.weights);

    TestTimeConfig cfg;
    cfg.greedy = true;
    cfg.iterations = 5;
    cfg.eta = 0.01;
    cfg.max_length = 16;
    cfg.sampler_seed = seed;

    auto teacher = scripted_teacher(fx.prompt.size(), fx.teacher_seq, 4, 50.0);
    const auto tuned =
        guided_generate(model, model.zero_state(), fx.prompt, *teacher, cfg);
    CHECK(tuned.generated == fx.teacher_seq);

    // Causality: without the inner ascent the same decoding diverges from
    // the teacher sequence.
    TestTimeConfig off = cfg;
    off.eta = 0.0;
    auto teacher2 =
        scripted_teacher(fx.prompt.size(), fx.teacher_seq, 4, 50.0);
    const auto untuned =
        guided_generate(model, model.zero_state(), fx.prompt, *teacher2, off);
    CHECK(untuned.generated != fx.teacher_seq);
  }
}

TEST_CASE("guided generation is deterministic and respects max length") {
  const auto weights = FrozenWeights::generate(ModelDims{32, 32, 4, 8}, 51);
  const BaseModel model(weights);
  const std::vector<int> prompt{1, 2, 3};
  const std::vector<int> continuation{5, 6, 7, 8};

  TestTimeConfig cfg;
  cfg.sampler_seed = 77;
  auto t1 = scripted_teacher(prompt.size(), continuation, 32, 8.0);
  auto t2 = scripted_teacher(prompt.size(), continuation, 32, 8.0);
  const auto a =
      guided_generate(model, model.zero_state(), prompt, *t1, cfg);
  const auto b =
      guided_generate(model, model.zero_state(), prompt, *t2, cfg);
  CHECK(a.generated == b.generated);
  REQUIRE(a.tokens.size() == b.tokens.size());
  for (std::size_t i = 0; i < a.tokens.size(); ++i) {
    CHECK(a.tokens[i].inner.objective == b.tokens[i].inner.objective);
  }

  cfg.max_length = 0;
  auto t3 = scripted_teacher(prompt.size(), continuation, 32, 8.0);
  const auto empty =
      guided_generate(model, model.zero_state(), prompt, *t3, cfg);
  CHECK(empty.generated.empty());

  cfg.max_length = 2;
  auto t4 = scripted_teacher(prompt.size(), continuation, 32, 8.0);
  const auto capped =
      guided_generate(model, model.zero_state(), prompt, *t4, cfg);
  CHECK(capped.generated.size() == 2);
  CHECK(capped.hit_max_length);
}

TEST_CASE("guided generation validates prompt, vocab, and teacher state") {
  const auto weights = FrozenWeights::generate(ModelDims{32, 32, 4, 8}, 61);
  const BaseModel model(weights);
  TestTimeConfig cfg;

  auto teacher = scripted_teacher(1, {2}, 32, 5.0);
  CHECK_THROWS_AS(
      guided_generate(model, model.zero_state(), {}, *teacher, cfg),
      InputError);

  auto mismatched = scripted_teacher(1, {2}, 16, 5.0);
  CHECK_THROWS_AS(
      guided_generate(model, model.zero_state(), {1}, *mismatched, cfg),
      ConfigError);
}

TEST_CASE("guided generation leaves the frozen weights untouched") {
  const auto weights = FrozenWeights::generate(ModelDims{32, 32, 4, 8}, 71);
  const auto digest = weights.digest;
  const BaseModel model(weights);
  TestTimeConfig cfg;
  auto teacher = scripted_teacher(2, {4, 5, 6}, 32, 8.0);
  guided_generate(model, model.zero_state(), {1, 2}, *teacher, cfg);
  CHECK(weights.compute_digest() == digest);
}

TEST_CASE("lifted model supports test-time refinement too") {
  const auto weights =
      FrozenWeights::generate(ModelDims{32, 32, 4, 8}, 81, 0.0, 0.0);
  std::vector<Vec> rows;
  for (int token = 0; token < 32; ++token) {
    for (const auto& b : derive_projections(weights, token)) {
      rows.push_back(b.w);
      rows.push_back(b.k);
      rows.push_back(b.a);
      rows.push_back(b.v);
      rows.push_back(b.r);
    }
  }
  Mat sample(static_cast<Eigen::Index>(rows.size()), 8);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    sample.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  }
  LiftContext ctx;
  ctx.config = KernelConfig{16, 2.0, SupportSelection::kDataCentroids, 81};
  ctx.supports =
      select_supports(SupportSelection::kDataCentroids, &sample, 16, 8, 81);
  ctx.q = ProjectionQ::generate(8, 16, 81);
  const LiftedModel model(weights, ctx);

  TestTimeConfig cfg;
  cfg.sampler_seed = 5;
  auto teacher = scripted_teacher(2, {4, 5, 6}, 32, 8.0);
  const auto tr =
      guided_generate(model, model.zero_state(), {1, 2}, *teacher, cfg);
  CHECK(tr.generated.size() == 3);
  for (const auto& td : tr.tokens) {
    CHECK(!td.inner.aborted_non_finite);
  }
}
