// Copyright 2026 statetune authors. Apache 2.0 License.
//
// Teacher-guided per-token state refinement during generation.
//
// The teacher's alignment reward log P_teacher(r_{t+1}) is constant in the
// student state, so the refinement objective couples the student's own
// distribution to the teacher. Two surrogates are provided:
//
//   distill    ascend log P_student(teacher token); deterministic, the
//              default reading of the reward's gradient chain.
//   reinforce  score-function ascent on R(candidate) * log P_student(cand)
//              for a sampled candidate, reward baselined by a running mean;
//              the terminal correctness bonus applies here only.
//
// Each generated token gets a fixed number of inner ascent steps on the
// current state with the receptance of the last consumed token held fixed;
// tokens already emitted are never revised.

#pragma once

#include "statetune/model.hpp"
#include "statetune/teacher.hpp"

namespace statetune {

enum class TestTimeMode { kDistill, kReinforce };

inline const char* to_string(TestTimeMode m) {
  return m == TestTimeMode::kDistill ? "distill" : "reinforce";
}

inline TestTimeMode testtime_mode_from_string(const std::string& s) {
  if (s == "distill") return TestTimeMode::kDistill;
  if (s == "reinforce") return TestTimeMode::kReinforce;
  throw ConfigError("unknown test-time mode '" + s + "'");
}

struct TestTimeConfig {
  int iterations = 5;          // inner ascent steps per token (3..5 typical)
  double eta = 0.01;           // ascent step size
  double tau = 1.0;            // sampling temperature
  bool greedy = false;         // argmax sampling (tau -> 0 preset)
  double terminal_bonus = 1.0; // reinforce-only exact-match completion bonus
  int max_length = 64;         // generation cap
  std::uint64_t sampler_seed = 0;
  TestTimeMode mode = TestTimeMode::kDistill;

  void validate() const {
    if (iterations < 1) {
      throw ConfigError("TestTimeConfig: iterations must be >= 1");
    }
    if (!(eta >= 0.0)) throw ConfigError("TestTimeConfig: eta must be >= 0");
    if (!(tau > 0.0)) throw ConfigError("TestTimeConfig: tau must be > 0");
    if (max_length < 0) {
      throw ConfigError("TestTimeConfig: max_length must be >= 0");
    }
  }
};

// Lowest-index argmax; the deterministic greedy preset.
inline int sample_token(const Vec& logits, const TestTimeConfig& cfg,
                        Rng& rng) {
  if (cfg.greedy) return argmax_lowest(logits);
  const Vec p = softmax(logits, cfg.tau);
  double u = rng.uniform();
  for (int i = 0; i < p.size(); ++i) {
    u -= p(i);
    if (u < 0.0) return i;
  }
  return static_cast<int>(p.size()) - 1;
}

struct InnerLoopDiagnostics {
  std::vector<double> objective;     // value per inner iteration
  double teacher_prob_before = 0.0;  // student prob of the teacher token
  double teacher_prob_after = 0.0;
  bool aborted_non_finite = false;
};

// Running-mean reward baseline for reinforce mode (per generation session).
struct RewardBaseline {
  double mean = 0.0;
  long long count = 0;

  double advantage(double r) {
    const double adv = count == 0 ? 0.0 : r - mean;
    ++count;
    mean += (r - mean) / static_cast<double>(count);
    return adv;
  }
};

// Refine the current states by cfg.iterations ascent steps. recepts are the
// per-head receptances of the last consumed token and stay fixed. Returns
// diagnostics; states are updated in place (left untouched on a non-finite
// abort).
template <typename Model>
InnerLoopDiagnostics tune_state_step(const Model& model,
                                     std::vector<Mat>& states,
                                     const std::vector<Vec>& recepts,
                                     const TeacherStep& teacher,
                                     const TestTimeConfig& cfg, Rng& rng,
                                     RewardBaseline* baseline = nullptr) {
  cfg.validate();
  if (teacher.token < 0 || teacher.token >= model.vocab()) {
    throw ConfigError("tune_state_step: teacher token out of vocabulary");
  }
  InnerLoopDiagnostics diag;
  const std::vector<Mat> entry_states = states;

  {
    const Vec p = softmax(model.logits_from(states, recepts));
    diag.teacher_prob_before = p(teacher.token);
  }

  for (int it = 0; it < cfg.iterations; ++it) {
    const Vec logits = model.logits_from(states, recepts);
    double objective = 0.0;
    Vec dlogits;
    if (cfg.mode == TestTimeMode::kDistill) {
      const Vec lsm = log_softmax(logits);
      objective = lsm(teacher.token);
      dlogits = -lsm.array().exp();
      dlogits(teacher.token) += 1.0;
    } else {
      const int candidate = sample_token(logits, cfg, rng);
      const bool exact_terminal =
          teacher.terminal && candidate == teacher.token;
      const double r = reward(teacher.logits, candidate, exact_terminal,
                              cfg.terminal_bonus);
      const double adv = baseline ? baseline->advantage(r) : r;
      const Vec log_pi = log_softmax(logits / cfg.tau);
      objective = adv * log_pi(candidate);
      Vec score = -log_pi.array().exp();
      score(candidate) += 1.0;
      dlogits = (adv / cfg.tau) * score;
    }
    if (!std::isfinite(objective)) {
      states = entry_states;
      diag.aborted_non_finite = true;
      return diag;
    }
    diag.objective.push_back(objective);

    const auto grads = model.state_grads(dlogits, recepts);
    for (std::size_t h = 0; h < grads.size(); ++h) {
      states[h] += cfg.eta * grads[h];
      const double norm = states[h].norm();
      if (!std::isfinite(norm) ||
          norm > model.recurrence_config().norm_ceiling) {
        throw OverflowError("tune_state_step: refined state norm " +
                            std::to_string(norm) + " exceeds ceiling");
      }
    }
  }

  const Vec p = softmax(model.logits_from(states, recepts));
  diag.teacher_prob_after = p(teacher.token);
  return diag;
}

struct TokenDiagnostics {
  int step = 0;
  int teacher_token = 0;
  int emitted_token = 0;
  InnerLoopDiagnostics inner;
};

struct Transcript {
  std::vector<int> prompt;
  std::vector<int> generated;
  std::vector<TokenDiagnostics> tokens;
  bool hit_max_length = false;

  nlohmann::json to_json() const {
    nlohmann::json toks = nlohmann::json::array();
    for (const auto& t : tokens) {
      toks.push_back({{"step", t.step},
                      {"teacher_token", t.teacher_token},
                      {"emitted_token", t.emitted_token},
                      {"objective", t.inner.objective},
                      {"teacher_prob_before", t.inner.teacher_prob_before},
                      {"teacher_prob_after", t.inner.teacher_prob_after},
                      {"aborted_non_finite", t.inner.aborted_non_finite}});
    }
    return nlohmann::json{{"prompt", prompt},
                          {"generated", generated},
                          {"hit_max_length", hit_max_length},
                          {"tokens", toks}};
  }
};

// Autoregressive generation with per-token state refinement. The prompt is
// consumed with the standard recurrence; each generated token is sampled
// after the inner ascent loop, and the state then advances by the standard
// rule.
template <typename Model>
Transcript guided_generate(const Model& model, std::vector<Mat> states,
                           const std::vector<int>& prompt,
                           TeacherOracle& teacher, const TestTimeConfig& cfg) {
  cfg.validate();
  if (prompt.empty()) {
    throw InputError("guided_generate: prompt must be nonempty");
  }
  if (teacher.vocab() != model.vocab()) {
    throw ConfigError("guided_generate: teacher vocabulary " +
                      std::to_string(teacher.vocab()) +
                      " != model vocabulary " + std::to_string(model.vocab()));
  }

  Transcript out;
  out.prompt = prompt;
  Rng sampler(derive_seed(cfg.sampler_seed, "testtime-sampler"));
  RewardBaseline baseline;

  std::vector<Vec> recepts;
  for (const int tok : prompt) {
    recepts.clear();
    AdvanceHooks hooks;
    hooks.recepts = &recepts;
    model.advance(states, tok, hooks);
  }

  std::vector<int> context = prompt;
  for (int g = 0; g < cfg.max_length; ++g) {
    const auto step = teacher.next(context);
    if (!step.has_value()) break;
    if (step->logits.size() != model.vocab()) {
      throw ConfigError("guided_generate: teacher logits length " +
                        std::to_string(step->logits.size()) +
                        " != vocabulary " + std::to_string(model.vocab()));
    }

    TokenDiagnostics td;
    td.step = step->index;
    td.teacher_token = step->token;
    td.inner = tune_state_step(model, states, recepts, *step, cfg, sampler,
                               &baseline);

    const Vec logits = model.logits_from(states, recepts);
    const int emitted = sample_token(logits, cfg, sampler);
    td.emitted_token = emitted;
    out.tokens.push_back(td);
    out.generated.push_back(emitted);
    context.push_back(emitted);

    recepts.clear();
    AdvanceHooks hooks;
    hooks.recepts = &recepts;
    model.advance(states, emitted, hooks);
  }
  out.hit_max_length =
      static_cast<int>(out.generated.size()) >= cfg.max_length;
  return out;
}

}  // namespace statetune
