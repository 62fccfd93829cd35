// Copyright 2026 statetune authors. Apache 2.0 License.
//
// Teacher oracles for guided generation: a deterministic scripted teacher
// built from a task instance's ground-truth continuation, and the alignment
// reward (teacher log-probability of a token, plus an optional terminal
// bonus).

#pragma once

#include "statetune/loss.hpp"

#include <memory>
#include <optional>
#include <vector>

namespace statetune {

struct TeacherStep {
  int token = 0;   // the teacher's own next token
  Vec logits;      // teacher logits over the shared vocabulary
  int index = 0;   // 1-based step index within the teacher sequence
  bool terminal = false;  // true on the teacher's final step (scripted only)
};

class TeacherOracle {
 public:
  virtual ~TeacherOracle() = default;
  // Next aligned step for the given full context (prompt + generated), or
  // nullopt when the teacher's sequence is exhausted.
  virtual std::optional<TeacherStep> next(const std::vector<int>& context) = 0;
  virtual int vocab() const = 0;
};

// log P_teacher(token), optionally plus a terminal bonus.
inline double reward(const Vec& teacher_logits, int token,
                     bool terminal = false, double terminal_bonus = 0.0) {
  if (token < 0 || token >= teacher_logits.size()) {
    throw InputError("reward: token out of vocabulary");
  }
  require_finite(teacher_logits, "reward");
  return log_softmax(teacher_logits)(token) +
         (terminal ? terminal_bonus : 0.0);
}

// Emits a fixed ground-truth continuation with confidence c: logit margin c
// on the truth token, 0 elsewhere. Deterministic; same context, same step.
class ScriptedTeacher final : public TeacherOracle {
 public:
  ScriptedTeacher(std::size_t prompt_len, std::vector<int> continuation,
                  int vocab_size, double confidence)
      : prompt_len_(prompt_len),
        continuation_(std::move(continuation)),
        vocab_(vocab_size),
        confidence_(confidence) {
    for (const int t : continuation_) {
      if (t < 0 || t >= vocab_) {
        throw InputError("ScriptedTeacher: continuation token out of vocab");
      }
    }
  }

  std::optional<TeacherStep> next(const std::vector<int>& context) override {
    if (context.size() < prompt_len_) {
      throw InputError("ScriptedTeacher: context shorter than the prompt");
    }
    const std::size_t idx = context.size() - prompt_len_;
    if (idx >= continuation_.size()) return std::nullopt;
    TeacherStep step;
    step.token = continuation_[idx];
    step.logits = Vec::Zero(vocab_);
    step.logits(step.token) = confidence_;
    step.index = static_cast<int>(idx) + 1;
    step.terminal = idx + 1 == continuation_.size();
    return step;
  }

  int vocab() const override { return vocab_; }

 private:
  std::size_t prompt_len_;
  std::vector<int> continuation_;
  int vocab_;
  double confidence_;
};

inline std::unique_ptr<TeacherOracle> scripted_teacher(
    std::size_t prompt_len, std::vector<int> continuation, int vocab_size,
    double confidence) {
  return std::make_unique<ScriptedTeacher>(prompt_len, std::move(continuation),
                                           vocab_size, confidence);
}

}  // namespace statetune
