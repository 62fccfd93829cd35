// Copyright 2026 statetune authors. Apache 2.0 License.
//
// Token-level cross-entropy with log-sum-exp stabilization, plus the
// softmax/log-softmax helpers shared by sampling and the teacher reward.

#pragma once

#include "statetune/common.hpp"

#include <vector>

namespace statetune {

inline Vec log_softmax(const Vec& logits) {
  if (logits.size() == 0) {
    throw InputError("log_softmax: empty logits");
  }
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits.array() - lse;
}

inline Vec softmax(const Vec& logits, double temperature = 1.0) {
  if (!(temperature > 0.0)) {
    throw ConfigError("softmax: temperature must be positive");
  }
  const Vec scaled = logits / temperature;
  Vec p = (scaled.array() - scaled.maxCoeff()).exp();
  return p / p.sum();
}

struct TaskLoss {
  double value = 0.0;
  // dL/dlogits per step: (softmax - onehot) / token count.
  std::vector<Vec> logit_grads;
};

// Mean cross-entropy over aligned (logits[t], targets[t]) pairs.
inline TaskLoss task_loss(const std::vector<Vec>& logits,
                          const std::vector<int>& targets) {
  if (logits.empty()) {
    throw InputError("task_loss: empty sequence");
  }
  if (logits.size() != targets.size()) {
    throw ShapeError("task_loss: " + std::to_string(logits.size()) +
                     " logit vectors vs " + std::to_string(targets.size()) +
                     " targets");
  }
  const auto count = static_cast<double>(logits.size());
  TaskLoss out;
  out.logit_grads.reserve(logits.size());
  for (std::size_t t = 0; t < logits.size(); ++t) {
    const int target = targets[t];
    if (target < 0 || target >= logits[t].size()) {
      throw InputError("task_loss: target " + std::to_string(target) +
                       " out of vocabulary at position " + std::to_string(t));
    }
    const Vec lsm = log_softmax(logits[t]);
    out.value -= lsm(target) / count;
    Vec g = lsm.array().exp();
    g(target) -= 1.0;
    out.logit_grads.push_back(g / count);
  }
  return out;
}

}  // namespace statetune
