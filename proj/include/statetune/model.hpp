// Copyright 2026 statetune authors. Apache 2.0 License.
//
// Model views over the frozen weights: the base N-state recurrence and the
// kernel-lifted M-state recurrence (optionally decorrelated by R) behind one
// stepping surface, so training loops, evaluation, and test-time refinement
// are written once, parametric in the state dimension.
//
// A view never owns trainable state; callers hold the per-head state
// matrices and pass them in.

#pragma once

#include "statetune/decorrelation.hpp"
#include "statetune/gradients.hpp"
#include "statetune/kernel.hpp"
#include "statetune/tasks.hpp"

namespace statetune {

struct AdvanceHooks {
  StateTrace* trace = nullptr;          // per-head step records, appended
  std::vector<Vec>* recepts = nullptr;  // receptances used at this step
  // DBP only: the decorrelated update-path vectors (R phi_{w,k,a,v}) of
  // every head, appended in head order.
  std::vector<Vec>* decor_pool = nullptr;
};

class BaseModel {
 public:
  explicit BaseModel(const FrozenWeights& weights, RecurrenceConfig cfg = {})
      : weights_(&weights), cfg_(cfg) {}

  int state_dim() const { return weights_->dims.head_dim; }
  int num_heads() const { return weights_->dims.num_heads; }
  int vocab() const { return weights_->dims.vocab_size; }
  const FrozenWeights& weights() const { return *weights_; }
  const RecurrenceConfig& recurrence_config() const { return cfg_; }

  std::vector<Mat> zero_state() const {
    return zero_states(num_heads(), state_dim());
  }

  // Consume one token: update states in place and return vocab logits.
  Vec advance(std::vector<Mat>& states, int token,
              const AdvanceHooks& hooks = {}) const {
    const auto& d = weights_->dims;
    const auto heads = derive_projections(*weights_, token);
    Vec ycat(d.embed_dim);
    for (int h = 0; h < d.num_heads; ++h) {
      const auto hi = static_cast<std::size_t>(h);
      const ProjectionBundle& p = heads[hi];
      Mat trans = transition_matrix(p);
      states[hi] = apply_state_update(states[hi], trans, p.v, p.k, cfg_);
      ycat.segment(h * d.head_dim, d.head_dim) = readout(states[hi], p.r);
      if (hooks.recepts) hooks.recepts->push_back(p.r);
      if (hooks.trace) {
        hooks.trace->heads[hi].push_back(
            StepRecord{std::move(trans), p.r, states[hi]});
      }
    }
    return weights_->output_head.transpose() * ycat;
  }

  // Logits from given states and per-head receptances, no state change.
  Vec logits_from(const std::vector<Mat>& states,
                  const std::vector<Vec>& recepts) const {
    const auto& d = weights_->dims;
    Vec ycat(d.embed_dim);
    for (int h = 0; h < d.num_heads; ++h) {
      const auto hi = static_cast<std::size_t>(h);
      ycat.segment(h * d.head_dim, d.head_dim) =
          readout(states[hi], recepts[hi]);
    }
    return weights_->output_head.transpose() * ycat;
  }

  // dL/d(per-head readout y) from dL/dlogits. For the base view this is a
  // slice of W_out dL/dlogits.
  std::vector<Vec> head_output_grads(const Vec& dlogits) const {
    const auto& d = weights_->dims;
    const Vec gy = weights_->output_head * dlogits;
    std::vector<Vec> out;
    out.reserve(static_cast<std::size_t>(d.num_heads));
    for (int h = 0; h < d.num_heads; ++h) {
      out.push_back(gy.segment(h * d.head_dim, d.head_dim));
    }
    return out;
  }

  // Per-head dL/dS for the current step's readout.
  std::vector<Mat> state_grads(const Vec& dlogits,
                               const std::vector<Vec>& recepts) const {
    const auto gys = head_output_grads(dlogits);
    std::vector<Mat> out;
    out.reserve(gys.size());
    for (std::size_t h = 0; h < gys.size(); ++h) {
      out.push_back(gys[h] * recepts[h].transpose());
    }
    return out;
  }

 private:
  const FrozenWeights* weights_;
  RecurrenceConfig cfg_;
};

class LiftedModel {
 public:
  // decor == nullptr runs the plain kernel regime; otherwise every lifted
  // vector is multiplied by decor->r before use.
  LiftedModel(const FrozenWeights& weights, const LiftContext& lift,
              const Decorrelator* decor = nullptr, RecurrenceConfig cfg = {})
      : weights_(&weights), lift_(&lift), decor_(decor), cfg_(cfg) {
    lift_->config.validate(weights.dims.head_dim);
    if (lift_->supports.dim() != weights.dims.head_dim) {
      throw ShapeError("LiftedModel: support dim != head dim");
    }
    if (decor_ && decor_->dim() != lift_->config.m) {
      throw ShapeError("LiftedModel: R dim != M");
    }
  }

  int state_dim() const { return lift_->config.m; }
  int num_heads() const { return weights_->dims.num_heads; }
  int vocab() const { return weights_->dims.vocab_size; }
  const FrozenWeights& weights() const { return *weights_; }
  const LiftContext& lift_context() const { return *lift_; }
  const Decorrelator* decorrelator() const { return decor_; }
  const RecurrenceConfig& recurrence_config() const { return cfg_; }

  std::vector<Mat> zero_state() const {
    return zero_states(num_heads(), state_dim());
  }

  Vec advance(std::vector<Mat>& states, int token,
              const AdvanceHooks& hooks = {}) const {
    const auto& d = weights_->dims;
    const auto heads = derive_projections(*weights_, token);
    Vec ycat(d.embed_dim);
    for (int h = 0; h < d.num_heads; ++h) {
      const auto hi = static_cast<std::size_t>(h);
      LiftedBundle lb =
          lift(heads[hi], lift_->supports, lift_->config.gamma);
      if (decor_) {
        lb = decorrelate(*decor_, lb);
        if (hooks.decor_pool) {
          hooks.decor_pool->push_back(lb.w);
          hooks.decor_pool->push_back(lb.k);
          hooks.decor_pool->push_back(lb.a);
          hooks.decor_pool->push_back(lb.v);
        }
      }
      Mat trans = transition_matrix(lb.w, lb.k, lb.a);
      states[hi] = apply_state_update(states[hi], trans, lb.v, lb.k, cfg_);
      ycat.segment(h * d.head_dim, d.head_dim) =
          lift_->q.q * (states[hi] * lb.r);
      if (hooks.recepts) hooks.recepts->push_back(lb.r);
      if (hooks.trace) {
        hooks.trace->heads[hi].push_back(
            StepRecord{std::move(trans), lb.r, states[hi]});
      }
    }
    return weights_->output_head.transpose() * ycat;
  }

  Vec logits_from(const std::vector<Mat>& states,
                  const std::vector<Vec>& recepts) const {
    const auto& d = weights_->dims;
    Vec ycat(d.embed_dim);
    for (int h = 0; h < d.num_heads; ++h) {
      const auto hi = static_cast<std::size_t>(h);
      ycat.segment(h * d.head_dim, d.head_dim) =
          lift_->q.q * (states[hi] * recepts[hi]);
    }
    return weights_->output_head.transpose() * ycat;
  }

  // Chain through the output head and Q: u = Q^T slice_h(W_out dlogits).
  std::vector<Vec> head_output_grads(const Vec& dlogits) const {
    const auto& d = weights_->dims;
    const Vec gy = weights_->output_head * dlogits;
    std::vector<Vec> out;
    out.reserve(static_cast<std::size_t>(d.num_heads));
    for (int h = 0; h < d.num_heads; ++h) {
      out.push_back(lift_->q.q.transpose() *
                    gy.segment(h * d.head_dim, d.head_dim));
    }
    return out;
  }

  std::vector<Mat> state_grads(const Vec& dlogits,
                               const std::vector<Vec>& recepts) const {
    const auto gys = head_output_grads(dlogits);
    std::vector<Mat> out;
    out.reserve(gys.size());
    for (std::size_t h = 0; h < gys.size(); ++h) {
      out.push_back(gys[h] * recepts[h].transpose());
    }
    return out;
  }

 private:
  const FrozenWeights* weights_;
  const LiftContext* lift_;
  const Decorrelator* decor_;
  RecurrenceConfig cfg_;
};

// ---------------------------------------------------------------------------
// Generic rollout helpers over a model view.

template <typename Model>
StateTrace make_empty_trace(const Model& model) {
  StateTrace trace;
  trace.heads.resize(static_cast<std::size_t>(model.num_heads()));
  return trace;
}

// Teacher-forced rollout from given initial states (copied, not mutated).
template <typename Model>
std::vector<Vec> model_rollout_logits(const Model& model,
                                      const std::vector<Mat>& initial_states,
                                      const std::vector<int>& tokens,
                                      StateTrace* trace = nullptr,
                                      std::vector<Vec>* decor_pool = nullptr) {
  if (tokens.empty()) {
    throw InputError("model_rollout_logits: empty token sequence");
  }
  std::vector<Mat> states = initial_states;
  std::vector<Vec> logits;
  logits.reserve(tokens.size());
  AdvanceHooks hooks;
  hooks.trace = trace;
  hooks.decor_pool = decor_pool;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    try {
      logits.push_back(model.advance(states, tokens[t], hooks));
    } catch (const OverflowError& e) {
      throw OverflowError(std::string(e.what()) + " (at timestep " +
                          std::to_string(t) + ")");
    }
  }
  return logits;
}

// Evaluation adapter: a ModelFn over fixed initial states.
template <typename Model>
ModelFn make_model_fn(const Model& model, std::vector<Mat> initial_states) {
  return [&model, states = std::move(initial_states)](
             const std::vector<int>& tokens) {
    return model_rollout_logits(model, states, tokens);
  };
}

// Per-head dL/dS0 for one sequence given per-step dL/dlogits.
template <typename Model>
std::vector<Mat> backprop_sequence(const Model& model, const StateTrace& trace,
                                   const std::vector<Vec>& logit_grads) {
  const auto steps = trace.length();
  if (steps != logit_grads.size()) {
    throw ShapeError("backprop_sequence: trace/gradient length mismatch");
  }
  const auto n_heads = static_cast<std::size_t>(model.num_heads());
  // Rearranged to per-head per-step readout grads.
  std::vector<std::vector<Vec>> head_grads(n_heads);
  for (auto& hg : head_grads) hg.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    auto per_head = model.head_output_grads(logit_grads[t]);
    for (std::size_t h = 0; h < n_heads; ++h) {
      head_grads[h].push_back(std::move(per_head[h]));
    }
  }
  std::vector<Mat> grads;
  grads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    grads.push_back(backprop_state(trace.heads[h], head_grads[h]));
  }
  return grads;
}

}  // namespace statetune
