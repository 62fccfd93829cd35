// Copyright 2026 statetune authors. Apache 2.0 License.
//
// Offline training loops. Three regimes share one loop:
//
//   standard  base recurrence, Adam on the per-head N x N initial state
//   kernel    lifted recurrence, Adam on the per-head M x M initial state
//   dbp       kernel + decorrelation matrix R trained by its local rule
//
// Only the initial state (and R, in dbp) is ever trained; frozen weights,
// supports, and Q are digest-checked every epoch. Batch gradients are the
// mean over sequences, reduced in sequence order so results are identical
// for any thread count.

#pragma once

#include "statetune/model.hpp"
#include "statetune/optimizer.hpp"
#include "statetune/tasks.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>

namespace statetune {

enum class Regime { kStandard, kKernel, kDbp };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::kStandard: return "standard";
    case Regime::kKernel: return "kernel";
    case Regime::kDbp: return "dbp";
  }
  return "?";
}

inline Regime regime_from_string(const std::string& s) {
  if (s == "standard") return Regime::kStandard;
  if (s == "kernel") return Regime::kKernel;
  if (s == "dbp") return Regime::kDbp;
  throw ConfigError("unknown regime '" + s + "'");
}

inline double default_state_lr(Regime r) {
  switch (r) {
    case Regime::kStandard: return 1e-3;
    case Regime::kKernel: return 5e-4;
    case Regime::kDbp: return 3e-4;
  }
  return 1e-3;
}

struct TuneConfig {
  Regime regime = Regime::kStandard;
  int epochs = 5;
  double lr_state = 1e-3;  // see default_state_lr
  double lr_r = 1e-4;
  double kappa = 0.5;
  double lambda = 0.1;
  double subsample_frac = 0.1;
  int batch_size = 16;
  std::uint64_t seed = 0;
  int patience = 3;
  int threads = 1;
  bool freeze_r = false;  // dbp reduction case: keep R at identity
  RecurrenceConfig recurrence;

  static TuneConfig defaults(Regime r) {
    TuneConfig c;
    c.regime = r;
    c.lr_state = default_state_lr(r);
    return c;
  }

  void validate() const {
    if (epochs < 1) throw ConfigError("TuneConfig: epochs must be >= 1");
    if (lr_state < 0.0) throw ConfigError("TuneConfig: negative state lr");
    if (lr_r < 0.0) throw ConfigError("TuneConfig: negative R lr");
    if (kappa < 0.0 || kappa > 1.0) {
      throw ConfigError("TuneConfig: kappa must be in [0,1]");
    }
    if (lambda < 0.0) throw ConfigError("TuneConfig: lambda must be >= 0");
    if (!(subsample_frac > 0.0) || subsample_frac > 1.0) {
      throw ConfigError("TuneConfig: subsample_frac must be in (0,1]");
    }
    if (batch_size < 1) throw ConfigError("TuneConfig: batch_size >= 1");
    if (patience < 1) throw ConfigError("TuneConfig: patience >= 1");
    if (threads < 1) throw ConfigError("TuneConfig: threads >= 1");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"regime", to_string(regime)},
                          {"epochs", epochs},
                          {"lr_state", lr_state},
                          {"lr_r", lr_r},
                          {"kappa", kappa},
                          {"lambda", lambda},
                          {"subsample_frac", subsample_frac},
                          {"batch_size", batch_size},
                          {"seed", seed},
                          {"patience", patience},
                          {"threads", threads},
                          {"freeze_r", freeze_r},
                          {"norm_ceiling", recurrence.norm_ceiling}};
  }
};

struct EpochRecord {
  int epoch = 0;
  double task_loss = 0.0;
  double decorr_loss = 0.0;
  double total_loss = 0.0;
  double val_accuracy = 0.0;
  double wall_seconds = 0.0;
  bool r_alarm = false;
  double r_condition = 0.0;
  std::map<std::string, std::string> digests;

  nlohmann::json to_json() const {
    nlohmann::json j{{"epoch", epoch},
                     {"task_loss", task_loss},
                     {"decorr_loss", decorr_loss},
                     {"total_loss", total_loss},
                     {"val_accuracy", val_accuracy},
                     {"wall_seconds", wall_seconds},
                     {"digests", digests}};
    if (r_condition > 0.0) {
      j["r_condition"] = r_condition;
      j["r_alarm"] = r_alarm;
    }
    return j;
  }
};

struct TuneReport {
  std::vector<EpochRecord> epochs;
  bool diverged = false;
  std::string divergence_reason;
  int best_epoch = -1;
  double best_val_accuracy = 0.0;
  long long trainable_scalars = 0;
  nlohmann::json hyperparameters;
};

struct TuneResult {
  std::vector<Mat> state;  // best-validation initial state, one per head
  std::optional<Decorrelator> decorrelator;  // final R (dbp only)
  TuneReport report;
};

// ---------------------------------------------------------------------------
// Internals.

namespace detail {

inline void parallel_for(int threads, std::size_t n,
                         const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int count = std::min<int>(threads, static_cast<int>(n));
  pool.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct SequenceWork {
  double loss = 0.0;
  std::vector<Mat> grads;       // per head
  std::vector<Vec> decor_pool;  // dbp vectors, head-major per step
};

// Forward + backward for one sequence: loss over the target span only.
template <typename Model>
SequenceWork process_sequence(const Model& model,
                              const std::vector<Mat>& initial_state,
                              const SequenceRecord& rec, bool want_decor) {
  if (rec.target_len < 1 || rec.target_start < 1 ||
      rec.target_start + rec.target_len >
          static_cast<int>(rec.tokens.size())) {
    throw InputError("process_sequence: target span out of bounds");
  }
  SequenceWork work;
  StateTrace trace = make_empty_trace(model);
  std::vector<Vec>* pool = want_decor ? &work.decor_pool : nullptr;
  const auto logits =
      model_rollout_logits(model, initial_state, rec.tokens, &trace, pool);

  std::vector<Vec> span_logits;
  std::vector<int> span_targets;
  for (int i = 0; i < rec.target_len; ++i) {
    const int pos = rec.target_start + i;
    span_logits.push_back(logits[static_cast<std::size_t>(pos - 1)]);
    span_targets.push_back(rec.tokens[static_cast<std::size_t>(pos)]);
  }
  const TaskLoss tl = task_loss(span_logits, span_targets);
  work.loss = tl.value;

  const int vocab = model.vocab();
  std::vector<Vec> per_step(rec.tokens.size(), Vec::Zero(vocab));
  for (int i = 0; i < rec.target_len; ++i) {
    const int pos = rec.target_start + i;
    per_step[static_cast<std::size_t>(pos - 1)] =
        tl.logit_grads[static_cast<std::size_t>(i)];
  }
  work.grads = backprop_sequence(model, trace, per_step);
  return work;
}

inline std::map<std::string, std::string> integrity_digests(
    const FrozenWeights& weights, const LiftContext* lift) {
  weights.verify_digest();
  std::map<std::string, std::string> d;
  d["weights"] = hex64(weights.digest);
  if (lift) {
    lift->verify_digests();
    d["kernel.supports"] = hex64(lift->supports.digest);
    d["kernel.q"] = hex64(lift->q.digest);
  }
  return d;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// The shared loop.

template <typename Model>
TuneResult tune_loop(const Model& model, const Dataset& data,
                     const TuneConfig& cfg, Decorrelator* decor,
                     const LiftContext* lift) {
  cfg.validate();
  const auto train = data.split(Split::kTrain);
  const auto val = data.split(Split::kVal);
  if (train.empty() || val.empty()) {
    throw InputError("tune: dataset needs non-empty train and val splits");
  }

  const int dim = model.state_dim();
  const int heads = model.num_heads();
  std::vector<Mat> state = model.zero_state();
  std::vector<AdamMoments> moments(
      static_cast<std::size_t>(heads), AdamMoments::zeros(dim, dim));

  TuneResult result;
  result.report.hyperparameters = cfg.to_json();
  result.report.trainable_scalars =
      static_cast<long long>(heads) * dim * dim +
      (decor ? static_cast<long long>(decor->dim()) * decor->dim() : 0);

  std::vector<Mat> best_state = state;
  std::vector<Mat> last_good = state;
  double best_val = -1.0;
  int epochs_since_improve = 0;

  Rng shuffle_rng(derive_seed(cfg.seed, "batch-shuffle"));
  const bool is_dbp = decor != nullptr;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.digests = detail::integrity_digests(model.weights(), lift);

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0, decor_sum = 0.0;
    std::size_t batch_count = 0, decor_vec_count = 0;

    for (std::size_t start = 0; start < order.size() && !result.report.diverged;
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t n_seq = end - start;
      std::vector<detail::SequenceWork> works(n_seq);
      last_good = state;
      try {
        detail::parallel_for(cfg.threads, n_seq, [&](std::size_t i) {
          works[i] = detail::process_sequence(model, state,
                                              *train[order[start + i]], is_dbp);
        });

        double batch_loss = 0.0;
        std::vector<Mat> grad(static_cast<std::size_t>(heads),
                              Mat::Zero(dim, dim));
        for (const auto& w : works) {  // sequence order: deterministic
          batch_loss += w.loss;
          for (int h = 0; h < heads; ++h) {
            grad[static_cast<std::size_t>(h)] +=
                w.grads[static_cast<std::size_t>(h)];
          }
        }
        batch_loss /= static_cast<double>(n_seq);
        if (!std::isfinite(batch_loss)) {
          throw NumericalError("task loss is not finite");
        }
        for (int h = 0; h < heads; ++h) {
          grad[static_cast<std::size_t>(h)] /= static_cast<double>(n_seq);
          adam_step(state[static_cast<std::size_t>(h)],
                    grad[static_cast<std::size_t>(h)],
                    moments[static_cast<std::size_t>(h)], cfg.lr_state);
        }
        loss_sum += batch_loss;
        ++batch_count;

        if (is_dbp) {
          std::vector<Vec> pool;
          for (auto& w : works) {
            for (auto& x : w.decor_pool) pool.push_back(std::move(x));
          }
          if (!pool.empty()) {
            double dl = 0.0;
            for (const auto& x : pool) dl += decorr_loss(x, cfg.kappa);
            decor_sum += dl;
            decor_vec_count += pool.size();
            if (!cfg.freeze_r) {
              const auto sub_seed = derive_seed(
                  cfg.seed, "r-subsample." + std::to_string(epoch) + "." +
                                std::to_string(batch_count));
              update_R(*decor, pool, cfg.subsample_frac, sub_seed);
            }
          }
        }
      } catch (const Error& e) {
        result.report.diverged = true;
        result.report.divergence_reason = e.what();
        state = last_good;
      }
    }

    rec.task_loss = batch_count ? loss_sum / static_cast<double>(batch_count)
                                : std::numeric_limits<double>::quiet_NaN();
    rec.decorr_loss =
        decor_vec_count
            ? decor_sum / static_cast<double>(decor_vec_count)
            : 0.0;
    rec.total_loss = rec.task_loss + cfg.lambda * rec.decorr_loss;
    if (is_dbp) {
      rec.r_condition = decor->condition_estimate();
      rec.r_alarm = rec.r_condition > 1e6;
    }

    if (!result.report.diverged) {
      try {
        const auto metrics =
            evaluate(make_model_fn(model, state), data, Split::kVal);
        rec.val_accuracy = metrics.token_accuracy;
        if (metrics.token_accuracy > best_val) {
          best_val = metrics.token_accuracy;
          best_state = state;
          result.report.best_epoch = epoch;
          epochs_since_improve = 0;
        } else {
          ++epochs_since_improve;
        }
      } catch (const Error& e) {
        result.report.diverged = true;
        result.report.divergence_reason =
            std::string("validation: ") + e.what();
        state = last_good;
      }
    }
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      epoch_start)
            .count();
    result.report.epochs.push_back(rec);

    if (result.report.diverged) break;
    if (epochs_since_improve >= cfg.patience) break;
  }

  result.report.best_val_accuracy = best_val;
  result.state = result.report.diverged ? last_good : best_state;
  if (decor) result.decorrelator = *decor;
  return result;
}

// ---------------------------------------------------------------------------
// Regime entry points.

inline TuneResult tune_standard(const FrozenWeights& weights,
                                const Dataset& data, const TuneConfig& cfg) {
  if (cfg.regime != Regime::kStandard) {
    throw ConfigError("tune_standard called with non-standard regime config");
  }
  const BaseModel model(weights, cfg.recurrence);
  return tune_loop(model, data, cfg, nullptr, nullptr);
}

// Pooled post-squash projection vectors (all five kinds, every head) from
// the training split; the support sample for data-centroid selection.
inline Mat collect_projection_sample(const FrozenWeights& weights,
                                     const Dataset& data,
                                     std::size_t max_rows = 8192) {
  const auto train = data.split(Split::kTrain);
  if (train.empty()) {
    throw InputError("collect_projection_sample: empty train split");
  }
  std::vector<Vec> rows;
  for (const auto* rec : train) {
    for (const int token : rec->tokens) {
      const auto heads = derive_projections(weights, token);
      for (const auto& b : heads) {
        rows.push_back(b.w);
        rows.push_back(b.k);
        rows.push_back(b.a);
        rows.push_back(b.v);
        rows.push_back(b.r);
      }
    }
    if (rows.size() >= max_rows) break;
  }
  if (rows.size() > max_rows) rows.resize(max_rows);
  Mat sample(static_cast<Eigen::Index>(rows.size()), weights.dims.head_dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    sample.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  }
  return sample;
}

// Supports + Q for an experiment. data may be null for random-gaussian.
inline LiftContext make_lift_context(const FrozenWeights& weights,
                                     const KernelConfig& kcfg,
                                     const Dataset* data) {
  const int n = weights.dims.head_dim;
  kcfg.validate(n);
  LiftContext ctx;
  ctx.config = kcfg;
  if (kcfg.selection == SupportSelection::kDataCentroids) {
    if (data == nullptr) {
      throw InputError("make_lift_context: data-centroids needs a dataset");
    }
    const Mat sample = collect_projection_sample(weights, *data);
    ctx.supports = select_supports(kcfg.selection, &sample, kcfg.m, n,
                                   kcfg.seed);
  } else {
    ctx.supports = select_supports(kcfg.selection, nullptr, kcfg.m, n,
                                   kcfg.seed);
  }
  ctx.q = ProjectionQ::generate(n, kcfg.m, kcfg.seed);
  return ctx;
}

inline TuneResult tune_kernel(const FrozenWeights& weights,
                              const Dataset& data, const TuneConfig& cfg,
                              const LiftContext& lift) {
  if (cfg.regime != Regime::kKernel) {
    throw ConfigError("tune_kernel called with non-kernel regime config");
  }
  const LiftedModel model(weights, lift, nullptr, cfg.recurrence);
  return tune_loop(model, data, cfg, nullptr, &lift);
}

inline TuneResult tune_dbp(const FrozenWeights& weights, const Dataset& data,
                           const TuneConfig& cfg, const LiftContext& lift) {
  if (cfg.regime != Regime::kDbp) {
    throw ConfigError("tune_dbp called with non-dbp regime config");
  }
  Decorrelator decor =
      Decorrelator::identity(lift.config.m, cfg.lr_r, cfg.kappa);
  const LiftedModel model(weights, lift, &decor, cfg.recurrence);
  return tune_loop(model, data, cfg, &decor, &lift);
}

// Full-batch plain gradient descent on the initial state; returns the loss
// before each step plus the final loss. Used by the monotonicity checks.
template <typename Model>
std::vector<double> full_batch_gd_losses(const Model& model,
                                         const Dataset& data, int steps,
                                         double lr) {
  const auto train = data.split(Split::kTrain);
  if (train.empty()) {
    throw InputError("full_batch_gd_losses: empty train split");
  }
  const int dim = model.state_dim();
  const int heads = model.num_heads();
  std::vector<Mat> state = model.zero_state();
  std::vector<double> losses;
  for (int step = 0; step <= steps; ++step) {
    double loss = 0.0;
    std::vector<Mat> grad(static_cast<std::size_t>(heads),
                          Mat::Zero(dim, dim));
    for (const auto* rec : train) {
      const auto work = detail::process_sequence(model, state, *rec, false);
      loss += work.loss;
      for (int h = 0; h < heads; ++h) {
        grad[static_cast<std::size_t>(h)] +=
            work.grads[static_cast<std::size_t>(h)];
      }
    }
    loss /= static_cast<double>(train.size());
    losses.push_back(loss);
    if (step == steps) break;
    for (int h = 0; h < heads; ++h) {
      grad[static_cast<std::size_t>(h)] /= static_cast<double>(train.size());
      sgd_step(state[static_cast<std::size_t>(h)],
               grad[static_cast<std::size_t>(h)], lr);
    }
  }
  return losses;
}

}  // namespace statetune
