// Copyright 2026 statetune authors. Apache 2.0 License.
//
// statetune command-line harness.
//
//   gen-data   synthesize a task dataset (JSONL)
//   tune       train an initial state under a regime; checkpoint + report
//   testtime   teacher-guided generation from a checkpoint; transcript
//   gradcheck  finite-difference verification of the rollout gradients
//   bench      micro-benchmarks of the core operations
//   replay     re-run a manifest and verify output digests
//
// Every run writes <out>/manifest.json recording the command, each resolved
// config value with its provenance (default / config file / flag), and a
// digest per output file. Digests of JSON outputs are computed over their
// content with volatile keys (wall-clock fields) removed, so a replay of a
// seeded run reproduces them exactly.
//
// Exit codes: 0 ok, 2 usage/config, 3 training divergence, 4 teacher
// protocol/transport, 5 gradcheck tolerance breach, 1 other errors.

#include "statetune/checkpoint.hpp"
#include "statetune/gradcheck.hpp"
#include "statetune/remote_teacher.hpp"
#include "statetune/tasks.hpp"
#include "statetune/testtime.hpp"
#include "statetune/tuning.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace statetune;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitTeacher = 4;
constexpr int kExitGradcheck = 5;
constexpr int kExitError = 1;

// ---------------------------------------------------------------------------
// Config resolution with provenance: defaults <- config file <- flags.

class OptionSet {
 public:
  explicit OptionSet(CLI::App* cmd) : cmd_(cmd) {
    cmd_->add_option("--config", config_path_,
                     "flat JSON config file (flags override it)");
  }

  template <typename T>
  void add(const std::string& key, T default_value, const std::string& help) {
    values_[key] = default_value;
    sources_[key] = "default";
    auto slot = std::make_shared<T>(default_value);
    cmd_->add_option("--" + key, *slot, help);
    appliers_.push_back([this, key, slot]() {
      if (cmd_->count("--" + key) > 0) {
        values_[key] = *slot;
        sources_[key] = "flag";
      }
    });
  }

  void add_flag(const std::string& key, const std::string& help) {
    values_[key] = false;
    sources_[key] = "default";
    auto slot = std::make_shared<bool>(false);
    cmd_->add_flag("--" + key, *slot, help);
    appliers_.push_back([this, key, slot]() {
      if (cmd_->count("--" + key) > 0) {
        values_[key] = *slot;
        sources_[key] = "flag";
      }
    });
  }

  // Called after CLI11 parsing: fold in the config file, then the flags.
  void finalize() {
    if (!config_path_.empty()) {
      std::ifstream in(config_path_);
      if (!in) {
        throw ConfigError("cannot open config file '" + config_path_ + "'");
      }
      json file;
      try {
        in >> file;
      } catch (const json::exception& e) {
        throw ConfigError("config file '" + config_path_ +
                          "' is not valid JSON: " + e.what());
      }
      if (!file.is_object()) {
        throw ConfigError("config file must hold a flat JSON object");
      }
      for (const auto& [key, value] : file.items()) {
        if (!values_.contains(key)) {
          throw ConfigError("config file key '" + key +
                            "' is not a known option of this command");
        }
        values_[key] = value;
        sources_[key] = "file";
      }
    }
    for (const auto& apply : appliers_) apply();
  }

  // Replay path: override everything from a saved manifest.
  void load_resolved(const json& resolved) {
    for (const auto& [key, entry] : resolved.items()) {
      if (!values_.contains(key)) continue;
      values_[key] = entry.at("value");
      sources_[key] = "replay";
    }
  }

  const json& values() const { return values_; }

  json provenance() const {
    json out = json::object();
    for (const auto& [key, value] : values_.items()) {
      out[key] = json{{"value", value}, {"source", sources_.at(key)}};
    }
    return out;
  }

 private:
  CLI::App* cmd_;
  std::string config_path_;
  json values_ = json::object();
  std::map<std::string, std::string> sources_;
  std::vector<std::function<void()>> appliers_;
};

// ---------------------------------------------------------------------------
// Output digests (volatile keys removed from JSON content).

const std::set<std::string> kVolatileKeys = {"wall_seconds", "seconds"};

json strip_volatile(json j) {
  if (j.is_object()) {
    json out = json::object();
    for (auto& [key, value] : j.items()) {
      if (kVolatileKeys.count(key)) continue;
      out[key] = strip_volatile(value);
    }
    return out;
  }
  if (j.is_array()) {
    json out = json::array();
    for (auto& value : j) out.push_back(strip_volatile(value));
    return out;
  }
  return j;
}

std::uint64_t semantic_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open output '" + path.string() + "'");
  const std::string ext = path.extension().string();
  if (ext == ".json") {
    json j;
    in >> j;
    return fnv1a64(strip_volatile(j).dump());
  }
  if (ext == ".jsonl") {
    std::uint64_t h = kFnvOffset;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      h = fnv1a64(strip_volatile(json::parse(line)).dump(), h);
    }
    return h;
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  return fnv1a64(bytes.data(), bytes.size());
}

struct RunOutputs {
  fs::path out_dir;
  json outputs = json::object();  // relative path -> digest hex

  void record(const std::string& rel) {
    outputs[rel] = hex64(semantic_digest(out_dir / rel));
  }
};

void write_manifest(const RunOutputs& run, const std::string& command,
                    const json& provenance, const json& extra = json()) {
  json manifest{{"format", "statetune-manifest-v1"},
                {"command", command},
                {"config", provenance},
                {"outputs", run.outputs}};
  if (!extra.is_null()) manifest["extra"] = extra;
  std::ofstream out(run.out_dir / "manifest.json");
  out << manifest.dump(2) << "\n";
}

fs::path require_out_dir(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------
// gen-data

void register_gen_data_options(OptionSet& opts) {
  opts.add<std::string>("task", "", "recall | copy | modular-add (required)");
  opts.add<int>("vocab", 32, "vocabulary size (>= 5)");
  opts.add<int>("pairs", 4, "recall: key-value pairs per sequence");
  opts.add<int>("span", 5, "copy: span length");
  opts.add<int>("modulus", 11, "modular-add: modulus");
  opts.add<int>("train", 512, "train split size");
  opts.add<int>("val", 128, "validation split size");
  opts.add<int>("test", 128, "test split size");
  opts.add<std::uint64_t>("seed", 0, "generation seed");
  opts.add<std::string>("out", "", "output directory (required)");
}

int run_gen_data(const json& cfg, const json& provenance) {
  const auto task = cfg.at("task").get<std::string>();
  if (task.empty()) throw ConfigError("--task is required");
  TaskSpec spec;
  spec.kind = task_kind_from_string(task);
  spec.vocab_size = cfg.at("vocab").get<int>();
  switch (spec.kind) {
    case TaskKind::kAssociativeRecall:
      spec.param = cfg.at("pairs").get<int>();
      break;
    case TaskKind::kCopy:
      spec.param = cfg.at("span").get<int>();
      break;
    case TaskKind::kModularAdd:
      spec.param = cfg.at("modulus").get<int>();
      break;
  }
  spec.train_size = cfg.at("train").get<int>();
  spec.val_size = cfg.at("val").get<int>();
  spec.test_size = cfg.at("test").get<int>();
  spec.seed = cfg.at("seed").get<std::uint64_t>();

  const Dataset ds = generate(spec);
  RunOutputs run;
  run.out_dir = require_out_dir(cfg.at("out").get<std::string>());
  save_dataset(ds, (run.out_dir / "dataset.jsonl").string());
  run.record("dataset.jsonl");
  write_manifest(run, "gen-data", provenance,
                 json{{"spec_digest", hex64(spec.digest())},
                      {"content_digest", hex64(ds.content_digest())},
                      {"sequences", ds.records.size()}});
  std::cout << "dataset.jsonl content digest " << hex64(ds.content_digest())
            << " (" << ds.records.size() << " sequences)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// tune

void register_tune_options(OptionSet& opts) {
  opts.add<std::string>("regime", "standard", "standard | kernel | dbp");
  opts.add<std::string>("data", "", "dataset.jsonl path (required)");
  opts.add<std::string>("out", "", "output directory (required)");
  opts.add<int>("epochs", 5, "training epochs");
  opts.add<double>("lr", -1.0,
                   "state learning rate (regime default when unset)");
  opts.add<double>("lr-r", 1e-4, "decorrelation matrix learning rate");
  opts.add<double>("kappa", 0.5, "decorrelation loss mix");
  opts.add<double>("lambda", 0.1, "decorrelation weight in the total loss");
  opts.add<double>("subsample", 0.1, "R-update batch subsample fraction");
  opts.add<int>("batch", 16, "sequences per batch");
  opts.add<std::uint64_t>("seed", 0, "run seed (weights, shuffle, subsample)");
  opts.add<int>("patience", 3, "early-stop patience (epochs)");
  opts.add<int>("threads", 1, "worker threads (results identical)");
  opts.add<double>("w-bias", 5.0, "frozen-stack decay squash bias");
  opts.add<double>("a-bias", -2.0, "frozen-stack erasure squash bias");
  opts.add<int>("embed", 32, "embedding dimension");
  opts.add<int>("heads", 4, "head count");
  opts.add<int>("m", 32, "lifted dimension (kernel/dbp)");
  opts.add<double>("gamma", -1.0,
                   "kernel bandwidth (default 1/(2N) when unset)");
  opts.add<std::string>("supports", "data-centroids",
                        "random-gaussian | data-centroids");
  opts.add<double>("norm-ceiling", 1e4, "state Frobenius norm ceiling");
  opts.add_flag("freeze-r", "dbp: keep R frozen at identity");
}

json dims_to_json(const ModelDims& d) {
  return json{{"vocab_size", d.vocab_size},
              {"embed_dim", d.embed_dim},
              {"num_heads", d.num_heads},
              {"head_dim", d.head_dim}};
}

ModelDims dims_from_json(const json& j) {
  ModelDims d;
  d.vocab_size = j.at("vocab_size").get<int>();
  d.embed_dim = j.at("embed_dim").get<int>();
  d.num_heads = j.at("num_heads").get<int>();
  d.head_dim = j.at("head_dim").get<int>();
  return d;
}

int run_tune(const json& cfg, const json& provenance) {
  const auto data_path = cfg.at("data").get<std::string>();
  if (data_path.empty()) throw ConfigError("--data is required");
  const Dataset ds = load_dataset(data_path);

  const Regime regime =
      regime_from_string(cfg.at("regime").get<std::string>());
  TuneConfig tc = TuneConfig::defaults(regime);
  tc.epochs = cfg.at("epochs").get<int>();
  if (cfg.at("lr").get<double>() >= 0.0) {
    tc.lr_state = cfg.at("lr").get<double>();
  }
  tc.lr_r = cfg.at("lr-r").get<double>();
  tc.kappa = cfg.at("kappa").get<double>();
  tc.lambda = cfg.at("lambda").get<double>();
  tc.subsample_frac = cfg.at("subsample").get<double>();
  tc.batch_size = cfg.at("batch").get<int>();
  tc.seed = cfg.at("seed").get<std::uint64_t>();
  tc.patience = cfg.at("patience").get<int>();
  tc.threads = cfg.at("threads").get<int>();
  tc.freeze_r = cfg.at("freeze-r").get<bool>();
  tc.recurrence.norm_ceiling = cfg.at("norm-ceiling").get<double>();

  ModelDims dims;
  dims.vocab_size = ds.spec.vocab_size;
  dims.embed_dim = cfg.at("embed").get<int>();
  dims.num_heads = cfg.at("heads").get<int>();
  dims.head_dim = dims.embed_dim / std::max(1, dims.num_heads);
  dims.validate();

  const auto weights =
      FrozenWeights::generate(dims, tc.seed, cfg.at("w-bias").get<double>(),
                              cfg.at("a-bias").get<double>());

  std::optional<LiftContext> lift_ctx;
  if (regime != Regime::kStandard) {
    KernelConfig kc;
    kc.m = cfg.at("m").get<int>();
    kc.gamma = cfg.at("gamma").get<double>() > 0.0
                   ? cfg.at("gamma").get<double>()
                   : default_gamma(dims.head_dim);
    kc.selection =
        support_selection_from_string(cfg.at("supports").get<std::string>());
    kc.seed = tc.seed;
    lift_ctx = make_lift_context(weights, kc, &ds);
  }

  TuneResult result;
  switch (regime) {
    case Regime::kStandard:
      result = tune_standard(weights, ds, tc);
      break;
    case Regime::kKernel:
      result = tune_kernel(weights, ds, tc, *lift_ctx);
      break;
    case Regime::kDbp:
      result = tune_dbp(weights, ds, tc, *lift_ctx);
      break;
  }

  RunOutputs run;
  run.out_dir = require_out_dir(cfg.at("out").get<std::string>());

  // Checkpoint: best state plus the fixed lift/dbp tensors.
  Checkpoint ckpt;
  ckpt.meta["dims"] = dims_to_json(dims);
  ckpt.meta["weights"] = json{{"seed", weights.seed},
                              {"w_bias", weights.w_bias},
                              {"a_bias", weights.a_bias},
                              {"digest", hex64(weights.digest)}};
  ckpt.meta["regime"] = to_string(regime);
  ckpt.meta["tune"] = result.report.hyperparameters;
  ckpt.meta["best_epoch"] = result.report.best_epoch;
  ckpt.meta["best_val_accuracy"] = result.report.best_val_accuracy;
  ckpt.meta["diverged"] = result.report.diverged;
  ckpt.tensors.push_back(NamedTensor::from_matrices("state.s0", result.state));
  if (lift_ctx) {
    ckpt.meta["kernel"] = json{
        {"m", lift_ctx->config.m},
        {"gamma", lift_ctx->config.gamma},
        {"selection", to_string(lift_ctx->config.selection)},
        {"seed", lift_ctx->config.seed},
        {"supports_digest", hex64(lift_ctx->supports.digest)},
        {"q_digest", hex64(lift_ctx->q.digest)}};
    ckpt.tensors.push_back(NamedTensor::from_matrix(
        "kernel.supports", lift_ctx->supports.vectors));
    ckpt.tensors.push_back(NamedTensor::from_matrix("kernel.q", lift_ctx->q.q));
  }
  if (result.decorrelator) {
    ckpt.meta["dbp"] = json{{"kappa", result.decorrelator->kappa},
                            {"epsilon", result.decorrelator->epsilon},
                            {"subsample_frac", tc.subsample_frac},
                            {"subsample_seed_root", tc.seed},
                            {"steps", result.decorrelator->steps}};
    ckpt.tensors.push_back(
        NamedTensor::from_matrix("dbp.R", result.decorrelator->r));
  }
  save_checkpoint(ckpt, (run.out_dir / "checkpoint.stc").string());
  run.record("checkpoint.stc");

  {
    std::ofstream report(run.out_dir / "report.jsonl");
    for (const auto& e : result.report.epochs) {
      report << e.to_json().dump() << "\n";
    }
  }
  run.record("report.jsonl");

  write_manifest(
      run, "tune", provenance,
      json{{"hyperparameters", result.report.hyperparameters},
           {"trainable_scalars", result.report.trainable_scalars},
           {"best_epoch", result.report.best_epoch},
           {"best_val_accuracy", result.report.best_val_accuracy},
           {"diverged", result.report.diverged},
           {"divergence_reason", result.report.divergence_reason},
           {"weights_digest", hex64(weights.digest)}});

  if (result.report.diverged) {
    std::cerr << "tune: diverged (" << result.report.divergence_reason
              << "); last-good checkpoint at "
              << (run.out_dir / "checkpoint.stc").string() << "\n";
    return kExitDivergence;
  }
  std::cout << "tune: best val accuracy " << result.report.best_val_accuracy
            << " (epoch " << result.report.best_epoch << "), checkpoint "
            << (run.out_dir / "checkpoint.stc").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// testtime

void register_testtime_options(OptionSet& opts) {
  opts.add<std::string>("checkpoint", "", "checkpoint path (required)");
  opts.add<std::string>("teacher", "scripted", "scripted | remote");
  opts.add<std::string>("mode", "distill", "distill | reinforce");
  opts.add<std::string>("data", "",
                        "dataset for the scripted teacher's instance");
  opts.add<int>("instance", 0, "dataset test-split instance index");
  opts.add<double>("confidence", 8.0, "scripted teacher logit margin");
  opts.add<std::string>("endpoint", "",
                        "remote teacher http://host:port/path");
  opts.add<int>("timeout-ms", 1000, "remote teacher timeout per attempt");
  opts.add<int>("retries", 3, "remote teacher attempts");
  opts.add<int>("iterations", 5, "inner ascent steps per token");
  opts.add<double>("eta", 0.01, "ascent step size");
  opts.add<double>("tau", 1.0, "sampling temperature");
  opts.add_flag("greedy", "argmax decoding (tau -> 0 preset)");
  opts.add<double>("terminal-bonus", 1.0, "reinforce terminal reward");
  opts.add<int>("max-len", 64, "generation cap");
  opts.add<std::uint64_t>("seed", 0, "sampler seed");
  opts.add<std::string>("out", "", "output directory (required)");
}

struct LoadedCheckpoint {
  ModelDims dims;
  FrozenWeights weights;
  std::vector<Mat> state;
  std::optional<LiftContext> lift;
  std::optional<Decorrelator> decor;
  std::string regime;
};

LoadedCheckpoint load_model_checkpoint(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  LoadedCheckpoint out;
  out.dims = dims_from_json(ckpt.meta.at("dims"));
  const auto& w = ckpt.meta.at("weights");
  out.weights = FrozenWeights::generate(
      out.dims, w.at("seed").get<std::uint64_t>(),
      w.at("w_bias").get<double>(), w.at("a_bias").get<double>());
  if (hex64(out.weights.digest) != w.at("digest").get<std::string>()) {
    throw FormatError(
        "checkpoint: regenerated frozen weights digest mismatch");
  }
  out.state = ckpt.tensor("state.s0").to_matrices();
  out.regime = ckpt.meta.value("regime", "standard");
  if (ckpt.meta.contains("kernel")) {
    const auto& k = ckpt.meta.at("kernel");
    LiftContext ctx;
    ctx.config.m = k.at("m").get<int>();
    ctx.config.gamma = k.at("gamma").get<double>();
    ctx.config.selection =
        support_selection_from_string(k.at("selection").get<std::string>());
    ctx.config.seed = k.at("seed").get<std::uint64_t>();
    ctx.supports.vectors = ckpt.tensor("kernel.supports").to_matrix();
    ctx.supports.digest = ctx.supports.compute_digest();
    ctx.q.q = ckpt.tensor("kernel.q").to_matrix();
    ctx.q.digest = ctx.q.compute_digest();
    if (hex64(ctx.supports.digest) !=
        k.at("supports_digest").get<std::string>()) {
      throw FormatError("checkpoint: support digest mismatch");
    }
    if (hex64(ctx.q.digest) != k.at("q_digest").get<std::string>()) {
      throw FormatError("checkpoint: projection digest mismatch");
    }
    out.lift = std::move(ctx);
  }
  if (ckpt.has_tensor("dbp.R")) {
    Decorrelator d;
    d.r = ckpt.tensor("dbp.R").to_matrix();
    d.kappa = ckpt.meta.at("dbp").at("kappa").get<double>();
    d.epsilon = ckpt.meta.at("dbp").at("epsilon").get<double>();
    d.steps = ckpt.meta.at("dbp").at("steps").get<long long>();
    out.decor = std::move(d);
  }
  return out;
}

int run_testtime(const json& cfg, const json& provenance) {
  TestTimeConfig tt;
  tt.iterations = cfg.at("iterations").get<int>();
  tt.eta = cfg.at("eta").get<double>();
  tt.tau = cfg.at("tau").get<double>();
  tt.greedy = cfg.at("greedy").get<bool>();
  tt.terminal_bonus = cfg.at("terminal-bonus").get<double>();
  tt.max_length = cfg.at("max-len").get<int>();
  tt.sampler_seed = cfg.at("seed").get<std::uint64_t>();
  tt.mode = testtime_mode_from_string(cfg.at("mode").get<std::string>());
  tt.validate();

  const auto ckpt_path = cfg.at("checkpoint").get<std::string>();
  if (ckpt_path.empty()) throw ConfigError("--checkpoint is required");
  LoadedCheckpoint model_ckpt = load_model_checkpoint(ckpt_path);

  const auto teacher_kind = cfg.at("teacher").get<std::string>();
  std::unique_ptr<TeacherOracle> teacher;
  std::vector<int> prompt;
  std::vector<int> truth;
  if (teacher_kind == "scripted") {
    const auto data_path = cfg.at("data").get<std::string>();
    if (data_path.empty()) {
      throw ConfigError("scripted teacher needs --data");
    }
    const Dataset ds = load_dataset(data_path);
    const auto test = ds.split(Split::kTest);
    const int idx = cfg.at("instance").get<int>();
    if (idx < 0 || idx >= static_cast<int>(test.size())) {
      throw ConfigError("--instance out of range (test split has " +
                        std::to_string(test.size()) + ")");
    }
    const auto& rec = *test[static_cast<std::size_t>(idx)];
    prompt.assign(rec.tokens.begin(), rec.tokens.begin() + rec.target_start);
    truth.assign(rec.tokens.begin() + rec.target_start,
                 rec.tokens.begin() + rec.target_start + rec.target_len);
    teacher =
        scripted_teacher(prompt.size(), truth, model_ckpt.dims.vocab_size,
                         cfg.at("confidence").get<double>());
  } else if (teacher_kind == "remote") {
    const auto endpoint = cfg.at("endpoint").get<std::string>();
    if (endpoint.empty()) throw ConfigError("remote teacher needs --endpoint");
    auto rc = parse_teacher_endpoint(endpoint, model_ckpt.dims.vocab_size);
    rc.timeout_ms = cfg.at("timeout-ms").get<int>();
    rc.retries = cfg.at("retries").get<int>();
    teacher = std::make_unique<RemoteTeacher>(rc);
    prompt = {kTokBos};
  } else {
    throw ConfigError("unknown teacher kind '" + teacher_kind + "'");
  }

  Transcript transcript;
  if (model_ckpt.lift) {
    const LiftedModel model(model_ckpt.weights, *model_ckpt.lift,
                            model_ckpt.decor ? &*model_ckpt.decor : nullptr);
    transcript = guided_generate(model, model_ckpt.state, prompt, *teacher, tt);
  } else {
    const BaseModel model(model_ckpt.weights);
    transcript = guided_generate(model, model_ckpt.state, prompt, *teacher, tt);
  }

  RunOutputs run;
  run.out_dir = require_out_dir(cfg.at("out").get<std::string>());
  json tj = transcript.to_json();
  if (!truth.empty()) {
    tj["reference"] = truth;
    tj["exact_match"] = transcript.generated == truth;
  }
  {
    std::ofstream out(run.out_dir / "transcript.json");
    out << tj.dump(2) << "\n";
  }
  run.record("transcript.json");
  write_manifest(run, "testtime", provenance,
                 json{{"generated", transcript.generated},
                      {"hit_max_length", transcript.hit_max_length}});
  std::cout << "testtime: generated " << transcript.generated.size()
            << " tokens -> " << (run.out_dir / "transcript.json").string()
            << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

void register_gradcheck_options(OptionSet& opts) {
  opts.add<int>("n", 6, "head dimension");
  opts.add<int>("heads", 2, "head count");
  opts.add<int>("t", 10, "rollout length");
  opts.add<int>("vocab", 16, "vocabulary");
  opts.add<int>("m", 12, "lifted dimension");
  opts.add<double>("gamma", 0.8, "lifted bandwidth");
  opts.add<double>("tol", 1e-5, "max relative error tolerance");
  opts.add<double>("fd-step", 1e-5, "central difference step (base)");
  opts.add<double>("fd-step-lifted", 1e-4, "central difference step (lifted)");
  opts.add<std::uint64_t>("seed", 0, "seed");
  opts.add<std::string>("out", "", "output directory (required)");
}

int run_gradcheck(const json& cfg, const json& provenance) {
  GradCheckConfig gc;
  gc.head_dim = cfg.at("n").get<int>();
  gc.heads = cfg.at("heads").get<int>();
  gc.steps = cfg.at("t").get<int>();
  gc.vocab = cfg.at("vocab").get<int>();
  gc.m = cfg.at("m").get<int>();
  gc.gamma = cfg.at("gamma").get<double>();
  gc.fd_step = cfg.at("fd-step").get<double>();
  gc.fd_step_lifted = cfg.at("fd-step-lifted").get<double>();
  gc.seed = cfg.at("seed").get<std::uint64_t>();
  const double tol = cfg.at("tol").get<double>();

  const auto base = run_base_gradcheck(gc);
  const auto lifted = run_lifted_gradcheck(gc);

  const auto suite_json = [](const GradCheckResult& r) {
    return json{{"suite", r.name},
                {"max_rel_error", r.max_rel_error},
                {"worst_head", r.worst_head},
                {"worst_row", r.worst_row},
                {"worst_col", r.worst_col},
                {"seconds", r.seconds}};
  };
  const bool pass = base.max_rel_error < tol && lifted.max_rel_error < tol;

  RunOutputs run;
  run.out_dir = require_out_dir(cfg.at("out").get<std::string>());
  {
    std::ofstream out(run.out_dir / "gradcheck.json");
    out << json{{"tolerance", tol},
                {"pass", pass},
                {"suites",
                 json::array({suite_json(base), suite_json(lifted)})}}
               .dump(2)
        << "\n";
  }
  run.record("gradcheck.json");
  write_manifest(run, "gradcheck", provenance, json{{"pass", pass}});

  for (const auto& r : {base, lifted}) {
    std::cout << "gradcheck " << r.name << ": max rel error "
              << r.max_rel_error << " at head " << r.worst_head << " entry ("
              << r.worst_row << "," << r.worst_col << ") "
              << (r.max_rel_error < tol ? "PASS" : "FAIL") << "\n";
  }
  return pass ? kExitOk : kExitGradcheck;
}

// ---------------------------------------------------------------------------
// bench

void register_bench_options(OptionSet& opts) {
  opts.add<int>("iters", 2000, "timed iterations per operation");
  opts.add<std::uint64_t>("seed", 0, "seed");
  opts.add<std::string>("out", "", "output directory (required)");
}

template <typename F>
double ns_per_op(int iters, F&& op) {
  for (int i = 0; i < iters / 10 + 1; ++i) op();  // warm
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < iters; ++i) op();
  const auto dt = std::chrono::steady_clock::now() - t0;
  return std::chrono::duration<double, std::nano>(dt).count() / iters;
}

int run_bench(const json& cfg, const json& provenance) {
  const int iters = cfg.at("iters").get<int>();
  const auto seed = cfg.at("seed").get<std::uint64_t>();
  Rng rng(seed);
  json results = json::array();

  for (const int n : {8, 16, 32}) {
    ProjectionBundle b;
    b.w = Vec::Constant(n, 0.9);
    b.a = Vec::Constant(n, 0.2);
    b.k = rng.normal_vec(n).normalized();
    b.v = rng.normal_vec(n);
    b.r = rng.normal_vec(n);
    Mat s = Mat::Zero(n, n);
    const double ns = ns_per_op(iters, [&]() { s = state_step(s, b); });
    results.push_back(
        {{"op", "state_step"}, {"n", n}, {"ns_per_op", ns}, {"iters", iters}});
  }

  for (const int m : {32, 64, 128}) {
    const int n = 8;
    const auto supports = select_supports(SupportSelection::kRandomGaussian,
                                          nullptr, m, n, seed);
    Rng brng(seed + 1);
    ProjectionBundle p;
    p.w = Vec::Constant(n, 0.9);
    p.a = Vec::Constant(n, 0.2);
    p.k = brng.normal_vec(n).normalized();
    p.v = brng.normal_vec(n);
    p.r = brng.normal_vec(n);

    double sink = 0.0;
    const double lift_ns = ns_per_op(iters, [&]() {
      const auto lb = lift(p, supports, 2.0);
      sink += lb.w(0);
    });
    results.push_back(
        {{"op", "lift"}, {"m", m}, {"ns_per_op", lift_ns}, {"iters", iters}});

    // Keep the lifted step contracting so the loop can run indefinitely.
    LiftedBundle lb = lift(p, supports, 2.0);
    lb.w = Vec::Constant(m, 0.5);
    lb.a = Vec::Constant(m, 1e-3);
    Mat s = Mat::Zero(m, m);
    const double step_ns =
        ns_per_op(iters, [&]() { s = lifted_state_step(s, lb); });
    results.push_back({{"op", "lifted_state_step"},
                       {"m", m},
                       {"ns_per_op", step_ns},
                       {"iters", iters}});

    std::vector<Vec> batch;
    Rng vrng(seed + 2);
    for (int i = 0; i < 64; ++i) batch.push_back(vrng.normal_vec(m));
    auto decor = Decorrelator::identity(m, 1e-4, 0.5);
    std::uint64_t update = 0;
    const int upd_iters = std::max(iters / 10, 50);
    const double upd_ns = ns_per_op(upd_iters, [&]() {
      update_R(decor, batch, 0.1, seed + (++update));
    });
    results.push_back({{"op", "update_R"},
                       {"m", m},
                       {"ns_per_op", upd_ns},
                       {"iters", upd_iters}});
    (void)sink;
  }

  {
    const auto weights =
        FrozenWeights::generate(ModelDims{64, 32, 4, 8}, seed);
    const BaseModel model(weights);
    auto states = model.zero_state();
    std::vector<Vec> recepts;
    AdvanceHooks hooks;
    hooks.recepts = &recepts;
    model.advance(states, 1, hooks);
    TeacherStep step;
    step.token = 2;
    step.logits = Vec::Zero(64);
    step.logits(2) = 8.0;
    TestTimeConfig ttc;
    Rng srng(seed);
    const int tt_iters = std::max(iters / 10, 50);
    const double ns = ns_per_op(tt_iters, [&]() {
      auto s = states;
      tune_state_step(model, s, recepts, step, ttc, srng);
    });
    results.push_back({{"op", "tune_state_step"},
                       {"n", 8},
                       {"ns_per_op", ns},
                       {"iters", tt_iters}});
  }

  RunOutputs run;
  run.out_dir = require_out_dir(cfg.at("out").get<std::string>());
  {
    std::ofstream out(run.out_dir / "bench.json");
    out << json{{"fingerprint",
                 json{{"hardware_concurrency",
                       std::thread::hardware_concurrency()},
                      {"compiler", __VERSION__},
                      {"pointer_bits", sizeof(void*) * 8}}},
                {"results", results}}
               .dump(2)
        << "\n";
  }
  // Timings are machine-dependent; bench outputs are not replay-checked.
  write_manifest(run, "bench", provenance, json{{"replayable", false}});
  for (const auto& r : results) {
    std::cout << "bench " << r.at("op").get<std::string>() << " ";
    if (r.contains("n")) std::cout << "n=" << r.at("n").get<int>();
    if (r.contains("m")) std::cout << "m=" << r.at("m").get<int>();
    std::cout << ": " << r.at("ns_per_op").get<double>() << " ns/op\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// replay

int run_replay(const std::string& manifest_path, const std::string& out_dir) {
  std::ifstream in(manifest_path);
  if (!in) throw ConfigError("cannot open manifest '" + manifest_path + "'");
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw FormatError("manifest is not valid JSON: " + std::string(e.what()));
  }
  const auto command = manifest.at("command").get<std::string>();
  if (command == "bench") {
    std::cout << "replay: bench runs are timing-only, nothing to verify\n";
    return kExitOk;
  }

  // Re-run the command with the recorded config into the new out dir.
  CLI::App shadow("replay-shadow");
  CLI::App* sub = shadow.add_subcommand(command);
  OptionSet opts(sub);
  if (command == "gen-data") {
    register_gen_data_options(opts);
  } else if (command == "tune") {
    register_tune_options(opts);
  } else if (command == "testtime") {
    register_testtime_options(opts);
  } else if (command == "gradcheck") {
    register_gradcheck_options(opts);
  } else {
    throw ConfigError("replay: unsupported command '" + command + "'");
  }
  opts.load_resolved(manifest.at("config"));

  json values = opts.values();
  values["out"] = out_dir;
  json provenance = opts.provenance();
  provenance["out"] = json{{"value", out_dir}, {"source", "replay"}};

  int code = kExitError;
  if (command == "gen-data") {
    code = run_gen_data(values, provenance);
  } else if (command == "tune") {
    code = run_tune(values, provenance);
  } else if (command == "testtime") {
    code = run_testtime(values, provenance);
  } else if (command == "gradcheck") {
    code = run_gradcheck(values, provenance);
  }
  if (code != kExitOk && code != kExitDivergence) return code;

  const auto& expected = manifest.at("outputs");
  bool all_ok = true;
  for (const auto& [rel, digest] : expected.items()) {
    const auto replayed = hex64(semantic_digest(fs::path(out_dir) / rel));
    const bool ok = replayed == digest.get<std::string>();
    all_ok = all_ok && ok;
    std::cout << "replay " << rel << ": " << (ok ? "OK" : "MISMATCH")
              << " (expected " << digest.get<std::string>() << ", got "
              << replayed << ")\n";
  }
  if (expected.empty()) {
    std::cout << "replay: manifest lists no outputs\n";
  }
  return all_ok ? kExitOk : kExitError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("statetune: desk-scale state-tuning laboratory for "
               "matrix-state recurrent sequence models");
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  OptionSet gen_opts(gen);
  register_gen_data_options(gen_opts);

  auto* tune = app.add_subcommand("tune", "train an initial state");
  OptionSet tune_opts(tune);
  register_tune_options(tune_opts);

  auto* tt = app.add_subcommand("testtime", "teacher-guided generation");
  OptionSet tt_opts(tt);
  register_testtime_options(tt_opts);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference verification");
  OptionSet gc_opts(gc);
  register_gradcheck_options(gc_opts);

  auto* bench = app.add_subcommand("bench", "micro-benchmarks");
  OptionSet bench_opts(bench);
  register_bench_options(bench_opts);

  auto* replay = app.add_subcommand("replay", "re-run a manifest and verify");
  std::string replay_manifest, replay_out;
  replay->add_option("--manifest", replay_manifest, "manifest.json path")
      ->required();
  replay->add_option("--out", replay_out, "directory for the replayed run")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      gen_opts.finalize();
      return run_gen_data(gen_opts.values(), gen_opts.provenance());
    }
    if (tune->parsed()) {
      tune_opts.finalize();
      return run_tune(tune_opts.values(), tune_opts.provenance());
    }
    if (tt->parsed()) {
      tt_opts.finalize();
      return run_testtime(tt_opts.values(), tt_opts.provenance());
    }
    if (gc->parsed()) {
      gc_opts.finalize();
      return run_gradcheck(gc_opts.values(), gc_opts.provenance());
    }
    if (bench->parsed()) {
      bench_opts.finalize();
      return run_bench(bench_opts.values(), bench_opts.provenance());
    }
    if (replay->parsed()) {
      return run_replay(replay_manifest, replay_out);
    }
  } catch (const ProtocolError& e) {
    std::cerr << "teacher protocol error: " << e.what() << "\n";
    return kExitTeacher;
  } catch (const TransportError& e) {
    std::cerr << "teacher transport error: " << e.what() << "\n";
    return kExitTeacher;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitUsage;
}
