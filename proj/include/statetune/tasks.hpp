// Copyright 2026 statetune authors. Apache 2.0 License.
//
// Synthetic sequence tasks with verifiable ground truth.
//
//   associative-recall: a per-dataset key->value table is sampled once from
//     the dataset seed; each sequence shows `param` of those pairs in random
//     order, then queries one of the shown keys. The answer is the queried
//     key's table value, so it is always present in context and the
//     knowledge being probed is fixed across the dataset.
//   copy: a random span, a separator, then the span again.
//   modular-add: two operands and their sum mod `param`.
//
// Token ids 0-3 are reserved: BOS, SEP, QUERY, EOS. Content tokens start at
// 4. Sequences are exact-match deduplicated across all splits.
//
// Persistence is line-delimited JSON: a header line carrying the spec, its
// digest, and a content digest, then one record per line.

#pragma once

#include "statetune/loss.hpp"
#include "statetune/rng.hpp"

#include <json.hpp>

#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

namespace statetune {

inline constexpr int kTokBos = 0;
inline constexpr int kTokSep = 1;
inline constexpr int kTokQuery = 2;
inline constexpr int kTokEos = 3;
inline constexpr int kReservedTokens = 4;

enum class TaskKind { kAssociativeRecall, kCopy, kModularAdd };

inline const char* to_string(TaskKind k) {
  switch (k) {
    case TaskKind::kAssociativeRecall: return "recall";
    case TaskKind::kCopy: return "copy";
    case TaskKind::kModularAdd: return "modular-add";
  }
  return "?";
}

inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "recall") return TaskKind::kAssociativeRecall;
  if (s == "copy") return TaskKind::kCopy;
  if (s == "modular-add") return TaskKind::kModularAdd;
  throw ConfigError("unknown task kind '" + s + "'");
}

struct TaskSpec {
  TaskKind kind = TaskKind::kAssociativeRecall;
  int vocab_size = 32;
  // Per-kind knob: key-value pairs shown (recall), span length (copy),
  // modulus (modular-add).
  int param = 4;
  int train_size = 512;
  int val_size = 128;
  int test_size = 128;
  std::uint64_t seed = 0;

  void validate() const {
    if (train_size < 1 || val_size < 1 || test_size < 1) {
      throw InputError("TaskSpec: split sizes must be >= 1");
    }
    if (vocab_size <= kReservedTokens) {
      throw InputError("TaskSpec: vocab must exceed the " +
                       std::to_string(kReservedTokens) + " reserved tokens");
    }
    if (param < 1) {
      throw InputError("TaskSpec: param must be >= 1");
    }
    switch (kind) {
      case TaskKind::kAssociativeRecall: {
        const int half = (vocab_size - kReservedTokens) / 2;
        if (param > half) {
          throw InputError(
              "TaskSpec: recall needs " + std::to_string(param) +
              " distinct keys but vocab " + std::to_string(vocab_size) +
              " only provides " + std::to_string(half));
        }
        break;
      }
      case TaskKind::kCopy:
        break;
      case TaskKind::kModularAdd:
        if (param > vocab_size - kReservedTokens) {
          throw InputError("TaskSpec: modulus " + std::to_string(param) +
                           " exceeds available content tokens");
        }
        break;
    }
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"kind", to_string(kind)},
                          {"vocab_size", vocab_size},
                          {"param", param},
                          {"train_size", train_size},
                          {"val_size", val_size},
                          {"test_size", test_size},
                          {"seed", seed}};
  }

  static TaskSpec from_json(const nlohmann::json& j) {
    TaskSpec s;
    s.kind = task_kind_from_string(j.at("kind").get<std::string>());
    s.vocab_size = j.at("vocab_size").get<int>();
    s.param = j.at("param").get<int>();
    s.train_size = j.at("train_size").get<int>();
    s.val_size = j.at("val_size").get<int>();
    s.test_size = j.at("test_size").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
  }

  std::uint64_t digest() const { return fnv1a64(to_json().dump()); }
};

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw FormatError("unknown split '" + s + "'");
}

struct SequenceRecord {
  Split split = Split::kTrain;
  std::vector<int> tokens;
  int target_start = 0;
  int target_len = 0;
};

struct Dataset {
  TaskSpec spec;
  std::vector<SequenceRecord> records;

  std::vector<const SequenceRecord*> split(Split s) const {
    std::vector<const SequenceRecord*> out;
    for (const auto& r : records) {
      if (r.split == s) out.push_back(&r);
    }
    return out;
  }

  // Digest over the serialized record lines (order-sensitive).
  std::uint64_t content_digest() const {
    std::uint64_t h = kFnvOffset;
    for (const auto& r : records) {
      h = fnv1a64(record_line(r), h);
    }
    return h;
  }

  static std::string record_line(const SequenceRecord& r) {
    nlohmann::json j{{"split", to_string(r.split)},
                     {"tokens", r.tokens},
                     {"target_start", r.target_start},
                     {"target_len", r.target_len}};
    return j.dump();
  }
};

// ---------------------------------------------------------------------------
// Generation.

namespace detail {

inline SequenceRecord make_recall_sequence(const TaskSpec& spec,
                                           const std::vector<int>& table,
                                           Rng& rng) {
  const int half = (spec.vocab_size - kReservedTokens) / 2;
  const auto key_idx = rng.sample_indices(static_cast<std::size_t>(half),
                                          static_cast<std::size_t>(spec.param));
  SequenceRecord rec;
  rec.tokens.push_back(kTokBos);
  for (const auto ki : key_idx) {
    rec.tokens.push_back(kReservedTokens + static_cast<int>(ki));
    rec.tokens.push_back(table[ki]);
  }
  const auto q = key_idx[static_cast<std::size_t>(rng.below(key_idx.size()))];
  rec.tokens.push_back(kTokQuery);
  rec.tokens.push_back(kReservedTokens + static_cast<int>(q));
  rec.tokens.push_back(table[q]);
  rec.target_start = static_cast<int>(rec.tokens.size()) - 1;
  rec.target_len = 1;
  return rec;
}

inline SequenceRecord make_copy_sequence(const TaskSpec& spec, Rng& rng) {
  const int content = spec.vocab_size - kReservedTokens;
  SequenceRecord rec;
  rec.tokens.push_back(kTokBos);
  std::vector<int> span;
  for (int i = 0; i < spec.param; ++i) {
    span.push_back(kReservedTokens + rng.below_int(content));
  }
  for (int t : span) rec.tokens.push_back(t);
  rec.tokens.push_back(kTokSep);
  rec.target_start = static_cast<int>(rec.tokens.size());
  for (int t : span) rec.tokens.push_back(t);
  rec.target_len = spec.param;
  return rec;
}

inline SequenceRecord make_modadd_sequence(const TaskSpec& spec, Rng& rng) {
  const int m = spec.param;
  const int a = rng.below_int(m);
  const int b = rng.below_int(m);
  SequenceRecord rec;
  rec.tokens = {kTokBos,   kReservedTokens + a, kTokSep,
                kReservedTokens + b, kTokQuery,
                kReservedTokens + (a + b) % m};
  rec.target_start = static_cast<int>(rec.tokens.size()) - 1;
  rec.target_len = 1;
  return rec;
}

}  // namespace detail

// The recall table for a spec's seed: table[i] is the value token bound to
// key token kReservedTokens + i. Exposed so oracles and teachers can verify
// answers independently of any generated dataset.
inline std::vector<int> recall_table(const TaskSpec& spec) {
  const int half = (spec.vocab_size - kReservedTokens) / 2;
  std::vector<int> values(static_cast<std::size_t>(half));
  for (int i = 0; i < half; ++i) {
    values[static_cast<std::size_t>(i)] = kReservedTokens + half + i;
  }
  Rng rng(derive_seed(spec.seed, "recall-table"));
  rng.shuffle(values);
  return values;
}

inline Dataset generate(const TaskSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;

  const std::size_t total = static_cast<std::size_t>(spec.train_size) +
                            static_cast<std::size_t>(spec.val_size) +
                            static_cast<std::size_t>(spec.test_size);
  std::vector<int> table;
  if (spec.kind == TaskKind::kAssociativeRecall) {
    table = recall_table(spec);
  }

  Rng rng(derive_seed(spec.seed, "task-sequences"));
  std::set<std::vector<int>> seen;
  std::size_t attempts = 0;
  const std::size_t max_attempts = 1000 * total + 1000;
  while (seen.size() < total) {
    if (++attempts > max_attempts) {
      throw InputError("generate: cannot draw " + std::to_string(total) +
                       " distinct sequences for this spec (space too small)");
    }
    SequenceRecord rec;
    switch (spec.kind) {
      case TaskKind::kAssociativeRecall:
        rec = detail::make_recall_sequence(spec, table, rng);
        break;
      case TaskKind::kCopy:
        rec = detail::make_copy_sequence(spec, rng);
        break;
      case TaskKind::kModularAdd:
        rec = detail::make_modadd_sequence(spec, rng);
        break;
    }
    if (!seen.insert(rec.tokens).second) continue;
    const std::size_t i = ds.records.size();
    rec.split = i < static_cast<std::size_t>(spec.train_size) ? Split::kTrain
                : i < static_cast<std::size_t>(spec.train_size + spec.val_size)
                    ? Split::kVal
                    : Split::kTest;
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Evaluation.

// Produces per-step vocab logits for a token sequence.
using ModelFn = std::function<std::vector<Vec>(const std::vector<int>&)>;

struct Metrics {
  double token_accuracy = 0.0;
  double mean_loss = 0.0;
  std::size_t target_tokens = 0;
  std::map<std::string, double> per_kind_accuracy;
};

inline int argmax_lowest(const Vec& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

inline Metrics evaluate(const ModelFn& model, const Dataset& ds, Split split) {
  const auto seqs = ds.split(split);
  if (seqs.empty()) {
    throw InputError("evaluate: empty split");
  }
  Metrics m;
  std::vector<Vec> pooled_logits;
  std::vector<int> pooled_targets;
  std::size_t correct = 0;
  for (const auto* rec : seqs) {
    if (rec->target_len < 1 || rec->target_start < 1 ||
        rec->target_start + rec->target_len >
            static_cast<int>(rec->tokens.size())) {
      throw InputError("evaluate: malformed target span");
    }
    const auto logits = model(rec->tokens);
    for (int i = 0; i < rec->target_len; ++i) {
      const int pos = rec->target_start + i;
      const Vec& pred = logits[static_cast<std::size_t>(pos - 1)];
      if (argmax_lowest(pred) == rec->tokens[static_cast<std::size_t>(pos)]) {
        ++correct;
      }
      pooled_logits.push_back(pred);
      pooled_targets.push_back(rec->tokens[static_cast<std::size_t>(pos)]);
    }
  }
  m.target_tokens = pooled_targets.size();
  m.token_accuracy =
      static_cast<double>(correct) / static_cast<double>(m.target_tokens);
  m.mean_loss = task_loss(pooled_logits, pooled_targets).value;
  m.per_kind_accuracy[to_string(ds.spec.kind)] = m.token_accuracy;
  return m;
}

// ---------------------------------------------------------------------------
// Persistence (JSON lines).

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw FormatError("save_dataset: cannot open '" + path + "'");
  }
  nlohmann::json header{{"format", "statetune-dataset-v1"},
                        {"spec", ds.spec.to_json()},
                        {"spec_digest", hex64(ds.spec.digest())},
                        {"content_digest", hex64(ds.content_digest())},
                        {"count", ds.records.size()}};
  out << header.dump() << "\n";
  for (const auto& r : ds.records) {
    out << Dataset::record_line(r) << "\n";
  }
  if (!out) {
    throw FormatError("save_dataset: write failed on '" + path + "'");
  }
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw FormatError("load_dataset: cannot open '" + path + "'");
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw FormatError("load_dataset: empty file '" + path + "'");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("load_dataset: malformed header line 1: " +
                      std::string(e.what()));
  }
  Dataset ds;
  std::size_t expected_count = 0;
  std::string spec_digest, content_digest;
  try {
    ds.spec = TaskSpec::from_json(header.at("spec"));
    spec_digest = header.at("spec_digest").get<std::string>();
    content_digest = header.at("content_digest").get<std::string>();
    expected_count = header.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("load_dataset: bad header fields: " +
                      std::string(e.what()));
  }
  if (hex64(ds.spec.digest()) != spec_digest) {
    throw FormatError("load_dataset: spec digest mismatch (header says " +
                      spec_digest + ", recomputed " +
                      hex64(ds.spec.digest()) + ")");
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      SequenceRecord r;
      r.split = split_from_string(j.at("split").get<std::string>());
      r.tokens = j.at("tokens").get<std::vector<int>>();
      r.target_start = j.at("target_start").get<int>();
      r.target_len = j.at("target_len").get<int>();
      ds.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("load_dataset: malformed record at line " +
                        std::to_string(line_no) + " (last good line " +
                        std::to_string(line_no - 1) +
                        "): " + std::string(e.what()));
    }
    const auto& r = ds.records.back();
    if (r.target_len < 1 || r.target_start < 1 ||
        r.target_start + r.target_len > static_cast<int>(r.tokens.size())) {
      throw FormatError("load_dataset: target span out of bounds at line " +
                        std::to_string(line_no));
    }
  }
  if (ds.records.size() != expected_count) {
    throw FormatError("load_dataset: truncated file; header declares " +
                      std::to_string(expected_count) + " records, read " +
                      std::to_string(ds.records.size()) +
                      " (last good line " + std::to_string(line_no) + ")");
  }
  if (hex64(ds.content_digest()) != content_digest) {
    throw FormatError("load_dataset: content digest mismatch");
  }
  return ds;
}

}  // namespace statetune
