// Copyright 2026 statetune authors. Apache 2.0 License.
//
// The frozen "pre-trained" stack: a seeded token embedding, five projection
// matrices (one per recurrence vector), and an output head. Nothing in here
// is ever trained; a content digest is stored at generation time and
// re-verified whenever a checkpoint referencing these weights is loaded.
//
// The squash biases deserve a note. Raw projections of a unit-norm embedding
// have std ~ 1/sqrt(embed_dim), so an unbiased logistic would put the decay
// vector w near 0.5 and the state would forget everything within a handful
// of tokens — at which point no amount of initial-state tuning can matter.
// w_bias shifts the decay band up (~0.99 at the default) and a_bias softens
// the erasure gate, which keeps the transition non-expanding while leaving
// the initial state visible across desk-scale sequence lengths.

#pragma once

#include "statetune/dims.hpp"
#include "statetune/rng.hpp"

namespace statetune {

struct FrozenWeights {
  ModelDims dims;
  std::uint64_t seed = 0;
  double w_bias = 5.0;
  double a_bias = -2.0;

  Mat embedding;   // vocab x C
  Mat proj_w;      // C x C, applied as raw = P * e
  Mat proj_k;
  Mat proj_a;
  Mat proj_v;
  Mat proj_r;
  Mat output_head; // C x vocab

  std::uint64_t digest = 0;

  static FrozenWeights generate(const ModelDims& dims, std::uint64_t seed,
                                double w_bias = 5.0, double a_bias = -2.0) {
    dims.validate();
    FrozenWeights w;
    w.dims = dims;
    w.seed = seed;
    w.w_bias = w_bias;
    w.a_bias = a_bias;

    const int c = dims.embed_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(c));
    Rng rng(derive_seed(seed, "frozen-weights"));
    w.embedding = rng.normal_mat(dims.vocab_size, c, scale);
    w.proj_w = rng.normal_mat(c, c, scale);
    w.proj_k = rng.normal_mat(c, c, scale);
    w.proj_a = rng.normal_mat(c, c, scale);
    w.proj_v = rng.normal_mat(c, c, scale);
    w.proj_r = rng.normal_mat(c, c, scale);
    w.output_head = rng.normal_mat(c, dims.vocab_size, scale);
    w.digest = w.compute_digest();
    return w;
  }

  std::uint64_t compute_digest() const {
    std::uint64_t h = kFnvOffset;
    h = digest_f32(embedding, h);
    h = digest_f32(proj_w, h);
    h = digest_f32(proj_k, h);
    h = digest_f32(proj_a, h);
    h = digest_f32(proj_v, h);
    h = digest_f32(proj_r, h);
    h = digest_f32(output_head, h);
    return h;
  }

  void verify_digest() const {
    if (compute_digest() != digest) {
      throw FormatError("FrozenWeights: content digest mismatch (expected " +
                        hex64(digest) + ", got " + hex64(compute_digest()) +
                        ")");
    }
  }
};

}  // namespace statetune
