// Copyright 2026 statetune authors. Apache 2.0 License.

#pragma once

#include "statetune/common.hpp"

#include <string>

namespace statetune {

// Model geometry. embed_dim is split evenly across heads; each head owns a
// head_dim x head_dim state.
struct ModelDims {
  int vocab_size = 64;
  int embed_dim = 32;
  int num_heads = 4;
  int head_dim = 8;

  void validate() const {
    if (vocab_size < 1 || embed_dim < 1 || num_heads < 1 || head_dim < 1) {
      throw ConfigError("ModelDims: all fields must be >= 1");
    }
    if (embed_dim != num_heads * head_dim) {
      throw ConfigError("ModelDims: embed_dim (" + std::to_string(embed_dim) +
                        ") != num_heads * head_dim (" +
                        std::to_string(num_heads) + " * " +
                        std::to_string(head_dim) + ")");
    }
  }
};

inline bool operator==(const ModelDims& a, const ModelDims& b) {
  return a.vocab_size == b.vocab_size && a.embed_dim == b.embed_dim &&
         a.num_heads == b.num_heads && a.head_dim == b.head_dim;
}

}  // namespace statetune
