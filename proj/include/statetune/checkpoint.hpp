// Copyright 2026 statetune authors. Apache 2.0 License.
//
// Repo-wide checkpoint format, two parts in one file:
//
//   line 1   UTF-8 JSON manifest (single line): format tag, caller metadata,
//            and a tensor directory of {name, shape, offset, digest}.
//   payload  raw little-endian f32 arrays, row-major, at the declared byte
//            offsets (relative to the end of the manifest's newline).
//
// Arithmetic stays f64 in memory; persistence is f32. Digests are FNV-1a 64
// over each tensor's serialized f32 bytes and are re-verified on load.

#pragma once

#include "statetune/common.hpp"

#include <json.hpp>

#include <fstream>
#include <vector>

namespace statetune {

struct NamedTensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> data;  // row-major, product(shape) entries

  std::size_t element_count() const {
    std::size_t n = 1;
    for (const auto s : shape) n *= static_cast<std::size_t>(s);
    return n;
  }

  std::vector<std::uint32_t> f32_bits() const {
    std::vector<std::uint32_t> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const float f = static_cast<float>(data[i]);
      std::memcpy(&out[i], &f, sizeof(float));
    }
    return out;
  }

  std::uint64_t digest() const {
    const auto bits = f32_bits();
    return fnv1a64(bits.data(), bits.size() * sizeof(std::uint32_t));
  }

  static NamedTensor from_matrix(const std::string& name, const Mat& m) {
    NamedTensor t;
    t.name = name;
    t.shape = {m.rows(), m.cols()};
    t.data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) t.data.push_back(m(i, j));
    }
    return t;
  }

  // Stack of equally-shaped matrices as one [count, rows, cols] tensor.
  static NamedTensor from_matrices(const std::string& name,
                                   const std::vector<Mat>& ms) {
    if (ms.empty()) {
      throw InputError("NamedTensor: empty matrix stack");
    }
    NamedTensor t;
    t.name = name;
    t.shape = {static_cast<std::int64_t>(ms.size()), ms[0].rows(),
               ms[0].cols()};
    for (const auto& m : ms) {
      if (m.rows() != ms[0].rows() || m.cols() != ms[0].cols()) {
        throw ShapeError("NamedTensor: ragged matrix stack");
      }
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) t.data.push_back(m(i, j));
      }
    }
    return t;
  }

  Mat to_matrix() const {
    if (shape.size() != 2) {
      throw ShapeError("NamedTensor '" + name + "': expected rank 2, got " +
                       std::to_string(shape.size()));
    }
    Mat m(shape[0], shape[1]);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = data[k++];
    }
    return m;
  }

  std::vector<Mat> to_matrices() const {
    if (shape.size() != 3) {
      throw ShapeError("NamedTensor '" + name + "': expected rank 3, got " +
                       std::to_string(shape.size()));
    }
    std::vector<Mat> out;
    std::size_t k = 0;
    for (std::int64_t c = 0; c < shape[0]; ++c) {
      Mat m(shape[1], shape[2]);
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = data[k++];
      }
      out.push_back(std::move(m));
    }
    return out;
  }
};

struct Checkpoint {
  nlohmann::json meta;  // caller-defined manifest fields
  std::vector<NamedTensor> tensors;

  const NamedTensor& tensor(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return t;
    }
    throw FormatError("checkpoint: missing tensor '" + name + "'");
  }

  bool has_tensor(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return true;
    }
    return false;
  }
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    dir.push_back({{"name", t.name},
                   {"shape", t.shape},
                   {"offset", offset},
                   {"digest", hex64(t.digest())}});
    offset += t.element_count() * sizeof(std::uint32_t);
  }
  nlohmann::json manifest{{"format", "statetune-ckpt-v1"},
                          {"meta", ckpt.meta},
                          {"tensors", dir}};

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw FormatError("save_checkpoint: cannot open '" + path + "'");
  }
  out << manifest.dump() << "\n";
  for (const auto& t : ckpt.tensors) {
    const auto bits = t.f32_bits();
    out.write(reinterpret_cast<const char*>(bits.data()),
              static_cast<std::streamsize>(bits.size() * sizeof(uint32_t)));
  }
  if (!out) {
    throw FormatError("save_checkpoint: write failed on '" + path + "'");
  }
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("load_checkpoint: cannot open '" + path + "'");
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw FormatError("load_checkpoint: missing manifest line");
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("load_checkpoint: malformed manifest: " +
                      std::string(e.what()));
  }
  if (manifest.value("format", "") != "statetune-ckpt-v1") {
    throw FormatError("load_checkpoint: unknown format tag");
  }

  const std::streampos payload_start = in.tellg();
  Checkpoint ckpt;
  ckpt.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("tensors")) {
    NamedTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto expect_digest = entry.at("digest").get<std::string>();

    const std::size_t n = t.element_count();
    std::vector<std::uint32_t> bits(n);
    in.seekg(payload_start + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(bits.data()),
            static_cast<std::streamsize>(n * sizeof(std::uint32_t)));
    if (!in) {
      throw FormatError("load_checkpoint: truncated payload for tensor '" +
                        t.name + "'");
    }
    t.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, &bits[i], sizeof(float));
      t.data[i] = static_cast<double>(f);
    }
    if (hex64(t.digest()) != expect_digest) {
      throw FormatError("load_checkpoint: digest mismatch for tensor '" +
                        t.name + "'");
    }
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

}  // namespace statetune
