#pragma once

// Named float32 arrays and the ".mfck" checkpoint container:
//
//   "MFCK" | uint64 LE manifest length | JSON manifest | payload
//
// The manifest lists every tensor's shape, byte offset and byte length into
// the payload, the format version, and the model configuration with its hash.
// Payload arrays are little-endian float32 in row-major order.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mambafoley/types.hpp"

namespace mambafoley {

inline constexpr int kCheckpointVersion = 1;

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t element_count() const;
};

struct TensorStore {
  std::map<std::string, Tensor> tensors;
  std::string model_config;  // serialized JSON object, may be empty

  bool contains(const std::string& key) const { return tensors.count(key) > 0; }
  const Tensor& at(const std::string& key) const;
};

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { Io, Format, Version, PayloadLength, ShapeConsistency };

  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// FNV-1a 64-bit, hex encoded.
std::string config_hash(const std::string& text);

void checkpoint_save(const TensorStore& store, const std::filesystem::path& path);
TensorStore checkpoint_load(const std::filesystem::path& path);

template <typename Scalar>
Tensor to_tensor(const Matrix<Scalar>& m) {
  Tensor t;
  t.shape = {static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) t.data[k++] = static_cast<float>(m(i, j));
  }
  return t;
}

template <typename Scalar>
void from_tensor(const Tensor& t, Matrix<Scalar>& m, const std::string& key) {
  if (t.shape.size() != 2 || t.shape[0] != m.rows() || t.shape[1] != m.cols()) {
    throw std::invalid_argument("tensor '" + key + "' has a shape different from the model");
  }
  std::size_t k = 0;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<Scalar>(t.data[k++]);
  }
}

/// Collects every parameter of a weights object exposing visit(f(name, matrix)).
template <typename Weights>
TensorStore store_from_weights(const Weights& weights) {
  TensorStore store;
  weights.visit([&](const std::string& name, const auto& m) {
    if (!store.tensors.emplace(name, to_tensor(m)).second) {
      throw std::logic_error("duplicate parameter name: " + name);
    }
  });
  return store;
}

/// Overwrites every parameter of `weights` from the store; every parameter
/// must be present with matching shape.
template <typename Weights>
void load_weights(Weights& weights, const TensorStore& store) {
  std::size_t used = 0;
  weights.visit([&](const std::string& name, auto& m) {
    auto it = store.tensors.find(name);
    if (it == store.tensors.end()) throw std::invalid_argument("missing tensor '" + name + "'");
    from_tensor(it->second, m, name);
    ++used;
  });
  if (used != store.tensors.size()) throw std::invalid_argument("store holds tensors the model does not use");
}

}  // namespace mambafoley
