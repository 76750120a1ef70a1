#pragma once

// Flat tensor archive used for encoder weight files and training checkpoints.
//
// Layout (little-endian):
//   "BFTA" | u32 format version | u64 metadata length | metadata (UTF-8 JSON)
//   u64 tensor count | per tensor: u32 name length, name, u32 rank, u64 dims[rank],
//   f64 values[numel]
// Tensors are written in name order, so equal contents give equal bytes.

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bifuse/nn.hpp"
#include "bifuse/tensor.hpp"

namespace bifuse {

class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StoredTensor {
  Shape shape;
  std::vector<double> values;
};

struct TensorArchive {
  std::string metadata;  // JSON text
  std::map<std::string, StoredTensor> tensors;

  void put(const std::string& name, const Tensor& t);
  void put_all(const std::string& prefix, const ParamSet& params);
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
  /// Copy a stored tensor into `dst` in place; throws LoadError naming the
  /// tensor when it is missing or its shape differs.
  void load_into(const std::string& name, Tensor& dst) const;
  void load_all(const std::string& prefix, ParamSet& params) const;

  std::string serialize() const;
  static TensorArchive deserialize(const std::string& bytes, const std::string& origin = "<memory>");

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);
};

}  // namespace bifuse
