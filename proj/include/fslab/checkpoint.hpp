#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fslab/tensor.hpp"

namespace fslab {

// Name-indexed float64 arrays, serialized in the "FSLW1" container:
// magic "FSLW1" | u32 count | per entry: u32 name_len | name bytes |
// u32 rank | u32 dims[rank] | f64 data[prod(dims)] -- all little-endian.
struct NamedTensors {
  std::vector<std::pair<std::string, TensorPtr>> entries;

  void add(const std::string& name, const TensorPtr& tensor);
  TensorPtr find(const std::string& name) const;          // null when absent
  TensorPtr require(const std::string& name) const;       // DataError when absent
  bool contains(const std::string& name) const { return find(name) != nullptr; }
};

void save_fslw(const std::string& path, const NamedTensors& tensors);
NamedTensors load_fslw(const std::string& path);

}  // namespace fslab
