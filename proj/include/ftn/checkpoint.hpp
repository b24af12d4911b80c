#pragma once

#include <string>
#include <vector>

#include "ftn/tensor.hpp"

namespace ftn {

struct NamedTensor {
  std::string name;
  std::vector<idx> shape;
  std::vector<float> data;
};

// "FTN1" checkpoint format, bit-exact:
//   magic "FTN1"
//   u32 tensor count (little endian)
//   per tensor: u32 name length, UTF-8 name bytes, u32 rank,
//               u32 extents, raw IEEE-754 32-bit little-endian floats.
void save_checkpoint(const std::string& path,
                     const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

}  // namespace ftn
