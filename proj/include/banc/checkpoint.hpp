//
//  checkpoint.hpp — versioned binary container of named float32 tensors.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace banc::train {

struct NamedTensor {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<float> data;
};

// Layout: magic "BANCCKPT", version u16, tensor count u32, then per tensor
// name length u16 + bytes, rank u8, extents u32 each, raw little-endian
// float32 values.
void write_tensors(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(const std::string& path);

}  // namespace banc::train
