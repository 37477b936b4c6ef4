#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cfmlab/tensor.hpp"

namespace cfmlab::io {

// CFMW tensor container: magic "CFMW", u32 LE version (1), u32 LE tensor
// count; per tensor u16 LE name length, UTF-8 name, u8 rank, rank x u32 LE
// dims, raw float32 LE data. Round trips are byte-identical.
void write_tensors(const std::string& path,
                   const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> read_tensors(const std::string& path);

}  // namespace cfmlab::io
