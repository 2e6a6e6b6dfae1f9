#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "core/tensor.hpp"

namespace mohets {

// Binary tensor snapshot: little-endian, header {magic "MOHT", version u32,
// tensor count u32}, then per tensor {name length u32 + UTF-8 name, rank u32,
// extents u64[], dtype tag u8 (0 = f32, 1 = f64), raw elements}.
inline constexpr uint32_t kSnapshotVersion = 1;

void save_snapshot(const std::string& path,
                   const std::vector<std::pair<std::string, Tensor>>& tensors);

std::map<std::string, Tensor> load_snapshot(const std::string& path);

}  // namespace mohets
