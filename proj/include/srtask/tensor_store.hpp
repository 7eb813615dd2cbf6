// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "srtask/nn.hpp"

namespace srtask {

/// Native weights container: named float64 tensors plus a JSON metadata
/// string. Layout: "SRTW", u32 version, u32 meta length, meta bytes,
/// u32 count, then per tensor u16 name length, name, 4 x u32 dims, data.
struct TensorArchive {
  std::string metadata = "{}";
  std::map<std::string, nn::Tensor> tensors;
};

void save_archive(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive load_archive(const std::filesystem::path& path);

// Copies archive tensors into the named slots; every slot must be present
// with a matching shape.
void assign_tensors(const TensorArchive& archive, std::vector<nn::NamedTensor> slots);
TensorArchive collect_tensors(std::vector<nn::NamedTensor> slots, std::string metadata);

}  // namespace srtask
