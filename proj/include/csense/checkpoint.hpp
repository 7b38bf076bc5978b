#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "csense/tensor.hpp"

namespace csense::nn {

// Named-tensor weight archive with an embedded JSON config block.
//
// Binary layout (little endian):
//   magic "CSNC", format_version u32, config length u32, config bytes,
//   then per tensor: name length u32, name bytes, rank u32,
//   extents u64 each, data as 32-bit IEEE-754 reals.
//
// Tensors are stored in map order (sorted by name), so identical content
// always produces identical bytes.
struct Checkpoint {
    uint32_t format_version = 1;
    std::string config_json;
    std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace csense::nn
