#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "dcst/tensor.hpp"

namespace dcst {

// Tensor record, little-endian:
//   "DCST" | u32 rank | u32 dims[rank] | f32 values[prod(dims)]
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// Named tensors plus free-form text metadata (configuration, notes).
struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::map<std::string, Tensor> tensors;
};

// Checkpoint file, little-endian:
//   "DCKP" | u32 version | u32 n_meta | n_meta x (str key, str value)
//   | u32 n_tensors | n_tensors x (str name, tensor record)
// where str = u32 byte length followed by the bytes.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dcst
