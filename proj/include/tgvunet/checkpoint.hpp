#pragma once

// Binary parameter container.
//
// Layout (all integers little-endian):
//   8 bytes   magic "TGVUCKPT"
//   u32       version (1)
//   u64       config text length, then the bytes
//   u64       array count
//   per array: u64 name length, name bytes, 4 x u64 dims (n, c, h, w),
//              n*c*h*w IEEE-754 binary64 values
//   u64       FNV-1a checksum of every preceding byte

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tgvunet/tensor.hpp"

namespace tgvunet {

struct Checkpoint {
  static constexpr std::uint32_t version = 1;

  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> arrays;

  const Tensor* find(const std::string& name) const;
};

std::string serialize_checkpoint(const Checkpoint& ck);
// Throws DataError on bad magic, version, truncation or checksum mismatch.
Checkpoint parse_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tgvunet
