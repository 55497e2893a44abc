#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "sunet/diff/params.hpp"

namespace sunet::diff {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  double z_max_global = 0.0;
  std::uint64_t config_hash = 0;
  std::string config_text;  // canonical model config the hash was computed from
};

struct Checkpoint {
  CheckpointHeader header;
  std::map<std::string, Tensor> tensors;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view text);

/// "SUNCK1" little-endian: magic, version, z_max_global, config hash, config text,
/// parameter count, then (name length, name, rank, dims, values) per parameter.
void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header, const ParamStore& store);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sunet::diff
