#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "parakit/tensor.hpp"

namespace parakit {

inline constexpr int kCheckpointFormatVersion = 1;

struct LoadedParam {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  std::map<std::string, std::string> config;
  std::vector<LoadedParam> params;
};

// Container layout: a text header (magic + format version, then config
// key=value lines and a parameter manifest with shapes), followed by the raw
// little-endian float32 buffers concatenated in manifest order. Writes go to
// a temp file renamed into place.
void save_checkpoint(const std::string& path, const std::map<std::string, std::string>& config,
                     const std::vector<std::pair<std::string, Tensor>>& params);

Checkpoint load_checkpoint(const std::string& path);

// FNV-1a over the raw bytes; used to compare parameter groups exactly.
std::uint64_t hash_floats(const std::vector<float>& v);

}  // namespace parakit
