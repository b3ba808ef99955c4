#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "voxdet/tensor.hpp"

namespace voxdet::nn {

class CorruptCheckpoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct CheckpointData {
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<CheckpointEntry> tensors;

  const std::string* find_config(std::string_view key) const;
  const CheckpointEntry* find_tensor(std::string_view name) const;
};

// ARTC layout:
//   "ARTC" | u32 version (1) | u32 manifest byte length | manifest | payload
// The manifest is a run of netstrings "<len>:<record>," where a record is
//   "config <key>=<value>"            or
//   "tensor <name> f32 [d0,d1,...]"
// and the payload holds every tensor's little-endian f32 values in manifest order.
std::string encode_artc(const CheckpointData& data);
CheckpointData decode_artc(std::string_view bytes);

void save_artc(const CheckpointData& data, const std::filesystem::path& path);
CheckpointData load_artc(const std::filesystem::path& path);

}  // namespace voxdet::nn
