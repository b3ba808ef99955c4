#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "voxdet/grid.hpp"

namespace voxdet {

// Dense float field, channel-planar, x fastest within a channel.
struct FloatField {
  Dims dims;
  int channels = 1;
  std::vector<float> values;

  std::size_t cells() const { return dims.count(); }
};

// ARTF: "ARTF" | u32 version=1 | u32 x | u32 y | u32 z | u32 channels | f32 values.
// Decoding throws FormatError.
std::string encode_artf(const FloatField& field);
FloatField decode_artf(std::string_view bytes);
void save_artf(const FloatField& field, const std::filesystem::path& path);
FloatField load_artf(const std::filesystem::path& path);

}  // namespace voxdet
