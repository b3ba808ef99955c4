#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace voxdet {

// Row-major, channel-interleaved float image.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  float& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  bool same_geometry(const Image& o) const { return width == o.width && height == o.height && channels == o.channels; }
};

using MaskImage = Image;  // one channel

// 8-bit RGBA PNG from an RGB image and a one-channel alpha image.
std::string encode_png_rgba(const Image& rgb, const Image& alpha);
// 8-bit PNG of a 1-, 3- or 4-channel image.
std::string encode_png(const Image& image);
void save_png(const Image& image, const std::filesystem::path& path);

}  // namespace voxdet
