#include "voxdet/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "voxdet/binary_io.hpp"

namespace voxdet {

namespace {

void put_be32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

void chunk(std::string& out, const char* type, const std::string& body) {
  put_be32(out, static_cast<std::uint32_t>(body.size()));
  std::string tagged(type, 4);
  tagged += body;
  out += tagged;
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(tagged.data()), static_cast<uInt>(tagged.size()));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

std::uint8_t to_byte(float v) {
  if (!std::isfinite(v)) v = 0.0f;
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

std::string png_from_bytes(int width, int height, int channels, const std::vector<std::uint8_t>& px) {
  static const char* kSignature = "\x89PNG\r\n\x1a\n";
  std::string out(kSignature, 8);

  std::string ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(width));
  put_be32(ihdr, static_cast<std::uint32_t>(height));
  const char color_type = channels == 1 ? 0 : channels == 3 ? 2 : 6;
  ihdr += std::string{8, color_type, 0, 0, 0};
  chunk(out, "IHDR", ihdr);

  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * height);
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), px.begin() + y * stride, px.begin() + (y + 1) * stride);
  }
  uLongf len = compressBound(static_cast<uLong>(raw.size()));
  std::string z(len, '\0');
  if (compress2(reinterpret_cast<Bytef*>(z.data()), &len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError("png: deflate failed");
  z.resize(len);
  chunk(out, "IDAT", z);
  chunk(out, "IEND", "");
  return out;
}

}  // namespace

std::string encode_png(const Image& image) {
  if (image.channels != 1 && image.channels != 3 && image.channels != 4)
    throw std::invalid_argument("png: unsupported channel count " + std::to_string(image.channels));
  if (image.width < 1 || image.height < 1) throw std::invalid_argument("png: empty image");
  std::vector<std::uint8_t> px(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), px.begin(), to_byte);
  return png_from_bytes(image.width, image.height, image.channels, px);
}

std::string encode_png_rgba(const Image& rgb, const Image& alpha) {
  if (rgb.channels != 3 || alpha.channels != 1 || rgb.width != alpha.width || rgb.height != alpha.height)
    throw std::invalid_argument("png: rgb/alpha geometry mismatch");
  Image rgba(rgb.width, rgb.height, 4);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x) {
      for (int c = 0; c < 3; ++c) rgba.at(x, y, c) = rgb.at(x, y, c);
      rgba.at(x, y, 3) = alpha.at(x, y, 0);
    }
  return encode_png(rgba);
}

void save_png(const Image& image, const std::filesystem::path& path) { write_file(path, encode_png(image)); }

}  // namespace voxdet
