#include "voxdet/field.hpp"

#include <cmath>

#include "voxdet/binary_io.hpp"

namespace voxdet {

namespace {

constexpr char kMagic[] = "ARTF";
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::string encode_artf(const FloatField& field) {
  if (field.values.size() != field.cells() * field.channels)
    throw FormatError("ARTF: value count does not match dims x channels");
  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(field.dims.x));
  put_u32(out, static_cast<std::uint32_t>(field.dims.y));
  put_u32(out, static_cast<std::uint32_t>(field.dims.z));
  put_u32(out, static_cast<std::uint32_t>(field.channels));
  for (float v : field.values) put_f32(out, v);
  return out;
}

FloatField decode_artf(std::string_view bytes) {
  ByteReader in(bytes);
  if (in.take(4) != std::string_view(kMagic, 4)) throw FormatError("ARTF: bad magic");
  if (in.u32() != kVersion) throw FormatError("ARTF: unsupported version");
  FloatField f;
  f.dims.x = static_cast<int>(in.u32());
  f.dims.y = static_cast<int>(in.u32());
  f.dims.z = static_cast<int>(in.u32());
  f.channels = static_cast<int>(in.u32());
  if (f.dims.x <= 0 || f.dims.y <= 0 || f.dims.z <= 0 || f.channels <= 0 || f.channels > 64 ||
      f.dims.count() > (std::size_t{1} << 28))
    throw FormatError("ARTF: bad header");
  const std::size_t n = f.cells() * f.channels;
  if (in.remaining() != n * 4) throw FormatError("ARTF: payload size mismatch");
  f.values.resize(n);
  for (auto& v : f.values) {
    v = in.f32();
    if (!std::isfinite(v)) throw FormatError("ARTF: non-finite value");
  }
  return f;
}

void save_artf(const FloatField& field, const std::filesystem::path& path) { write_file(path, encode_artf(field)); }

FloatField load_artf(const std::filesystem::path& path) { return decode_artf(read_file(path)); }

}  // namespace voxdet
