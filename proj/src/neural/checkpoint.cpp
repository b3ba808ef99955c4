#include "voxdet/checkpoint.hpp"

#include <charconv>

#include "voxdet/binary_io.hpp"

namespace voxdet::nn {

namespace {

constexpr std::uint32_t kVersion = 1;

void put_netstring(std::string& out, std::string_view record) {
  out += std::to_string(record.size());
  out += ':';
  out += record;
  out += ',';
}

std::int64_t parse_int(std::string_view s) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw CorruptCheckpoint("ARTC: bad integer '" + std::string(s) + "'");
  return v;
}

Shape parse_shape(std::string_view s) {
  if (s.size() < 2 || s.front() != '[' || s.back() != ']') throw CorruptCheckpoint("ARTC: bad shape");
  s = s.substr(1, s.size() - 2);
  Shape shape;
  while (!s.empty()) {
    auto comma = s.find(',');
    shape.push_back(parse_int(s.substr(0, comma)));
    if (shape.back() <= 0) throw CorruptCheckpoint("ARTC: non-positive dim");
    s = comma == std::string_view::npos ? std::string_view{} : s.substr(comma + 1);
  }
  return shape;
}

}  // namespace

const std::string* CheckpointData::find_config(std::string_view key) const {
  for (const auto& [k, v] : config) {
    if (k == key) return &v;
  }
  return nullptr;
}

const CheckpointEntry* CheckpointData::find_tensor(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::string encode_artc(const CheckpointData& data) {
  std::string manifest;
  for (const auto& [key, value] : data.config) {
    if (key.find('=') != std::string::npos) throw std::invalid_argument("ARTC: config key contains '='");
    put_netstring(manifest, "config " + key + "=" + value);
  }
  for (const auto& t : data.tensors) {
    if (t.name.find(' ') != std::string::npos) throw std::invalid_argument("ARTC: tensor name contains a space");
    if (static_cast<std::int64_t>(t.values.size()) != shape_numel(t.shape)) {
      throw std::invalid_argument("ARTC: tensor " + t.name + " size does not match its shape");
    }
    put_netstring(manifest, "tensor " + t.name + " f32 " + shape_string(t.shape));
  }
  std::string out = "ARTC";
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(manifest.size()));
  out += manifest;
  for (const auto& t : data.tensors) {
    for (float v : t.values) put_f32(out, v);
  }
  return out;
}

CheckpointData decode_artc(std::string_view bytes) {
  try {
    ByteReader in(bytes);
    if (in.take(4) != "ARTC") throw CorruptCheckpoint("ARTC: bad magic");
    if (in.u32() != kVersion) throw CorruptCheckpoint("ARTC: unsupported version");
    std::string_view manifest = in.take(in.u32());
    CheckpointData data;
    while (!manifest.empty()) {
      const auto colon = manifest.find(':');
      if (colon == std::string_view::npos) throw CorruptCheckpoint("ARTC: bad manifest record");
      const auto len = static_cast<std::size_t>(parse_int(manifest.substr(0, colon)));
      if (manifest.size() < colon + 2 + len || manifest[colon + 1 + len] != ',') {
        throw CorruptCheckpoint("ARTC: truncated manifest record");
      }
      const auto record = manifest.substr(colon + 1, len);
      manifest.remove_prefix(colon + 2 + len);
      if (record.starts_with("config ")) {
        const auto body = record.substr(7);
        const auto eq = body.find('=');
        if (eq == std::string_view::npos) throw CorruptCheckpoint("ARTC: config record without '='");
        data.config.emplace_back(std::string(body.substr(0, eq)), std::string(body.substr(eq + 1)));
      } else if (record.starts_with("tensor ")) {
        const auto body = record.substr(7);
        const auto s1 = body.find(' ');
        const auto s2 = s1 == std::string_view::npos ? s1 : body.find(' ', s1 + 1);
        if (s2 == std::string_view::npos || body.substr(s1 + 1, s2 - s1 - 1) != "f32") {
          throw CorruptCheckpoint("ARTC: bad tensor record");
        }
        data.tensors.push_back({std::string(body.substr(0, s1)), parse_shape(body.substr(s2 + 1)), {}});
      } else {
        throw CorruptCheckpoint("ARTC: unknown manifest record");
      }
    }
    for (auto& t : data.tensors) {
      const auto n = static_cast<std::size_t>(shape_numel(t.shape));
      if (in.remaining() < n * 4) throw CorruptCheckpoint("ARTC: truncated payload");
      t.values.resize(n);
      for (auto& v : t.values) v = in.f32();
    }
    if (!in.done()) throw CorruptCheckpoint("ARTC: trailing bytes after payload");
    return data;
  } catch (const FormatError& e) {
    throw CorruptCheckpoint(std::string("ARTC: ") + e.what());
  } catch (const AutodiffError& e) {
    throw CorruptCheckpoint(std::string("ARTC: ") + e.what());
  }
}

void save_artc(const CheckpointData& data, const std::filesystem::path& path) { write_file(path, encode_artc(data)); }

CheckpointData load_artc(const std::filesystem::path& path) { return decode_artc(read_file(path)); }

}  // namespace voxdet::nn
