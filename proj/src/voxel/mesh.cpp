#include "voxdet/mesh.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <stdexcept>
#include <string>

#include "voxdet/binary_io.hpp"

namespace voxdet {

void TriangleMesh::validate() const {
  for (const auto& t : triangles) {
    for (auto i : t) {
      if (i >= vertices.size()) throw std::invalid_argument("triangle index out of range");
    }
  }
  if (!colors.empty() && colors.size() != vertices.size()) {
    throw std::invalid_argument("color count does not match vertex count");
  }
}

void TriangleMesh::normalize() {
  if (vertices.empty()) return;
  Eigen::Vector3f lo = vertices.front();
  Eigen::Vector3f hi = vertices.front();
  for (const auto& v : vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Eigen::Vector3f center = 0.5f * (lo + hi);
  const float extent = (hi - lo).maxCoeff();
  const float scale = extent > 0.0f ? 1.0f / extent : 1.0f;
  for (auto& v : vertices) v = (v - center) * scale;
}

std::size_t TriangleMesh::open_edge_count() const {
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> uses;
  for (const auto& t : triangles) {
    for (int e = 0; e < 3; ++e) {
      auto a = t[e], b = t[(e + 1) % 3];
      ++uses[{std::min(a, b), std::max(a, b)}];
    }
  }
  return static_cast<std::size_t>(
      std::count_if(uses.begin(), uses.end(), [](const auto& kv) { return kv.second != 2; }));
}

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

float parse_float(std::string_view s) {
  float v = 0.0f;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("OBJ: bad number '" + std::string(s) + "'");
  }
  return v;
}

std::uint32_t parse_index(std::string_view token, std::size_t vertex_count) {
  auto slash = token.find('/');
  auto head = token.substr(0, slash);
  long long idx = 0;
  auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), idx);
  if (ec != std::errc() || ptr != head.data() + head.size() || idx == 0) {
    throw FormatError("OBJ: bad face index '" + std::string(token) + "'");
  }
  long long resolved = idx > 0 ? idx - 1 : static_cast<long long>(vertex_count) + idx;
  if (resolved < 0 || resolved >= static_cast<long long>(vertex_count)) {
    throw FormatError("OBJ: face index out of range");
  }
  return static_cast<std::uint32_t>(resolved);
}

}  // namespace

TriangleMesh parse_obj(std::string_view text) {
  TriangleMesh mesh;
  bool any_color = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto tokens = split_ws(text.substr(pos, end - pos));
    pos = end + 1;
    if (tokens.empty() || tokens[0].front() == '#') continue;
    if (tokens[0] == "v") {
      if (tokens.size() != 4 && tokens.size() != 7) throw FormatError("OBJ: malformed vertex");
      mesh.vertices.emplace_back(parse_float(tokens[1]), parse_float(tokens[2]), parse_float(tokens[3]));
      if (tokens.size() == 7) {
        any_color = true;
        mesh.colors.emplace_back(parse_float(tokens[4]), parse_float(tokens[5]), parse_float(tokens[6]));
      } else {
        mesh.colors.emplace_back(1.0f, 1.0f, 1.0f);
      }
    } else if (tokens[0] == "f") {
      if (tokens.size() < 4) throw FormatError("OBJ: face needs at least 3 vertices");
      const auto first = parse_index(tokens[1], mesh.vertices.size());
      auto prev = parse_index(tokens[2], mesh.vertices.size());
      for (std::size_t i = 3; i < tokens.size(); ++i) {
        const auto cur = parse_index(tokens[i], mesh.vertices.size());
        mesh.triangles.push_back({first, prev, cur});
        prev = cur;
      }
    }
  }
  if (!any_color) mesh.colors.clear();
  mesh.validate();
  return mesh;
}

TriangleMesh load_obj(const std::filesystem::path& path) { return parse_obj(read_file(path)); }

}  // namespace voxdet
