#include "voxdet/meshio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <limits>
#include <vector>

#include "mc_tables.hpp"
#include "voxdet/binary_io.hpp"
#include "voxdet/render.hpp"

namespace voxdet {

using nn::Tensor;

namespace {

// Corner offsets and edge endpoints in the table's numbering.
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                              {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

std::uint8_t quantize(float c) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0f, 1.0f) * 255.0f));
}

void append_float(std::string& out, float v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, ptr);
}

void save(const std::filesystem::path& path, const std::string& bytes) {
  try {
    write_file(path, bytes);
  } catch (const IoError& e) {
    throw IoError(std::string("IoFailure: ") + e.what());
  }
}

}  // namespace

TriangleMesh marching_cubes(const nn::Tensor& density, double iso) {
  if (!(iso > 0.0)) throw std::invalid_argument("InvalidParam: iso must be > 0");
  const int K = cube_edge(density.numel(), 1);
  const int P = K + 2;  // padded lattice
  const auto d = density.data();
  auto value = [&](int x, int y, int z) -> double {
    if (x == 0 || y == 0 || z == 0 || x == P - 1 || y == P - 1 || z == P - 1) return 0.0;
    return d[(static_cast<std::size_t>(z - 1) * K + (y - 1)) * K + (x - 1)];
  };
  auto coord = [&](int i) -> double {
    if (i == 0) return -0.5;
    if (i == P - 1) return 0.5;
    return (i - 0.5) / K - 0.5;
  };

  TriangleMesh mesh;
  constexpr auto kNone = std::numeric_limits<std::uint32_t>::max();
  // Dense rather than hashed so the cost tracks the lattice, not the surface.
  std::vector<std::uint32_t> edge_vertex(static_cast<std::size_t>(P) * P * P * 3, kNone);
  // Each lattice edge is keyed by its lower endpoint and axis, and always
  // interpolated from that endpoint, so neighbouring cubes agree exactly.
  auto vertex_on = [&](int x, int y, int z, int axis) -> std::uint32_t {
    const std::size_t key = ((static_cast<std::size_t>(z) * P + y) * P + x) * 3 + axis;
    if (edge_vertex[key] != kNone) return edge_vertex[key];
    int x2 = x, y2 = y, z2 = z;
    (axis == 0 ? x2 : axis == 1 ? y2 : z2) += 1;
    const double a = value(x, y, z), b = value(x2, y2, z2);
    // Keep vertices strictly inside their edge. A lattice value equal to iso
    // would otherwise put several edge vertices on one corner and leave
    // zero-area triangles whose removal opens the surface.
    const double t = std::clamp((iso - a) / (b - a), 1e-3, 1.0 - 1e-3);
    const double pa[3] = {coord(x), coord(y), coord(z)};
    const double pb[3] = {coord(x2), coord(y2), coord(z2)};
    Eigen::Vector3f p;
    for (int c = 0; c < 3; ++c) p[c] = static_cast<float>(pa[c] + t * (pb[c] - pa[c]));
    const auto id = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.push_back(p);
    edge_vertex[key] = id;
    return id;
  };

  for (int z = 0; z + 1 < P; ++z)
    for (int y = 0; y + 1 < P; ++y)
      for (int x = 0; x + 1 < P; ++x) {
        int cube = 0;
        for (int c = 0; c < 8; ++c)
          if (value(x + kCorner[c][0], y + kCorner[c][1], z + kCorner[c][2]) > iso) cube |= 1 << c;
        if (mc::kEdgeTable[cube] == 0) continue;
        std::uint32_t ids[12];
        for (int e = 0; e < 12; ++e) {
          if (!(mc::kEdgeTable[cube] & (1 << e))) continue;
          const int* c0 = kCorner[kEdge[e][0]];
          const int* c1 = kCorner[kEdge[e][1]];
          const int axis = c0[0] != c1[0] ? 0 : c0[1] != c1[1] ? 1 : 2;
          const int* lo = (c0[axis] < c1[axis]) ? c0 : c1;
          ids[e] = vertex_on(x + lo[0], y + lo[1], z + lo[2], axis);
        }
        // The table winds its triangles clockwise seen from outside.
        for (int i = 0; mc::kTriTable[cube][i] != -1; i += 3)
          mesh.triangles.push_back(
              {ids[mc::kTriTable[cube][i]], ids[mc::kTriTable[cube][i + 2]], ids[mc::kTriTable[cube][i + 1]]});
      }

  return mesh;
}

TriangleMesh color_vertices(TriangleMesh mesh, const nn::Tensor& albedo) {
  nn::NoGradGuard no_grad;
  mesh.colors.clear();
  for (const auto& v : mesh.vertices) {
    const Tensor sample = trilinear_sample(albedo, v.cast<double>());
    const auto c = sample.data();
    mesh.colors.emplace_back(std::clamp(c[0], 0.0f, 1.0f), std::clamp(c[1], 0.0f, 1.0f), std::clamp(c[2], 0.0f, 1.0f));
  }
  return mesh;
}

std::string encode_ply(const TriangleMesh& mesh) {
  mesh.validate();
  std::string out = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(mesh.vertices.size()) +
                    "\nproperty float x\nproperty float y\nproperty float z\n";
  if (mesh.has_colors()) out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "element face " + std::to_string(mesh.triangles.size()) +
         "\nproperty list uchar int vertex_indices\nend_header\n";
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    for (int c = 0; c < 3; ++c) put_f32(out, mesh.vertices[i][c]);
    if (mesh.has_colors())
      for (int c = 0; c < 3; ++c) out.push_back(static_cast<char>(quantize(mesh.colors[i][c])));
  }
  for (const auto& t : mesh.triangles) {
    out.push_back(3);
    for (auto i : t) put_u32(out, i);
  }
  return out;
}

TriangleMesh decode_ply(std::string_view bytes) {
  const auto end = bytes.find("end_header\n");
  if (bytes.rfind("ply\n", 0) != 0 || end == std::string_view::npos) throw FormatError("PLY: missing header");
  std::istringstream header{std::string(bytes.substr(0, end))};
  std::string line;
  std::size_t vertices = 0, faces = 0;
  std::vector<std::string> vertex_props;
  std::string element;
  bool face_list = false;
  while (std::getline(header, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian") throw FormatError("PLY: unsupported format " + fmt);
    } else if (word == "element") {
      std::size_t n = 0;
      ls >> element >> n;
      if (element == "vertex") vertices = n;
      else if (element == "face") faces = n;
      else throw FormatError("PLY: unsupported element " + element);
    } else if (word == "property") {
      std::string type, name;
      ls >> type;
      if (element == "vertex") {
        ls >> name;
        vertex_props.push_back(type + " " + name);
      } else if (type == "list") {
        std::string count_t, index_t;
        ls >> count_t >> index_t;
        face_list = count_t == "uchar" && (index_t == "int" || index_t == "uint");
      }
    }
  }
  const std::vector<std::string> plain{"float x", "float y", "float z"};
  std::vector<std::string> colored = plain;
  colored.insert(colored.end(), {"uchar red", "uchar green", "uchar blue"});
  const bool has_colors = vertex_props == colored;
  if (!has_colors && vertex_props != plain) throw FormatError("PLY: unsupported vertex properties");
  if (faces > 0 && !face_list) throw FormatError("PLY: unsupported face property");

  ByteReader in(bytes.substr(end + 11));
  TriangleMesh mesh;
  for (std::size_t i = 0; i < vertices; ++i) {
    Eigen::Vector3f p;
    for (int c = 0; c < 3; ++c) p[c] = in.f32();
    mesh.vertices.push_back(p);
    if (has_colors) {
      const auto rgb = in.take(3);
      mesh.colors.emplace_back(static_cast<std::uint8_t>(rgb[0]) / 255.0f, static_cast<std::uint8_t>(rgb[1]) / 255.0f,
                               static_cast<std::uint8_t>(rgb[2]) / 255.0f);
    }
  }
  for (std::size_t i = 0; i < faces; ++i) {
    if (static_cast<std::uint8_t>(in.take(1)[0]) != 3) throw FormatError("PLY: only triangles are supported");
    mesh.triangles.push_back({in.u32(), in.u32(), in.u32()});
  }
  if (!in.done()) throw FormatError("PLY: trailing bytes");
  try {
    mesh.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("PLY: ") + e.what());
  }
  return mesh;
}

std::string encode_obj(const TriangleMesh& mesh) {
  mesh.validate();
  std::string out;
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    out += "v";
    for (int c = 0; c < 3; ++c) {
      out += ' ';
      append_float(out, mesh.vertices[i][c]);
    }
    if (mesh.has_colors())
      for (int c = 0; c < 3; ++c) {
        out += ' ';
        append_float(out, mesh.colors[i][c]);
      }
    out += '\n';
  }
  for (const auto& t : mesh.triangles)
    out += "f " + std::to_string(t[0] + 1) + " " + std::to_string(t[1] + 1) + " " + std::to_string(t[2] + 1) + "\n";
  return out;
}

void export_ply(const TriangleMesh& mesh, const std::filesystem::path& path) { save(path, encode_ply(mesh)); }
void export_obj(const TriangleMesh& mesh, const std::filesystem::path& path) { save(path, encode_obj(mesh)); }

TriangleMesh load_ply(const std::filesystem::path& path) {
  try {
    return decode_ply(read_file(path));
  } catch (const IoError& e) {
    throw IoError(std::string("IoFailure: ") + e.what());
  }
}

}  // namespace voxdet
