#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "voxdet/mesh.hpp"
#include "voxdet/tensor.hpp"

namespace voxdet {

// Marching cubes over the voxel-center lattice of a [K,K,K] density. The
// lattice is padded with a zero layer placed on the cube faces, so surfaces
// touching the border close and every vertex stays inside [-0.5,0.5]^3.
// A lattice point is inside when density > iso. Each lattice edge gets one
// shared vertex, kept at least 1e-3 of the edge away from its endpoints so
// no two vertices coincide. Triangles wind counter-clockwise seen from
// outside. Throws std::invalid_argument("InvalidParam") when iso <= 0.
TriangleMesh marching_cubes(const nn::Tensor& density, double iso = 30.0);

// Per-vertex color = trilinear sample of a [3,K,K,K] albedo, clamped to [0,1].
TriangleMesh color_vertices(TriangleMesh mesh, const nn::Tensor& albedo);

// Binary little-endian PLY: float x,y,z then uchar red,green,blue when the
// mesh has colors; faces as "list uchar int vertex_indices".
std::string encode_ply(const TriangleMesh& mesh);
// Reads files written by encode_ply. Throws FormatError.
TriangleMesh decode_ply(std::string_view bytes);

// OBJ with "v x y z r g b" lines; floats are written in shortest round-trip form.
std::string encode_obj(const TriangleMesh& mesh);

// Throw IoError("IoFailure: ...").
void export_ply(const TriangleMesh& mesh, const std::filesystem::path& path);
void export_obj(const TriangleMesh& mesh, const std::filesystem::path& path);
TriangleMesh load_ply(const std::filesystem::path& path);

}  // namespace voxdet
