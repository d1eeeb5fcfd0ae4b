#pragma once
// CSG union tree of member cylinders and joint spheres, implicit evaluation,
// isosurface tessellation to a watertight triangle mesh, and the STL /
// tree-document exporters.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "voxframe/frame.hpp"

namespace voxframe {

struct Primitive {
  enum class Kind { Cylinder, Sphere };
  Kind kind = Kind::Sphere;
  Vec3 a = Vec3::Zero();  // cylinder endpoint / sphere center
  Vec3 b = Vec3::Zero();  // second endpoint, spheres ignore it
  double radius = 0;
};

// Binary tree over primitive leaves; internal nodes are boolean unions.
struct CsgNode {
  int left = -1, right = -1;  // node indices; both -1 on leaves
  int primitive = -1;         // leaf payload

  bool leaf() const { return left < 0; }
};

struct CsgTree {
  std::vector<Primitive> primitives;
  std::vector<CsgNode> nodes;
  int root = -1;

  std::size_t leaf_count() const { return primitives.size(); }
};

// One cylinder per member (radius d/2), one sphere per joint sized
// sphere_factor times the largest attached member radius, joined left-deep
// starting from member 0 (members first, then joints, in index order).
// Joints without members contribute no sphere. Throws on an empty frame or
// non-positive diameters.
CsgTree build_csg(const FrameModel& f, double sphere_factor = 1.05);

// Signed distance, negative inside; unions take the exact minimum.
double sdf(const CsgTree& t, const Vec3& p);
double primitive_sd(const Primitive& pr, const Vec3& p);

struct TriMesh {
  std::vector<std::array<double, 3>> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
};

// Contours sdf = 0 with marching tetrahedra (six per cell along the main
// diagonal) on a uniform grid: `resolution` cells across the longest extent
// of the tree bounds, inflated by two cells on every side. Shared crossing
// vertices keyed by grid edge make the mesh watertight; triangles wind with
// outward normals. Throws when resolution < 16 or when a primitive radius is
// below the cell size (features would alias away).
TriMesh tessellate(const CsgTree& t, int resolution);

// V - E + F with E counted over unique undirected edges.
long mesh_euler_characteristic(const TriMesh& m);
// Every edge in exactly two triangles, traversed once per direction.
bool mesh_watertight(const TriMesh& m);
double mesh_area(const TriMesh& m);

// STL, both flavors; binary is the 80-byte header + u32 count + 50-byte
// little-endian records layout.
void write_stl_ascii(const TriMesh& m, const std::string& path);
void write_stl_binary(const TriMesh& m, const std::string& path);
TriMesh read_stl_binary(const std::string& path);

// Versioned s-expression document of primitives and union nesting; reading
// reproduces the tree exactly (coordinates printed with %.17g).
void write_csg(const CsgTree& t, const std::string& path);
CsgTree read_csg(const std::string& path);

}  // namespace voxframe
