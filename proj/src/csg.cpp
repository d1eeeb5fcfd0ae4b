#include "voxframe/csg.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace voxframe {

CsgTree build_csg(const FrameModel& f, double sphere_factor) {
  if (f.members.empty()) throw std::runtime_error("build_csg: nothing to build");
  CsgTree t;
  for (const auto& m : f.members) {
    if (!(m.d > 0)) throw std::runtime_error("build_csg: non-positive diameter");
    Primitive pr;
    pr.kind = Primitive::Kind::Cylinder;
    pr.a = f.joints[m.a].x;
    pr.b = f.joints[m.b].x;
    pr.radius = m.d / 2;
    t.primitives.push_back(pr);
  }
  for (std::size_t j = 0; j < f.joints.size(); ++j) {
    double rmax = 0;
    for (const auto& m : f.members)
      if (m.a == int(j) || m.b == int(j)) rmax = std::max(rmax, m.d / 2);
    if (rmax <= 0) continue;  // joint without members: no sphere
    Primitive pr;
    pr.kind = Primitive::Kind::Sphere;
    pr.a = f.joints[j].x;
    pr.radius = sphere_factor * rmax;
    t.primitives.push_back(pr);
  }
  // left-deep union chain in primitive order, starting from member 0
  for (int i = 0; i < int(t.primitives.size()); ++i) {
    CsgNode leaf;
    leaf.primitive = i;
    const int leaf_id = int(t.nodes.size());
    t.nodes.push_back(leaf);
    if (i == 0) {
      t.root = leaf_id;
    } else {
      CsgNode u;
      u.left = t.root;
      u.right = leaf_id;
      t.root = int(t.nodes.size());
      t.nodes.push_back(u);
    }
  }
  return t;
}

double primitive_sd(const Primitive& pr, const Vec3& p) {
  if (pr.kind == Primitive::Kind::Sphere) return (p - pr.a).norm() - pr.radius;
  const Vec3 ab = pr.b - pr.a;
  const double L = ab.norm();
  const Vec3 axis = ab / L;
  const Vec3 rel = p - 0.5 * (pr.a + pr.b);
  const double z = axis.dot(rel);
  const double r = (rel - z * axis).norm();
  const double dr = r - pr.radius;     // radial distance to the lateral wall
  const double dz = std::abs(z) - L / 2;  // axial distance to the caps
  return std::min(std::max(dr, dz), 0.0) +
         std::hypot(std::max(dr, 0.0), std::max(dz, 0.0));
}

namespace {

double node_sd(const CsgTree& t, int node, const Vec3& p) {
  const CsgNode& n = t.nodes[node];
  if (n.leaf()) return primitive_sd(t.primitives[n.primitive], p);
  return std::min(node_sd(t, n.left, p), node_sd(t, n.right, p));
}

}  // namespace

double sdf(const CsgTree& t, const Vec3& p) {
  if (t.root < 0) throw std::runtime_error("sdf: empty tree");
  return node_sd(t, t.root, p);
}

// ---- tessellation ----------------------------------------------------------

namespace {

struct Bounds {
  Vec3 lo, hi;
};

Bounds tree_bounds(const CsgTree& t) {
  Bounds b{Vec3::Constant(1e300), Vec3::Constant(-1e300)};
  for (const auto& pr : t.primitives) {
    for (int a = 0; a < 3; ++a) {
      double lo = pr.a(a), hi = pr.a(a);
      if (pr.kind == Primitive::Kind::Cylinder) {
        lo = std::min(lo, pr.b(a));
        hi = std::max(hi, pr.b(a));
      }
      b.lo(a) = std::min(b.lo(a), lo - pr.radius);
      b.hi(a) = std::max(b.hi(a), hi + pr.radius);
    }
  }
  return b;
}

}  // namespace

TriMesh tessellate(const CsgTree& t, int resolution) {
  if (t.root < 0) throw std::runtime_error("tessellate: empty tree");
  if (resolution < 16)
    throw std::invalid_argument("tessellate: resolution below 16");
  Bounds b = tree_bounds(t);
  const double longest = (b.hi - b.lo).maxCoeff();
  const double h = longest / resolution;
  for (const auto& pr : t.primitives)
    if (pr.radius < h)
      throw std::runtime_error(
          "tessellate: resolution too coarse to separate features");
  b.lo -= Vec3::Constant(2 * h);
  b.hi += Vec3::Constant(2 * h);
  int n[3];
  for (int a = 0; a < 3; ++a) n[a] = int(std::ceil((b.hi(a) - b.lo(a)) / h));

  const std::size_t vx = n[0] + 1, vy = n[1] + 1, vz = n[2] + 1;
  auto vid = [&](int i, int j, int k) {
    return std::size_t(i) + vx * (std::size_t(j) + vy * k);
  };
  std::vector<double> phi(vx * vy * vz);
  const double nudge = -1e-9 * h;
  for (int k = 0; k < int(vz); ++k)
    for (int j = 0; j < int(vy); ++j)
      for (int i = 0; i < int(vx); ++i) {
        const Vec3 p = b.lo + Vec3(i * h, j * h, k * h);
        double v = sdf(t, p);
        if (v == 0) v = nudge;  // keep crossings strictly inside edges
        phi[vid(i, j, k)] = v;
      }

  // six tetrahedra per cell sharing the main diagonal: corners are visited
  // axis by axis in every permutation order
  static const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                  {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  TriMesh mesh;
  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
  auto cut = [&](std::size_t ga, std::size_t gb, const Vec3& pa, const Vec3& pb,
                 double fa, double fb) -> std::uint32_t {
    const std::uint64_t key =
        ga < gb ? (std::uint64_t(ga) << 32 | gb) : (std::uint64_t(gb) << 32 | ga);
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const double s = fa / (fa - fb);
    const Vec3 p = pa + s * (pb - pa);
    const std::uint32_t id = std::uint32_t(mesh.vertices.size());
    mesh.vertices.push_back({p(0), p(1), p(2)});
    edge_vertex.emplace(key, id);
    return id;
  };
  auto emit = [&](std::uint32_t a, std::uint32_t c, std::uint32_t d,
                  const Vec3& inside) {
    const auto& va = mesh.vertices[a];
    const auto& vc = mesh.vertices[c];
    const auto& vd = mesh.vertices[d];
    const Vec3 p0(va[0], va[1], va[2]), p1(vc[0], vc[1], vc[2]),
        p2(vd[0], vd[1], vd[2]);
    const Vec3 nrm = (p1 - p0).cross(p2 - p0);
    const Vec3 centroid = (p0 + p1 + p2) / 3;
    if (nrm.dot(centroid - inside) >= 0)
      mesh.triangles.push_back({a, c, d});
    else
      mesh.triangles.push_back({a, d, c});
  };

  for (int k = 0; k < n[2]; ++k)
    for (int j = 0; j < n[1]; ++j)
      for (int i = 0; i < n[0]; ++i) {
        const int base[3] = {i, j, k};
        for (const auto& pm : perms) {
          int corner[4][3] = {{base[0], base[1], base[2]}, {}, {}, {}};
          for (int s = 0; s < 3; ++s) {
            for (int a = 0; a < 3; ++a) corner[s + 1][a] = corner[s][a];
            corner[s + 1][pm[s]] += 1;
          }
          std::size_t gv[4];
          Vec3 pos[4];
          double f[4];
          for (int s = 0; s < 4; ++s) {
            gv[s] = vid(corner[s][0], corner[s][1], corner[s][2]);
            pos[s] = b.lo + Vec3(corner[s][0] * h, corner[s][1] * h,
                                 corner[s][2] * h);
            f[s] = phi[gv[s]];
          }
          int in[4], out[4], ni = 0, no = 0;
          for (int s = 0; s < 4; ++s)
            (f[s] < 0 ? in[ni++] : out[no++]) = s;
          if (ni == 0 || ni == 4) continue;
          if (ni == 1 || ni == 3) {
            const int apex = ni == 1 ? in[0] : out[0];
            const int* ring = ni == 1 ? out : in;
            std::uint32_t v[3];
            for (int s = 0; s < 3; ++s)
              v[s] = cut(gv[apex], gv[ring[s]], pos[apex], pos[ring[s]],
                         f[apex], f[ring[s]]);
            emit(v[0], v[1], v[2], ni == 1 ? pos[in[0]] : pos[in[2]]);
          } else {  // quad separating two inside from two outside corners
            const std::uint32_t q0 = cut(gv[in[0]], gv[out[0]], pos[in[0]],
                                         pos[out[0]], f[in[0]], f[out[0]]);
            const std::uint32_t q1 = cut(gv[in[0]], gv[out[1]], pos[in[0]],
                                         pos[out[1]], f[in[0]], f[out[1]]);
            const std::uint32_t q2 = cut(gv[in[1]], gv[out[1]], pos[in[1]],
                                         pos[out[1]], f[in[1]], f[out[1]]);
            const std::uint32_t q3 = cut(gv[in[1]], gv[out[0]], pos[in[1]],
                                         pos[out[0]], f[in[1]], f[out[0]]);
            const Vec3 inside = 0.5 * (pos[in[0]] + pos[in[1]]);
            emit(q0, q1, q2, inside);
            emit(q0, q2, q3, inside);
          }
        }
      }
  return mesh;
}

long mesh_euler_characteristic(const TriMesh& m) {
  std::unordered_set<std::uint64_t> edges;
  for (const auto& t : m.triangles)
    for (int e = 0; e < 3; ++e) {
      const std::uint32_t a = t[e], b = t[(e + 1) % 3];
      edges.insert(a < b ? (std::uint64_t(a) << 32 | b)
                         : (std::uint64_t(b) << 32 | a));
    }
  return long(m.vertices.size()) - long(edges.size()) + long(m.triangles.size());
}

bool mesh_watertight(const TriMesh& m) {
  // every undirected edge must be traversed exactly once per direction
  std::unordered_map<std::uint64_t, int> dir;
  for (const auto& t : m.triangles) {
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) return false;
    for (int e = 0; e < 3; ++e) {
      const std::uint32_t a = t[e], b = t[(e + 1) % 3];
      ++dir[std::uint64_t(a) << 32 | b];
    }
  }
  for (const auto& [key, count] : dir) {
    if (count != 1) return false;
    const std::uint64_t rev = key << 32 | key >> 32;
    if (dir.find(rev) == dir.end()) return false;
  }
  return true;
}

double mesh_area(const TriMesh& m) {
  double area = 0;
  for (const auto& t : m.triangles) {
    const Vec3 p0(m.vertices[t[0]][0], m.vertices[t[0]][1], m.vertices[t[0]][2]);
    const Vec3 p1(m.vertices[t[1]][0], m.vertices[t[1]][1], m.vertices[t[1]][2]);
    const Vec3 p2(m.vertices[t[2]][0], m.vertices[t[2]][1], m.vertices[t[2]][2]);
    area += 0.5 * (p1 - p0).cross(p2 - p0).norm();
  }
  return area;
}

// ---- exporters -------------------------------------------------------------

namespace {

Vec3 tri_normal(const TriMesh& m, std::size_t t) {
  const auto& a = m.vertices[m.triangles[t][0]];
  const auto& b = m.vertices[m.triangles[t][1]];
  const auto& c = m.vertices[m.triangles[t][2]];
  const Vec3 n = (Vec3(b[0], b[1], b[2]) - Vec3(a[0], a[1], a[2]))
                     .cross(Vec3(c[0], c[1], c[2]) - Vec3(a[0], a[1], a[2]));
  const double len = n.norm();
  return len > 0 ? Vec3(n / len) : Vec3::Zero();
}

}  // namespace

void write_stl_ascii(const TriMesh& m, const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "w");
  if (!fp) throw std::runtime_error("write_stl_ascii: cannot open " + path);
  std::fprintf(fp, "solid voxframe\n");
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    const Vec3 n = tri_normal(m, t);
    std::fprintf(fp, "  facet normal %g %g %g\n    outer loop\n", n(0), n(1), n(2));
    for (int v = 0; v < 3; ++v) {
      const auto& p = m.vertices[m.triangles[t][v]];
      std::fprintf(fp, "      vertex %g %g %g\n", p[0], p[1], p[2]);
    }
    std::fprintf(fp, "    endloop\n  endfacet\n");
  }
  std::fprintf(fp, "endsolid voxframe\n");
  std::fclose(fp);
}

void write_stl_binary(const TriMesh& m, const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("write_stl_binary: cannot open " + path);
  char header[80] = {};
  std::snprintf(header, sizeof(header), "voxframe solid");
  std::fwrite(header, 1, 80, fp);
  const std::uint32_t count = std::uint32_t(m.triangles.size());
  std::fwrite(&count, 4, 1, fp);
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    const Vec3 n = tri_normal(m, t);
    float rec[12] = {float(n(0)), float(n(1)), float(n(2))};
    for (int v = 0; v < 3; ++v) {
      const auto& p = m.vertices[m.triangles[t][v]];
      for (int a = 0; a < 3; ++a) rec[3 + 3 * v + a] = float(p[a]);
    }
    std::fwrite(rec, 4, 12, fp);
    const std::uint16_t attr = 0;
    std::fwrite(&attr, 2, 1, fp);
  }
  std::fclose(fp);
}

TriMesh read_stl_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_stl_binary: cannot open " + path);
  char header[80];
  in.read(header, 80);
  std::uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 4);
  TriMesh m;
  std::unordered_map<std::string, std::uint32_t> dedup;
  for (std::uint32_t t = 0; t < count; ++t) {
    float rec[12];
    std::uint16_t attr;
    in.read(reinterpret_cast<char*>(rec), 48);
    in.read(reinterpret_cast<char*>(&attr), 2);
    if (!in) throw std::runtime_error("read_stl_binary: truncated file");
    std::array<std::uint32_t, 3> tri;
    for (int v = 0; v < 3; ++v) {
      std::string key(reinterpret_cast<const char*>(rec + 3 + 3 * v), 12);
      auto [it, fresh] = dedup.emplace(key, std::uint32_t(m.vertices.size()));
      if (fresh)
        m.vertices.push_back({double(rec[3 + 3 * v]), double(rec[4 + 3 * v]),
                              double(rec[5 + 3 * v])});
      tri[v] = it->second;
    }
    m.triangles.push_back(tri);
  }
  return m;
}

// ---- CSG text document -----------------------------------------------------

namespace {

void write_expr(std::FILE* fp, const CsgTree& t, int node, int depth) {
  const CsgNode& n = t.nodes[node];
  for (int i = 0; i < depth; ++i) std::fputc(' ', fp);
  if (n.leaf()) {
    std::fprintf(fp, "(prim %d)", n.primitive);
  } else {
    std::fprintf(fp, "(union\n");
    write_expr(fp, t, n.left, depth + 1);
    std::fputc('\n', fp);
    write_expr(fp, t, n.right, depth + 1);
    std::fprintf(fp, ")");
  }
}

struct Lexer {
  const std::string& s;
  std::size_t pos = 0;

  std::string next() {
    while (pos < s.size() && std::isspace(std::uint8_t(s[pos]))) ++pos;
    if (pos >= s.size()) throw std::runtime_error("csg parse: unexpected end");
    if (s[pos] == '(' || s[pos] == ')') return std::string(1, s[pos++]);
    std::size_t start = pos;
    while (pos < s.size() && !std::isspace(std::uint8_t(s[pos])) &&
           s[pos] != '(' && s[pos] != ')')
      ++pos;
    return s.substr(start, pos - start);
  }
  void expect(const std::string& tok) {
    const std::string got = next();
    if (got != tok)
      throw std::runtime_error("csg parse: expected " + tok + ", got " + got);
  }
  double number() { return std::strtod(next().c_str(), nullptr); }
};

int parse_expr(Lexer& lx, CsgTree& t) {
  lx.expect("(");
  const std::string head = lx.next();
  if (head == "prim") {
    CsgNode leaf;
    leaf.primitive = int(lx.number());
    if (leaf.primitive < 0 || leaf.primitive >= int(t.primitives.size()))
      throw std::runtime_error("csg parse: primitive index out of range");
    lx.expect(")");
    t.nodes.push_back(leaf);
    return int(t.nodes.size()) - 1;
  }
  if (head != "union") throw std::runtime_error("csg parse: unknown node " + head);
  CsgNode u;
  u.left = parse_expr(lx, t);
  u.right = parse_expr(lx, t);
  lx.expect(")");
  t.nodes.push_back(u);
  return int(t.nodes.size()) - 1;
}

}  // namespace

void write_csg(const CsgTree& t, const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "w");
  if (!fp) throw std::runtime_error("write_csg: cannot open " + path);
  std::fprintf(fp, "(voxframe-csg 1\n");
  for (const auto& pr : t.primitives) {
    if (pr.kind == Primitive::Kind::Cylinder)
      std::fprintf(fp,
                   " (cylinder (%.17g %.17g %.17g) (%.17g %.17g %.17g) %.17g)\n",
                   pr.a(0), pr.a(1), pr.a(2), pr.b(0), pr.b(1), pr.b(2),
                   pr.radius);
    else
      std::fprintf(fp, " (sphere (%.17g %.17g %.17g) %.17g)\n", pr.a(0),
                   pr.a(1), pr.a(2), pr.radius);
  }
  if (t.root >= 0) {
    std::fprintf(fp, " (tree\n");
    write_expr(fp, t, t.root, 2);
    std::fprintf(fp, ")\n");
  }
  std::fprintf(fp, ")\n");
  std::fclose(fp);
}

CsgTree read_csg(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_csg: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  Lexer lx{text};
  lx.expect("(");
  lx.expect("voxframe-csg");
  if (lx.number() != 1) throw std::runtime_error("read_csg: unknown version");
  CsgTree t;
  for (;;) {
    std::string tok = lx.next();
    if (tok == ")") break;
    if (tok != "(") throw std::runtime_error("read_csg: expected a list");
    const std::string head = lx.next();
    if (head == "cylinder" || head == "sphere") {
      Primitive pr;
      pr.kind = head == "cylinder" ? Primitive::Kind::Cylinder
                                   : Primitive::Kind::Sphere;
      lx.expect("(");
      for (int a = 0; a < 3; ++a) pr.a(a) = lx.number();
      lx.expect(")");
      if (pr.kind == Primitive::Kind::Cylinder) {
        lx.expect("(");
        for (int a = 0; a < 3; ++a) pr.b(a) = lx.number();
        lx.expect(")");
      }
      pr.radius = lx.number();
      lx.expect(")");
      t.primitives.push_back(pr);
    } else if (head == "tree") {
      t.root = parse_expr(lx, t);
      lx.expect(")");
    } else {
      throw std::runtime_error("read_csg: unknown section " + head);
    }
  }
  return t;
}

}  // namespace voxframe
