#pragma once
// Shared pieces of the acceptance binaries: the printed line protocol and
// independent topology oracles. The oracles use their own entity counting,
// padding and component search so they check the library rather than echo it.

#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "voxframe/grid.hpp"

namespace accept {

using voxframe::BinaryVoxelModel;
using voxframe::VoxelGrid;
using voxframe::make_model;

struct Gate {
  bool all_ok = true;

  void line(const std::string& criterion, bool ok, const std::string& note = "") {
    all_ok = all_ok && ok;
    std::printf("[ACCEPT] criterion %s: %s%s%s%s\n", criterion.c_str(),
                ok ? "PASS" : "FAIL", note.empty() ? "" : " (", note.c_str(),
                note.empty() ? "" : ")");
    std::fflush(stdout);
  }
  int exit_code() const { return all_ok ? 0 : 1; }
};

// ---- independent topology oracle -------------------------------------------
// chi = n0 - n1 + n2 - n3 with entities deduplicated through canonical hashed
// keys: a vertex is its lattice point, an edge/face its minimum corner plus
// axis. 26-adjacent voxels share keys automatically.

inline std::uint64_t pack(int i, int j, int k, int extra = 0) {
  const std::uint64_t p = 1u << 20;
  return ((std::uint64_t(extra) * p + k) * p + j) * p + i;
}

inline std::int64_t chi_by_entities(const BinaryVoxelModel& m) {
  std::unordered_set<std::uint64_t> verts, edges, faces;
  std::int64_t voxels = 0;
  const auto& g = m.grid;
  verts.reserve(m.solid.size() * 2);
  edges.reserve(m.solid.size() * 4);
  faces.reserve(m.solid.size() * 2);
  for (int k = 0; k < g.nz(); ++k)
    for (int j = 0; j < g.ny(); ++j)
      for (int i = 0; i < g.nx(); ++i) {
        if (!m.solid[g.index(i, j, k)]) continue;
        ++voxels;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              verts.insert(pack(i + dx, j + dy, k + dz));
        // 12 edges: axis + the two transverse offsets of the min corner
        for (int axis = 0; axis < 3; ++axis)
          for (int u = 0; u < 2; ++u)
            for (int v = 0; v < 2; ++v) {
              int c[3] = {i, j, k};
              c[(axis + 1) % 3] += u;
              c[(axis + 2) % 3] += v;
              edges.insert(pack(c[0], c[1], c[2], 1 + axis));
            }
        // 6 faces: normal axis + offset along it
        for (int axis = 0; axis < 3; ++axis)
          for (int s = 0; s < 2; ++s) {
            int c[3] = {i, j, k};
            c[axis] += s;
            faces.insert(pack(c[0], c[1], c[2], 4 + axis));
          }
      }
  return std::int64_t(verts.size()) - std::int64_t(edges.size()) +
         std::int64_t(faces.size()) - voxels;
}

// flood fill over the requested phase; 26- or 6-adjacency
inline int flood_components(const std::vector<std::uint8_t>& cells, int nx, int ny,
                            int nz, bool want_solid, bool face6) {
  const auto idx = [&](int i, int j, int k) {
    return std::size_t(i) + std::size_t(nx) * (std::size_t(j) + std::size_t(ny) * k);
  };
  std::vector<std::uint8_t> seen(cells.size(), 0);
  std::vector<std::array<int, 3>> stack;
  int count = 0;
  for (int k0 = 0; k0 < nz; ++k0)
    for (int j0 = 0; j0 < ny; ++j0)
      for (int i0 = 0; i0 < nx; ++i0) {
        const std::size_t s = idx(i0, j0, k0);
        if (seen[s] || (cells[s] != 0) != want_solid) continue;
        ++count;
        seen[s] = 1;
        stack.assign(1, {i0, j0, k0});
        while (!stack.empty()) {
          const auto [i, j, k] = stack.back();
          stack.pop_back();
          for (int dk = -1; dk <= 1; ++dk)
            for (int dj = -1; dj <= 1; ++dj)
              for (int di = -1; di <= 1; ++di) {
                if (di == 0 && dj == 0 && dk == 0) continue;
                if (face6 && std::abs(di) + std::abs(dj) + std::abs(dk) != 1)
                  continue;
                const int ni = i + di, nj = j + dj, nk = k + dk;
                if (ni < 0 || ni >= nx || nj < 0 || nj >= ny || nk < 0 || nk >= nz)
                  continue;
                const std::size_t t = idx(ni, nj, nk);
                if (seen[t] || (cells[t] != 0) != want_solid) continue;
                seen[t] = 1;
                stack.push_back({ni, nj, nk});
              }
        }
      }
  return count;
}

// objects (solid, 26-adj), tunnels (via chi), cavities (void 6-components of
// the void-padded model minus the exterior)
struct Triple {
  std::int64_t objects = 0, tunnels = 0, cavities = 0;
  bool operator==(const Triple&) const = default;
};

inline Triple triple(const BinaryVoxelModel& m) {
  const auto& g = m.grid;
  const int nx = g.nx() + 2, ny = g.ny() + 2, nz = g.nz() + 2;
  std::vector<std::uint8_t> padded(std::size_t(nx) * ny * nz, 0);
  for (int k = 0; k < g.nz(); ++k)
    for (int j = 0; j < g.ny(); ++j)
      for (int i = 0; i < g.nx(); ++i)
        padded[std::size_t(i + 1) +
               std::size_t(nx) * (std::size_t(j + 1) + std::size_t(ny) * (k + 1))] =
            m.solid[g.index(i, j, k)];
  Triple t;
  t.objects = flood_components(padded, nx, ny, nz, true, false);
  t.cavities = flood_components(padded, nx, ny, nz, false, true) - 1;
  t.tunnels = t.objects + t.cavities - chi_by_entities(m);
  return t;
}

// ---- random models ---------------------------------------------------------

// union of random balls and boxes, occasionally with a carved tunnel
inline BinaryVoxelModel blob(std::mt19937& rng, int nx, int ny, int nz) {
  VoxelGrid g;
  g.dims = {nx, ny, nz};
  BinaryVoxelModel m = make_model(g);
  auto uni = [&](int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };
  const int shapes = uni(1, 4);
  for (int s = 0; s < shapes; ++s) {
    const bool ball = uni(0, 1) == 0;
    const int cx = uni(0, nx - 1), cy = uni(0, ny - 1), cz = uni(0, nz - 1);
    const int r = uni(1, std::max(2, nx / 3));
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
          const int dx = i - cx, dy = j - cy, dz = k - cz;
          const bool in = ball ? dx * dx + dy * dy + dz * dz <= r * r
                               : std::abs(dx) <= r && std::abs(dy) <= r &&
                                     std::abs(dz) <= r / 2 + 1;
          if (in) m.solid[g.index(i, j, k)] = 1;
        }
  }
  if (uni(0, 2) == 0) {
    const int cx = uni(1, nx - 2), cy = uni(1, ny - 2);
    const int r = uni(1, std::max(1, nx / 4));
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
          const int dx = i - cx, dy = j - cy;
          if (dx * dx + dy * dy <= r * r) m.solid[g.index(i, j, k)] = 0;
        }
  }
  return m;
}

}  // namespace accept
