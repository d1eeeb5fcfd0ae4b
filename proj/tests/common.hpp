#pragma once
// Shared helpers for tests: independent topology oracles and random model
// generators. The oracles deliberately use different algorithms than the
// library code they check.

#include <random>

#include "voxframe/grid.hpp"
#include "voxframe/skeleton.hpp"

namespace vftest {

using namespace voxframe;

// (objects, tunnels, cavities) computed from first principles: 26-components
// of solid, void 6-components of the padded model minus the exterior, and
// tunnels from chi = o - h + c.
struct TopoTriple {
  std::int64_t objects = 0, tunnels = 0, cavities = 0;
  bool operator==(const TopoTriple&) const = default;
};

inline TopoTriple topo_triple(const BinaryVoxelModel& m) {
  TopoTriple t;
  t.objects = count_components(m, Adjacency::Full26, true);
  t.cavities = count_components(pad_with_void(m), Adjacency::Face6, false) - 1;
  t.tunnels = t.objects + t.cavities - euler_by_counting(m);
  return t;
}

// Random blob: union of a few random balls and boxes, occasionally with a
// carved hole, so nontrivial chi values show up regularly.
inline BinaryVoxelModel make_blob(std::mt19937& rng, int nx, int ny, int nz) {
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
                               : std::abs(dx) <= r && std::abs(dy) <= r && std::abs(dz) <= r / 2 + 1;
          if (in) m.solid[g.index(i, j, k)] = 1;
        }
  }
  if (uni(0, 2) == 0) {  // carve a tunnel-ish hole
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

// Uniform random 27-bit neighborhood with a solid center.
inline Neighborhood random_neighborhood(std::mt19937& rng, double fill = 0.5) {
  std::bernoulli_distribution bit(fill);
  Neighborhood nb = kCenterBit;
  for (int b = 0; b < 27; ++b)
    if (b != 13 && bit(rng)) nb |= 1u << b;
  return nb;
}

inline BinaryVoxelModel neighborhood_to_model(Neighborhood nb) {
  VoxelGrid g;
  g.dims = {3, 3, 3};
  BinaryVoxelModel m = make_model(g);
  for (int b = 0; b < 27; ++b)
    if (nb & (1u << b)) m.solid[b] = 1;  // same linear layout
  return m;
}

}  // namespace vftest
