#include "voxframe/skeleton.hpp"

#include <bit>
#include <stdexcept>
#include <unordered_set>

namespace voxframe {

EulerTable build_euler_table() {
  // Octant around a grid vertex q: 8 voxels, bit = dx + 2*dy + 4*dz.
  // chi contribution = [q covered] - E/2 + F/4 - V/8 where E counts covered
  // edges incident to q (6: the 4 voxels on one side of an axis share that
  // axis edge), F covered faces incident to q (12: 2 voxels per face), V
  // solid voxels. Stored in units of 1/8: 8 - 4E + 2F - V.
  constexpr std::uint8_t axis_side[6] = {0x55, 0xAA, 0x33, 0xCC, 0x0F, 0xF0};
  constexpr std::uint8_t face_pair[12][2] = {
      // normal x: voxels differing only in dx
      {0, 1}, {2, 3}, {4, 5}, {6, 7},
      // normal y
      {0, 2}, {1, 3}, {4, 6}, {5, 7},
      // normal z
      {0, 4}, {1, 5}, {2, 6}, {3, 7},
  };
  EulerTable t{};
  for (int m = 1; m < 256; ++m) {
    int e = 0, f = 0;
    for (std::uint8_t side : axis_side) e += (m & side) != 0;
    for (auto& p : face_pair) f += (m & ((1 << p[0]) | (1 << p[1]))) != 0;
    t[m] = std::int8_t(8 - 4 * e + 2 * f - std::popcount(unsigned(m)));
  }
  return t;
}

std::int64_t euler_by_counting(const BinaryVoxelModel& m) {
  // Enumerate distinct vertices/edges/faces/cells of the union of solid
  // voxels. Keys pack position and entity type; an edge is keyed by its min
  // corner and axis, a face by its min corner and normal.
  std::unordered_set<std::uint64_t> ent;
  ent.reserve(m.solid_count() * 16);
  const auto& g = m.grid;
  const std::uint64_t sx = std::uint64_t(g.nx()) + 2, sy = std::uint64_t(g.ny()) + 2;
  auto key = [&](int a, int b, int c, int type) {
    return ((std::uint64_t(c) * sy + std::uint64_t(b)) * sx + std::uint64_t(a)) * 8 +
           std::uint64_t(type);
  };
  std::int64_t n[4] = {0, 0, 0, 0};
  auto add = [&](std::uint64_t k, int order) {
    if (ent.insert(k).second) ++n[order];
  };
  for (int k = 0; k < g.nz(); ++k)
    for (int j = 0; j < g.ny(); ++j)
      for (int i = 0; i < g.nx(); ++i) {
        if (!m.solid[g.index(i, j, k)]) continue;
        ++n[3];
        for (int dz = 0; dz <= 1; ++dz)
          for (int dy = 0; dy <= 1; ++dy)
            for (int dx = 0; dx <= 1; ++dx)
              add(key(i + dx, j + dy, k + dz, 0), 0);
        for (int da = 0; da <= 1; ++da)
          for (int db = 0; db <= 1; ++db) {
            add(key(i, j + da, k + db, 1), 1);  // edges along x
            add(key(i + da, j, k + db, 2), 1);  // along y
            add(key(i + da, j + db, k, 3), 1);  // along z
          }
        for (int d = 0; d <= 1; ++d) {
          add(key(i + d, j, k, 4), 2);  // faces normal x
          add(key(i, j + d, k, 5), 2);  // normal y
          add(key(i, j, k + d, 6), 2);  // normal z
        }
      }
  return n[0] - n[1] + n[2] - n[3];
}

std::int64_t euler_by_octants(const BinaryVoxelModel& m) {
  static const EulerTable table = build_euler_table();
  const auto& g = m.grid;
  std::int64_t eighths = 0;
  for (int c = 0; c <= g.nz(); ++c)
    for (int b = 0; b <= g.ny(); ++b)
      for (int a = 0; a <= g.nx(); ++a) {
        unsigned mask = 0;
        for (int dz = 0; dz <= 1; ++dz)
          for (int dy = 0; dy <= 1; ++dy)
            for (int dx = 0; dx <= 1; ++dx)
              if (m.is_solid(a - 1 + dx, b - 1 + dy, c - 1 + dz))
                mask |= 1u << (dx + 2 * dy + 4 * dz);
        eighths += table[mask];
      }
  if (eighths % 8 != 0) throw std::logic_error("octant sum not divisible by 8");
  return eighths / 8;
}

Neighborhood neighborhood_at(const BinaryVoxelModel& m, int i, int j, int k) {
  Neighborhood nb = 0;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        if (m.is_solid(i + dx, j + dy, k + dz))
          nb |= 1u << ((dx + 1) + 3 * (dy + 1) + 9 * (dz + 1));
  return nb;
}

int solid_neighbor_count(Neighborhood nb) {
  return std::popcount(nb & ~kCenterBit);
}

bool is_border(Neighborhood nb) {
  constexpr Neighborhood face6 =
      (1u << 12) | (1u << 14) | (1u << 10) | (1u << 16) | (1u << 4) | (1u << 22);
  return (nb & face6) != face6;
}

namespace {

// table index of the octant with corner sign (sx,sy,sz), built from the
// neighborhood mask; `with_center` controls bit of the center voxel
unsigned octant_mask(Neighborhood nb, int sx, int sy, int sz, bool with_center) {
  unsigned m = 0;
  for (int dz = 0; dz <= 1; ++dz)
    for (int dy = 0; dy <= 1; ++dy)
      for (int dx = 0; dx <= 1; ++dx) {
        const int bit = (sx + dx) + 3 * (sy + dy) + 9 * (sz + dz);
        if (bit == 13 && !with_center) continue;
        if (nb & (1u << bit)) m |= 1u << (dx + 2 * dy + 4 * dz);
      }
  return m;
}

}  // namespace

int euler_delta_eighths(Neighborhood nb, const EulerTable& table) {
  int delta = 0;
  for (int sz = 0; sz <= 1; ++sz)
    for (int sy = 0; sy <= 1; ++sy)
      for (int sx = 0; sx <= 1; ++sx)
        delta += table[octant_mask(nb, sx, sy, sz, false)] -
                 table[octant_mask(nb, sx, sy, sz, true)];
  return delta;
}

bool is_simple_point(Neighborhood nb, const EulerTable& table) {
  if (!(nb & kCenterBit)) return false;
  if (euler_delta_eighths(nb, table) != 0) return false;
  // exactly one 26-component among the solid neighbors
  const Neighborhood rest = nb & ~kCenterBit;
  if (rest == 0) return false;
  int seen_start = std::countr_zero(rest);
  Neighborhood visited = 0;
  int stack[27], top = 0;
  stack[top++] = seen_start;
  visited |= 1u << seen_start;
  while (top > 0) {
    const int b = stack[--top];
    const int x = b % 3, y = (b / 3) % 3, z = b / 9;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy, nz = z + dz;
          if (nx < 0 || nx > 2 || ny < 0 || ny > 2 || nz < 0 || nz > 2) continue;
          const int nbit = nx + 3 * ny + 9 * nz;
          if (nbit == 13) continue;
          const Neighborhood bm = 1u << nbit;
          if ((rest & bm) && !(visited & bm)) {
            visited |= bm;
            stack[top++] = nbit;
          }
        }
  }
  return visited == rest;
}

int count_components(const BinaryVoxelModel& m, Adjacency adj, bool solid_phase,
                     std::vector<std::int32_t>* labels) {
  const auto& g = m.grid;
  const std::size_t n = g.cell_count();
  std::vector<std::int32_t> lab(n, -1);
  auto in_phase = [&](std::size_t idx) { return bool(m.solid[idx]) == solid_phase; };
  std::vector<std::size_t> stack;
  int count = 0;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (!in_phase(seed) || lab[seed] >= 0) continue;
    const int comp = count++;
    lab[seed] = comp;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      const auto [x, y, z] = g.coords(cur);
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0 && dz == 0) continue;
            if (adj == Adjacency::Face6 && std::abs(dx) + std::abs(dy) + std::abs(dz) != 1)
              continue;
            const int nx = x + dx, ny = y + dy, nz = z + dz;
            if (!g.in_bounds(nx, ny, nz)) continue;
            const std::size_t nidx = g.index(nx, ny, nz);
            if (in_phase(nidx) && lab[nidx] < 0) {
              lab[nidx] = comp;
              stack.push_back(nidx);
            }
          }
    }
  }
  if (labels) *labels = std::move(lab);
  return count;
}

SkeletonizeResult skeletonize(const BinaryVoxelModel& input) {
  static const EulerTable table = build_euler_table();
  constexpr int dir[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                             {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  SkeletonizeResult res;
  res.model = input;
  BinaryVoxelModel& m = res.model;
  const auto& g = m.grid;
  std::vector<std::size_t> cand;
  for (;;) {
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t removed = 0;
    for (const auto& d : dir) {
      cand.clear();
      for (int k = 0; k < g.nz(); ++k)
        for (int j = 0; j < g.ny(); ++j)
          for (int i = 0; i < g.nx(); ++i) {
            const std::size_t idx = g.index(i, j, k);
            if (!m.solid[idx] || m.is_tagged(idx)) continue;
            if (m.is_solid(i + d[0], j + d[1], k + d[2])) continue;
            const Neighborhood nb = neighborhood_at(m, i, j, k);
            if (solid_neighbor_count(nb) == 1) continue;  // end point
            if (!is_simple_point(nb, table)) continue;
            cand.push_back(idx);
          }
      for (std::size_t idx : cand) {
        const auto [i, j, k] = g.coords(idx);
        if (is_simple_point(neighborhood_at(m, i, j, k), table)) {
          m.solid[idx] = 0;
          ++removed;
        }
      }
    }
    res.time_per_sweep.push_back(std::chrono::duration_cast<std::chrono::nanoseconds>(
        std::chrono::steady_clock::now() - t0));
    res.removed_per_sweep.push_back(removed);
    ++res.sweeps;
    if (removed == 0) break;
  }
  return res;
}

}  // namespace voxframe
