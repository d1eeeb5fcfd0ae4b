#pragma once
// Digital topology on binary voxel models: Euler characteristic (direct
// counting and the per-octant table route), simple-point tests on 3x3x3
// neighborhoods, connected components, and homotopic thinning.
//
// Everything in here is integer arithmetic; Euler contributions are kept in
// units of 1/8 so octant bookkeeping stays exact.

#include <array>
#include <chrono>
#include <cstdint>
#include <vector>

#include "voxframe/grid.hpp"

namespace voxframe {

// contribution of one octant configuration (8-bit mask, bit = dx + 2*dy +
// 4*dz) to chi, in units of 1/8. Zero for the empty configuration.
using EulerTable = std::array<std::int8_t, 256>;

EulerTable build_euler_table();

// chi = n0 - n1 + n2 - n3 of the cell complex spanned by solid voxels
// (26-adjacent voxels share vertices/edges/faces). Exact integer.
std::int64_t euler_by_counting(const BinaryVoxelModel& m);

// Same value via summing table contributions over all grid vertices.
// Expects a padded model (pad_with_void); out-of-range voxels read as void
// either way.
std::int64_t euler_by_octants(const BinaryVoxelModel& m);

// 3x3x3 neighborhood as a 27-bit mask, bit = x + 3*y + 9*z for offsets in
// {0,1,2}; the center voxel is bit 13. Out-of-range voxels read as void.
using Neighborhood = std::uint32_t;

constexpr Neighborhood kCenterBit = 1u << 13;

Neighborhood neighborhood_at(const BinaryVoxelModel& m, int i, int j, int k);

// number of solid voxels 26-adjacent to the center (center excluded)
int solid_neighbor_count(Neighborhood nb);

// true if the center has at least one void face-neighbor
bool is_border(Neighborhood nb);

// chi(neighborhood without center) - chi(neighborhood with center), in units
// of 1/8; only the 8 octants containing the center can change, so this is
// exact for any embedding. Center must be solid.
int euler_delta_eighths(Neighborhood nb, const EulerTable& table);

// Deletion of the (solid) center preserves topology: delta chi == 0 and the
// solid 26-neighbors form exactly one 26-connected component.
bool is_simple_point(Neighborhood nb, const EulerTable& table);

enum class Adjacency { Face6, Full26 };

// Connected components of the solid (or void) phase. Labels are 0-based in
// first-seen order, -1 elsewhere. Returns the component count.
int count_components(const BinaryVoxelModel& m, Adjacency adj, bool solid_phase,
                     std::vector<std::int32_t>* labels = nullptr);

struct SkeletonizeResult {
  BinaryVoxelModel model;
  int sweeps = 0;                                       // full 6-direction passes
  std::vector<std::size_t> removed_per_sweep;           // deletions per pass
  std::vector<std::chrono::nanoseconds> time_per_sweep; // wall time per pass
};

// Homotopic thinning: repeat 6 directional sub-steps (+x,-x,+y,-y,+z,-z).
// A sub-step collects candidates (solid, untagged, void face-neighbor in the
// sub-step direction, more than one solid 26-neighbor, simple), then deletes
// them sequentially, re-checking simplicity against the current state.
// Tagged voxels are never candidates. Terminates when a full pass deletes
// nothing. Expects a padded model.
SkeletonizeResult skeletonize(const BinaryVoxelModel& input);

}  // namespace voxframe
