#pragma once
// Weighted frame graphs extracted from voxel skeletons, plus the conditioning
// passes (short-edge collapse, leaf pruning) that run before frame synthesis.

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "voxframe/grid.hpp"

namespace voxframe {

struct FrameGraph {
  struct Node {
    std::array<double, 3> pos{0, 0, 0};  // voxel units: cell centroid = index + 1/2
    bool dirichlet = false;
    bool loaded = false;
    std::array<double, 3> force{0, 0, 0};  // attributed load, summed through merges

    bool flagged() const { return dirichlet || loaded; }
  };
  struct Edge {
    int a = -1, b = -1;
    int weight = 0;  // chain voxel count including both end joints
  };

  VoxelGrid grid;  // voxel -> physical mapping for downstream stages
  std::vector<Node> nodes;
  std::vector<Edge> edges;

  std::vector<int> degrees() const;
  // node x edge incidence, row-major, entry = weight at the edge's ends
  std::vector<int> incidence() const;
  int component_count() const;
  int cycle_rank() const;  // edges - nodes + components
};

struct ExtractOptions {
  // per-voxel force attribution (linear voxel index -> force vector); summed
  // into the owning node
  std::unordered_map<std::size_t, std::array<double, 3>> voxel_forces;
};

// Joint voxels are those with a 26-neighbor count != 2 or any tag. 26-adjacent
// joint voxels merge into one node at their centroid. Chains between joints
// become weighted edges; chains that close on their own cluster are split at
// the midpoint voxel. Throws on skeletons containing joint-free loops.
FrameGraph extract_graph(const BinaryVoxelModel& skeleton,
                         const ExtractOptions& opts = {});

// Repeatedly merges the endpoints of the shortest edge with weight <
// min_length (ties: lowest edge index), skipping edges whose both ends carry
// boundary flags. Merged node sits at the coordinate average, ORs flags, sums
// forces; duplicate edges merge to the rounded mean weight; self-loops bred
// by a collapse are dropped. Returns the number of collapses.
int collapse_short_edges(FrameGraph& g, int min_length = 3);

// Removes degree<=1 nodes without boundary flags (with their edge) until none
// remain. Returns the number of removed nodes.
int prune_leaves(FrameGraph& g);

void write_graph(const FrameGraph& g, const std::string& path);
FrameGraph read_graph(const std::string& path);

}  // namespace voxframe
