#include "voxframe/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "voxframe/skeleton.hpp"

namespace voxframe {

std::vector<int> FrameGraph::degrees() const {
  std::vector<int> d(nodes.size(), 0);
  for (const auto& e : edges) {
    ++d[e.a];
    ++d[e.b];
  }
  return d;
}

std::vector<int> FrameGraph::incidence() const {
  std::vector<int> inc(nodes.size() * edges.size(), 0);
  for (std::size_t c = 0; c < edges.size(); ++c) {
    inc[edges[c].a * edges.size() + c] += edges[c].weight;
    inc[edges[c].b * edges.size() + c] += edges[c].weight;
  }
  return inc;
}

int FrameGraph::component_count() const {
  std::vector<std::vector<int>> adj(nodes.size());
  for (const auto& e : edges) {
    adj[e.a].push_back(e.b);
    adj[e.b].push_back(e.a);
  }
  std::vector<char> seen(nodes.size(), 0);
  int comps = 0;
  std::vector<int> stack;
  for (std::size_t s = 0; s < nodes.size(); ++s) {
    if (seen[s]) continue;
    ++comps;
    seen[s] = 1;
    stack.push_back(int(s));
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (int w : adj[v])
        if (!seen[w]) {
          seen[w] = 1;
          stack.push_back(w);
        }
    }
  }
  return comps;
}

int FrameGraph::cycle_rank() const {
  return int(edges.size()) - int(nodes.size()) + component_count();
}

namespace {

std::array<double, 3> voxel_center(const VoxelGrid& g, std::size_t idx) {
  const auto c = g.coords(idx);
  return {c[0] + 0.5, c[1] + 0.5, c[2] + 0.5};
}

}  // namespace

FrameGraph extract_graph(const BinaryVoxelModel& m, const ExtractOptions& opts) {
  const auto& g = m.grid;
  const std::size_t n = g.cell_count();

  // neighbor counts and joint classification
  std::vector<std::uint8_t> joint(n, 0);
  std::vector<std::size_t> solids;
  for (std::size_t idx = 0; idx < n; ++idx) {
    if (!m.solid[idx]) continue;
    solids.push_back(idx);
    const auto c = g.coords(idx);
    const auto nb = neighborhood_at(m, c[0], c[1], c[2]);
    if (solid_neighbor_count(nb) != 2 || m.is_tagged(idx)) joint[idx] = 1;
  }
  if (solids.empty()) throw std::runtime_error("extract_graph: empty skeleton");

  auto neighbors26 = [&](std::size_t idx, std::vector<std::size_t>& out) {
    out.clear();
    const auto c = g.coords(idx);
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0 && dz == 0) continue;
          const int x = c[0] + dx, y = c[1] + dy, z = c[2] + dz;
          if (m.is_solid(x, y, z)) out.push_back(g.index(x, y, z));
        }
  };

  // cluster joint voxels by 26-adjacency; cluster ids follow min voxel index
  FrameGraph out;
  out.grid = g;
  std::vector<std::int32_t> cluster(n, -1);
  std::vector<std::size_t> stack, nbuf;
  for (std::size_t seed : solids) {
    if (!joint[seed] || cluster[seed] >= 0) continue;
    const int id = int(out.nodes.size());
    FrameGraph::Node node;
    double cnt = 0;
    cluster[seed] = id;
    stack.assign(1, seed);
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      const auto c = voxel_center(g, v);
      for (int a = 0; a < 3; ++a) node.pos[a] += c[a];
      cnt += 1;
      if (m.tags[v] & kTagDirichlet) node.dirichlet = true;
      if (m.tags[v] & kTagLoad) node.loaded = true;
      if (auto it = opts.voxel_forces.find(v); it != opts.voxel_forces.end())
        for (int a = 0; a < 3; ++a) node.force[a] += it->second[a];
      neighbors26(v, nbuf);
      for (std::size_t w : nbuf)
        if (joint[w] && cluster[w] < 0) {
          cluster[w] = id;
          stack.push_back(w);
        }
    }
    for (int a = 0; a < 3; ++a) node.pos[a] /= cnt;
    out.nodes.push_back(node);
  }

  // trace chains from every joint voxel through regular voxels
  std::vector<std::uint8_t> visited(n, 0);  // interior voxels consumed by chains
  std::vector<std::size_t> interior;
  for (std::size_t v : solids) {
    if (!joint[v]) continue;
    neighbors26(v, nbuf);
    const auto starts = nbuf;
    for (std::size_t s : starts) {
      if (joint[s]) continue;
      // walk: regular voxels have exactly two solid 26-neighbors
      interior.clear();
      interior.push_back(s);
      std::size_t prev = v, cur = s;
      int weight = 2;
      for (;;) {
        neighbors26(cur, nbuf);
        if (nbuf.size() != 2)
          throw std::runtime_error("extract_graph: chain voxel degree != 2");
        const std::size_t next = nbuf[0] == prev ? nbuf[1] : nbuf[0];
        ++weight;
        if (joint[next]) {
          prev = cur;
          cur = next;
          break;
        }
        interior.push_back(next);
        prev = cur;
        cur = next;
      }
      const std::size_t u = cur, t = prev;
      if (std::make_pair(v, interior.front()) >= std::make_pair(u, t))
        continue;  // the trace from the other end owns this chain
      for (std::size_t iv : interior) visited[iv] = 1;
      const int ca = cluster[v], cb = cluster[u];
      if (ca != cb) {
        out.edges.push_back({ca, cb, weight});
      } else {
        // raw self-loop: split at the midpoint voxel
        const std::size_t h = interior.size() / 2;
        FrameGraph::Node mid;
        mid.pos = voxel_center(g, interior[h]);
        const int mid_id = int(out.nodes.size());
        out.nodes.push_back(mid);
        out.edges.push_back({ca, mid_id, int(h) + 2});
        out.edges.push_back({mid_id, cb, int(interior.size() - h) + 1});
      }
    }
  }

  for (std::size_t idx : solids)
    if (!joint[idx] && !visited[idx])
      throw std::runtime_error(
          "extract_graph: malformed skeleton, closed loop without joints");
  return out;
}

namespace {

void drop_node(FrameGraph& g, int gone) {
  g.nodes.erase(g.nodes.begin() + gone);
  for (auto& e : g.edges) {
    if (e.a > gone) --e.a;
    if (e.b > gone) --e.b;
  }
}

void merge_duplicate_edges(FrameGraph& g) {
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    const auto pa = std::minmax(g.edges[i].a, g.edges[i].b);
    double sum = g.edges[i].weight;
    int count = 1;
    for (std::size_t j = g.edges.size(); j-- > i + 1;) {
      const auto pb = std::minmax(g.edges[j].a, g.edges[j].b);
      if (pa == pb) {
        sum += g.edges[j].weight;
        ++count;
        g.edges.erase(g.edges.begin() + j);
      }
    }
    if (count > 1) g.edges[i].weight = int(std::llround(sum / count));
  }
}

}  // namespace

int collapse_short_edges(FrameGraph& g, int min_length) {
  int collapses = 0;
  for (;;) {
    int best = -1;
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      const auto& ed = g.edges[e];
      if (ed.weight >= min_length) continue;
      if (g.nodes[ed.a].flagged() && g.nodes[ed.b].flagged()) continue;
      if (best < 0 || ed.weight < g.edges[best].weight) best = int(e);
    }
    if (best < 0) break;
    const int keep = std::min(g.edges[best].a, g.edges[best].b);
    const int gone = std::max(g.edges[best].a, g.edges[best].b);
    auto& nk = g.nodes[keep];
    const auto& ng = g.nodes[gone];
    for (int a = 0; a < 3; ++a) {
      nk.pos[a] = 0.5 * (nk.pos[a] + ng.pos[a]);
      nk.force[a] += ng.force[a];
    }
    nk.dirichlet = nk.dirichlet || ng.dirichlet;
    nk.loaded = nk.loaded || ng.loaded;
    g.edges.erase(g.edges.begin() + best);
    for (auto& e : g.edges)
      for (int* v : {&e.a, &e.b})
        if (*v == gone) *v = keep;
    std::erase_if(g.edges, [](const FrameGraph::Edge& e) { return e.a == e.b; });
    drop_node(g, gone);
    merge_duplicate_edges(g);
    ++collapses;
  }
  return collapses;
}

int prune_leaves(FrameGraph& g) {
  int removed = 0;
  for (;;) {
    const auto deg = g.degrees();
    int victim = -1;
    for (std::size_t v = 0; v < g.nodes.size(); ++v)
      if (deg[v] <= 1 && !g.nodes[v].flagged()) {
        victim = int(v);
        break;
      }
    if (victim < 0) break;
    std::erase_if(g.edges, [victim](const FrameGraph::Edge& e) {
      return e.a == victim || e.b == victim;
    });
    drop_node(g, victim);
    ++removed;
  }
  return removed;
}

void write_graph(const FrameGraph& g, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  char buf[256];
  os << "voxframe graph 1\n";
  std::snprintf(buf, sizeof buf, "grid %d %d %d %.17g %.17g %.17g %.17g %.17g %.17g\n",
                g.grid.dims[0], g.grid.dims[1], g.grid.dims[2], g.grid.spacing[0],
                g.grid.spacing[1], g.grid.spacing[2], g.grid.origin[0],
                g.grid.origin[1], g.grid.origin[2]);
  os << buf;
  os << "nodes " << g.nodes.size() << '\n';
  for (const auto& n : g.nodes) {
    std::string flags;
    if (n.dirichlet) flags += 'D';
    if (n.loaded) flags += 'L';
    if (flags.empty()) flags = "-";
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %s %.17g %.17g %.17g\n",
                  n.pos[0], n.pos[1], n.pos[2], flags.c_str(), n.force[0],
                  n.force[1], n.force[2]);
    os << buf;
  }
  os << "edges " << g.edges.size() << '\n';
  for (const auto& e : g.edges)
    os << e.a << ' ' << e.b << ' ' << e.weight << '\n';
  if (!os) throw std::runtime_error("write failed: " + path);
}

FrameGraph read_graph(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(is, line);
  if (line != "voxframe graph 1")
    throw std::runtime_error("bad graph file header: " + path);
  FrameGraph g;
  std::string word;
  is >> word;  // "grid"
  for (int a = 0; a < 3; ++a) is >> g.grid.dims[a];
  for (int a = 0; a < 3; ++a) is >> g.grid.spacing[a];
  for (int a = 0; a < 3; ++a) is >> g.grid.origin[a];
  std::size_t nn = 0, ne = 0;
  is >> word >> nn;
  g.nodes.resize(nn);
  for (auto& n : g.nodes) {
    std::string flags;
    is >> n.pos[0] >> n.pos[1] >> n.pos[2] >> flags >> n.force[0] >> n.force[1] >>
        n.force[2];
    n.dirichlet = flags.find('D') != std::string::npos;
    n.loaded = flags.find('L') != std::string::npos;
  }
  is >> word >> ne;
  g.edges.resize(ne);
  for (auto& e : g.edges) is >> e.a >> e.b >> e.weight;
  if (!is) throw std::runtime_error("truncated graph file: " + path);
  return g;
}

}  // namespace voxframe
