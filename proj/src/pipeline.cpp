#include "voxframe/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <stdexcept>
#include <unordered_map>

#include "voxframe/csg.hpp"
#include "voxframe/graph.hpp"
#include "voxframe/sha256.hpp"
#include "voxframe/skeleton.hpp"

namespace voxframe {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// ---- artifact names --------------------------------------------------------

constexpr const char* kRho = "rho.vxfield";
constexpr const char* kRhoHat = "rho_hat.vxfield";
constexpr const char* kTopOptHistory = "topopt_history.csv";
constexpr const char* kModel = "model.vxbin";
constexpr const char* kThresholdStats = "threshold_stats.json";
constexpr const char* kSkeleton = "skeleton.vxbin";
constexpr const char* kSkeletonStats = "skeleton_stats.csv";
constexpr const char* kGraph = "graph.vxgraph";
constexpr const char* kFrameInitial = "frame_initial.vxframe";
constexpr const char* kFrame = "frame.vxframe";
constexpr const char* kFrameHistory = "frame_history.csv";
constexpr const char* kCsgDoc = "model.csg";
constexpr const char* kStlBinary = "model.stl";
constexpr const char* kStlAscii = "model_ascii.stl";
constexpr const char* kCsgStats = "csg_stats.json";
constexpr const char* kManifest = "run_manifest.json";

struct StageInput {
  const char* artifact;
  const char* producer;
};

const std::unordered_map<std::string, std::vector<StageInput>>& stage_inputs() {
  static const std::unordered_map<std::string, std::vector<StageInput>> deps = {
      {"topopt", {}},
      {"threshold", {{kRhoHat, "topopt"}}},
      {"skeleton", {{kModel, "threshold"}}},
      {"graph", {{kModel, "threshold"}, {kSkeleton, "skeleton"}}},
      {"frame", {{kGraph, "graph"}}},
      {"csg", {{kFrame, "frame"}}},
  };
  return deps;
}

// ---- config parsing --------------------------------------------------------

[[noreturn]] void config_error(const std::string& what) {
  throw std::runtime_error("config: " + what);
}

double require_number(const json& j, const std::string& key) {
  if (!j.contains(key) || !j[key].is_number())
    config_error("missing numeric field '" + key + "'");
  return j[key].get<double>();
}

std::array<double, 3> vec3_of(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) config_error(what + " must be [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

struct AxisSelector {
  bool has = false;
  double lo = 0, hi = 0;
};

std::array<AxisSelector, 3> parse_where(const json& j) {
  if (!j.is_object()) config_error("'where' must be an object of axis keys");
  std::array<AxisSelector, 3> sel;
  const char* axes = "xyz";
  for (int a = 0; a < 3; ++a) {
    const std::string key(1, axes[a]);
    if (!j.contains(key)) continue;
    sel[a].has = true;
    if (j[key].is_number()) {
      sel[a].lo = sel[a].hi = j[key].get<double>();
    } else if (j[key].is_array() && j[key].size() == 2) {
      sel[a].lo = j[key][0].get<double>();
      sel[a].hi = j[key][1].get<double>();
    } else {
      config_error("'where." + key + "' must be a number or [lo, hi]");
    }
  }
  for (const auto& [key, value] : j.items())
    if (key != "x" && key != "y" && key != "z")
      config_error("unknown 'where' key '" + key + "'");
  return sel;
}

std::vector<std::size_t> match_nodes(const VoxelGrid& g,
                                     const std::array<AxisSelector, 3>& sel) {
  std::vector<std::size_t> nodes;
  const int n[3] = {g.nx(), g.ny(), g.nz()};
  for (int k = 0; k <= n[2]; ++k)
    for (int j = 0; j <= n[1]; ++j)
      for (int i = 0; i <= n[0]; ++i) {
        const int idx[3] = {i, j, k};
        bool ok = true;
        for (int a = 0; a < 3 && ok; ++a) {
          if (!sel[a].has) continue;
          const double c = g.origin[a] + idx[a] * g.spacing[a];
          const double tol = 1e-6 * g.spacing[a];
          ok = c >= sel[a].lo - tol && c <= sel[a].hi + tol;
        }
        if (ok) nodes.push_back(node_index(g, i, j, k));
      }
  return nodes;
}

Obstacle parse_cylinder(const json& j) {
  Obstacle o;
  o.point = Vec3(vec3_of(j.at("point"), "cylinder point").data());
  const auto ax = vec3_of(j.at("axis"), "cylinder axis");
  o.axis = Vec3(ax.data()).normalized();
  o.radius = require_number(j, "radius");
  if (o.radius <= 0) config_error("cylinder radius must be positive");
  if (j.contains("half_length")) {
    o.finite = true;
    o.half_length = j["half_length"].get<double>();
  }
  return o;
}

}  // namespace

const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> stages = {"topopt", "threshold",
                                                  "skeleton", "graph",
                                                  "frame",  "csg"};
  return stages;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const std::exception& e) {
    config_error(path + ": " + e.what());
  }

  PipelineConfig cfg;
  cfg.source_path = path;
  cfg.source_sha256 = sha256_file(path);
  try {
  cfg.name = doc.value("name", fs::path(path).stem().string());
  cfg.out_dir = doc.value("output", "out");

  // grid
  if (!doc.contains("grid")) config_error("missing 'grid'");
  const json& jg = doc["grid"];
  VoxelGrid grid;
  if (!jg.contains("dims") || !jg["dims"].is_array() || jg["dims"].size() != 3)
    config_error("'grid.dims' must be [nx, ny, nz]");
  for (int a = 0; a < 3; ++a) {
    grid.dims[a] = jg["dims"][a].get<int>();
    if (grid.dims[a] <= 0) config_error("'grid.dims' must be positive");
  }
  if (jg.contains("spacing")) {
    if (jg["spacing"].is_number())
      grid.spacing = {jg["spacing"].get<double>(), jg["spacing"].get<double>(),
                      jg["spacing"].get<double>()};
    else
      grid.spacing = vec3_of(jg["spacing"], "'grid.spacing'");
  }
  if (jg.contains("origin")) grid.origin = vec3_of(jg["origin"], "'grid.origin'");
  cfg.problem.grid = grid;

  // material
  if (doc.contains("material")) {
    const json& jm = doc["material"];
    cfg.problem.E_bar = jm.value("E", cfg.problem.E_bar);
    cfg.problem.nu = jm.value("nu", cfg.problem.nu);
    cfg.problem.E_min = jm.value("E_min", cfg.problem.E_min);
    cfg.material.kappa = jm.value("kappa", cfg.material.kappa);
  }
  cfg.material.E = cfg.problem.E_bar;
  cfg.material.nu = cfg.problem.nu;

  // topopt
  if (!doc.contains("topopt")) config_error("missing 'topopt'");
  const json& jt = doc["topopt"];
  cfg.problem.p = jt.value("penalty", cfg.problem.p);
  cfg.problem.R = require_number(jt, "filter_radius");
  cfg.problem.V_f = require_number(jt, "volume_fraction");
  cfg.topopt.max_iterations = jt.value("max_iterations", cfg.topopt.max_iterations);
  cfg.topopt.tol = jt.value("tol", cfg.topopt.tol);
  cfg.topopt.oc.move = jt.value("move", cfg.topopt.oc.move);
  if (jt.contains("solver")) {
    const json& js = jt["solver"];
    cfg.topopt.solver.tol = js.value("tol", cfg.topopt.solver.tol);
    cfg.topopt.solver.max_iterations =
        js.value("max_iterations", cfg.topopt.solver.max_iterations);
    cfg.topopt.solver.preconditioner =
        js.value("preconditioner", cfg.topopt.solver.preconditioner);
    if (cfg.topopt.solver.preconditioner != "multigrid" &&
        cfg.topopt.solver.preconditioner != "jacobi")
      config_error("'topopt.solver.preconditioner' must be multigrid or jacobi");
  }

  // supports
  if (!doc.contains("supports") || !doc["supports"].is_array() ||
      doc["supports"].empty())
    config_error("missing 'supports'");
  for (const json& js : doc["supports"]) {
    const auto nodes = match_nodes(grid, parse_where(js.at("where")));
    if (nodes.empty()) config_error("a support 'where' matches no node");
    std::vector<int> dofs = {0, 1, 2};
    if (js.contains("dofs")) {
      dofs = js["dofs"].get<std::vector<int>>();
      for (int d : dofs)
        if (d < 0 || d > 2) config_error("support dofs must be 0, 1 or 2");
    }
    for (std::size_t n : nodes)
      for (int d : dofs) cfg.problem.supports.push_back({n, d});
  }

  // loads: the given force is a total, split equally over matched nodes
  if (!doc.contains("loads") || !doc["loads"].is_array() || doc["loads"].empty())
    config_error("missing 'loads'");
  for (const json& jl : doc["loads"]) {
    const auto nodes = match_nodes(grid, parse_where(jl.at("where")));
    if (nodes.empty()) config_error("a load 'where' matches no node");
    const auto f = vec3_of(jl.at("force"), "load force");
    if (f[0] == 0 && f[1] == 0 && f[2] == 0)
      config_error("load force must be nonzero");
    const double share = 1.0 / double(nodes.size());
    for (std::size_t n : nodes)
      cfg.problem.loads.push_back(
          {n, {f[0] * share, f[1] * share, f[2] * share}});
  }

  // passive regions: cells with centroid inside the shape get pinned
  if (doc.contains("passive")) {
    cfg.problem.passive.assign(grid.cell_count(), 0);
    cfg.problem.passive_rho.assign(grid.cell_count(), 0.0);
    for (const json& jp : doc["passive"]) {
      const double value = jp.value("value", 0.0);
      if (value < 0 || value > 1) config_error("passive value must be in [0, 1]");
      std::size_t marked = 0;
      if (jp.contains("cylinder")) {
        const Obstacle o = parse_cylinder(jp["cylinder"]);
        for (int k = 0; k < grid.nz(); ++k)
          for (int j = 0; j < grid.ny(); ++j)
            for (int i = 0; i < grid.nx(); ++i) {
              const auto c = grid.centroid(i, j, k);
              if (obstacle_sd(o, Vec3(c[0], c[1], c[2])) < 0) {
                const std::size_t idx = grid.index(i, j, k);
                cfg.problem.passive[idx] = 1;
                cfg.problem.passive_rho[idx] = value;
                ++marked;
              }
            }
      } else if (jp.contains("box")) {
        const auto lo = vec3_of(jp["box"].at("min"), "box min");
        const auto hi = vec3_of(jp["box"].at("max"), "box max");
        for (int k = 0; k < grid.nz(); ++k)
          for (int j = 0; j < grid.ny(); ++j)
            for (int i = 0; i < grid.nx(); ++i) {
              const auto c = grid.centroid(i, j, k);
              if (c[0] >= lo[0] && c[0] <= hi[0] && c[1] >= lo[1] &&
                  c[1] <= hi[1] && c[2] >= lo[2] && c[2] <= hi[2]) {
                const std::size_t idx = grid.index(i, j, k);
                cfg.problem.passive[idx] = 1;
                cfg.problem.passive_rho[idx] = value;
                ++marked;
              }
            }
      } else {
        config_error("passive entry needs a 'cylinder' or 'box' shape");
      }
      if (marked == 0) config_error("a passive region covers no cell");
    }
  }

  // threshold
  if (doc.contains("threshold")) {
    const json& jh = doc["threshold"];
    if (jh.contains("eta") == jh.contains("volume_fraction"))
      config_error("'threshold' needs exactly one of eta / volume_fraction");
    if (jh.contains("eta")) {
      cfg.threshold.has_eta = true;
      cfg.threshold.eta = jh["eta"].get<double>();
      if (cfg.threshold.eta <= 0 || cfg.threshold.eta >= 1)
        config_error("'threshold.eta' must be in (0, 1)");
    } else {
      cfg.threshold.volume_fraction = jh["volume_fraction"].get<double>();
      if (cfg.threshold.volume_fraction <= 0 ||
          cfg.threshold.volume_fraction > 1)
        config_error("'threshold.volume_fraction' must be in (0, 1]");
    }
    cfg.threshold.tolerance = jh.value("tolerance", cfg.threshold.tolerance);
  } else {
    cfg.threshold.has_eta = true;
    cfg.threshold.eta = 0.5;
  }

  if (doc.contains("graph"))
    cfg.graph_min_length = doc["graph"].value("min_length", cfg.graph_min_length);

  // frame optimizer options
  if (doc.contains("frame")) {
    const json& jf = doc["frame"];
    cfg.frame.max_cycles = jf.value("max_cycles", cfg.frame.max_cycles);
    cfg.frame.cycle_rel_tol = jf.value("cycle_rel_tol", cfg.frame.cycle_rel_tol);
    cfg.frame.merge_ratio = jf.value("merge_ratio", cfg.frame.merge_ratio);
    cfg.frame.inner.max_iterations =
        jf.value("max_iterations", cfg.frame.inner.max_iterations);
    cfg.frame.inner.kkt_tol = jf.value("kkt_tol", cfg.frame.inner.kkt_tol);
    if (jf.contains("diameter_bounds")) {
      const json& jb = jf["diameter_bounds"];
      if (!jb.is_array() || jb.size() != 2)
        config_error("'frame.diameter_bounds' must be [lower, upper]");
      cfg.frame.inner.diameter_lower_factor = jb[0].get<double>();
      cfg.frame.inner.diameter_upper_factor = jb[1].get<double>();
    }
  }

  // obstacles for layout optimization
  if (doc.contains("obstacles")) {
    const json& jo = doc["obstacles"];
    const json& items = jo.is_array() ? jo : jo.at("items");
    if (!jo.is_array()) {
      cfg.obstacles.ks_rho = jo.value("ks_rho", cfg.obstacles.ks_rho);
      cfg.obstacles.gauss_points =
          jo.value("gauss_points", cfg.obstacles.gauss_points);
    }
    for (const json& ji : items) cfg.obstacles.items.push_back(parse_cylinder(ji));
  }

  if (doc.contains("csg")) {
    const json& jc = doc["csg"];
    cfg.sphere_factor = jc.value("sphere_factor", cfg.sphere_factor);
    cfg.csg_resolution = jc.value("resolution", cfg.csg_resolution);
    if (cfg.csg_resolution < 16) config_error("'csg.resolution' must be >= 16");
    if (cfg.sphere_factor < 1) config_error("'csg.sphere_factor' must be >= 1");
  }

  validate(cfg.problem);
  } catch (const std::runtime_error&) {
    throw;  // already config-attributed
  } catch (const std::exception& e) {
    config_error(e.what());
  }
  return cfg;
}

// ---- stage helpers ---------------------------------------------------------

namespace {

std::array<int, 3> node_coords(const VoxelGrid& g, std::size_t node) {
  const int sx = g.nx() + 1, sy = g.ny() + 1;
  return {int(node % sx), int(node / sx % sy), int(node / (std::size_t(sx) * sy))};
}

// cells incident to a node, lowest linear index first
std::vector<std::size_t> incident_solid_cells(const BinaryVoxelModel& m,
                                              std::size_t node) {
  const auto nc = node_coords(m.grid, node);
  std::vector<std::size_t> cells;
  for (int k = nc[2] - 1; k <= nc[2]; ++k)
    for (int j = nc[1] - 1; j <= nc[1]; ++j)
      for (int i = nc[0] - 1; i <= nc[0]; ++i)
        if (m.is_solid(i, j, k)) cells.push_back(m.grid.index(i, j, k));
  std::sort(cells.begin(), cells.end());
  return cells;
}

// Each nodal load lands on the lowest-index solid cell touching its node.
std::unordered_map<std::size_t, std::array<double, 3>> attribute_loads(
    const TopOptProblem& p, const BinaryVoxelModel& m) {
  std::unordered_map<std::size_t, std::array<double, 3>> forces;
  for (const auto& load : p.loads) {
    const auto cells = incident_solid_cells(m, load.node);
    if (cells.empty())
      throw std::runtime_error("a loaded node touches no solid voxel");
    auto& f = forces[cells.front()];
    for (int a = 0; a < 3; ++a) f[a] += load.f[a];
  }
  return forces;
}

void apply_tags(BinaryVoxelModel& m, const TopOptProblem& p) {
  for (const auto& s : p.supports)
    for (std::size_t c : incident_solid_cells(m, s.node))
      m.tags[c] |= kTagDirichlet;
  for (const auto& [cell, f] : attribute_loads(p, m)) m.tags[cell] |= kTagLoad;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return json::parse(in);
}

// ---- stage bodies ----------------------------------------------------------

void stage_topopt(const PipelineConfig& cfg, const fs::path& dir) {
  const TopOptResult r = optimize(cfg.problem, cfg.topopt);
  write_field(r.rho, (dir / kRho).string());
  write_field(r.rho_hat, (dir / kRhoHat).string());
  write_history_csv(r.history, (dir / kTopOptHistory).string());
}

void stage_threshold(const PipelineConfig& cfg, const fs::path& dir) {
  const DensityField rho_hat = read_field((dir / kRhoHat).string());
  ThresholdResult th = threshold(rho_hat, cfg.threshold);
  apply_tags(th.model, cfg.problem);
  write_model(th.model, (dir / kModel).string());

  json stats;
  stats["eta"] = th.eta;
  stats["solid_fraction"] = th.solid_fraction;
  stats["solid_count"] = th.model.solid_count();
  stats["compliance"] =
      binary_compliance(cfg.problem, th.model.solid, cfg.topopt.solver);
  write_text(dir / kThresholdStats, stats.dump(2) + "\n");
}

void stage_skeleton(const PipelineConfig&, const fs::path& dir) {
  const BinaryVoxelModel model = read_model((dir / kModel).string());
  const SkeletonizeResult sk = skeletonize(pad_with_void(model));
  write_model(sk.model, (dir / kSkeleton).string());

  std::string csv = "sweep,removed\n";
  for (std::size_t i = 0; i < sk.removed_per_sweep.size(); ++i)
    csv += std::to_string(i + 1) + "," + std::to_string(sk.removed_per_sweep[i]) +
           "\n";
  write_text(dir / kSkeletonStats, csv);
}

void stage_graph(const PipelineConfig& cfg, const fs::path& dir) {
  const BinaryVoxelModel model = read_model((dir / kModel).string());
  const BinaryVoxelModel skel = read_model((dir / kSkeleton).string());

  // remap attributed voxels into the padded skeleton grid (+1 per axis)
  ExtractOptions opts;
  for (const auto& [cell, f] : attribute_loads(cfg.problem, model)) {
    const auto c = model.grid.coords(cell);
    opts.voxel_forces[skel.grid.index(c[0] + 1, c[1] + 1, c[2] + 1)] = f;
  }
  FrameGraph g = extract_graph(skel, opts);
  collapse_short_edges(g, cfg.graph_min_length);
  prune_leaves(g);
  write_graph(g, (dir / kGraph).string());
}

void stage_frame(const PipelineConfig& cfg, const fs::path& dir) {
  const FrameGraph g = read_graph((dir / kGraph).string());
  const VoxelGrid& grid = cfg.problem.grid;
  const double budget =
      cfg.problem.V_f * double(grid.cell_count()) * grid.cell_volume();
  FrameModel f = to_frame(g, cfg.material, budget);
  write_frame(f, (dir / kFrameInitial).string());

  const ObstacleSet* obs = cfg.obstacles.empty() ? nullptr : &cfg.obstacles;
  const AlternateReport rep = alternate_optimize(f, obs, cfg.frame);
  write_frame(f, (dir / kFrame).string());

  std::string csv = "label,J,volume,members\n";
  char line[160];
  for (std::size_t i = 0; i < rep.labels.size(); ++i) {
    std::snprintf(line, sizeof(line), "%s,%.17g,%.17g,%d\n",
                  rep.labels[i].c_str(), rep.milestones[i], rep.volumes[i],
                  rep.member_counts[i]);
    csv += line;
  }
  write_text(dir / kFrameHistory, csv);
}

void stage_csg(const PipelineConfig& cfg, const fs::path& dir) {
  const FrameModel f = read_frame((dir / kFrame).string());
  const CsgTree t = build_csg(f, cfg.sphere_factor);
  write_csg(t, (dir / kCsgDoc).string());
  const TriMesh m = tessellate(t, cfg.csg_resolution);
  write_stl_binary(m, (dir / kStlBinary).string());
  write_stl_ascii(m, (dir / kStlAscii).string());

  json stats;
  stats["leaves"] = t.leaf_count();
  stats["nodes"] = t.nodes.size();
  stats["vertices"] = m.vertices.size();
  stats["triangles"] = m.triangles.size();
  stats["watertight"] = mesh_watertight(m);
  stats["euler_characteristic"] = mesh_euler_characteristic(m);
  stats["area"] = mesh_area(m);
  write_text(dir / kCsgStats, stats.dump(2) + "\n");
}

const std::unordered_map<std::string,
                         void (*)(const PipelineConfig&, const fs::path&)>&
stage_bodies() {
  static const std::unordered_map<std::string,
                                  void (*)(const PipelineConfig&, const fs::path&)>
      bodies = {{"topopt", stage_topopt},   {"threshold", stage_threshold},
                {"skeleton", stage_skeleton}, {"graph", stage_graph},
                {"frame", stage_frame},     {"csg", stage_csg}};
  return bodies;
}

const std::vector<const char*>& stage_outputs(const std::string& stage) {
  static const std::unordered_map<std::string, std::vector<const char*>> outs = {
      {"topopt", {kRho, kRhoHat, kTopOptHistory}},
      {"threshold", {kModel, kThresholdStats}},
      {"skeleton", {kSkeleton, kSkeletonStats}},
      {"graph", {kGraph}},
      {"frame", {kFrameInitial, kFrame, kFrameHistory}},
      {"csg", {kCsgDoc, kStlBinary, kStlAscii, kCsgStats}},
  };
  return outs.at(stage);
}

json manifest_skeleton(const PipelineConfig& cfg) {
  json m;
  m["name"] = cfg.name;
  m["config"]["path"] = cfg.source_path;
  m["config"]["sha256"] = cfg.source_sha256;
  m["stages"] = json::array();
  return m;
}

json record_to_json(const StageRecord& r) {
  json j;
  j["stage"] = r.stage;
  j["inputs"] = json::array();
  for (const auto& f : r.inputs)
    j["inputs"].push_back({{"path", f.path}, {"sha256", f.sha256}});
  j["outputs"] = json::array();
  for (const auto& f : r.outputs)
    j["outputs"].push_back({{"path", f.path}, {"sha256", f.sha256}});
  j["wall_seconds"] = r.wall_seconds;
  return j;
}

}  // namespace

std::vector<StageRecord> run_pipeline(const PipelineConfig& cfg,
                                      const std::vector<std::string>& stages) {
  // normalize the selection into pipeline order
  std::vector<std::string> selected;
  for (const std::string& s : pipeline_stages()) {
    if (stages.empty() ||
        std::find(stages.begin(), stages.end(), s) != stages.end())
      selected.push_back(s);
  }
  for (const std::string& s : stages)
    if (std::find(pipeline_stages().begin(), pipeline_stages().end(), s) ==
        pipeline_stages().end())
      throw std::runtime_error("unknown stage '" + s + "'");

  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);

  // merge with an existing manifest so partial runs keep earlier records
  json manifest = manifest_skeleton(cfg);
  if (fs::exists(dir / kManifest)) {
    try {
      json old = read_json(dir / kManifest);
      if (old.contains("stages") && old["stages"].is_array())
        manifest["stages"] = old["stages"];
    } catch (...) {
      // unreadable manifest: rebuild from scratch
    }
  }

  std::vector<StageRecord> records;
  for (const std::string& stage : selected) {
    StageRecord rec;
    rec.stage = stage;
    rec.inputs.push_back({cfg.source_path, cfg.source_sha256});
    for (const StageInput& in : stage_inputs().at(stage)) {
      if (!fs::exists(dir / in.artifact))
        throw std::runtime_error("stage '" + stage + "': missing input '" +
                                 in.artifact + "' (run stage '" + in.producer +
                                 "' first)");
      rec.inputs.push_back(
          {in.artifact, sha256_file((dir / in.artifact).string())});
    }

    const auto t0 = std::chrono::steady_clock::now();
    try {
      stage_bodies().at(stage)(cfg, dir);
    } catch (const std::exception& e) {
      throw std::runtime_error("stage '" + stage + "': " + e.what());
    }
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();

    for (const char* out : stage_outputs(stage))
      rec.outputs.push_back({out, sha256_file((dir / out).string())});
    records.push_back(rec);

    // replace this stage's record, keep the rest in pipeline order
    json kept = json::array();
    for (const std::string& s : pipeline_stages()) {
      if (s == stage) {
        kept.push_back(record_to_json(rec));
        continue;
      }
      for (const json& old : manifest["stages"])
        if (old.value("stage", "") == s) kept.push_back(old);
    }
    manifest["stages"] = kept;
    write_text(dir / kManifest, manifest.dump(2) + "\n");
  }
  return records;
}

std::string pipeline_report(const std::string& out_dir) {
  const fs::path dir(out_dir);
  if (!fs::exists(dir / kManifest))
    throw std::runtime_error("no run manifest in " + out_dir);
  json manifest;
  try {
    manifest = read_json(dir / kManifest);
  } catch (const std::exception& e) {
    throw std::runtime_error("corrupt manifest: " + std::string(e.what()));
  }

  json rep;
  rep["name"] = manifest.value("name", "");
  rep["stages"] = json::array();
  double total = 0;
  for (const json& s : manifest["stages"]) {
    const double w = s.value("wall_seconds", 0.0);
    total += w;
    rep["stages"].push_back(
        {{"stage", s.value("stage", "")}, {"wall_seconds", w}});
  }
  rep["total_wall_seconds"] = total;

  if (fs::exists(dir / kTopOptHistory)) {
    std::ifstream in(dir / kTopOptHistory);
    std::string line;
    std::getline(in, line);  // header
    int iterations = 0;
    double J = 0, vf = 0;
    while (std::getline(in, line))
      if (std::sscanf(line.c_str(), "%*d,%lf,%lf", &J, &vf) == 2) ++iterations;
    rep["topopt"] = {{"iterations", iterations},
                     {"final_J", J},
                     {"final_volume_fraction", vf}};
  }
  if (fs::exists(dir / kThresholdStats)) {
    const json th = read_json(dir / kThresholdStats);
    rep["voxel_model"] = {{"eta", th.value("eta", 0.0)},
                          {"solid_fraction", th.value("solid_fraction", 0.0)},
                          {"compliance", th.value("compliance", 0.0)}};
  }
  if (fs::exists(dir / kSkeletonStats)) {
    std::ifstream in(dir / kSkeletonStats);
    std::string line;
    std::getline(in, line);
    int sweeps = 0;
    long long removed = 0, r = 0;
    while (std::getline(in, line))
      if (std::sscanf(line.c_str(), "%*d,%lld", &r) == 1) {
        ++sweeps;
        removed += r;
      }
    rep["skeleton"] = {{"sweeps", sweeps}, {"removed_total", removed}};
  }
  if (fs::exists(dir / kGraph)) {
    const FrameGraph g = read_graph((dir / kGraph).string());
    rep["graph"] = {{"nodes", g.nodes.size()},
                    {"edges", g.edges.size()},
                    {"cycle_rank", g.cycle_rank()}};
  }
  if (fs::exists(dir / kFrameHistory)) {
    std::ifstream in(dir / kFrameHistory);
    std::string line;
    std::getline(in, line);
    json milestones = json::array();
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      double J = 0, vol = 0;
      int members = 0;
      if (comma != std::string::npos &&
          std::sscanf(line.c_str() + comma, ",%lf,%lf,%d", &J, &vol,
                      &members) == 3)
        milestones.push_back({{"label", line.substr(0, comma)},
                              {"J", J},
                              {"volume", vol},
                              {"members", members}});
    }
    rep["frame"]["milestones"] = milestones;
    if (!milestones.empty()) {
      rep["frame"]["initial_J"] = milestones.front()["J"];
      rep["frame"]["final_J"] = milestones.back()["J"];
    }
  }
  if (fs::exists(dir / kFrame)) {
    const FrameModel f = read_frame((dir / kFrame).string());
    rep["frame"]["joints"] = f.joints.size();
    rep["frame"]["members"] = f.members.size();
    rep["frame"]["volume"] = f.volume();
  }
  if (fs::exists(dir / kCsgStats)) rep["csg"] = read_json(dir / kCsgStats);

  return rep.dump(2) + "\n";
}

}  // namespace voxframe
