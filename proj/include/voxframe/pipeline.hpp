#pragma once
// Staged pipeline from a problem config to the final solid model: density
// optimization, thresholding, skeletonization, graph extraction, frame
// synthesis/optimization, CSG emission. Every stage reads and writes file
// artifacts in the run directory and lands in a hash-carrying manifest, so
// runs resume per stage and re-runs are byte-identical.

#include <string>
#include <vector>

#include "voxframe/frame.hpp"
#include "voxframe/grid.hpp"
#include "voxframe/topopt.hpp"

namespace voxframe {

struct PipelineConfig {
  std::string name;
  std::string out_dir = "out";
  std::string source_path;  // config file backing this run
  std::string source_sha256;

  TopOptProblem problem;
  TopOptOptions topopt;
  ThresholdSpec threshold;
  int graph_min_length = 3;
  FrameMaterial material;
  AlternateOptions frame;
  ObstacleSet obstacles;
  double sphere_factor = 1.05;
  int csg_resolution = 128;
};

// Stage names in execution order: topopt, threshold, skeleton, graph,
// frame, csg.
const std::vector<std::string>& pipeline_stages();

// Parse + validate a JSON problem config ("where" node selectors for
// supports and loads, passive regions, per-stage options). Throws
// std::runtime_error with a config-attributed message.
PipelineConfig load_config(const std::string& path);

struct FileHash {
  std::string path;  // relative to the run directory
  std::string sha256;
};

struct StageRecord {
  std::string stage;
  std::vector<FileHash> inputs, outputs;
  double wall_seconds = 0;
};

// Runs the requested stages (empty = all) in pipeline order inside
// cfg.out_dir; each stage reads upstream artifacts from disk and overwrites
// only its own outputs. The manifest <out_dir>/run_manifest.json is updated
// after every stage, keeping records of stages not re-run. Throws
// std::runtime_error with a stage-attributed message; a missing upstream
// artifact names the stage that produces it.
std::vector<StageRecord> run_pipeline(const PipelineConfig& cfg,
                                      const std::vector<std::string>& stages = {});

// Summary assembled from the manifest and the artifacts present: milestone
// compliances, entity counts, per-stage and total runtimes. Pretty-printed
// JSON text. Throws when the directory holds no manifest.
std::string pipeline_report(const std::string& out_dir);

}  // namespace voxframe
