#include <cstdio>
#include <cstdlib>
#include <sys/wait.h>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <thread>

#include "doctest.h"
#include "voxframe/csg.hpp"
#include "voxframe/graph.hpp"
#include "voxframe/grid.hpp"
#include "voxframe/pipeline.hpp"
#include "voxframe/sha256.hpp"

using namespace voxframe;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string write_tmp(const std::string& name, const std::string& text) {
  const std::string path = (fs::temp_directory_path() / name).string();
  std::ofstream out(path, std::ios::binary);
  out << text;
  return path;
}

// small cantilever that exercises every stage quickly
std::string tiny_config(const std::string& out_dir) {
  return std::string(R"({
  "name": "tiny",
  "output": ")") +
         out_dir + R"(",
  "grid": {"dims": [40, 16, 4], "spacing": 1.0},
  "material": {"E": 2.1e5, "nu": 0.3, "E_min": 1e-9},
  "topopt": {"penalty": 3, "filter_radius": 1.5, "volume_fraction": 0.3,
             "max_iterations": 30, "tol": 0.01},
  "supports": [{"where": {"x": 0}, "dofs": [0, 1, 2]}],
  "loads": [{"where": {"x": 40, "y": 8}, "force": [0, -100, 0]}],
  "threshold": {"eta": 0.5},
  "graph": {"min_length": 3},
  "frame": {"max_cycles": 2, "max_iterations": 30},
  "csg": {"resolution": 128}
})";
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

const std::vector<std::string> kArtifacts = {
    "rho.vxfield",     "rho_hat.vxfield",     "topopt_history.csv",
    "model.vxbin",     "threshold_stats.json", "skeleton.vxbin",
    "skeleton_stats.csv", "graph.vxgraph",    "frame_initial.vxframe",
    "frame.vxframe",   "frame_history.csv",   "model.csg",
    "model.stl",       "model_ascii.stl",     "csg_stats.json"};

}  // namespace

TEST_CASE("sha256 matches the published test vectors") {
  CHECK(sha256_hex("", 0) ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc", 3) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const std::string alpha =
      "abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq";
  CHECK(sha256_hex(alpha.data(), alpha.size()) ==
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");

  // streamed file hashing equals the in-memory hash across chunk boundaries
  std::string blob(100000, '\0');
  for (std::size_t i = 0; i < blob.size(); ++i) blob[i] = char('a' + i % 17);
  const std::string path = write_tmp("vx_sha_blob.bin", blob);
  CHECK(sha256_file(path) == sha256_hex(blob.data(), blob.size()));
  fs::remove(path);
}

TEST_CASE("config loading materializes the problem") {
  const std::string path = write_tmp("vx_cfg_ok.json", tiny_config("unused"));
  const PipelineConfig cfg = load_config(path);

  CHECK(cfg.name == "tiny");
  CHECK(cfg.problem.grid.nx() == 40);
  CHECK(cfg.problem.V_f == 0.3);
  CHECK(cfg.problem.p == 3);
  CHECK(cfg.source_sha256 == sha256_file(path));

  // x=0 face: 17*5 nodes, 3 dofs each
  CHECK(cfg.problem.supports.size() == 17 * 5 * 3);
  // load line: 5 nodes splitting the total evenly
  REQUIRE(cfg.problem.loads.size() == 5);
  double total = 0;
  for (const auto& l : cfg.problem.loads) total += l.f[1];
  CHECK(total == doctest::Approx(-100.0).epsilon(1e-14));
  CHECK(cfg.threshold.has_eta);
  CHECK(cfg.threshold.eta == 0.5);
  CHECK(cfg.frame.max_cycles == 2);
  CHECK(cfg.csg_resolution == 128);
  fs::remove(path);
}

TEST_CASE("config rejections name the offending field") {
  auto reject = [](const std::string& body, const std::string& needle) {
    const std::string path = write_tmp("vx_cfg_bad.json", body);
    bool threw = false;
    try {
      load_config(path);
    } catch (const std::runtime_error& e) {
      threw = true;
      CHECK(std::string(e.what()).find("config:") == 0);
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
    CHECK(threw);
    fs::remove(path);
  };

  reject("not json", "");
  reject(R"({"topopt": {}})", "grid");
  reject(R"({"grid": {"dims": [4, 4]}, "topopt": {}})", "dims");
  reject(R"({"grid": {"dims": [4, 4, 4]}, "topopt": {}})", "filter_radius");

  const std::string base = R"({
    "grid": {"dims": [8, 4, 4]},
    "topopt": {"filter_radius": 1.5, "volume_fraction": 0.4},
    "supports": [{"where": {"x": 0}}],
    "loads": [{"where": {"x": 8}, "force": [0, -1, 0]}])";
  reject(base + R"(, "threshold": {"eta": 0.4, "volume_fraction": 0.4}})",
         "threshold");
  reject(base + R"(, "threshold": {}})", "threshold");
  reject(base + R"(, "csg": {"resolution": 8}})", "resolution");
  reject(base + R"(, "passive": [{"value": 0}]})", "passive");

  // selector misuse
  reject(R"({
    "grid": {"dims": [8, 4, 4]},
    "topopt": {"filter_radius": 1.5, "volume_fraction": 0.4},
    "supports": [{"where": {"w": 0}}],
    "loads": [{"where": {"x": 8}, "force": [0, -1, 0]}]})",
         "where");
  reject(R"({
    "grid": {"dims": [8, 4, 4]},
    "topopt": {"filter_radius": 1.5, "volume_fraction": 0.4},
    "supports": [{"where": {"x": 2.5}}],
    "loads": [{"where": {"x": 8}, "force": [0, -1, 0]}]})",
         "matches no node");
  reject(R"({
    "grid": {"dims": [8, 4, 4]},
    "topopt": {"filter_radius": 1.5, "volume_fraction": 0.4},
    "supports": [{"where": {"x": 0}}],
    "loads": [{"where": {"x": 8}, "force": [0, 0, 0]}]})",
         "force");
}

TEST_CASE("config selectors, passive regions and obstacles") {
  const std::string path = write_tmp("vx_cfg_sel.json", R"({
    "name": "sel",
    "grid": {"dims": [10, 10, 10], "spacing": 0.5, "origin": [1, 0, 0]},
    "topopt": {"filter_radius": 1.0, "volume_fraction": 0.4},
    "supports": [{"where": {"x": 1, "z": [0, 1]}, "dofs": [1]}],
    "loads": [{"where": {"x": 6, "y": 2.5, "z": 2.5}, "force": [1, 0, 0]}],
    "passive": [{"cylinder": {"point": [2.5, 1.5, 0], "axis": [0, 0, 1],
                              "radius": 0.6}, "value": 0.25}],
    "obstacles": {"ks_rho": 40, "items": [
      {"point": [2.5, 1.5, 0], "axis": [0, 0, 1], "radius": 0.6}]}
  })");
  const PipelineConfig cfg = load_config(path);

  // x = 1 plane (11 y-nodes) restricted to z in [0,1]: 3 z-levels, dof y only
  CHECK(cfg.problem.supports.size() == 11 * 3);
  for (const auto& s : cfg.problem.supports) CHECK(s.dof == 1);
  CHECK(cfg.problem.loads.size() == 1);

  REQUIRE(!cfg.problem.passive.empty());
  std::size_t marked = 0;
  for (std::size_t i = 0; i < cfg.problem.passive.size(); ++i)
    if (cfg.problem.passive[i]) {
      ++marked;
      CHECK(cfg.problem.passive_rho[i] == 0.25);
      const auto c = cfg.problem.grid.coords(i);
      const auto x = cfg.problem.grid.centroid(c[0], c[1], c[2]);
      const double dx = x[0] - 2.5, dy = x[1] - 1.5;
      CHECK(dx * dx + dy * dy < 0.6 * 0.6);
    }
  // cells with centroids inside the r=0.6 cylinder: 4 per layer, 10 layers
  CHECK(marked == 40);
  CHECK(cfg.obstacles.items.size() == 1);
  CHECK(cfg.obstacles.ks_rho == 40);
  fs::remove(path);
}

TEST_CASE("pipeline end to end on a tiny cantilever") {
  const fs::path dirA = fs::temp_directory_path() / "vx_run_a";
  const fs::path dirB = fs::temp_directory_path() / "vx_run_b";
  fs::remove_all(dirA);
  fs::remove_all(dirB);
  const std::string cfgA = write_tmp("vx_cfg_a.json", tiny_config(dirA.string()));
  const std::string cfgB = write_tmp("vx_cfg_b.json", tiny_config(dirB.string()));

  PipelineConfig cfg = load_config(cfgA);
  const auto records = run_pipeline(cfg);
  REQUIRE(records.size() == 6);
  for (const auto& a : kArtifacts) CHECK(fs::exists(dirA / a));

  {  // boundary tags and forces survive to the graph
    const BinaryVoxelModel model = read_model((dirA / "model.vxbin").string());
    std::size_t dirichlet = 0, loaded = 0;
    for (std::uint8_t t : model.tags) {
      if (t & kTagDirichlet) ++dirichlet;
      if (t & kTagLoad) ++loaded;
    }
    CHECK(dirichlet > 0);
    CHECK(loaded > 0);

    const FrameGraph g = read_graph((dirA / "graph.vxgraph").string());
    CHECK(g.component_count() == 1);
    double total[3] = {0, 0, 0};
    int dir_nodes = 0, load_nodes = 0;
    for (const auto& n : g.nodes) {
      dir_nodes += n.dirichlet;
      load_nodes += n.loaded;
      for (int a = 0; a < 3; ++a) total[a] += n.force[a];
    }
    CHECK(dir_nodes > 0);
    CHECK(load_nodes > 0);
    CHECK(total[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(total[1] == doctest::Approx(-100.0).epsilon(1e-12));
    CHECK(total[2] == doctest::Approx(0.0).epsilon(1e-12));
  }

  {  // frame honors the volume budget and improves compliance
    const FrameModel f = read_frame((dirA / "frame.vxframe").string());
    const double budget = 0.3 * 40 * 16 * 4;
    CHECK(f.volume() == doctest::Approx(budget).epsilon(1e-8));
    CHECK(!f.members.empty());

    std::ifstream in(dirA / "frame_history.csv");
    std::string line;
    std::getline(in, line);
    double first = 0, last = 0;
    bool have_first = false;
    while (std::getline(in, line)) {
      const double J = std::atof(line.c_str() + line.find(',') + 1);
      if (!have_first) {
        first = J;
        have_first = true;
      }
      last = J;
    }
    REQUIRE(have_first);
    CHECK(last <= first * (1 + 1e-12));
  }

  {  // csg artifacts are consistent
    const json stats = json::parse(slurp(dirA / "csg_stats.json"));
    CHECK(stats["watertight"].get<bool>());
    CHECK(stats["triangles"].get<long>() > 0);
    const CsgTree t = read_csg((dirA / "model.csg").string());
    CHECK(t.leaf_count() == stats["leaves"].get<std::size_t>());
    CHECK(fs::file_size(dirA / "model.stl") ==
          84 + 50 * stats["triangles"].get<std::uintmax_t>());
  }

  {  // manifest hashes match the artifacts
    const json manifest = json::parse(slurp(dirA / "run_manifest.json"));
    REQUIRE(manifest["stages"].size() == 6);
    for (std::size_t i = 0; i < 6; ++i)
      CHECK(manifest["stages"][i]["stage"] == pipeline_stages()[i]);
    for (const json& s : manifest["stages"])
      for (const json& out : s["outputs"])
        CHECK(out["sha256"] ==
              sha256_file((dirA / out["path"].get<std::string>()).string()));
  }

  {  // report totals equal the manifest sums
    const std::string text = pipeline_report(dirA.string());
    const json rep = json::parse(text);
    double sum = 0;
    for (const json& s : rep["stages"]) sum += s["wall_seconds"].get<double>();
    CHECK(rep["total_wall_seconds"].get<double>() ==
          doctest::Approx(sum).epsilon(1e-12));
    CHECK(rep["voxel_model"]["compliance"].get<double>() > 0);
    CHECK(rep["frame"]["final_J"].get<double>() <=
          rep["frame"]["initial_J"].get<double>());
    CHECK(rep["csg"]["watertight"].get<bool>());
    CHECK(rep["graph"]["nodes"].get<int>() > 0);
  }

  {  // a second run is byte-identical
    PipelineConfig cfg2 = load_config(cfgB);
    run_pipeline(cfg2);
    for (const auto& a : kArtifacts) CHECK(slurp(dirA / a) == slurp(dirB / a));
  }

  {  // re-running one stage rewrites only that stage
    const auto before_model = fs::last_write_time(dirA / "model.vxbin");
    const auto before_skel = fs::last_write_time(dirA / "skeleton.vxbin");
    const std::vector<char> skel_bytes = slurp(dirA / "skeleton.vxbin");
    std::this_thread::sleep_for(std::chrono::milliseconds(20));

    const auto rerun = run_pipeline(cfg, {"skeleton"});
    REQUIRE(rerun.size() == 1);
    CHECK(rerun[0].stage == "skeleton");
    CHECK(fs::last_write_time(dirA / "model.vxbin") == before_model);
    CHECK(fs::last_write_time(dirA / "skeleton.vxbin") > before_skel);
    CHECK(slurp(dirA / "skeleton.vxbin") == skel_bytes);

    // manifest still lists every stage
    const json manifest = json::parse(slurp(dirA / "run_manifest.json"));
    CHECK(manifest["stages"].size() == 6);
  }

  fs::remove(cfgA);
  fs::remove(cfgB);
}

TEST_CASE("missing upstream artifacts name the producing stage") {
  const fs::path dir = fs::temp_directory_path() / "vx_run_missing";
  fs::remove_all(dir);
  const std::string path = write_tmp("vx_cfg_m.json", tiny_config(dir.string()));
  PipelineConfig cfg = load_config(path);

  bool threw = false;
  try {
    run_pipeline(cfg, {"skeleton"});
  } catch (const std::runtime_error& e) {
    threw = true;
    const std::string msg = e.what();
    CHECK(msg.find("skeleton") != std::string::npos);
    CHECK(msg.find("threshold") != std::string::npos);
  }
  CHECK(threw);
  CHECK_THROWS_AS(run_pipeline(cfg, {"nonsense"}), std::runtime_error);
  CHECK_THROWS_AS(pipeline_report(dir.string()), std::runtime_error);
  fs::remove(path);
}

TEST_CASE("cli drives the pipeline with documented exit codes") {
  if (!fs::exists("voxframe")) {
    MESSAGE("voxframe binary not next to the test runner; skipping");
    return;
  }
  const fs::path dir = fs::temp_directory_path() / "vx_run_cli";
  fs::remove_all(dir);
  const std::string good = write_tmp("vx_cfg_cli.json", tiny_config(dir.string()));
  const std::string bad = write_tmp("vx_cfg_cli_bad.json", "{}");

  auto rc = [](const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };
  CHECK(rc("./voxframe validate-config " + good + " > /dev/null") == 0);
  CHECK(rc("./voxframe validate-config " + bad + " 2> /dev/null") == 1);
  CHECK(rc("./voxframe run " + bad + " 2> /dev/null") == 1);
  // dependency failure: skeleton without its upstream artifacts
  CHECK(rc("./voxframe run " + good + " --stages skeleton 2> /dev/null") == 2);
  CHECK(rc("./voxframe report " + dir.string() + " 2> /dev/null") == 2);

  fs::remove(good);
  fs::remove(bad);
}
