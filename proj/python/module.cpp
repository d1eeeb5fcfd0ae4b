// Python bindings for the main pipeline operations. Density and solid fields
// cross the boundary as numpy arrays indexed [z, y, x] (x fastest, matching
// the C++ linear layout).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "voxframe/csg.hpp"
#include "voxframe/grid.hpp"
#include "voxframe/pipeline.hpp"
#include "voxframe/sha256.hpp"
#include "voxframe/skeleton.hpp"

namespace py = pybind11;
using namespace voxframe;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

VoxelGrid grid_of(const py::buffer_info& info) {
  if (info.ndim != 3)
    throw std::invalid_argument("expected a 3d array indexed [z, y, x]");
  VoxelGrid g;
  g.dims = {int(info.shape[2]), int(info.shape[1]), int(info.shape[0])};
  return g;
}

BinaryVoxelModel model_of(const ByteArray& solid) {
  const py::buffer_info info = solid.request();
  BinaryVoxelModel m = make_model(grid_of(info));
  const std::uint8_t* p = static_cast<const std::uint8_t*>(info.ptr);
  for (std::size_t i = 0; i < m.grid.cell_count(); ++i) m.solid[i] = p[i] != 0;
  return m;
}

ByteArray array_of(const BinaryVoxelModel& m) {
  ByteArray out({m.grid.nz(), m.grid.ny(), m.grid.nx()});
  std::uint8_t* p = static_cast<std::uint8_t*>(out.request().ptr);
  for (std::size_t i = 0; i < m.grid.cell_count(); ++i) p[i] = m.solid[i];
  return out;
}

}  // namespace

PYBIND11_MODULE(voxframe, mod) {
  mod.doc() = "voxel topology optimization to frame/CSG pipeline";

  mod.def("pipeline_stages", [] { return pipeline_stages(); },
          "stage names in execution order");

  mod.def(
      "validate_config",
      [](const std::string& path) {
        const PipelineConfig cfg = load_config(path);
        py::dict d;
        d["name"] = cfg.name;
        d["output"] = cfg.out_dir;
        d["dims"] = py::make_tuple(cfg.problem.grid.nx(), cfg.problem.grid.ny(),
                                   cfg.problem.grid.nz());
        d["supports"] = cfg.problem.supports.size();
        d["loads"] = cfg.problem.loads.size();
        d["volume_fraction"] = cfg.problem.V_f;
        return d;
      },
      py::arg("path"), "parse + validate a config; raises on errors");

  mod.def(
      "run_pipeline",
      [](const std::string& config_path, const std::vector<std::string>& stages,
         const std::string& out_dir) {
        PipelineConfig cfg = load_config(config_path);
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        const auto records = run_pipeline(cfg, stages);
        py::list out;
        for (const auto& r : records) {
          py::dict d;
          d["stage"] = r.stage;
          d["wall_seconds"] = r.wall_seconds;
          py::list outputs;
          for (const auto& f : r.outputs)
            outputs.append(py::make_tuple(f.path, f.sha256));
          d["outputs"] = outputs;
          out.append(d);
        }
        return out;
      },
      py::arg("config_path"), py::arg("stages") = std::vector<std::string>{},
      py::arg("out_dir") = std::string(),
      "run pipeline stages (all when empty) from a JSON config");

  mod.def("pipeline_report",
          [](const std::string& dir) { return pipeline_report(dir); },
          py::arg("run_dir"), "summary JSON text for a finished run");

  mod.def(
      "threshold",
      [](const DoubleArray& rho, double eta) {
        const py::buffer_info info = rho.request();
        DensityField f = make_field(grid_of(info));
        const double* p = static_cast<const double*>(info.ptr);
        f.rho.assign(p, p + f.grid.cell_count());
        ThresholdSpec spec;
        spec.has_eta = true;
        spec.eta = eta;
        return array_of(threshold(f, spec).model);
      },
      py::arg("rho"), py::arg("eta"),
      "keep cells with rho > eta; array indexed [z, y, x]");

  mod.def(
      "skeletonize",
      [](const ByteArray& solid) {
        const BinaryVoxelModel m = model_of(solid);
        const BinaryVoxelModel thin = skeletonize(pad_with_void(m)).model;
        BinaryVoxelModel out = make_model(m.grid);
        for (int k = 0; k < m.grid.nz(); ++k)
          for (int j = 0; j < m.grid.ny(); ++j)
            for (int i = 0; i < m.grid.nx(); ++i)
              out.solid[m.grid.index(i, j, k)] =
                  thin.is_solid(i + 1, j + 1, k + 1);
        return array_of(out);
      },
      py::arg("solid"), "homotopic thinning of a binary voxel array");

  mod.def(
      "euler_characteristic",
      [](const ByteArray& solid) { return euler_by_counting(model_of(solid)); },
      py::arg("solid"), "chi of the voxel cell complex");

  mod.def("sha256_file", &sha256_file, py::arg("path"));
}
