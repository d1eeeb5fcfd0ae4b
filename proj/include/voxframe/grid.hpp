#pragma once
// Regular voxel grids, density fields and binary voxel models, plus their
// on-disk formats. Voxel (i,j,k) maps to linear index i + nx*(j + ny*k),
// i.e. x runs fastest. Cell centroid: origin + (i+1/2)*spacing.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxframe {

struct VoxelGrid {
  std::array<int, 3> dims{0, 0, 0};          // cells per axis
  std::array<double, 3> spacing{1, 1, 1};    // cell edge lengths
  std::array<double, 3> origin{0, 0, 0};     // min corner of cell (0,0,0)

  int nx() const { return dims[0]; }
  int ny() const { return dims[1]; }
  int nz() const { return dims[2]; }
  std::size_t cell_count() const {
    return std::size_t(dims[0]) * dims[1] * dims[2];
  }
  std::size_t index(int i, int j, int k) const {
    return std::size_t(i) + std::size_t(dims[0]) * (std::size_t(j) + std::size_t(dims[1]) * k);
  }
  bool in_bounds(int i, int j, int k) const {
    return i >= 0 && i < dims[0] && j >= 0 && j < dims[1] && k >= 0 && k < dims[2];
  }
  std::array<int, 3> coords(std::size_t idx) const {
    int i = int(idx % dims[0]);
    int j = int((idx / dims[0]) % dims[1]);
    int k = int(idx / (std::size_t(dims[0]) * dims[1]));
    return {i, j, k};
  }
  std::array<double, 3> centroid(int i, int j, int k) const {
    return {origin[0] + (i + 0.5) * spacing[0],
            origin[1] + (j + 0.5) * spacing[1],
            origin[2] + (k + 0.5) * spacing[2]};
  }
  double cell_volume() const { return spacing[0] * spacing[1] * spacing[2]; }
  bool same_layout(const VoxelGrid& o) const {
    return dims == o.dims && spacing == o.spacing && origin == o.origin;
  }
};

// Scalar density per cell in [0,1]; passive cells keep their pinned value and
// are excluded from the design set.
struct DensityField {
  VoxelGrid grid;
  std::vector<double> rho;
  std::vector<std::uint8_t> passive;  // empty or cell_count() entries

  bool is_passive(std::size_t i) const { return !passive.empty() && passive[i]; }
};

DensityField make_field(const VoxelGrid& grid, double value = 0.0);

// Per-voxel tag bits. `tagged` in the sense of non-removable during thinning
// is "any tag bit set".
enum : std::uint8_t {
  kTagDirichlet = 1,
  kTagLoad = 2,
};

struct BinaryVoxelModel {
  VoxelGrid grid;
  std::vector<std::uint8_t> solid;
  std::vector<std::uint8_t> tags;  // bit mask, kTag*

  bool is_solid(int i, int j, int k) const {
    return grid.in_bounds(i, j, k) && solid[grid.index(i, j, k)];
  }
  bool is_tagged(std::size_t idx) const { return tags[idx] != 0; }
  std::size_t solid_count() const;
};

BinaryVoxelModel make_model(const VoxelGrid& grid);

// Threshold selection: either a fixed eta, or bisect eta so the solid volume
// fraction hits `volume_fraction` within `tolerance` (absolute, on the
// fraction). Defaults follow the tolerance used by the pipeline: V_f/200.
struct ThresholdSpec {
  bool has_eta = false;
  double eta = 0.5;
  double volume_fraction = 0.0;
  double tolerance = 0.0;  // 0 -> volume_fraction/200
  int max_bisections = 64;
};

struct ThresholdResult {
  BinaryVoxelModel model;
  double eta = 0.0;             // the threshold actually applied
  double solid_fraction = 0.0;  // resulting count/total
};

// Keeps voxels with rho > eta. Throws std::runtime_error when the result is
// empty or a requested volume fraction is unattainable.
ThresholdResult threshold(const DensityField& field, const ThresholdSpec& spec);

// One layer of void cells on every side; origin shifts by -spacing.
BinaryVoxelModel pad_with_void(const BinaryVoxelModel& m);

// ---- file formats ----------------------------------------------------------
// Density field:  "VXRHO1\n" + dims(3*i32) + spacing(3*f64) + origin(3*f64)
//                 + rho (f64, x fastest) + passive flag byte + passive bytes.
// Binary model:   "VXBIN1\n" + header as above + one byte per voxel:
//                 bit0 solid, bit1 Dirichlet tag, bit2 load tag.
void write_field(const DensityField& f, const std::string& path);
DensityField read_field(const std::string& path);
void write_model(const BinaryVoxelModel& m, const std::string& path);
BinaryVoxelModel read_model(const std::string& path);

// Legacy VTK structured-points file with one CELL_DATA scalar array, for
// inspection in ParaView and friends.
void write_vtk(const VoxelGrid& grid, const std::vector<double>& cell_scalars,
               const std::string& scalar_name, const std::string& path);

}  // namespace voxframe
