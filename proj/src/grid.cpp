#include "voxframe/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

namespace voxframe {

DensityField make_field(const VoxelGrid& grid, double value) {
  DensityField f;
  f.grid = grid;
  f.rho.assign(grid.cell_count(), value);
  return f;
}

BinaryVoxelModel make_model(const VoxelGrid& grid) {
  BinaryVoxelModel m;
  m.grid = grid;
  m.solid.assign(grid.cell_count(), 0);
  m.tags.assign(grid.cell_count(), 0);
  return m;
}

std::size_t BinaryVoxelModel::solid_count() const {
  return std::size_t(std::count_if(solid.begin(), solid.end(),
                                   [](std::uint8_t s) { return s != 0; }));
}

static std::size_t count_above(const std::vector<double>& rho, double eta) {
  return std::size_t(std::count_if(rho.begin(), rho.end(),
                                   [eta](double r) { return r > eta; }));
}

ThresholdResult threshold(const DensityField& field, const ThresholdSpec& spec) {
  const std::size_t n = field.grid.cell_count();
  if (n == 0 || field.rho.size() != n)
    throw std::runtime_error("threshold: malformed density field");

  double eta = spec.eta;
  if (!spec.has_eta) {
    const double target = spec.volume_fraction;
    if (!(target > 0.0 && target < 1.0))
      throw std::runtime_error("threshold: volume fraction must be in (0,1)");
    const double tol = spec.tolerance > 0 ? spec.tolerance : target / 200.0;
    if (double(count_above(field.rho, 0.0)) / double(n) + tol < target)
      throw std::runtime_error("threshold: requested volume fraction unattainable");
    double lo = 0.0, hi = 1.0;  // fraction decreases as eta grows
    eta = 0.5;
    for (int it = 0; it < spec.max_bisections; ++it) {
      eta = 0.5 * (lo + hi);
      const double frac = double(count_above(field.rho, eta)) / double(n);
      if (std::abs(frac - target) <= tol) break;
      (frac > target ? lo : hi) = eta;
    }
  }

  ThresholdResult out;
  out.model = make_model(field.grid);
  out.eta = eta;
  std::size_t ns = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (field.rho[i] > eta) {
      out.model.solid[i] = 1;
      ++ns;
    }
  }
  out.solid_fraction = double(ns) / double(n);
  if (ns == 0) throw std::runtime_error("threshold: empty solid model");
  return out;
}

BinaryVoxelModel pad_with_void(const BinaryVoxelModel& m) {
  VoxelGrid g = m.grid;
  for (int a = 0; a < 3; ++a) {
    g.dims[a] += 2;
    g.origin[a] -= g.spacing[a];
  }
  BinaryVoxelModel out = make_model(g);
  for (int k = 0; k < m.grid.nz(); ++k)
    for (int j = 0; j < m.grid.ny(); ++j)
      for (int i = 0; i < m.grid.nx(); ++i) {
        const std::size_t src = m.grid.index(i, j, k);
        const std::size_t dst = g.index(i + 1, j + 1, k + 1);
        out.solid[dst] = m.solid[src];
        out.tags[dst] = m.tags[src];
      }
  return out;
}

// ---- io --------------------------------------------------------------------

namespace {

void put_bytes(std::ofstream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), std::streamsize(n));
}

void get_bytes(std::ifstream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), std::streamsize(n));
  if (!is) throw std::runtime_error("truncated voxel file");
}

void write_header(std::ofstream& os, const char* magic, const VoxelGrid& g) {
  os.write(magic, 7);
  std::int32_t d[3] = {g.dims[0], g.dims[1], g.dims[2]};
  put_bytes(os, d, sizeof d);
  put_bytes(os, g.spacing.data(), 3 * sizeof(double));
  put_bytes(os, g.origin.data(), 3 * sizeof(double));
}

VoxelGrid read_header(std::ifstream& is, const char* magic) {
  char m[7];
  get_bytes(is, m, 7);
  if (std::memcmp(m, magic, 7) != 0)
    throw std::runtime_error("bad magic in voxel file");
  VoxelGrid g;
  std::int32_t d[3];
  get_bytes(is, d, sizeof d);
  if (d[0] <= 0 || d[1] <= 0 || d[2] <= 0)
    throw std::runtime_error("bad dimensions in voxel file");
  g.dims = {d[0], d[1], d[2]};
  get_bytes(is, g.spacing.data(), 3 * sizeof(double));
  get_bytes(is, g.origin.data(), 3 * sizeof(double));
  return g;
}

}  // namespace

void write_field(const DensityField& f, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  write_header(os, "VXRHO1\n", f.grid);
  put_bytes(os, f.rho.data(), f.rho.size() * sizeof(double));
  const std::uint8_t has_passive = f.passive.empty() ? 0 : 1;
  put_bytes(os, &has_passive, 1);
  if (has_passive) put_bytes(os, f.passive.data(), f.passive.size());
  if (!os) throw std::runtime_error("write failed: " + path);
}

DensityField read_field(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  DensityField f;
  f.grid = read_header(is, "VXRHO1\n");
  f.rho.resize(f.grid.cell_count());
  get_bytes(is, f.rho.data(), f.rho.size() * sizeof(double));
  std::uint8_t has_passive = 0;
  get_bytes(is, &has_passive, 1);
  if (has_passive) {
    f.passive.resize(f.grid.cell_count());
    get_bytes(is, f.passive.data(), f.passive.size());
  }
  return f;
}

void write_model(const BinaryVoxelModel& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  write_header(os, "VXBIN1\n", m.grid);
  std::vector<std::uint8_t> packed(m.grid.cell_count());
  for (std::size_t i = 0; i < packed.size(); ++i)
    packed[i] = std::uint8_t((m.solid[i] ? 1 : 0) | (m.tags[i] << 1));
  put_bytes(os, packed.data(), packed.size());
  if (!os) throw std::runtime_error("write failed: " + path);
}

BinaryVoxelModel read_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  BinaryVoxelModel m;
  m.grid = read_header(is, "VXBIN1\n");
  std::vector<std::uint8_t> packed(m.grid.cell_count());
  get_bytes(is, packed.data(), packed.size());
  m.solid.resize(packed.size());
  m.tags.resize(packed.size());
  for (std::size_t i = 0; i < packed.size(); ++i) {
    m.solid[i] = packed[i] & 1;
    m.tags[i] = packed[i] >> 1;
  }
  return m;
}

void write_vtk(const VoxelGrid& g, const std::vector<double>& cell_scalars,
               const std::string& scalar_name, const std::string& path) {
  if (cell_scalars.size() != g.cell_count())
    throw std::runtime_error("write_vtk: scalar count mismatch");
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << "# vtk DataFile Version 3.0\nvoxframe cell data\nASCII\n"
     << "DATASET STRUCTURED_POINTS\n"
     << "DIMENSIONS " << g.nx() + 1 << ' ' << g.ny() + 1 << ' ' << g.nz() + 1 << '\n'
     << "ORIGIN " << g.origin[0] << ' ' << g.origin[1] << ' ' << g.origin[2] << '\n'
     << "SPACING " << g.spacing[0] << ' ' << g.spacing[1] << ' ' << g.spacing[2] << '\n'
     << "CELL_DATA " << g.cell_count() << '\n'
     << "SCALARS " << scalar_name << " double 1\nLOOKUP_TABLE default\n";
  char buf[32];
  for (double v : cell_scalars) {
    std::snprintf(buf, sizeof buf, "%.9g\n", v);
    os << buf;
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace voxframe
