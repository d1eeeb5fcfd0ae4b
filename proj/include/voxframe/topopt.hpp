#pragma once
// Density-based compliance minimization on a structured hex8 grid: penalized
// modulus, hat-kernel density filter, matrix-free equilibrium solves,
// analytic sensitivities and optimality-criteria updates.

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "voxframe/grid.hpp"

namespace voxframe {

// Nodes sit on cell corners: (nx+1)(ny+1)(nz+1) of them, 3 dofs each,
// numbered like cells with x running fastest.
inline std::size_t node_count(const VoxelGrid& g) {
  return std::size_t(g.nx() + 1) * (g.ny() + 1) * (g.nz() + 1);
}
inline std::size_t node_index(const VoxelGrid& g, int i, int j, int k) {
  return std::size_t(i) +
         std::size_t(g.nx() + 1) * (std::size_t(j) + std::size_t(g.ny() + 1) * k);
}

struct NodalSupport {
  std::size_t node = 0;
  int dof = 0;  // 0,1,2 -> ux,uy,uz
};

struct NodalLoad {
  std::size_t node = 0;
  std::array<double, 3> f{0, 0, 0};
};

struct TopOptProblem {
  VoxelGrid grid;
  double E_bar = 2.1e5;
  double E_min = 1e-9;
  double nu = 0.3;
  double p = 3.0;    // penalization exponent
  double R = 3.0;    // filter radius, in length units
  double V_f = 0.5;  // prescribed volume fraction
  std::vector<NodalSupport> supports;
  std::vector<NodalLoad> loads;
  std::vector<std::uint8_t> passive;  // empty or cell_count(): density pinned
  std::vector<double> passive_rho;    // pinned values; empty means 0

  double penalized_E(double rho) const;  // E_min + rho^p (E_bar - E_min)
  bool is_passive(std::size_t i) const { return !passive.empty() && passive[i]; }
  double pinned_value(std::size_t i) const {
    return passive_rho.empty() ? 0.0 : passive_rho[i];
  }
};

// Throws std::invalid_argument when parameters or boundary conditions are
// unusable (p < 1, E_min <= 0, R < 0, V_f outside (0,1], no support, no load).
void validate(const TopOptProblem& p);

// Unit-modulus trilinear hexahedron, 2x2x2 Gauss, dofs node-major. Scales
// linearly in E and carries exactly six rigid-body modes.
Eigen::Matrix<double, 24, 24> hex8_stiffness(double E, double nu,
                                             const std::array<double, 3>& spacing);

// ---- density filter --------------------------------------------------------
// rho_hat_i = sum_j H_ij rho_j / sum_j H_ij with H_ij = max(0, R - dist of
// centroids). Stored as the stencil of in-range offsets plus per-cell row
// sums; W = D^-1 H, so transpose application divides first and convolves
// after. R below the smallest spacing degenerates to the identity.
struct DensityFilter {
  VoxelGrid grid;
  struct Tap {
    int di = 0, dj = 0, dk = 0;
    double w = 0;
  };
  std::vector<Tap> taps;
  std::vector<double> row_sum;

  bool identity() const { return taps.size() == 1; }
};

DensityFilter make_filter(const VoxelGrid& grid, double R);
std::vector<double> filter_apply(const DensityFilter& F,
                                 const std::vector<double>& rho);
std::vector<double> filter_apply_transpose(const DensityFilter& F,
                                           const std::vector<double>& s);
// Column sums W^T 1; the volume of the filtered field is cell_volume * c.rho.
std::vector<double> filter_column_sums(const DensityFilter& F);

DensityField filter_densities(const DensityField& field, double R);

// ---- equilibrium -----------------------------------------------------------

struct FemState {
  Eigen::VectorXd u;      // 3 dofs per node
  Eigen::VectorXd f;      // assembled loads, constrained dofs zeroed
  double compliance = 0;  // f . u
  int iterations = 0;     // Krylov iterations spent
  double residual = 0;    // ||f - K u|| / ||f||
};

struct SolveOptions {
  double tol = 1e-8;           // relative residual
  int max_iterations = 0;      // 0 -> 10 * dof count
  std::string preconditioner = "multigrid";  // or "jacobi"
  const FemState* warm = nullptr;
};

// Matrix-free conjugate gradients on K(rho_hat) u = f with a geometric
// multigrid V-cycle (or plain diagonal) preconditioner. Throws
// std::runtime_error when the iteration cap is hit.
FemState solve_equilibrium(const TopOptProblem& p,
                           const std::vector<double>& rho_hat,
                           const SolveOptions& opt = {});

// ---- sensitivities ---------------------------------------------------------

// dJ/drho_i = -sum_j W_ji p rho_hat_j^(p-1) (E_bar - E_min) u_j^T K0 u_j;
// passive entries are zeroed. All entries <= 0. The filter-less overloads
// rebuild the stencil from the problem.
std::vector<double> compliance_sensitivity(const TopOptProblem& p,
                                           const DensityFilter& F,
                                           const std::vector<double>& rho_hat,
                                           const Eigen::VectorXd& u);
std::vector<double> compliance_sensitivity(const TopOptProblem& p,
                                           const std::vector<double>& rho_hat,
                                           const Eigen::VectorXd& u);

// dV/drho_i = cell volume * (W^T 1)_i, passive entries zeroed.
std::vector<double> volume_sensitivity(const TopOptProblem& p,
                                       const DensityFilter& F);
std::vector<double> volume_sensitivity(const TopOptProblem& p);

// ---- optimality criteria ---------------------------------------------------

struct OcOptions {
  double move = 0.2;
  double damping = 0.5;
  double lambda_lo = 1e-9, lambda_hi = 1e9;
  double volume_tol = 1e-9;  // on the mean filtered density
};

// Multiplicative update clamped to the move limit and [0,1]; the Lagrange
// multiplier is bisected (geometrically) until the filtered volume fraction
// meets V_f. Passive densities pass through unchanged.
std::vector<double> oc_update(const TopOptProblem& p, const DensityFilter& F,
                              const std::vector<double>& rho,
                              const std::vector<double>& dJ,
                              const std::vector<double>& dV,
                              const OcOptions& opt = {});

// ---- the optimization loop -------------------------------------------------

struct TopOptIterRecord {
  int iteration = 0;
  double J = 0;
  double volume_fraction = 0;  // mean filtered density
  double max_change = 0;
  int solver_iterations = 0;
};

struct TopOptOptions {
  int max_iterations = 300;
  double tol = 0.01;  // on max |delta rho|
  OcOptions oc;
  SolveOptions solver;
  // called after each iteration, e.g. for progress printing
  std::function<void(const TopOptIterRecord&)> on_iteration;
};

struct TopOptResult {
  DensityField rho;      // design densities
  DensityField rho_hat;  // filtered densities
  FemState state;        // equilibrium at the final filtered field
  std::vector<TopOptIterRecord> history;
  int iterations = 0;
  bool converged = false;
};

// filter -> solve -> sensitivities -> OC until max |delta rho| < tol or the
// iteration cap. Densities start uniform at V_f (passive cells pinned);
// every equilibrium solve warm-starts from the previous displacement.
TopOptResult optimize(const TopOptProblem& p, const TopOptOptions& opt = {});

// Compliance of a binary model under the problem's loads with p = 1: voids
// keep E_min, solids get E_bar.
double binary_compliance(const TopOptProblem& p,
                         const std::vector<std::uint8_t>& solid,
                         const SolveOptions& opt = {});

// iteration,J,volume_fraction CSV
void write_history_csv(const std::vector<TopOptIterRecord>& history,
                       const std::string& path);

}  // namespace voxframe
