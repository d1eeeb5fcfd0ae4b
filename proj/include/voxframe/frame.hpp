#pragma once
// Spatial frames of circular-section Timoshenko members: stiffness assembly,
// compliance solves, analytic size/layout gradients, obstacle aggregation,
// and the size/layout/alternating optimizers.

#include <Eigen/Dense>
#include <array>
#include <limits>
#include <string>
#include <vector>

#include "voxframe/graph.hpp"

namespace voxframe {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat12 = Eigen::Matrix<double, 12, 12>;

struct FrameMaterial {
  double E = 1.0;
  double nu = 0.3;
  double kappa = 0.9;  // shear correction for circular sections
  double G() const { return E / (2.0 * (1.0 + nu)); }
};

struct FrameJoint {
  Vec3 x = Vec3::Zero();
  std::array<bool, 6> fixed{};  // constrained dofs (ux uy uz rx ry rz)
  Vec6 load = Vec6::Zero();
  bool frozen = false;  // position not a layout design variable

  bool any_fixed() const {
    for (bool f : fixed)
      if (f) return true;
    return false;
  }
};

struct FrameMember {
  int a = -1, b = -1;
  double d = 0;  // section diameter
};

struct FrameModel {
  FrameMaterial material;
  std::vector<FrameJoint> joints;
  std::vector<FrameMember> members;
  double volume_target = 0;
  double d0 = 0;  // initial uniform diameter, anchors the size bounds
  // joint-coordinate bounds for layout optimization (design domain box)
  Vec3 box_lo = Vec3::Constant(-std::numeric_limits<double>::infinity());
  Vec3 box_hi = Vec3::Constant(std::numeric_limits<double>::infinity());

  double length(int m) const {
    return (joints[members[m].b].x - joints[members[m].a].x).norm();
  }
  double volume() const;
};

// circular section properties
inline double section_area(double d) { return M_PI * d * d / 4.0; }
inline double section_I(double d) { return M_PI * d * d * d * d / 64.0; }
inline double section_J(double d) { return M_PI * d * d * d * d / 32.0; }

// Local 12x12 (x axial): axial EA/L, torsion GJ/L, two shear-deformable
// bending planes with b = 12EI/(kappa G A L^2).
Mat12 member_stiffness_local(const FrameMaterial& mat, double L, double d);

// Rows are the local axes in global coordinates; the first row is
// delta/|delta|. Vertical members use the zero-azimuth convention.
Eigen::Matrix3d member_rotation(const Vec3& delta);

// Global member stiffness, evaluated in closed form in t = delta/L (smooth in
// the joint coordinates, vertical members included).
Mat12 member_stiffness(const FrameMaterial& mat, const Vec3& delta, double d);

// Analytic derivatives of the global stiffness: by diameter, and by the three
// components of delta = x_b - x_a.
void member_stiffness_gradients(const FrameMaterial& mat, const Vec3& delta,
                                double d, Mat12* dK_dd,
                                std::array<Mat12, 3>* dK_ddelta);

struct FrameSolution {
  Eigen::VectorXd u;       // 6 dofs per joint
  double compliance = 0;   // f . u
};

// Dense assembly + LDLT with constrained dofs eliminated; throws on singular
// or poorly-equilibrated systems.
FrameSolution solve_frame(const FrameModel& f);

// dJ/dd per member: -u^T (dK/dd) u
Eigen::VectorXd size_gradient(const FrameModel& f, const FrameSolution& s);
// dJ/dx for every joint coordinate (3 per joint, frozen ones included; the
// optimizers mask frozen joints)
Eigen::VectorXd layout_gradient(const FrameModel& f, const FrameSolution& s);

// ---- obstacles -------------------------------------------------------------

struct Obstacle {
  Vec3 point = Vec3::Zero();  // point on the axis
  Vec3 axis = Vec3::UnitZ();  // unit direction
  double radius = 0;
  bool finite = false;
  double half_length = 0;  // used when finite
};

double obstacle_sd(const Obstacle& o, const Vec3& p);

struct ObstacleSet {
  std::vector<Obstacle> items;
  double ks_rho = 50.0;
  int gauss_points = 10;

  bool empty() const { return items.empty(); }
};

// Per (member, obstacle): v = L * sum_g w_g max(0, -sd(x_g)) on a Gauss rule
// along the axis. Aggregated by Kreisselmeier-Steinhauser and shifted by
// ln(N)/rho so the value is 0 exactly when every integral vanishes.
double ks_constraint(const FrameModel& f, const ObstacleSet& obs);
Eigen::VectorXd ks_gradient(const FrameModel& f, const ObstacleSet& obs);

// Deepest sampled penetration (>= 0) over dense per-member sampling.
double max_penetration(const FrameModel& f, const ObstacleSet& obs,
                       int samples = 101);

// ---- optimizers ------------------------------------------------------------

struct OptimizeOptions {
  int max_iterations = 200;
  double kkt_tol = 1e-6;         // on ||proj grad||_inf / ||grad||_inf
  double volume_rel_tol = 1e-8;  // honored at every accepted iterate
  double diameter_lower_factor = 0.1;  // bounds: factor * d0
  double diameter_upper_factor = 10.0;
};

struct OptimizeReport {
  int iterations = 0;
  double initial_J = 0, final_J = 0;
  double kkt_residual = 0;
  bool converged = false;
  std::vector<double> history;  // J at accepted iterates, non-increasing
};

// Linearized objective + quadratic damping, exact volume restoration through
// a multiplier bisection against the clamped update, backtracking on h.
OptimizeReport size_optimize(FrameModel& f, const OptimizeOptions& opt = {});

// Same scheme over free joint coordinates, clamped to the model's box;
// obstacle constraint (if any) enforced by augmented-Lagrangian outer updates.
OptimizeReport layout_optimize(FrameModel& f, const ObstacleSet* obs = nullptr,
                               const OptimizeOptions& opt = {});

// Merges members shorter than `ratio` times the summed length of the members
// sharing their joints (zero-length ones first); parallel duplicates combine
// by section area. Members between two frozen joints are kept. Returns the
// number of merges.
int merge_members(FrameModel& f, double ratio = 0.05);

// Uniform diameter scaling to the exact target volume.
void scale_to_volume(FrameModel& f, double V);

struct AlternateOptions {
  int max_cycles = 6;
  double cycle_rel_tol = 1e-4;
  double merge_ratio = 0.05;
  OptimizeOptions inner;
};

struct AlternateReport {
  std::vector<std::string> labels;     // "initial", then "S"/"L" per run
  std::vector<double> milestones;      // J after each run (merges applied)
  std::vector<double> volumes;
  std::vector<int> member_counts;
  int cycles = 0;
};

// S, then (L, S) cycles until the cycle improvement drops below tolerance.
AlternateReport alternate_optimize(FrameModel& f, const ObstacleSet* obs = nullptr,
                                   const AlternateOptions& opt = {});

// ---- reporting and io ------------------------------------------------------

struct StressReport {
  std::vector<double> axial_stress;  // |N|/A per member
  double energy_axial = 0, energy_bending = 0, energy_torsion = 0;
  double min_stress = 0, max_stress = 0, mean_stress = 0, std_stress = 0;
};

StressReport stress_report(const FrameModel& f, const FrameSolution& s);

// Graph -> frame: scales voxel coordinates into physical space, fixes all six
// dofs of Dirichlet joints, loads the flagged joints with their attributed
// forces, freezes both kinds, and sizes a uniform diameter from the volume
// budget: d = sqrt(4 V / (pi sum L)).
FrameModel to_frame(const FrameGraph& g, const FrameMaterial& mat,
                    double volume_target);

void write_frame(const FrameModel& f, const std::string& path);
FrameModel read_frame(const std::string& path);

}  // namespace voxframe
