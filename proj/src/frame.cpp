#include "voxframe/frame.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace voxframe {

double FrameModel::volume() const {
  double v = 0;
  for (std::size_t m = 0; m < members.size(); ++m)
    v += section_area(members[m].d) * length(int(m));
  return v;
}

namespace {

// stiffness coefficients of a circular Timoshenko member and their L- and
// d-derivatives; b = 12 E I / (kappa G A L^2)
struct Coeffs {
  double ax, to, k1, k2, k3, k4;
};

Coeffs coeffs_at(const FrameMaterial& mat, double L, double d) {
  const double A = section_area(d), I = section_I(d), Jt = section_J(d);
  const double G = mat.G();
  const double b = 12.0 * mat.E * I / (mat.kappa * G * A * L * L);
  Coeffs c;
  c.ax = mat.E * A / L;
  c.to = G * Jt / L;
  c.k1 = 12.0 * mat.E * I / ((1.0 + b) * L * L * L);
  c.k2 = 6.0 * mat.E * I / ((1.0 + b) * L * L);
  c.k3 = (4.0 + b) * mat.E * I / ((1.0 + b) * L);
  c.k4 = (2.0 - b) * mat.E * I / ((1.0 + b) * L);
  return c;
}

Coeffs coeffs_dL(const FrameMaterial& mat, double L, double d) {
  const double A = section_area(d), I = section_I(d);
  const double G = mat.G();
  const double b = 12.0 * mat.E * I / (mat.kappa * G * A * L * L);
  const Coeffs c = coeffs_at(mat, L, d);
  Coeffs g;
  g.ax = -c.ax / L;
  g.to = -c.to / L;
  g.k1 = c.k1 * (-3.0 / L + 2.0 * b / ((1.0 + b) * L));
  g.k2 = c.k2 * (-2.0 / L + 2.0 * b / ((1.0 + b) * L));
  const double fprime = 6.0 * b * mat.E * I / (L * L * (1.0 + b) * (1.0 + b));
  g.k3 = -c.k3 / L + fprime;
  g.k4 = -c.k4 / L + fprime;
  return g;
}

Coeffs coeffs_dd(const FrameMaterial& mat, double L, double d) {
  const double A = section_area(d), I = section_I(d);
  const double G = mat.G();
  const double b = 12.0 * mat.E * I / (mat.kappa * G * A * L * L);
  const Coeffs c = coeffs_at(mat, L, d);
  Coeffs g;
  g.ax = 2.0 * c.ax / d;
  g.to = 4.0 * c.to / d;
  g.k1 = c.k1 * (4.0 / d - 2.0 * b / (d * (1.0 + b)));
  g.k2 = c.k2 * (4.0 / d - 2.0 * b / (d * (1.0 + b)));
  const double fprime = -6.0 * b * mat.E * I / (d * L * (1.0 + b) * (1.0 + b));
  g.k3 = 4.0 * c.k3 / d + fprime;
  g.k4 = 4.0 * c.k4 / d + fprime;
  return g;
}

Eigen::Matrix3d cross_matrix(const Vec3& v) {
  Eigen::Matrix3d c;
  c << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return c;
}

// assemble the four 3x3 block families into the 12x12 member matrix
Mat12 blocks_to_matrix(const Eigen::Matrix3d& U, const Eigen::Matrix3d& V,
                       const Eigen::Matrix3d& W, const Eigen::Matrix3d& X) {
  Mat12 K;
  const Eigen::Matrix3d Vt = V.transpose();
  K.block<3, 3>(0, 0) = U;
  K.block<3, 3>(0, 3) = V;
  K.block<3, 3>(0, 6) = -U;
  K.block<3, 3>(0, 9) = V;
  K.block<3, 3>(3, 0) = Vt;
  K.block<3, 3>(3, 3) = W;
  K.block<3, 3>(3, 6) = -Vt;
  K.block<3, 3>(3, 9) = X;
  K.block<3, 3>(6, 0) = -U;
  K.block<3, 3>(6, 3) = -V;
  K.block<3, 3>(6, 6) = U;
  K.block<3, 3>(6, 9) = -V;
  K.block<3, 3>(9, 0) = Vt;
  K.block<3, 3>(9, 3) = X;
  K.block<3, 3>(9, 6) = -Vt;
  K.block<3, 3>(9, 9) = W;
  return K;
}

}  // namespace

Mat12 member_stiffness_local(const FrameMaterial& mat, double L, double d) {
  const Coeffs c = coeffs_at(mat, L, d);
  Mat12 K = Mat12::Zero();
  K(0, 0) = K(6, 6) = c.ax;
  K(0, 6) = K(6, 0) = -c.ax;
  K(3, 3) = K(9, 9) = c.to;
  K(3, 9) = K(9, 3) = -c.to;
  // bending in the x-y plane: (u_y1, th_z1, u_y2, th_z2) = dofs (1,5,7,11)
  {
    const int ix[4] = {1, 5, 7, 11};
    const double M[4][4] = {{c.k1, c.k2, -c.k1, c.k2},
                            {c.k2, c.k3, -c.k2, c.k4},
                            {-c.k1, -c.k2, c.k1, -c.k2},
                            {c.k2, c.k4, -c.k2, c.k3}};
    for (int r = 0; r < 4; ++r)
      for (int s = 0; s < 4; ++s) K(ix[r], ix[s]) = M[r][s];
  }
  // bending in the x-z plane: (u_z1, th_y1, u_z2, th_y2) = dofs (2,4,8,10)
  {
    const int ix[4] = {2, 4, 8, 10};
    const double M[4][4] = {{c.k1, -c.k2, -c.k1, -c.k2},
                            {-c.k2, c.k3, c.k2, c.k4},
                            {-c.k1, c.k2, c.k1, c.k2},
                            {-c.k2, c.k4, c.k2, c.k3}};
    for (int r = 0; r < 4; ++r)
      for (int s = 0; s < 4; ++s) K(ix[r], ix[s]) = M[r][s];
  }
  return K;
}

Eigen::Matrix3d member_rotation(const Vec3& delta) {
  const double L = delta.norm();
  if (!(L > 0)) throw std::runtime_error("zero-length member");
  const Vec3 t = delta / L;
  const double rho = std::hypot(t.x(), t.y());
  Vec3 w;
  if (rho < 1e-12)
    w = Vec3(0, 1, 0);  // vertical member: zero-azimuth convention
  else
    w = Vec3(-t.y() / rho, t.x() / rho, 0);
  Eigen::Matrix3d R;
  R.row(0) = t;
  R.row(1) = w;
  R.row(2) = t.cross(w);
  return R;
}

Mat12 member_stiffness(const FrameMaterial& mat, const Vec3& delta, double d) {
  const double L = delta.norm();
  if (!(L > 0)) throw std::runtime_error("zero-length member");
  const Vec3 t = delta / L;
  const Coeffs c = coeffs_at(mat, L, d);
  const Eigen::Matrix3d P = t * t.transpose();
  const Eigen::Matrix3d Q = Eigen::Matrix3d::Identity() - P;
  const Eigen::Matrix3d C = cross_matrix(t);
  return blocks_to_matrix(c.ax * P + c.k1 * Q, -c.k2 * C, c.to * P + c.k3 * Q,
                          -c.to * P + c.k4 * Q);
}

void member_stiffness_gradients(const FrameMaterial& mat, const Vec3& delta,
                                double d, Mat12* dK_dd,
                                std::array<Mat12, 3>* dK_ddelta) {
  const double L = delta.norm();
  if (!(L > 0)) throw std::runtime_error("zero-length member");
  const Vec3 t = delta / L;
  const Coeffs c = coeffs_at(mat, L, d);
  const Eigen::Matrix3d P = t * t.transpose();
  const Eigen::Matrix3d Q = Eigen::Matrix3d::Identity() - P;
  const Eigen::Matrix3d C = cross_matrix(t);
  if (dK_dd) {
    const Coeffs g = coeffs_dd(mat, L, d);
    *dK_dd = blocks_to_matrix(g.ax * P + g.k1 * Q, -g.k2 * C, g.to * P + g.k3 * Q,
                              -g.to * P + g.k4 * Q);
  }
  if (dK_ddelta) {
    const Coeffs gL = coeffs_dL(mat, L, d);
    for (int e = 0; e < 3; ++e) {
      const double dL = t(e);
      const Vec3 dt = Q.col(e) / L;
      const Eigen::Matrix3d dP = dt * t.transpose() + t * dt.transpose();
      const Eigen::Matrix3d dQ = -dP;
      const Eigen::Matrix3d dC = cross_matrix(dt);
      const Eigen::Matrix3d dU = gL.ax * dL * P + c.ax * dP + gL.k1 * dL * Q + c.k1 * dQ;
      const Eigen::Matrix3d dV = -(gL.k2 * dL * C + c.k2 * dC);
      const Eigen::Matrix3d dW = gL.to * dL * P + c.to * dP + gL.k3 * dL * Q + c.k3 * dQ;
      const Eigen::Matrix3d dX = -(gL.to * dL * P + c.to * dP) + gL.k4 * dL * Q + c.k4 * dQ;
      (*dK_ddelta)[e] = blocks_to_matrix(dU, dV, dW, dX);
    }
  }
}

FrameSolution solve_frame(const FrameModel& f) {
  const int n = int(f.joints.size());
  if (n == 0 || f.members.empty())
    throw std::runtime_error("solve_frame: empty model");
  const int N = 6 * n;
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(N, N);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(N);
  for (int j = 0; j < n; ++j) rhs.segment<6>(6 * j) = f.joints[j].load;
  for (const auto& mem : f.members) {
    const Vec3 delta = f.joints[mem.b].x - f.joints[mem.a].x;
    const Mat12 Km = member_stiffness(f.material, delta, mem.d);
    const int base[2] = {6 * mem.a, 6 * mem.b};
    for (int r = 0; r < 12; ++r)
      for (int s = 0; s < 12; ++s)
        K(base[r / 6] + r % 6, base[s / 6] + s % 6) += Km(r, s);
  }
  for (int j = 0; j < n; ++j)
    for (int dof = 0; dof < 6; ++dof)
      if (f.joints[j].fixed[dof]) {
        const int i = 6 * j + dof;
        K.row(i).setZero();
        K.col(i).setZero();
        K(i, i) = 1.0;
        rhs(i) = 0.0;
      }
  FrameSolution sol;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(K);
  sol.u = ldlt.solve(rhs);
  const double fnorm = rhs.norm();
  const double resid = (K * sol.u - rhs).norm();
  if (!sol.u.allFinite() || (fnorm > 0 && resid > 1e-8 * fnorm))
    throw std::runtime_error("solve_frame: singular or ill-conditioned frame");
  sol.compliance = rhs.dot(sol.u);
  return sol;
}

namespace {

Eigen::Matrix<double, 12, 1> element_u(const FrameModel& f,
                                       const Eigen::VectorXd& u, int m) {
  Eigen::Matrix<double, 12, 1> ue;
  ue.segment<6>(0) = u.segment<6>(6 * f.members[m].a);
  ue.segment<6>(6) = u.segment<6>(6 * f.members[m].b);
  return ue;
}

}  // namespace

Eigen::VectorXd size_gradient(const FrameModel& f, const FrameSolution& s) {
  Eigen::VectorXd g(f.members.size());
  for (std::size_t m = 0; m < f.members.size(); ++m) {
    const Vec3 delta = f.joints[f.members[m].b].x - f.joints[f.members[m].a].x;
    Mat12 dK;
    member_stiffness_gradients(f.material, delta, f.members[m].d, &dK, nullptr);
    const auto ue = element_u(f, s.u, int(m));
    g(m) = -ue.dot(dK * ue);
  }
  return g;
}

Eigen::VectorXd layout_gradient(const FrameModel& f, const FrameSolution& s) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(3 * f.joints.size());
  for (std::size_t m = 0; m < f.members.size(); ++m) {
    const auto& mem = f.members[m];
    const Vec3 delta = f.joints[mem.b].x - f.joints[mem.a].x;
    std::array<Mat12, 3> dK;
    member_stiffness_gradients(f.material, delta, mem.d, nullptr, &dK);
    const auto ue = element_u(f, s.u, int(m));
    for (int e = 0; e < 3; ++e) {
      const double val = -ue.dot(dK[e] * ue);
      g(3 * mem.b + e) += val;   // d delta / d x_b = +I
      g(3 * mem.a + e) -= val;   // d delta / d x_a = -I
    }
  }
  return g;
}

// ---- obstacles -------------------------------------------------------------

double obstacle_sd(const Obstacle& o, const Vec3& p) {
  const Vec3 rel = p - o.point;
  const double axial = rel.dot(o.axis);
  const double radial = (rel - axial * o.axis).norm();
  const double dr = radial - o.radius;
  if (!o.finite) return dr;
  const double dz = std::abs(axial) - o.half_length;
  const double mx = std::max(dr, 0.0), mz = std::max(dz, 0.0);
  return std::min(std::max(dr, dz), 0.0) + std::hypot(mx, mz);
}

namespace {

Vec3 obstacle_sd_gradient(const Obstacle& o, const Vec3& p) {
  const Vec3 rel = p - o.point;
  const double axial = rel.dot(o.axis);
  const Vec3 radial_vec = rel - axial * o.axis;
  const double radial = radial_vec.norm();
  const Vec3 rdir = radial > 1e-12 ? Vec3(radial_vec / radial) : Vec3::Zero();
  const double dr = radial - o.radius;
  if (!o.finite) return rdir;
  const double dz = std::abs(axial) - o.half_length;
  const Vec3 zdir = (axial >= 0 ? 1.0 : -1.0) * o.axis;
  if (dr <= 0 && dz <= 0) return dr > dz ? rdir : zdir;
  const double mx = std::max(dr, 0.0), mz = std::max(dz, 0.0);
  const double norm = std::hypot(mx, mz);
  if (norm < 1e-300) return Vec3::Zero();
  return (mx * rdir + mz * zdir) / norm;
}

// 10-point Gauss-Legendre on [0,1]
constexpr int kGaussN = 10;
constexpr double kGaussX[kGaussN] = {
    0.5 - 0.9739065285171717 / 2, 0.5 - 0.8650633666889845 / 2,
    0.5 - 0.6794095682990244 / 2, 0.5 - 0.4333953941292472 / 2,
    0.5 - 0.1488743389816312 / 2, 0.5 + 0.1488743389816312 / 2,
    0.5 + 0.4333953941292472 / 2, 0.5 + 0.6794095682990244 / 2,
    0.5 + 0.8650633666889845 / 2, 0.5 + 0.9739065285171717 / 2};
constexpr double kGaussW[kGaussN] = {
    0.0666713443086881 / 2, 0.1494513491505806 / 2, 0.2190863625159820 / 2,
    0.2692667193099963 / 2, 0.2955242247147529 / 2, 0.2955242247147529 / 2,
    0.2692667193099963 / 2, 0.2190863625159820 / 2, 0.1494513491505806 / 2,
    0.0666713443086881 / 2};

// violation integral of one (member, obstacle) pair and, optionally, its
// gradient with respect to the two endpoint coordinates
double pair_violation(const FrameModel& f, int m, const Obstacle& o, Vec3* ga,
                      Vec3* gb) {
  const Vec3 xa = f.joints[f.members[m].a].x, xb = f.joints[f.members[m].b].x;
  const Vec3 delta = xb - xa;
  const double L = delta.norm();
  const Vec3 t = delta / L;
  double integral = 0;
  Vec3 gia = Vec3::Zero(), gib = Vec3::Zero();
  for (int g = 0; g < kGaussN; ++g) {
    const Vec3 p = xa + kGaussX[g] * delta;
    const double sd = obstacle_sd(o, p);
    if (sd < 0) {
      integral += kGaussW[g] * (-sd);
      if (ga) {
        const Vec3 gsd = obstacle_sd_gradient(o, p);
        gia -= kGaussW[g] * (1.0 - kGaussX[g]) * gsd;
        gib -= kGaussW[g] * kGaussX[g] * gsd;
      }
    }
  }
  if (ga) {
    // v = L * integral: product rule with dL/dx_b = t
    *ga = L * gia - integral * t;
    *gb = L * gib + integral * t;
  }
  return L * integral;
}

}  // namespace

double ks_constraint(const FrameModel& f, const ObstacleSet& obs) {
  if (obs.empty()) return 0.0;
  const std::size_t N = f.members.size() * obs.items.size();
  double vmax = 0;
  std::vector<double> v;
  v.reserve(N);
  for (std::size_t m = 0; m < f.members.size(); ++m)
    for (const auto& o : obs.items) {
      v.push_back(pair_violation(f, int(m), o, nullptr, nullptr));
      vmax = std::max(vmax, v.back());
    }
  double sum = 0;
  for (double vi : v) sum += std::exp(obs.ks_rho * (vi - vmax));
  return vmax + std::log(sum) / obs.ks_rho - std::log(double(N)) / obs.ks_rho;
}

Eigen::VectorXd ks_gradient(const FrameModel& f, const ObstacleSet& obs) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(3 * f.joints.size());
  if (obs.empty()) return g;
  const std::size_t nm = f.members.size(), no = obs.items.size();
  std::vector<double> v(nm * no);
  std::vector<Vec3> ga(nm * no), gb(nm * no);
  double vmax = 0;
  for (std::size_t m = 0; m < nm; ++m)
    for (std::size_t o = 0; o < no; ++o) {
      const std::size_t idx = m * no + o;
      v[idx] = pair_violation(f, int(m), obs.items[o], &ga[idx], &gb[idx]);
      vmax = std::max(vmax, v[idx]);
    }
  double sum = 0;
  for (double vi : v) sum += std::exp(obs.ks_rho * (vi - vmax));
  for (std::size_t m = 0; m < nm; ++m)
    for (std::size_t o = 0; o < no; ++o) {
      const std::size_t idx = m * no + o;
      const double w = std::exp(obs.ks_rho * (v[idx] - vmax)) / sum;
      g.segment<3>(3 * f.members[m].a) += w * ga[idx];
      g.segment<3>(3 * f.members[m].b) += w * gb[idx];
    }
  return g;
}

double max_penetration(const FrameModel& f, const ObstacleSet& obs, int samples) {
  if (obs.empty()) return 0.0;
  double worst = 0;
  for (std::size_t m = 0; m < f.members.size(); ++m) {
    const Vec3 xa = f.joints[f.members[m].a].x, xb = f.joints[f.members[m].b].x;
    for (int s = 0; s < samples; ++s) {
      const Vec3 p = xa + (double(s) / (samples - 1)) * (xb - xa);
      for (const auto& o : obs.items)
        worst = std::max(worst, -obstacle_sd(o, p));
    }
  }
  return worst;
}

// ---- optimizers ------------------------------------------------------------

namespace {

// multiplier so the bound-clamped step hits the volume target; the clamped
// volume is monotone in mu. Returns false if no bracket exists (infeasible).
bool solve_multiplier(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                      const Eigen::VectorXd& a, double h, double lo, double hi,
                      const std::function<double(const Eigen::VectorXd&)>& volume,
                      double Vt, Eigen::VectorXd* out) {
  auto candidate = [&](double mu) -> Eigen::VectorXd {
    Eigen::VectorXd c = x - h * (g - mu * a);
    return c.cwiseMax(lo).cwiseMin(hi);
  };
  double mlo = -1.0, mhi = 1.0;
  for (int it = 0; it < 200; ++it) {
    if (volume(candidate(mlo)) <= Vt) break;
    mlo *= 2;
    if (it == 199) return false;
  }
  for (int it = 0; it < 200; ++it) {
    if (volume(candidate(mhi)) >= Vt) break;
    mhi *= 2;
    if (it == 199) return false;
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (mlo + mhi);
    const double vm = volume(candidate(mid));
    if (std::abs(vm - Vt) <= 1e-12 * Vt) break;
    (vm < Vt ? mlo : mhi) = mid;
  }
  *out = candidate(0.5 * (mlo + mhi));
  return true;
}

// projected KKT residual for min J s.t. volume equality and box bounds:
// r = g - mu a, with properly-active bound components zeroed. Bound tolerance
// is absolute on the slack so infinite and zero bounds both behave.
double projected_residual(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                          const Eigen::VectorXd& a, const Eigen::VectorXd& lo,
                          const Eigen::VectorXd& hi, Eigen::VectorXd* r_out) {
  const int n = int(x.size());
  std::vector<char> active(n, 0);
  double mu = 0;
  for (int pass = 0; pass < 10; ++pass) {
    double num = 0, den = 0;
    for (int i = 0; i < n; ++i)
      if (!active[i]) {
        num += g(i) * a(i);
        den += a(i) * a(i);
      }
    mu = den > 0 ? num / den : 0;
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      const double r = g(i) - mu * a(i);
      const double span = std::max(1.0, std::abs(x(i)));
      const bool want_active = (x(i) - lo(i) <= 1e-12 * span && r > 0) ||
                               (hi(i) - x(i) <= 1e-12 * span && r < 0);
      if (want_active != bool(active[i])) {
        active[i] = want_active;
        changed = true;
      }
    }
    if (!changed) break;
  }
  Eigen::VectorXd r(n);
  for (int i = 0; i < n; ++i) r(i) = active[i] ? 0.0 : g(i) - mu * a(i);
  if (r_out) *r_out = r;
  const double gn = g.cwiseAbs().maxCoeff();
  return gn > 0 ? r.cwiseAbs().maxCoeff() / gn : 0.0;
}

}  // namespace

OptimizeReport size_optimize(FrameModel& f, const OptimizeOptions& opt) {
  OptimizeReport rep;
  const int m = int(f.members.size());
  if (m == 0) throw std::runtime_error("size_optimize: no members");
  const double Vt = f.volume_target;
  if (!(Vt > 0)) throw std::runtime_error("size_optimize: no volume target");
  const double lo = opt.diameter_lower_factor * f.d0;
  const double hi = opt.diameter_upper_factor * f.d0;
  std::vector<double> L(m);
  for (int i = 0; i < m; ++i) L[i] = f.length(i);
  auto volume = [&](const Eigen::VectorXd& d) {
    double v = 0;
    for (int i = 0; i < m; ++i) v += section_area(d(i)) * L[i];
    return v;
  };
  auto apply = [&](const Eigen::VectorXd& d) {
    for (int i = 0; i < m; ++i) f.members[i].d = d(i);
  };
  scale_to_volume(f, Vt);
  Eigen::VectorXd d(m);
  for (int i = 0; i < m; ++i) d(i) = f.members[i].d;

  FrameSolution sol = solve_frame(f);
  double J = sol.compliance;
  rep.initial_J = J;
  rep.history.push_back(J);
  double h = 0;
  for (int it = 0; it < opt.max_iterations; ++it) {
    rep.iterations = it + 1;
    const Eigen::VectorXd g = size_gradient(f, sol);
    Eigen::VectorXd a(m);
    for (int i = 0; i < m; ++i) a(i) = 0.5 * M_PI * L[i] * d(i);
    Eigen::VectorXd r;
    rep.kkt_residual =
        projected_residual(d, g, a, Eigen::VectorXd::Constant(m, lo),
                           Eigen::VectorXd::Constant(m, hi), &r);
    if (rep.kkt_residual <= opt.kkt_tol) {
      rep.converged = true;
      break;
    }
    const double rinf = r.cwiseAbs().maxCoeff();
    if (h == 0) h = 0.05 * (hi - lo) / std::max(rinf, 1e-300);
    bool accepted = false;
    for (int bt = 0; bt < 60 && !accepted; ++bt) {
      Eigen::VectorXd dnew;
      if (!solve_multiplier(d, g, a, h, lo, hi, volume, Vt, &dnew)) {
        h *= 0.5;
        continue;
      }
      apply(dnew);
      FrameSolution s2;
      try {
        s2 = solve_frame(f);
      } catch (const std::exception&) {
        apply(d);
        h *= 0.5;
        continue;
      }
      if (s2.compliance < J) {
        d = dnew;
        J = s2.compliance;
        sol = std::move(s2);
        rep.history.push_back(J);
        h *= 1.4;
        accepted = true;
      } else {
        apply(d);
        h *= 0.5;
      }
    }
    if (!accepted) break;
  }
  apply(d);
  rep.final_J = J;
  return rep;
}

namespace {

struct LayoutVars {
  std::vector<int> free_joints;            // model joint index per block
  Eigen::VectorXd pack(const FrameModel& f) const {
    Eigen::VectorXd x(3 * free_joints.size());
    for (std::size_t i = 0; i < free_joints.size(); ++i)
      x.segment<3>(3 * i) = f.joints[free_joints[i]].x;
    return x;
  }
  void unpack(FrameModel& f, const Eigen::VectorXd& x) const {
    for (std::size_t i = 0; i < free_joints.size(); ++i)
      f.joints[free_joints[i]].x = x.segment<3>(3 * i);
  }
  Eigen::VectorXd mask(const FrameModel& f, const Eigen::VectorXd& full) const {
    Eigen::VectorXd x(3 * free_joints.size());
    for (std::size_t i = 0; i < free_joints.size(); ++i)
      x.segment<3>(3 * i) = full.segment<3>(3 * free_joints[i]);
    return x;
  }
  Eigen::VectorXd clamp(const FrameModel& f, Eigen::VectorXd x) const {
    for (std::size_t i = 0; i < free_joints.size(); ++i)
      for (int c = 0; c < 3; ++c) {
        double& v = x(3 * i + c);
        v = std::min(std::max(v, f.box_lo(c)), f.box_hi(c));
      }
    return x;
  }
  Eigen::VectorXd bound(const FrameModel& f, bool upper) const {
    Eigen::VectorXd x(3 * free_joints.size());
    for (std::size_t i = 0; i < free_joints.size(); ++i)
      x.segment<3>(3 * i) = upper ? f.box_hi : f.box_lo;
    return x;
  }
};

Eigen::VectorXd volume_gradient_full(const FrameModel& f) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(3 * f.joints.size());
  for (std::size_t m = 0; m < f.members.size(); ++m) {
    const auto& mem = f.members[m];
    const Vec3 delta = f.joints[mem.b].x - f.joints[mem.a].x;
    const double L = delta.norm();
    if (!(L > 0)) continue;
    const Vec3 t = delta / L;
    const double A = section_area(mem.d);
    g.segment<3>(3 * mem.b) += A * t;
    g.segment<3>(3 * mem.a) -= A * t;
  }
  return g;
}

// move x along direction dir (box-clamped) until the model volume equals Vt
bool restore_volume_along(FrameModel& f, const LayoutVars& vars,
                          Eigen::VectorXd& x, const Eigen::VectorXd& dir,
                          double Vt) {
  auto vol_at = [&](double tau) {
    vars.unpack(f, vars.clamp(f, x + tau * dir));
    return f.volume();
  };
  auto commit = [&](double tau) {
    x = vars.clamp(f, x + tau * dir);
    vars.unpack(f, x);
  };
  double tau = 0, v = vol_at(0);
  // Newton with expanding-bracket bisection fallback
  for (int it = 0; it < 100; ++it) {
    if (std::abs(v - Vt) <= 1e-11 * Vt) {
      commit(tau);
      return true;
    }
    vars.unpack(f, vars.clamp(f, x + tau * dir));
    const double slope = vars.mask(f, volume_gradient_full(f)).dot(dir);
    if (std::abs(slope) < 1e-300) break;
    tau -= (v - Vt) / slope;
    if (!std::isfinite(tau) || std::abs(tau) > 1e6) break;
    v = vol_at(tau);
  }
  // bracket around 0
  double a = 0, b = (v > Vt ? -1.0 : 1.0) * 1e-3;
  double va = vol_at(0), vb = vol_at(b);
  for (int it = 0; it < 200 && (va - Vt) * (vb - Vt) > 0; ++it) {
    b *= 2;
    if (std::abs(b) > 1e9) return false;
    vb = vol_at(b);
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (a + b);
    const double vm = vol_at(mid);
    if (std::abs(vm - Vt) <= 1e-11 * Vt) {
      commit(mid);
      return true;
    }
    if ((vm - Vt) * (va - Vt) > 0) {
      a = mid;
      va = vm;
    } else {
      b = mid;
    }
  }
  return false;
}

}  // namespace

OptimizeReport layout_optimize(FrameModel& f, const ObstacleSet* obs,
                               const OptimizeOptions& opt) {
  OptimizeReport rep;
  LayoutVars vars;
  for (std::size_t j = 0; j < f.joints.size(); ++j)
    if (!f.joints[j].frozen) vars.free_joints.push_back(int(j));
  Eigen::VectorXd x = vars.clamp(f, vars.pack(f));
  vars.unpack(f, x);
  const double Vt = f.volume_target;
  scale_to_volume(f, Vt);
  FrameSolution sol = solve_frame(f);
  rep.initial_J = sol.compliance;
  rep.history.push_back(sol.compliance);
  if (vars.free_joints.empty()) {  // nothing to move
    rep.final_J = sol.compliance;
    rep.converged = true;
    return rep;
  }
  const ObstacleSet no_obs;
  const ObstacleSet& O = obs ? *obs : no_obs;
  double lambda = 0;            // augmented-Lagrangian multiplier on ks+
  double w = 0;                 // penalty weight, set from scales below
  const double ks_tol = 1e-9;
  const int outer_rounds = O.empty() ? 1 : 5;
  double minL = std::numeric_limits<double>::infinity();
  for (int mI = 0; mI < int(f.members.size()); ++mI)
    minL = std::min(minL, f.length(mI));

  auto phi_of = [&](double J, double ks) {
    const double kp = std::max(0.0, ks);
    return J + lambda * kp + 0.5 * w * kp * kp;
  };

  for (int outer = 0; outer < outer_rounds; ++outer) {
    double ks = O.empty() ? 0.0 : ks_constraint(f, O);
    if (!O.empty() && w == 0)
      w = 10.0 * std::abs(sol.compliance) / std::max(std::max(0.0, ks), 1e-3);
    double phi = phi_of(sol.compliance, ks);
    double h = 0;
    for (int it = 0; it < opt.max_iterations; ++it) {
      ++rep.iterations;
      Eigen::VectorXd gJ = vars.mask(f, layout_gradient(f, sol));
      if (!O.empty()) {
        const double kp = std::max(0.0, ks);
        if (kp > 0 || lambda > 0)
          gJ += (lambda + w * kp) * vars.mask(f, ks_gradient(f, O));
      }
      const Eigen::VectorXd a = vars.mask(f, volume_gradient_full(f));
      Eigen::VectorXd r;
      rep.kkt_residual = projected_residual(x, gJ, a, vars.bound(f, false),
                                            vars.bound(f, true), &r);
      if (rep.kkt_residual <= opt.kkt_tol) {
        rep.converged = true;
        break;
      }
      if (h == 0) h = 0.02 * std::max(minL, 1e-6) / std::max(r.cwiseAbs().maxCoeff(), 1e-300);
      bool accepted = false;
      for (int bt = 0; bt < 60 && !accepted; ++bt) {
        Eigen::VectorXd xc = vars.clamp(f, x - h * r);
        FrameModel trial = f;
        vars.unpack(trial, xc);
        bool degenerate = false;
        for (int mI = 0; mI < int(trial.members.size()); ++mI)
          if (trial.length(mI) < 1e-9) degenerate = true;
        if (degenerate || !restore_volume_along(trial, vars, xc, a.normalized(), Vt)) {
          h *= 0.5;
          continue;
        }
        FrameSolution s2;
        try {
          s2 = solve_frame(trial);
        } catch (const std::exception&) {
          h *= 0.5;
          continue;
        }
        const double ks2 = O.empty() ? 0.0 : ks_constraint(trial, O);
        const double phi2 = phi_of(s2.compliance, ks2);
        if (phi2 < phi) {
          f = std::move(trial);
          x = xc;
          sol = std::move(s2);
          ks = ks2;
          phi = phi2;
          rep.history.push_back(sol.compliance);
          h *= 1.4;
          accepted = true;
        } else {
          h *= 0.5;
        }
      }
      if (!accepted) break;
    }
    if (O.empty()) break;
    const double kp = std::max(0.0, ks);
    if (kp <= ks_tol) break;
    lambda += w * kp;
    w *= 10.0;
  }
  rep.final_J = sol.compliance;
  return rep;
}

void scale_to_volume(FrameModel& f, double V) {
  const double cur = f.volume();
  if (!(cur > 0)) throw std::runtime_error("scale_to_volume: empty volume");
  const double s = std::sqrt(V / cur);
  for (auto& m : f.members) m.d *= s;
}

int merge_members(FrameModel& f, double ratio) {
  int total = 0;
  for (;;) {
    int victim = -1;
    for (std::size_t m = 0; m < f.members.size() && victim < 0; ++m) {
      const auto& mem = f.members[m];
      if (f.joints[mem.a].frozen && f.joints[mem.b].frozen) continue;
      const double L = f.length(int(m));
      if (L < 1e-9) {
        victim = int(m);
        break;
      }
      double nbr = 0;
      for (std::size_t o = 0; o < f.members.size(); ++o) {
        if (o == m) continue;
        const auto& om = f.members[o];
        if (om.a == mem.a || om.a == mem.b || om.b == mem.a || om.b == mem.b)
          nbr += f.length(int(o));
      }
      if (nbr > 0 && L < ratio * nbr) victim = int(m);
    }
    if (victim < 0) break;
    const int a = f.members[victim].a, b = f.members[victim].b;
    const int keep = std::min(a, b), gone = std::max(a, b);
    auto& jk = f.joints[keep];
    const auto& jg = f.joints[gone];
    if (jk.frozen && !jg.frozen) {
      // keep position
    } else if (jg.frozen && !jk.frozen) {
      jk.x = jg.x;
    } else {
      jk.x = 0.5 * (jk.x + jg.x);
    }
    jk.load += jg.load;
    for (int dof = 0; dof < 6; ++dof) jk.fixed[dof] = jk.fixed[dof] || jg.fixed[dof];
    jk.frozen = jk.frozen || jg.frozen;
    f.members.erase(f.members.begin() + victim);
    for (auto& mem : f.members) {
      if (mem.a == gone) mem.a = keep;
      if (mem.b == gone) mem.b = keep;
      if (mem.a > gone) --mem.a;
      if (mem.b > gone) --mem.b;
    }
    f.joints.erase(f.joints.begin() + gone);
    std::erase_if(f.members, [](const FrameMember& m) { return m.a == m.b; });
    // combine parallel duplicates by section area
    for (std::size_t i = 0; i < f.members.size(); ++i) {
      const auto pi = std::minmax(f.members[i].a, f.members[i].b);
      for (std::size_t j = f.members.size(); j-- > i + 1;) {
        const auto pj = std::minmax(f.members[j].a, f.members[j].b);
        if (pi == pj) {
          f.members[i].d = std::sqrt(f.members[i].d * f.members[i].d +
                                     f.members[j].d * f.members[j].d);
          f.members.erase(f.members.begin() + j);
        }
      }
    }
    ++total;
  }
  // drop joints that lost all members (only unflagged ones can)
  std::vector<int> refs(f.joints.size(), 0);
  for (const auto& m : f.members) {
    ++refs[m.a];
    ++refs[m.b];
  }
  for (int j = int(f.joints.size()); j-- > 0;) {
    if (refs[j] > 0) continue;
    if (f.joints[j].any_fixed() || f.joints[j].load.norm() > 0)
      throw std::runtime_error("merge_members: boundary joint lost all members");
    f.joints.erase(f.joints.begin() + j);
    for (auto& m : f.members) {
      if (m.a > j) --m.a;
      if (m.b > j) --m.b;
    }
  }
  return total;
}

AlternateReport alternate_optimize(FrameModel& f, const ObstacleSet* obs,
                                   const AlternateOptions& opt) {
  AlternateReport rep;
  scale_to_volume(f, f.volume_target);
  auto record = [&](const std::string& label) {
    const FrameSolution s = solve_frame(f);
    rep.labels.push_back(label);
    rep.milestones.push_back(s.compliance);
    rep.volumes.push_back(f.volume());
    rep.member_counts.push_back(int(f.members.size()));
  };
  record("initial");
  size_optimize(f, opt.inner);
  record("S");
  double prev = rep.milestones.back();
  for (int cycle = 1; cycle <= opt.max_cycles; ++cycle) {
    rep.cycles = cycle;
    layout_optimize(f, obs, opt.inner);
    if (merge_members(f, opt.merge_ratio) > 0) scale_to_volume(f, f.volume_target);
    record("L");
    size_optimize(f, opt.inner);
    record("S");
    const double now = rep.milestones.back();
    if (std::abs(prev - now) <= opt.cycle_rel_tol * std::abs(prev)) break;
    prev = now;
  }
  return rep;
}

StressReport stress_report(const FrameModel& f, const FrameSolution& s) {
  StressReport rep;
  rep.axial_stress.resize(f.members.size());
  for (std::size_t m = 0; m < f.members.size(); ++m) {
    const auto& mem = f.members[m];
    const Vec3 delta = f.joints[mem.b].x - f.joints[mem.a].x;
    const double L = delta.norm();
    const Eigen::Matrix3d R = member_rotation(delta);
    Eigen::Matrix<double, 12, 1> ul;
    const auto ue = element_u(f, s.u, int(m));
    for (int blk = 0; blk < 4; ++blk)
      ul.segment<3>(3 * blk) = R * ue.segment<3>(3 * blk);
    const Coeffs c = coeffs_at(f.material, L, mem.d);
    const double stretch = ul(6) - ul(0);
    const double N = c.ax * stretch;
    rep.axial_stress[m] = std::abs(N) / section_area(mem.d);
    rep.energy_axial += 0.5 * c.ax * stretch * stretch;
    const double twist = ul(9) - ul(3);
    rep.energy_torsion += 0.5 * c.to * twist * twist;
    const Mat12 Kl = member_stiffness_local(f.material, L, mem.d);
    double bend = 0;
    const int plane_xy[4] = {1, 5, 7, 11}, plane_xz[4] = {2, 4, 8, 10};
    for (const int* ix : {plane_xy, plane_xz})
      for (int r = 0; r < 4; ++r)
        for (int q = 0; q < 4; ++q) bend += 0.5 * ul(ix[r]) * Kl(ix[r], ix[q]) * ul(ix[q]);
    rep.energy_bending += bend;
  }
  const auto& a = rep.axial_stress;
  rep.min_stress = *std::min_element(a.begin(), a.end());
  rep.max_stress = *std::max_element(a.begin(), a.end());
  rep.mean_stress = std::accumulate(a.begin(), a.end(), 0.0) / double(a.size());
  double var = 0;
  for (double v : a) var += (v - rep.mean_stress) * (v - rep.mean_stress);
  rep.std_stress = std::sqrt(var / double(a.size()));
  return rep;
}

FrameModel to_frame(const FrameGraph& g, const FrameMaterial& mat,
                    double volume_target) {
  if (g.nodes.empty() || g.edges.empty())
    throw std::runtime_error("to_frame: empty graph");
  FrameModel f;
  f.material = mat;
  f.volume_target = volume_target;
  f.joints.resize(g.nodes.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const auto& n = g.nodes[i];
    auto& j = f.joints[i];
    for (int a = 0; a < 3; ++a)
      j.x(a) = g.grid.origin[a] + n.pos[a] * g.grid.spacing[a];
    if (n.dirichlet) {
      j.fixed.fill(true);
      j.frozen = true;
    }
    if (n.loaded) {
      for (int a = 0; a < 3; ++a) j.load(a) = n.force[a];
      j.frozen = true;
    }
  }
  double total_len = 0;
  f.members.reserve(g.edges.size());
  for (const auto& e : g.edges) {
    if (e.a == e.b) throw std::runtime_error("to_frame: self-loop edge");
    FrameMember m;
    m.a = e.a;
    m.b = e.b;
    f.members.push_back(m);
    const double L = f.length(int(f.members.size()) - 1);
    if (L < 1e-9) throw std::runtime_error("to_frame: zero-length member");
    total_len += L;
  }
  const double d = std::sqrt(4.0 * volume_target / (M_PI * total_len));
  for (auto& m : f.members) m.d = d;
  f.d0 = d;
  return f;
}

void write_frame(const FrameModel& f, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  char buf[512];
  os << "voxframe frame 1\n";
  std::snprintf(buf, sizeof buf, "material %.17g %.17g %.17g\n", f.material.E,
                f.material.nu, f.material.kappa);
  os << buf;
  std::snprintf(buf, sizeof buf, "volume_target %.17g\nd0 %.17g\n",
                f.volume_target, f.d0);
  os << buf;
  if (f.box_lo.allFinite() || f.box_hi.allFinite()) {
    std::snprintf(buf, sizeof buf, "box %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  f.box_lo(0), f.box_lo(1), f.box_lo(2), f.box_hi(0),
                  f.box_hi(1), f.box_hi(2));
    os << buf;
  }
  os << "joints " << f.joints.size() << '\n';
  for (const auto& j : f.joints) {
    std::string fx;
    for (bool b : j.fixed) fx += b ? '1' : '0';
    std::snprintf(buf, sizeof buf,
                  "%.17g %.17g %.17g %s %d %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  j.x(0), j.x(1), j.x(2), fx.c_str(), j.frozen ? 1 : 0, j.load(0),
                  j.load(1), j.load(2), j.load(3), j.load(4), j.load(5));
    os << buf;
  }
  os << "members " << f.members.size() << '\n';
  for (const auto& m : f.members) {
    std::snprintf(buf, sizeof buf, "%d %d %.17g\n", m.a, m.b, m.d);
    os << buf;
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

FrameModel read_frame(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::string line, word;
  std::getline(is, line);
  if (line != "voxframe frame 1")
    throw std::runtime_error("bad frame file header: " + path);
  FrameModel f;
  is >> word >> f.material.E >> f.material.nu >> f.material.kappa;
  is >> word >> f.volume_target;
  is >> word >> f.d0;
  std::size_t nj = 0, nm = 0;
  is >> word;
  if (word == "box") {
    for (int c = 0; c < 3; ++c) is >> f.box_lo(c);
    for (int c = 0; c < 3; ++c) is >> f.box_hi(c);
    is >> word;
  }
  is >> nj;
  f.joints.resize(nj);
  for (auto& j : f.joints) {
    std::string fx;
    int frozen = 0;
    is >> j.x(0) >> j.x(1) >> j.x(2) >> fx >> frozen;
    for (int dof = 0; dof < 6; ++dof) j.fixed[dof] = fx.size() > std::size_t(dof) && fx[dof] == '1';
    j.frozen = frozen != 0;
    for (int dof = 0; dof < 6; ++dof) is >> j.load(dof);
  }
  is >> word >> nm;
  f.members.resize(nm);
  for (auto& m : f.members) is >> m.a >> m.b >> m.d;
  if (!is) throw std::runtime_error("truncated frame file: " + path);
  return f;
}

}  // namespace voxframe
