#include "voxframe/topopt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace voxframe {

double TopOptProblem::penalized_E(double rho) const {
  return E_min + std::pow(rho, p) * (E_bar - E_min);
}

void validate(const TopOptProblem& p) {
  if (p.grid.cell_count() == 0) throw std::invalid_argument("topopt: empty grid");
  if (!(p.E_bar > 0) || !(p.E_min > 0) || p.E_min >= p.E_bar)
    throw std::invalid_argument("topopt: need 0 < E_min < E_bar");
  if (!(p.nu > -1.0 && p.nu < 0.5))
    throw std::invalid_argument("topopt: Poisson ratio outside (-1, 0.5)");
  if (!(p.p >= 1.0)) throw std::invalid_argument("topopt: penalization < 1");
  if (!(p.R >= 0.0)) throw std::invalid_argument("topopt: negative filter radius");
  if (!(p.V_f > 0.0 && p.V_f <= 1.0))
    throw std::invalid_argument("topopt: volume fraction outside (0, 1]");
  if (!p.passive.empty() && p.passive.size() != p.grid.cell_count())
    throw std::invalid_argument("topopt: passive mask size mismatch");
  if (!p.passive_rho.empty() && p.passive_rho.size() != p.grid.cell_count())
    throw std::invalid_argument("topopt: passive values size mismatch");
  const std::size_t nn = node_count(p.grid);
  if (p.supports.empty()) throw std::invalid_argument("topopt: no supports");
  for (const auto& s : p.supports)
    if (s.node >= nn || s.dof < 0 || s.dof > 2)
      throw std::invalid_argument("topopt: support out of range");
  double load_norm = 0;
  for (const auto& l : p.loads) {
    if (l.node >= nn) throw std::invalid_argument("topopt: load out of range");
    load_norm += l.f[0] * l.f[0] + l.f[1] * l.f[1] + l.f[2] * l.f[2];
  }
  if (!(load_norm > 0)) throw std::invalid_argument("topopt: no nonzero load");
}

Eigen::Matrix<double, 24, 24> hex8_stiffness(double E, double nu,
                                             const std::array<double, 3>& spacing) {
  if (!(E > 0) || !(nu > -1.0 && nu < 0.5) || !(spacing[0] > 0) ||
      !(spacing[1] > 0) || !(spacing[2] > 0))
    throw std::invalid_argument("hex8_stiffness: invalid parameters");
  const double lam = E * nu / ((1 + nu) * (1 - 2 * nu));
  const double G = E / (2 * (1 + nu));
  Eigen::Matrix<double, 6, 6> C = Eigen::Matrix<double, 6, 6>::Zero();
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) C(a, b) = lam;
    C(a, a) = lam + 2 * G;
    C(3 + a, 3 + a) = G;
  }
  // corner signs in the usual hexahedron ordering (bottom loop, then top)
  static const int sgn[8][3] = {{-1, -1, -1}, {1, -1, -1}, {1, 1, -1}, {-1, 1, -1},
                                {-1, -1, 1},  {1, -1, 1},  {1, 1, 1},  {-1, 1, 1}};
  const double g = 1.0 / std::sqrt(3.0);
  const double detJ = spacing[0] * spacing[1] * spacing[2] / 8.0;
  Eigen::Matrix<double, 24, 24> K = Eigen::Matrix<double, 24, 24>::Zero();
  for (int gp = 0; gp < 8; ++gp) {
    const double xi[3] = {g * sgn[gp][0], g * sgn[gp][1], g * sgn[gp][2]};
    Eigen::Matrix<double, 6, 24> B = Eigen::Matrix<double, 6, 24>::Zero();
    for (int n = 0; n < 8; ++n) {
      double dN[3];  // derivatives in physical coordinates
      for (int a = 0; a < 3; ++a) {
        const int b = (a + 1) % 3, c = (a + 2) % 3;
        dN[a] = sgn[n][a] * (1 + sgn[n][b] * xi[b]) * (1 + sgn[n][c] * xi[c]) /
                8.0 * (2.0 / spacing[a]);
      }
      const int col = 3 * n;
      B(0, col + 0) = dN[0];
      B(1, col + 1) = dN[1];
      B(2, col + 2) = dN[2];
      B(3, col + 0) = dN[1];
      B(3, col + 1) = dN[0];
      B(4, col + 1) = dN[2];
      B(4, col + 2) = dN[1];
      B(5, col + 0) = dN[2];
      B(5, col + 2) = dN[0];
    }
    K.noalias() += B.transpose() * C * B * detJ;
  }
  return K;
}

// ---- density filter --------------------------------------------------------

namespace {

// unnormalized convolution with the symmetric hat stencil
std::vector<double> hat_convolve(const DensityFilter& F,
                                 const std::vector<double>& x) {
  const VoxelGrid& g = F.grid;
  std::vector<double> y(g.cell_count(), 0.0);
  for (int k = 0; k < g.nz(); ++k)
    for (int j = 0; j < g.ny(); ++j)
      for (int i = 0; i < g.nx(); ++i) {
        double acc = 0;
        for (const auto& t : F.taps) {
          const int ii = i + t.di, jj = j + t.dj, kk = k + t.dk;
          if (g.in_bounds(ii, jj, kk)) acc += t.w * x[g.index(ii, jj, kk)];
        }
        y[g.index(i, j, k)] = acc;
      }
  return y;
}

}  // namespace

DensityFilter make_filter(const VoxelGrid& grid, double R) {
  if (!(R >= 0)) throw std::invalid_argument("make_filter: negative radius");
  DensityFilter F;
  F.grid = grid;
  const int ri = R > 0 ? int(std::ceil(R / grid.spacing[0])) : 0;
  const int rj = R > 0 ? int(std::ceil(R / grid.spacing[1])) : 0;
  const int rk = R > 0 ? int(std::ceil(R / grid.spacing[2])) : 0;
  for (int dk = -rk; dk <= rk; ++dk)
    for (int dj = -rj; dj <= rj; ++dj)
      for (int di = -ri; di <= ri; ++di) {
        const double dist = std::sqrt(std::pow(di * grid.spacing[0], 2) +
                                      std::pow(dj * grid.spacing[1], 2) +
                                      std::pow(dk * grid.spacing[2], 2));
        if (dist < R) F.taps.push_back({di, dj, dk, R - dist});
      }
  // degenerate stencils reduce to the exact identity
  if (F.taps.size() <= 1) F.taps.assign(1, {0, 0, 0, 1.0});
  F.row_sum = hat_convolve(F, std::vector<double>(grid.cell_count(), 1.0));
  return F;
}

std::vector<double> filter_apply(const DensityFilter& F,
                                 const std::vector<double>& rho) {
  if (rho.size() != F.grid.cell_count())
    throw std::invalid_argument("filter_apply: size mismatch");
  std::vector<double> y = hat_convolve(F, rho);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= F.row_sum[i];
  return y;
}

std::vector<double> filter_apply_transpose(const DensityFilter& F,
                                           const std::vector<double>& s) {
  if (s.size() != F.grid.cell_count())
    throw std::invalid_argument("filter_apply_transpose: size mismatch");
  std::vector<double> scaled(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) scaled[i] = s[i] / F.row_sum[i];
  return hat_convolve(F, scaled);
}

std::vector<double> filter_column_sums(const DensityFilter& F) {
  return filter_apply_transpose(F, std::vector<double>(F.grid.cell_count(), 1.0));
}

DensityField filter_densities(const DensityField& field, double R) {
  DensityFilter F = make_filter(field.grid, R);
  DensityField out = field;
  out.rho = filter_apply(F, field.rho);
  return out;
}

// ---- matrix-free FEM and geometric multigrid -------------------------------

namespace {

using Vec24 = Eigen::Matrix<double, 24, 1>;
using Mat24 = Eigen::Matrix<double, 24, 24>;

struct Level {
  VoxelGrid grid;
  Mat24 K0;                         // unit-modulus element matrix
  std::vector<double> E;            // per-element modulus
  std::vector<std::uint8_t> fixed;  // per dof
  Eigen::VectorXd diag;             // assembled diagonal, 1 on fixed dofs
  double lambda_max = 0;            // top of spec(D^-1 K)
  std::size_t node_off[8];          // element corner nodes in hex order
  // coarsest level only
  bool direct = false;
  Eigen::LDLT<Eigen::MatrixXd> factor;
};

std::size_t dof_count(const VoxelGrid& g) { return 3 * node_count(g); }

void corner_offsets(const VoxelGrid& g, std::size_t off[8]) {
  const std::size_t sx = g.nx() + 1;
  const std::size_t sxy = sx * (g.ny() + 1);
  off[0] = 0;
  off[1] = 1;
  off[2] = 1 + sx;
  off[3] = sx;
  off[4] = sxy;
  off[5] = 1 + sxy;
  off[6] = 1 + sx + sxy;
  off[7] = sx + sxy;
}

// y = K x with the zero row/column treatment of fixed dofs: their equations
// read y_i = x_i and they do not couple into the rest.
void apply_K(const Level& L, const Eigen::VectorXd& x, Eigen::VectorXd& y) {
  const VoxelGrid& g = L.grid;
  Eigen::VectorXd xm = x;
  for (std::size_t d = 0; d < L.fixed.size(); ++d)
    if (L.fixed[d]) xm(d) = 0;
  y.setZero(x.size());
  Vec24 xe, ye;
  for (int k = 0; k < g.nz(); ++k)
    for (int j = 0; j < g.ny(); ++j) {
      std::size_t node = node_index(g, 0, j, k);
      std::size_t cell = g.index(0, j, k);
      for (int i = 0; i < g.nx(); ++i, ++node, ++cell) {
        for (int n = 0; n < 8; ++n) {
          const std::size_t base = 3 * (node + L.node_off[n]);
          xe(3 * n + 0) = xm(base + 0);
          xe(3 * n + 1) = xm(base + 1);
          xe(3 * n + 2) = xm(base + 2);
        }
        ye.noalias() = L.K0 * xe;
        const double E = L.E[cell];
        for (int n = 0; n < 8; ++n) {
          const std::size_t base = 3 * (node + L.node_off[n]);
          y(base + 0) += E * ye(3 * n + 0);
          y(base + 1) += E * ye(3 * n + 1);
          y(base + 2) += E * ye(3 * n + 2);
        }
      }
    }
  for (std::size_t d = 0; d < L.fixed.size(); ++d)
    if (L.fixed[d]) y(d) = x(d);
}

void assemble_diag(Level& L) {
  const VoxelGrid& g = L.grid;
  L.diag.setZero(dof_count(g));
  const Vec24 kd = L.K0.diagonal();
  for (int k = 0; k < g.nz(); ++k)
    for (int j = 0; j < g.ny(); ++j) {
      std::size_t node = node_index(g, 0, j, k);
      std::size_t cell = g.index(0, j, k);
      for (int i = 0; i < g.nx(); ++i, ++node, ++cell) {
        const double E = L.E[cell];
        for (int n = 0; n < 8; ++n) {
          const std::size_t base = 3 * (node + L.node_off[n]);
          L.diag(base + 0) += E * kd(3 * n + 0);
          L.diag(base + 1) += E * kd(3 * n + 1);
          L.diag(base + 2) += E * kd(3 * n + 2);
        }
      }
    }
  for (std::size_t d = 0; d < L.fixed.size(); ++d)
    if (L.fixed[d]) L.diag(d) = 1.0;
}

// power iteration for the top of spec(D^-1 K), Rayleigh quotient taken in the
// D inner product
void estimate_lambda_max(Level& L) {
  const std::size_t n = dof_count(L.grid);
  Eigen::VectorXd z = Eigen::VectorXd::Ones(n), Kz(n);
  for (std::size_t d = 0; d < L.fixed.size(); ++d)
    if (L.fixed[d]) z(d) = 0;
  double lam = 1;
  if (!(z.norm() > 0)) {
    L.lambda_max = lam;
    return;
  }
  for (int it = 0; it < 8; ++it) {
    z /= z.norm();
    apply_K(L, z, Kz);
    const double num = z.dot(Kz), den = z.dot(L.diag.cwiseProduct(z));
    if (num > 0 && den > 0) lam = num / den;
    z = Kz.cwiseQuotient(L.diag);
  }
  L.lambda_max = 1.1 * lam;
}

// Chebyshev polynomial smoothing on [lambda_max/4, lambda_max] of D^-1 K.
void smooth(const Level& L, Eigen::VectorXd& x, const Eigen::VectorXd& b,
            int degree) {
  const double lmax = L.lambda_max, lmin = L.lambda_max / 4.0;
  const double theta = (lmax + lmin) / 2, delta = (lmax - lmin) / 2;
  const double sigma = theta / delta;
  double rho = 1.0 / sigma;
  Eigen::VectorXd r(x.size()), d(x.size());
  apply_K(L, x, r);
  r = b - r;
  for (std::size_t i = 0; i < L.fixed.size(); ++i)
    if (L.fixed[i]) r(i) = 0;
  d = r.cwiseQuotient(L.diag) / theta;
  for (int it = 0;; ++it) {
    x += d;
    if (it + 1 >= degree) break;
    apply_K(L, x, r);
    r = b - r;
    for (std::size_t i = 0; i < L.fixed.size(); ++i)
      if (L.fixed[i]) r(i) = 0;
    const double rho_new = 1.0 / (2 * sigma - rho);
    d = (rho_new * rho) * d + (2 * rho_new / delta) * r.cwiseQuotient(L.diag);
    rho = rho_new;
  }
}

// trilinear prolongation from the coarse node lattice (c has ceil-halved cell
// counts); restriction is the exact transpose
void prolong_add(const Level& fine, const Level& coarse,
                 const Eigen::VectorXd& ec, Eigen::VectorXd& xf) {
  const int nfx = fine.grid.nx(), nfy = fine.grid.ny(), nfz = fine.grid.nz();
  for (int k = 0; k <= nfz; ++k)
    for (int j = 0; j <= nfy; ++j)
      for (int i = 0; i <= nfx; ++i) {
        const std::size_t fn = node_index(fine.grid, i, j, k);
        for (int bk = 0; bk < (k % 2 ? 2 : 1); ++bk)
          for (int bj = 0; bj < (j % 2 ? 2 : 1); ++bj)
            for (int bi = 0; bi < (i % 2 ? 2 : 1); ++bi) {
              const int ci = (i + (i % 2 ? (bi ? 1 : -1) : 0)) / 2;
              const int cj = (j + (j % 2 ? (bj ? 1 : -1) : 0)) / 2;
              const int ck = (k + (k % 2 ? (bk ? 1 : -1) : 0)) / 2;
              const double w = (i % 2 ? 0.5 : 1.0) * (j % 2 ? 0.5 : 1.0) *
                               (k % 2 ? 0.5 : 1.0);
              const std::size_t cn = node_index(coarse.grid, ci, cj, ck);
              for (int c = 0; c < 3; ++c)
                xf(3 * fn + c) += w * ec(3 * cn + c);
            }
      }
}

void restrict_to(const Level& fine, const Level& coarse,
                 const Eigen::VectorXd& rf, Eigen::VectorXd& rc) {
  rc.setZero(dof_count(coarse.grid));
  const int nfx = fine.grid.nx(), nfy = fine.grid.ny(), nfz = fine.grid.nz();
  for (int k = 0; k <= nfz; ++k)
    for (int j = 0; j <= nfy; ++j)
      for (int i = 0; i <= nfx; ++i) {
        const std::size_t fn = node_index(fine.grid, i, j, k);
        for (int bk = 0; bk < (k % 2 ? 2 : 1); ++bk)
          for (int bj = 0; bj < (j % 2 ? 2 : 1); ++bj)
            for (int bi = 0; bi < (i % 2 ? 2 : 1); ++bi) {
              const int ci = (i + (i % 2 ? (bi ? 1 : -1) : 0)) / 2;
              const int cj = (j + (j % 2 ? (bj ? 1 : -1) : 0)) / 2;
              const int ck = (k + (k % 2 ? (bk ? 1 : -1) : 0)) / 2;
              const double w = (i % 2 ? 0.5 : 1.0) * (j % 2 ? 0.5 : 1.0) *
                               (k % 2 ? 0.5 : 1.0);
              const std::size_t cn = node_index(coarse.grid, ci, cj, ck);
              for (int c = 0; c < 3; ++c)
                rc(3 * cn + c) += w * rf(3 * fn + c);
            }
      }
  for (std::size_t d = 0; d < coarse.fixed.size(); ++d)
    if (coarse.fixed[d]) rc(d) = 0;
}

void factor_coarsest(Level& L) {
  const std::size_t n = dof_count(L.grid);
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
  const VoxelGrid& g = L.grid;
  for (int k = 0; k < g.nz(); ++k)
    for (int j = 0; j < g.ny(); ++j)
      for (int i = 0; i < g.nx(); ++i) {
        const std::size_t node = node_index(g, i, j, k);
        const double E = L.E[g.index(i, j, k)];
        std::size_t dof[24];
        for (int n8 = 0; n8 < 8; ++n8)
          for (int c = 0; c < 3; ++c)
            dof[3 * n8 + c] = 3 * (node + L.node_off[n8]) + c;
        for (int a = 0; a < 24; ++a)
          for (int b = 0; b < 24; ++b) K(dof[a], dof[b]) += E * L.K0(a, b);
      }
  for (std::size_t d = 0; d < n; ++d)
    if (L.fixed[d]) {
      K.row(d).setZero();
      K.col(d).setZero();
      K(d, d) = 1.0;
    }
  L.factor.compute(K);
  L.direct = true;
}

constexpr int kChebDegree = 3;
constexpr std::size_t kDirectDofLimit = 1000;

struct Hierarchy {
  std::vector<Level> levels;

  void vcycle(std::size_t l, const Eigen::VectorXd& b, Eigen::VectorXd& x) const {
    const Level& L = levels[l];
    if (L.direct) {
      x = L.factor.solve(b);
      return;
    }
    x.setZero(b.size());
    smooth(L, x, b, kChebDegree);
    Eigen::VectorXd r(b.size());
    apply_K(L, x, r);
    r = b - r;
    for (std::size_t d = 0; d < L.fixed.size(); ++d)
      if (L.fixed[d]) r(d) = 0;
    Eigen::VectorXd rc, ec;
    restrict_to(L, levels[l + 1], r, rc);
    vcycle(l + 1, rc, ec);
    for (std::size_t d = 0; d < levels[l + 1].fixed.size(); ++d)
      if (levels[l + 1].fixed[d]) ec(d) = 0;
    prolong_add(L, levels[l + 1], ec, x);
    for (std::size_t d = 0; d < L.fixed.size(); ++d)
      if (L.fixed[d]) x(d) = 0;
    smooth(L, x, b, kChebDegree);
  }
};

Hierarchy build_hierarchy(const TopOptProblem& p,
                          const std::vector<double>& rho_hat,
                          const std::vector<std::uint8_t>& fixed) {
  Hierarchy h;
  Level finest;
  finest.grid = p.grid;
  finest.K0 = hex8_stiffness(1.0, p.nu, p.grid.spacing);
  corner_offsets(p.grid, finest.node_off);
  finest.E.resize(p.grid.cell_count());
  for (std::size_t i = 0; i < finest.E.size(); ++i)
    finest.E[i] = p.penalized_E(rho_hat[i]);
  finest.fixed = fixed;
  h.levels.push_back(std::move(finest));

  while (true) {
    Level& L = h.levels.back();
    const VoxelGrid& g = L.grid;
    const bool can_coarsen = g.nx() + g.ny() + g.nz() > 3;
    if (dof_count(g) <= kDirectDofLimit || !can_coarsen) break;
    Level c;
    c.grid.dims = {(g.nx() + 1) / 2, (g.ny() + 1) / 2, (g.nz() + 1) / 2};
    for (int a = 0; a < 3; ++a) {
      c.grid.dims[a] = std::max(1, c.grid.dims[a]);
      c.grid.spacing[a] = g.spacing[a] * double(g.dims[a]) / c.grid.dims[a];
    }
    c.grid.origin = g.origin;
    c.K0 = hex8_stiffness(1.0, p.nu, c.grid.spacing);
    corner_offsets(c.grid, c.node_off);
    c.E.assign(c.grid.cell_count(), 0.0);
    for (int k = 0; k < c.grid.nz(); ++k)
      for (int j = 0; j < c.grid.ny(); ++j)
        for (int i = 0; i < c.grid.nx(); ++i) {
          double sum = 0;
          int cnt = 0;
          for (int bk = 0; bk < 2; ++bk)
            for (int bj = 0; bj < 2; ++bj)
              for (int bi = 0; bi < 2; ++bi) {
                const int fi = 2 * i + bi, fj = 2 * j + bj, fk = 2 * k + bk;
                if (g.in_bounds(fi, fj, fk)) {
                  sum += L.E[g.index(fi, fj, fk)];
                  ++cnt;
                }
              }
          c.E[c.grid.index(i, j, k)] = sum / cnt;
        }
    c.fixed.assign(dof_count(c.grid), 0);
    std::size_t nfixed = 0;
    for (int k = 0; k <= c.grid.nz(); ++k)
      for (int j = 0; j <= c.grid.ny(); ++j)
        for (int i = 0; i <= c.grid.nx(); ++i) {
          const int fi = std::min(2 * i, g.nx()), fj = std::min(2 * j, g.ny()),
                    fk = std::min(2 * k, g.nz());
          const std::size_t fn = node_index(g, fi, fj, fk);
          const std::size_t cn = node_index(c.grid, i, j, k);
          for (int d = 0; d < 3; ++d)
            if (L.fixed[3 * fn + d]) {
              c.fixed[3 * cn + d] = 1;
              ++nfixed;
            }
        }
    if (nfixed == 0) break;  // keep the previous level as the coarsest
    h.levels.push_back(std::move(c));
  }

  for (std::size_t l = 0; l < h.levels.size(); ++l) {
    assemble_diag(h.levels[l]);
    if (l + 1 == h.levels.size())
      factor_coarsest(h.levels[l]);
    else
      estimate_lambda_max(h.levels[l]);
  }
  return h;
}

std::vector<std::uint8_t> fixed_dofs(const TopOptProblem& p) {
  std::vector<std::uint8_t> fixed(3 * node_count(p.grid), 0);
  for (const auto& s : p.supports) fixed[3 * s.node + s.dof] = 1;
  return fixed;
}

}  // namespace

FemState solve_equilibrium(const TopOptProblem& p,
                           const std::vector<double>& rho_hat,
                           const SolveOptions& opt) {
  validate(p);
  if (rho_hat.size() != p.grid.cell_count())
    throw std::invalid_argument("solve_equilibrium: density size mismatch");
  const std::size_t n = 3 * node_count(p.grid);
  const std::vector<std::uint8_t> fixed = fixed_dofs(p);

  FemState st;
  st.f.setZero(n);
  for (const auto& l : p.loads)
    for (int c = 0; c < 3; ++c) st.f(3 * l.node + c) += l.f[c];
  for (std::size_t d = 0; d < n; ++d)
    if (fixed[d]) st.f(d) = 0;
  const double fnorm = st.f.norm();
  if (!(fnorm > 0)) throw std::invalid_argument("solve_equilibrium: zero load");

  const bool use_mg = opt.preconditioner != "jacobi";
  Hierarchy h;
  Level jac;
  if (use_mg) {
    h = build_hierarchy(p, rho_hat, fixed);
  } else {
    jac.grid = p.grid;
    jac.K0 = hex8_stiffness(1.0, p.nu, p.grid.spacing);
    corner_offsets(p.grid, jac.node_off);
    jac.E.resize(p.grid.cell_count());
    for (std::size_t i = 0; i < jac.E.size(); ++i)
      jac.E[i] = p.penalized_E(rho_hat[i]);
    jac.fixed = fixed;
    assemble_diag(jac);
  }
  const Level& L0 = use_mg ? h.levels[0] : jac;

  auto precond = [&](const Eigen::VectorXd& r) -> Eigen::VectorXd {
    Eigen::VectorXd z;
    if (use_mg)
      h.vcycle(0, r, z);
    else
      z = r.cwiseQuotient(L0.diag);
    for (std::size_t d = 0; d < n; ++d)
      if (fixed[d]) z(d) = 0;
    return z;
  };

  Eigen::VectorXd u;
  if (opt.warm && opt.warm->u.size() == Eigen::Index(n))
    u = opt.warm->u;
  else
    u.setZero(n);
  for (std::size_t d = 0; d < n; ++d)
    if (fixed[d]) u(d) = 0;

  const int cap = opt.max_iterations > 0 ? opt.max_iterations : int(10 * n);
  Eigen::VectorXd r(n), q(n);
  apply_K(L0, u, r);
  r = st.f - r;
  Eigen::VectorXd z = precond(r);
  Eigen::VectorXd dir = z;
  double rz = r.dot(z);
  int it = 0;
  double rnorm = r.norm();
  while (rnorm > opt.tol * fnorm) {
    if (it >= cap)
      throw std::runtime_error("solve_equilibrium: iteration cap reached");
    apply_K(L0, dir, q);
    const double dq = dir.dot(q);
    if (!(dq > 0))
      throw std::runtime_error("solve_equilibrium: singular system");
    const double alpha = rz / dq;
    u += alpha * dir;
    r -= alpha * q;
    ++it;
    rnorm = r.norm();
    if (rnorm <= opt.tol * fnorm) {
      apply_K(L0, u, q);  // confirm against the accumulated residual drift
      r = st.f - q;
      rnorm = r.norm();
      if (rnorm <= opt.tol * fnorm) break;
    }
    z = precond(r);
    const double rz_new = r.dot(z);
    dir = z + (rz_new / rz) * dir;
    rz = rz_new;
  }
  st.u = std::move(u);
  st.compliance = st.f.dot(st.u);
  st.iterations = it;
  st.residual = rnorm / fnorm;
  return st;
}

// ---- sensitivities ---------------------------------------------------------

std::vector<double> compliance_sensitivity(const TopOptProblem& p,
                                           const DensityFilter& F,
                                           const std::vector<double>& rho_hat,
                                           const Eigen::VectorXd& u) {
  const VoxelGrid& g = p.grid;
  const Mat24 K0 = hex8_stiffness(1.0, p.nu, g.spacing);
  std::size_t off[8];
  corner_offsets(g, off);
  std::vector<double> s(g.cell_count(), 0.0);
  Vec24 ue;
  for (int k = 0; k < g.nz(); ++k)
    for (int j = 0; j < g.ny(); ++j) {
      std::size_t node = node_index(g, 0, j, k);
      std::size_t cell = g.index(0, j, k);
      for (int i = 0; i < g.nx(); ++i, ++node, ++cell) {
        for (int n = 0; n < 8; ++n) {
          const std::size_t base = 3 * (node + off[n]);
          ue(3 * n + 0) = u(base + 0);
          ue(3 * n + 1) = u(base + 1);
          ue(3 * n + 2) = u(base + 2);
        }
        const double uku = ue.dot(K0 * ue);
        s[cell] = -p.p * std::pow(rho_hat[cell], p.p - 1) * (p.E_bar - p.E_min) * uku;
      }
    }
  std::vector<double> dJ = filter_apply_transpose(F, s);
  for (std::size_t i = 0; i < dJ.size(); ++i) {
    if (p.is_passive(i)) dJ[i] = 0;
    if (dJ[i] > 0) dJ[i] = 0;  // guard round-off; physically <= 0
  }
  return dJ;
}

std::vector<double> compliance_sensitivity(const TopOptProblem& p,
                                           const std::vector<double>& rho_hat,
                                           const Eigen::VectorXd& u) {
  return compliance_sensitivity(p, make_filter(p.grid, p.R), rho_hat, u);
}

std::vector<double> volume_sensitivity(const TopOptProblem& p,
                                       const DensityFilter& F) {
  std::vector<double> c = filter_column_sums(F);
  const double ve = p.grid.cell_volume();
  for (std::size_t i = 0; i < c.size(); ++i)
    c[i] = p.is_passive(i) ? 0.0 : ve * c[i];
  return c;
}

std::vector<double> volume_sensitivity(const TopOptProblem& p) {
  return volume_sensitivity(p, make_filter(p.grid, p.R));
}

// ---- optimality criteria ---------------------------------------------------

std::vector<double> oc_update(const TopOptProblem& p, const DensityFilter& F,
                              const std::vector<double>& rho,
                              const std::vector<double>& dJ,
                              const std::vector<double>& dV,
                              const OcOptions& opt) {
  const std::size_t n = rho.size();
  const std::vector<double> c = filter_column_sums(F);
  const double ve = p.grid.cell_volume();

  auto candidate = [&](double lambda) -> std::vector<double> {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (p.is_passive(i)) {
        x[i] = p.pinned_value(i);
        continue;
      }
      const double B = std::max(0.0, -dJ[i]) / (lambda * std::max(dV[i], 1e-300));
      double xn = rho[i] * std::pow(B, opt.damping);
      xn = std::clamp(xn, rho[i] - opt.move, rho[i] + opt.move);
      x[i] = std::clamp(xn, 0.0, 1.0);
    }
    return x;
  };
  auto fraction = [&](const std::vector<double>& x) {
    double v = 0;
    for (std::size_t i = 0; i < n; ++i) v += c[i] * x[i];
    return v / double(n);
  };

  double lo = opt.lambda_lo, hi = opt.lambda_hi;
  std::vector<double> x = candidate(lo);
  if (fraction(x) < p.V_f - opt.volume_tol)
    throw std::runtime_error("oc_update: multiplier bracket failed low");
  if (fraction(candidate(hi)) > p.V_f + opt.volume_tol)
    throw std::runtime_error("oc_update: multiplier bracket failed high");
  for (int it = 0; it < 200; ++it) {
    const double mid = std::sqrt(lo * hi);
    x = candidate(mid);
    const double v = fraction(x);
    if (std::abs(v - p.V_f) <= opt.volume_tol || hi / lo < 1 + 1e-14) break;
    (v > p.V_f ? lo : hi) = mid;
  }
  return x;
}

// ---- the optimization loop -------------------------------------------------

TopOptResult optimize(const TopOptProblem& p, const TopOptOptions& opt) {
  validate(p);
  const std::size_t n = p.grid.cell_count();
  const DensityFilter F = make_filter(p.grid, p.R);
  const std::vector<double> dV = volume_sensitivity(p, F);

  TopOptResult res;
  res.rho = make_field(p.grid, 0.0);
  res.rho.passive = p.passive;
  std::vector<double>& rho = res.rho.rho;
  for (std::size_t i = 0; i < n; ++i)
    rho[i] = p.is_passive(i) ? p.pinned_value(i) : p.V_f;

  FemState state;
  SolveOptions solver = opt.solver;
  for (int it = 1; it <= opt.max_iterations; ++it) {
    const std::vector<double> rho_hat = filter_apply(F, rho);
    solver.warm = state.u.size() ? &state : nullptr;
    state = solve_equilibrium(p, rho_hat, solver);
    const std::vector<double> dJ = compliance_sensitivity(p, F, rho_hat, state.u);
    const std::vector<double> next = oc_update(p, F, rho, dJ, dV, opt.oc);

    double change = 0, vol = 0;
    for (std::size_t i = 0; i < n; ++i) {
      change = std::max(change, std::abs(next[i] - rho[i]));
      vol += rho_hat[i];
    }
    TopOptIterRecord rec{it, state.compliance, vol / double(n), change,
                         state.iterations};
    res.history.push_back(rec);
    if (opt.on_iteration) opt.on_iteration(rec);
    rho = next;
    res.iterations = it;
    if (change < opt.tol) {
      res.converged = true;
      break;
    }
  }

  res.rho_hat = make_field(p.grid, 0.0);
  res.rho_hat.rho = filter_apply(F, rho);
  solver.warm = state.u.size() ? &state : nullptr;
  res.state = solve_equilibrium(p, res.rho_hat.rho, solver);
  return res;
}

double binary_compliance(const TopOptProblem& p,
                         const std::vector<std::uint8_t>& solid,
                         const SolveOptions& opt) {
  if (solid.size() != p.grid.cell_count())
    throw std::invalid_argument("binary_compliance: size mismatch");
  TopOptProblem q = p;
  q.p = 1.0;
  std::vector<double> rho(solid.size());
  for (std::size_t i = 0; i < solid.size(); ++i) rho[i] = solid[i] ? 1.0 : 0.0;
  return solve_equilibrium(q, rho, opt).compliance;
}

void write_history_csv(const std::vector<TopOptIterRecord>& history,
                       const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "w");
  if (!fp) throw std::runtime_error("write_history_csv: cannot open " + path);
  std::fprintf(fp, "iteration,J,volume_fraction\n");
  for (const auto& r : history)
    std::fprintf(fp, "%d,%.17g,%.17g\n", r.iteration, r.J, r.volume_fraction);
  std::fclose(fp);
}

}  // namespace voxframe
