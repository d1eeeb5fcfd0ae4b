#include "voxframe/topopt.hpp"

#include <random>

#include "doctest.h"

using namespace voxframe;

namespace {

// O(n^2) filter oracle straight from the definition
std::vector<double> brute_filter(const VoxelGrid& g, double R,
                                 const std::vector<double>& rho) {
  std::vector<double> out(rho.size(), 0.0);
  for (std::size_t a = 0; a < rho.size(); ++a) {
    const auto ca = g.coords(a);
    const auto xa = g.centroid(ca[0], ca[1], ca[2]);
    double num = 0, den = 0;
    for (std::size_t b = 0; b < rho.size(); ++b) {
      const auto cb = g.coords(b);
      const auto xb = g.centroid(cb[0], cb[1], cb[2]);
      const double dist = std::sqrt(std::pow(xa[0] - xb[0], 2) +
                                    std::pow(xa[1] - xb[1], 2) +
                                    std::pow(xa[2] - xb[2], 2));
      if (dist < R) {
        num += (R - dist) * rho[b];
        den += R - dist;
      }
    }
    out[a] = den > 0 ? num / den : rho[a];
  }
  return out;
}

// dense reference: assemble K(rho_hat) element by element, eliminate the
// constrained dofs, factor with LDLT
struct DenseRef {
  Eigen::MatrixXd K;
  Eigen::VectorXd f;
  std::vector<std::uint8_t> fixed;

  DenseRef(const TopOptProblem& p, const std::vector<double>& rho_hat) {
    const VoxelGrid& g = p.grid;
    const std::size_t n = 3 * node_count(g);
    K = Eigen::MatrixXd::Zero(n, n);
    const auto K0 = hex8_stiffness(1.0, p.nu, g.spacing);
    const std::size_t sx = g.nx() + 1, sxy = sx * (g.ny() + 1);
    const std::size_t off[8] = {0,       1,       1 + sx,       sx,
                                sxy,     1 + sxy, 1 + sx + sxy, sx + sxy};
    for (int k = 0; k < g.nz(); ++k)
      for (int j = 0; j < g.ny(); ++j)
        for (int i = 0; i < g.nx(); ++i) {
          const double E = p.penalized_E(rho_hat[g.index(i, j, k)]);
          const std::size_t base = node_index(g, i, j, k);
          for (int a = 0; a < 24; ++a)
            for (int b = 0; b < 24; ++b)
              K(3 * (base + off[a / 3]) + a % 3, 3 * (base + off[b / 3]) + b % 3) +=
                  E * K0(a, b);
        }
    f.setZero(n);
    for (const auto& l : p.loads)
      for (int c = 0; c < 3; ++c) f(3 * l.node + c) += l.f[c];
    fixed.assign(n, 0);
    for (const auto& s : p.supports) fixed[3 * s.node + s.dof] = 1;
    for (std::size_t d = 0; d < n; ++d)
      if (fixed[d]) {
        K.row(d).setZero();
        K.col(d).setZero();
        K(d, d) = 1.0;
        f(d) = 0;
      }
  }

  Eigen::VectorXd solve() const { return Eigen::LDLT<Eigen::MatrixXd>(K).solve(f); }
  double compliance() const { return f.dot(solve()); }
};

// J(rho) through the independent dense path (brute filter + dense solve)
double dense_J(const TopOptProblem& p, const std::vector<double>& rho) {
  return DenseRef(p, brute_filter(p.grid, p.R, rho)).compliance();
}

// box domain clamped at x=0, a -y line load across the right face mid-height
TopOptProblem cantilever_problem(int nx, int ny, int nz, double V_f, double R) {
  TopOptProblem p;
  p.grid.dims = {nx, ny, nz};
  p.V_f = V_f;
  p.R = R;
  for (int k = 0; k <= nz; ++k)
    for (int j = 0; j <= ny; ++j)
      for (int d = 0; d < 3; ++d)
        p.supports.push_back({node_index(p.grid, 0, j, k), d});
  const int jm = ny / 2;
  for (int k = 0; k <= nz; ++k)
    p.loads.push_back({node_index(p.grid, nx, jm, k), {0, -100.0 / (nz + 1), 0}});
  return p;
}

std::vector<double> random_rho(std::mt19937& rng, std::size_t n, double lo = 0.05,
                               double hi = 0.95) {
  std::uniform_real_distribution<double> uni(lo, hi);
  std::vector<double> rho(n);
  for (auto& r : rho) r = uni(rng);
  return rho;
}

}  // namespace

TEST_CASE("hex8 stiffness: linearity, symmetry, rigid modes") {
  const std::array<double, 3> h{1.0, 1.0, 1.0};
  const auto K1 = hex8_stiffness(1.0, 0.3, h);
  const auto K2 = hex8_stiffness(2.0, 0.3, h);
  CHECK((K2 - 2.0 * K1).cwiseAbs().maxCoeff() <= 1e-12 * K1.cwiseAbs().maxCoeff());
  CHECK((K1 - K1.transpose()).cwiseAbs().maxCoeff() <=
        1e-12 * K1.cwiseAbs().maxCoeff());

  // translations and infinitesimal rotations are in the trilinear space
  const std::array<double, 3> ha{0.7, 1.3, 2.1};
  const auto K = hex8_stiffness(5.0, 0.25, ha);
  static const int sgn[8][3] = {{-1, -1, -1}, {1, -1, -1}, {1, 1, -1}, {-1, 1, -1},
                                {-1, -1, 1},  {1, -1, 1},  {1, 1, 1},  {-1, 1, 1}};
  Eigen::Matrix<double, 24, 6> modes;
  for (int n = 0; n < 8; ++n) {
    const Eigen::Vector3d x(sgn[n][0] * ha[0] / 2, sgn[n][1] * ha[1] / 2,
                            sgn[n][2] * ha[2] / 2);
    for (int a = 0; a < 3; ++a) {
      Eigen::Vector3d t = Eigen::Vector3d::Zero();
      t(a) = 1;
      modes.block<3, 1>(3 * n, a) = t;
      modes.block<3, 1>(3 * n, 3 + a) = t.cross(x);
    }
  }
  CHECK((K * modes).cwiseAbs().maxCoeff() <= 1e-10 * K.cwiseAbs().maxCoeff());

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 24, 24>> eig(K);
  int zero = 0;
  for (int i = 0; i < 24; ++i)
    if (eig.eigenvalues()(i) < 1e-9 * eig.eigenvalues()(23)) ++zero;
  CHECK(zero == 6);
  CHECK(eig.eigenvalues()(0) > -1e-9 * eig.eigenvalues()(23));

  CHECK_THROWS_AS(hex8_stiffness(-1.0, 0.3, h), std::invalid_argument);
  CHECK_THROWS_AS(hex8_stiffness(1.0, 0.5, h), std::invalid_argument);
}

TEST_CASE("hex8 stiffness: constant-strain patch energy is exact") {
  const double E = 7.0, nu = 0.28;
  const std::array<double, 3> h{0.9, 1.4, 0.6};
  const auto K = hex8_stiffness(E, nu, h);
  // u = A x with symmetric A -> strain = A everywhere, energy = eps:C:eps * V
  Eigen::Matrix3d A;
  A << 0.3, 0.1, -0.2, 0.1, -0.4, 0.05, -0.2, 0.05, 0.2;
  static const int sgn[8][3] = {{-1, -1, -1}, {1, -1, -1}, {1, 1, -1}, {-1, 1, -1},
                                {-1, -1, 1},  {1, -1, 1},  {1, 1, 1},  {-1, 1, 1}};
  Eigen::Matrix<double, 24, 1> u;
  for (int n = 0; n < 8; ++n) {
    const Eigen::Vector3d x(sgn[n][0] * h[0] / 2, sgn[n][1] * h[1] / 2,
                            sgn[n][2] * h[2] / 2);
    u.segment<3>(3 * n) = A * x;
  }
  const double lam = E * nu / ((1 + nu) * (1 - 2 * nu));
  const double G = E / (2 * (1 + nu));
  Eigen::Matrix<double, 6, 1> eps;  // engineering shear
  eps << A(0, 0), A(1, 1), A(2, 2), 2 * A(0, 1), 2 * A(1, 2), 2 * A(0, 2);
  const double tr = A(0, 0) + A(1, 1) + A(2, 2);
  double energy = lam * tr * tr;
  for (int a = 0; a < 3; ++a) energy += 2 * G * eps(a) * eps(a);
  for (int a = 3; a < 6; ++a) energy += G * eps(a) * eps(a);
  energy *= h[0] * h[1] * h[2];
  CHECK(u.dot(K * u) == doctest::Approx(energy).epsilon(1e-12));
}

TEST_CASE("density filter matches the brute-force oracle") {
  std::mt19937 rng(71);
  VoxelGrid g;
  g.dims = {5, 5, 5};

  SUBCASE("single spike, R = 3") {
    std::vector<double> rho(g.cell_count(), 0.0);
    rho[g.index(2, 2, 2)] = 1.0;
    const auto F = make_filter(g, 3.0);
    const auto mine = filter_apply(F, rho);
    const auto ref = brute_filter(g, 3.0, rho);
    for (std::size_t i = 0; i < rho.size(); ++i)
      CHECK(mine[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }

  SUBCASE("random fields, anisotropic spacing") {
    g.spacing = {0.8, 1.1, 1.35};
    g.origin = {-1, 2, 0.5};
    for (int trial = 0; trial < 3; ++trial) {
      const auto rho = random_rho(rng, g.cell_count(), 0.0, 1.0);
      const double R = std::uniform_real_distribution<double>(0.5, 3.5)(rng);
      const auto F = make_filter(g, R);
      const auto mine = filter_apply(F, rho);
      const auto ref = brute_filter(g, R, rho);
      for (std::size_t i = 0; i < rho.size(); ++i)
        CHECK(mine[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }

  SUBCASE("uniform stays uniform, small R is the identity") {
    const std::vector<double> uni(g.cell_count(), 0.37);
    const auto F = make_filter(g, 2.5);
    for (double v : filter_apply(F, uni)) CHECK(v == doctest::Approx(0.37).epsilon(1e-13));
    const auto Fid = make_filter(g, 0.9);  // below the unit spacing
    CHECK(Fid.identity());
    const auto rho = random_rho(rng, g.cell_count());
    const auto same = filter_apply(Fid, rho);
    for (std::size_t i = 0; i < rho.size(); ++i) CHECK(same[i] == rho[i]);
  }

  SUBCASE("transpose is the adjoint; column sums measure volume") {
    const auto F = make_filter(g, 2.2);
    const auto x = random_rho(rng, g.cell_count());
    const auto y = random_rho(rng, g.cell_count());
    const auto Wx = filter_apply(F, x);
    const auto Wty = filter_apply_transpose(F, y);
    double a = 0, b = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      a += Wx[i] * y[i];
      b += x[i] * Wty[i];
    }
    CHECK(a == doctest::Approx(b).epsilon(1e-12));

    const auto c = filter_column_sums(F);
    double vol_direct = 0, vol_linear = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      vol_direct += Wx[i];
      vol_linear += c[i] * x[i];
    }
    CHECK(vol_direct == doctest::Approx(vol_linear).epsilon(1e-12));
  }
}

TEST_CASE("equilibrium solve matches the dense reference") {
  std::mt19937 rng(99);

  SUBCASE("single element, coarse-level direct path") {
    TopOptProblem p = cantilever_problem(1, 1, 1, 0.5, 0.0);
    const std::vector<double> rho(1, 1.0);
    const auto st = solve_equilibrium(p, rho);
    const DenseRef ref(p, rho);
    const Eigen::VectorXd ue = ref.solve();
    CHECK((st.u - ue).norm() <= 1e-8 * ue.norm());
    CHECK(st.compliance == doctest::Approx(ref.compliance()).epsilon(1e-8));
    CHECK(st.residual <= 1e-8);
  }

  SUBCASE("multi-element random densities, both preconditioners") {
    TopOptProblem p = cantilever_problem(5, 4, 3, 0.5, 1.6);
    const auto rho_hat = brute_filter(p.grid, p.R, random_rho(rng, p.grid.cell_count()));
    const DenseRef ref(p, rho_hat);
    const Eigen::VectorXd ue = ref.solve();
    for (const char* pc : {"multigrid", "jacobi"}) {
      SolveOptions o;
      o.preconditioner = pc;
      const auto st = solve_equilibrium(p, rho_hat, o);
      CHECK((st.u - ue).norm() <= 2e-7 * ue.norm());
      CHECK(st.compliance == doctest::Approx(ref.compliance()).epsilon(1e-8));
    }
  }

  SUBCASE("multigrid exercises a genuine hierarchy") {
    TopOptProblem p = cantilever_problem(12, 6, 6, 0.5, 1.4);
    auto rho = random_rho(rng, p.grid.cell_count(), 0.3, 1.0);
    const auto rho_hat = brute_filter(p.grid, p.R, rho);
    const DenseRef ref(p, rho_hat);
    const Eigen::VectorXd ue = ref.solve();
    const auto st = solve_equilibrium(p, rho_hat);
    CHECK((st.u - ue).norm() <= 2e-7 * ue.norm());

    // warm restart from the solution costs no iterations
    SolveOptions warm;
    warm.warm = &st;
    const auto st2 = solve_equilibrium(p, rho_hat, warm);
    CHECK(st2.iterations == 0);
  }

  SUBCASE("linearity in the load") {
    TopOptProblem p = cantilever_problem(4, 3, 2, 0.5, 1.2);
    const auto rho_hat = brute_filter(p.grid, p.R, random_rho(rng, p.grid.cell_count()));
    const auto st1 = solve_equilibrium(p, rho_hat);
    for (auto& l : p.loads)
      for (auto& c : l.f) c *= 2;
    const auto st2 = solve_equilibrium(p, rho_hat);
    CHECK((st2.u - 2 * st1.u).norm() <= 1e-6 * st1.u.norm());
    CHECK(st2.compliance == doctest::Approx(4 * st1.compliance).epsilon(1e-7));
  }

  SUBCASE("bad problems are rejected") {
    TopOptProblem p = cantilever_problem(2, 2, 2, 0.5, 1.0);
    p.supports.clear();
    CHECK_THROWS_AS(validate(p), std::invalid_argument);
    p = cantilever_problem(2, 2, 2, 0.5, 1.0);
    p.loads.clear();
    CHECK_THROWS_AS(validate(p), std::invalid_argument);
    p = cantilever_problem(2, 2, 2, 0.5, 1.0);
    p.nu = 0.5;
    CHECK_THROWS_AS(validate(p), std::invalid_argument);
    p = cantilever_problem(2, 2, 2, 0.5, 1.0);
    p.p = 0.5;
    CHECK_THROWS_AS(validate(p), std::invalid_argument);
  }
}

TEST_CASE("compliance sensitivity matches central finite differences") {
  std::mt19937 rng(1234);
  for (int trial = 0; trial < 3; ++trial) {
    const int nx = 3 + trial % 2, ny = 3, nz = 2 + trial;
    TopOptProblem p = cantilever_problem(nx, ny, nz, 0.5, 1.5);
    p.p = 3.0;
    if (trial == 2) {  // pin a passive voxel
      p.passive.assign(p.grid.cell_count(), 0);
      p.passive[p.grid.index(1, 1, 1)] = 1;
    }
    auto rho = random_rho(rng, p.grid.cell_count(), 0.1, 0.9);
    if (trial == 2) rho[p.grid.index(1, 1, 1)] = 0.0;

    const auto rho_hat = brute_filter(p.grid, p.R, rho);
    const DenseRef ref(p, rho_hat);
    const Eigen::VectorXd u = ref.solve();
    const auto dJ = compliance_sensitivity(p, rho_hat, u);

    double scale = 0;
    for (double v : dJ) scale = std::max(scale, std::abs(v));
    REQUIRE(scale > 0);
    for (std::size_t i = 0; i < rho.size(); ++i) {
      if (p.is_passive(i)) {
        CHECK(dJ[i] == 0.0);
        continue;
      }
      CHECK(dJ[i] <= 0.0);
      const double eps = 1e-6 * std::max(1.0, rho[i]);
      auto pert = rho;
      pert[i] = rho[i] + eps;
      const double jp = dense_J(p, pert);
      pert[i] = rho[i] - eps;
      const double jm = dense_J(p, pert);
      const double fd = (jp - jm) / (2 * eps);
      CHECK(std::abs(dJ[i] - fd) <= 1e-5 * scale);
    }
  }
}

TEST_CASE("volume sensitivity is the filtered cell volume") {
  std::mt19937 rng(5);
  TopOptProblem p = cantilever_problem(4, 3, 3, 0.4, 1.7);
  p.grid.spacing = {0.5, 0.5, 0.5};
  const auto dV = volume_sensitivity(p);

  // finite differences of V(rho_hat) = cell volume * sum rho_hat
  auto rho = random_rho(rng, p.grid.cell_count());
  auto total = [&](const std::vector<double>& r) {
    double v = 0;
    for (double x : brute_filter(p.grid, p.R, r)) v += x;
    return v * p.grid.cell_volume();
  };
  for (std::size_t i = 0; i < rho.size(); i += 7) {
    const double eps = 1e-6;
    auto pert = rho;
    pert[i] = rho[i] + eps;
    const double vp = total(pert);
    pert[i] = rho[i] - eps;
    const double vm = total(pert);
    CHECK(dV[i] == doctest::Approx((vp - vm) / (2 * eps)).epsilon(1e-7));
  }

  // far from boundaries the entries equal the plain cell volume
  TopOptProblem q = cantilever_problem(2, 2, 2, 0.4, 0.9);
  for (double v : volume_sensitivity(q))
    CHECK(v == doctest::Approx(q.grid.cell_volume()).epsilon(1e-12));

  // passive entries are pinned out of the design set
  p.passive.assign(p.grid.cell_count(), 0);
  p.passive[0] = 1;
  CHECK(volume_sensitivity(p)[0] == 0.0);
}

TEST_CASE("optimality criteria update") {
  VoxelGrid g;
  g.dims = {4, 3, 3};
  TopOptProblem p;
  p.grid = g;
  p.V_f = 0.4;
  p.supports.push_back({0, 0});
  p.loads.push_back({1, {1, 0, 0}});
  const auto F = make_filter(g, 1.5);
  const auto dV = volume_sensitivity(p, F);
  const std::size_t n = g.cell_count();

  SUBCASE("uniform field with uniform sensitivities is a fixed point") {
    const std::vector<double> rho(n, p.V_f);
    const std::vector<double> dJ(n, -3.7);
    const std::vector<double> dVu(n, g.cell_volume());
    const auto next = oc_update(p, F, rho, dJ, dVu);
    for (double v : next) CHECK(v == doctest::Approx(p.V_f).epsilon(1e-6));
  }

  SUBCASE("move limit, bounds and exact volume on random sensitivities") {
    std::mt19937 rng(42);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
      auto rho = random_rho(rng, n, 0.05, 0.95);
      std::vector<double> dJ(n);
      for (auto& v : dJ) v = -uni(rng) - 0.01;
      const auto next = oc_update(p, F, rho, dJ, dV);
      const auto c = filter_column_sums(F);
      double vol = 0;
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(next[i] >= 0.0);
        CHECK(next[i] <= 1.0);
        CHECK(std::abs(next[i] - rho[i]) <= 0.2 + 1e-12);
        vol += c[i] * next[i];
      }
      CHECK(vol / double(n) == doctest::Approx(p.V_f).epsilon(1e-7));
    }
  }

  SUBCASE("passive voxels pass through pinned") {
    TopOptProblem q = p;
    q.passive.assign(n, 0);
    q.passive[5] = 1;
    q.passive_rho.assign(n, 0.0);
    q.passive_rho[5] = 0.15;
    std::vector<double> rho(n, 0.4);
    rho[5] = 0.15;
    std::vector<double> dJ(n, -1.0);
    dJ[5] = 0.0;
    const auto next = oc_update(q, F, rho, dJ, volume_sensitivity(q, F));
    CHECK(next[5] == 0.15);
  }

  SUBCASE("an unreachable volume target fails the bracket") {
    TopOptProblem q = p;
    q.V_f = 0.9;  // move limit keeps rho <= 0.25 + 0.2
    const std::vector<double> rho(n, 0.25);
    std::vector<double> dJ(n, -1.0);
    CHECK_THROWS_AS(oc_update(q, F, rho, dJ, dV), std::runtime_error);
  }
}

TEST_CASE("small optimization runs behave") {
  SUBCASE("V_f = 1 is the trivial all-solid optimum") {
    TopOptProblem p = cantilever_problem(3, 2, 2, 1.0, 1.2);
    TopOptOptions o;
    o.max_iterations = 10;
    const auto res = optimize(p, o);
    CHECK(res.converged);
    CHECK(res.iterations == 1);
    for (double v : res.rho.rho) CHECK(v == doctest::Approx(1.0));
    const std::vector<double> ones(p.grid.cell_count(), 1.0);
    CHECK(res.state.compliance ==
          doctest::Approx(solve_equilibrium(p, ones).compliance).epsilon(1e-10));
  }

  SUBCASE("tiny cantilever improves and respects the constraint set") {
    TopOptProblem p = cantilever_problem(8, 4, 2, 0.4, 1.5);
    TopOptOptions o;
    o.max_iterations = 40;
    const auto res = optimize(p, o);
    REQUIRE(res.history.size() >= 5);
    CHECK(res.history.back().J < res.history.front().J);
    for (const auto& rec : res.history) {
      CHECK(rec.volume_fraction <= p.V_f + 1e-6);
      CHECK(rec.J > 0);
    }
    for (double v : res.rho.rho) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    // the converged state is nearly an OC fixed point
    if (res.converged) {
      const auto F = make_filter(p.grid, p.R);
      const auto dJ =
          compliance_sensitivity(p, F, res.rho_hat.rho, res.state.u);
      const auto again =
          oc_update(p, F, res.rho.rho, dJ, volume_sensitivity(p, F), o.oc);
      double change = 0;
      for (std::size_t i = 0; i < again.size(); ++i)
        change = std::max(change, std::abs(again[i] - res.rho.rho[i]));
      CHECK(change < 2 * o.tol);
    }
  }

  SUBCASE("two runs are bit-identical") {
    TopOptProblem p = cantilever_problem(6, 3, 2, 0.35, 1.4);
    TopOptOptions o;
    o.max_iterations = 15;
    const auto a = optimize(p, o);
    const auto b = optimize(p, o);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i)
      CHECK(a.history[i].J == b.history[i].J);
    for (std::size_t i = 0; i < a.rho.rho.size(); ++i)
      CHECK(a.rho.rho[i] == b.rho.rho[i]);
  }

  SUBCASE("binary compliance resets the penalization") {
    TopOptProblem p = cantilever_problem(4, 2, 2, 0.5, 1.2);
    p.p = 3.0;
    std::vector<std::uint8_t> solid(p.grid.cell_count(), 1);
    solid[p.grid.index(1, 0, 0)] = 0;
    std::vector<double> rho(p.grid.cell_count(), 1.0);
    rho[p.grid.index(1, 0, 0)] = 0.0;
    TopOptProblem q = p;
    q.p = 1.0;
    CHECK(binary_compliance(p, solid) ==
          doctest::Approx(solve_equilibrium(q, rho).compliance).epsilon(1e-9));
  }
}
