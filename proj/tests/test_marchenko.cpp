#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "scatter1d/marchenko.hpp"

using namespace scatter1d;

namespace {

const SpatialGrid line{-20.0, 20.0, 2001};

ScatteringData one_soliton(std::span<const double> k) {
  ScatteringData d = zero_data(k);
  d.bound_states.push_back({1.0, 2.0, 2.0});
  return d;
}

double l1_on(const RecoveredPotential& r, const Potential& v, double a, double b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < r.grid.n; ++i)
    if (r.grid[i] >= a && r.grid[i] <= b) acc += r.grid.dx() * std::abs(r.values[i] - v(r.grid[i]));
  return acc;
}

double l1_between(const RecoveredPotential& p, const RecoveredPotential& q, double a, double b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.grid.n; ++i)
    if (p.grid[i] >= a && p.grid[i] <= b) acc += p.grid.dx() * std::abs(p.values[i] - q.values[i]);
  return acc;
}

double rank_one_b(double x, double y) { return -2.0 * std::exp(x + y) / (1.0 + std::exp(2.0 * x)); }

}  // namespace

TEST(BuildPhi, SelfDataCancels) {
  const auto k = uniform_k_grid(30.0, 256);
  const SpatialGrid g(-10.0, 10.0, 201);
  for (const Potential& v : {catalog::well(), catalog::well_plus_soliton()}) {
    const ScatteringData d = forward(v, k, line);
    const MarchenkoKernel kern = build_phi(d, v, d, g);
    EXPECT_LT(kern.phi.cwiseAbs().maxCoeff(), 1e-10);
    const RecoveredPotential r = recover_potential(kern);
    for (std::size_t i = 0; i < g.n; ++i) EXPECT_NEAR(r.values[i], v(g[i]), 1e-8) << g[i];
  }
}

TEST(BuildPhi, RankOneBoundStateTerm) {
  const auto k = uniform_k_grid(30.0, 64);
  const SpatialGrid g(-5.0, 2.0, 141);
  const MarchenkoKernel kern = build_phi(one_soliton(k), Potential::zero(), zero_data(k), g);
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t j = 0; j <= i; ++j)
      ASSERT_NEAR(kern.phi(i, j), 2.0 * std::exp(g[i] + g[j]), 1e-12 * std::exp(g[i] + g[j]));
}

TEST(BuildPhi, ContinuousPartIsSymmetric) {
  const auto k = uniform_k_grid(30.0, 256);
  const SpatialGrid g(-6.0, 4.0, 101);
  const MarchenkoKernel kern = build_phi(forward(catalog::well(), k, line), catalog::soliton(),
                                         forward(catalog::soliton(), k, line), g);
  EXPECT_LT((kern.continuous - kern.continuous.transpose()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(BuildPhi, WellAgainstRefinedFourierIntegral) {
  // reflection part only: midpoint rule with ten times the k nodes, L from the transfer matrix
  const auto k = uniform_k_grid(30.0, 2048);
  const SpatialGrid g(-10.0, 5.0, 61);
  const MarchenkoKernel kern = build_phi(forward(catalog::well(), k, line), Potential::zero(), zero_data(k), g);
  const oracle::PiecewiseConstant well{{0.0, 2.0}, {-1.0}};
  const std::size_t fine = 20480;
  const double h = 30.0 / fine;
  std::vector<oracle::cd> weighted(fine);
  std::vector<double> kf(fine);
  for (std::size_t j = 0; j < fine; ++j) {
    kf[j] = (static_cast<double>(j) + 0.5) * h;
    weighted[j] = h * taper(kf[j], 30.0, 0.1) * well.transmission_reflection(kf[j]).second / std::numbers::pi;
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t l = 0; l <= i; ++l) {
      const double s = g[i] + g[l];
      double acc = 0.0;
      for (std::size_t j = 0; j < fine; ++j) acc += (weighted[j] * std::exp(oracle::cd(0.0, -kf[j] * s))).real();
      worst = std::max(worst, std::abs(kern.continuous(i, l) - acc));
    }
  EXPECT_LT(worst, 1e-4);
}

TEST(BuildPhi, KGridMismatch) {
  const ScatteringData a = zero_data(uniform_k_grid(30.0, 64));
  const ScatteringData b = zero_data(uniform_k_grid(20.0, 64));
  try {
    build_phi(a, Potential::zero(), b, SpatialGrid(-1.0, 1.0, 11));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::KGridMismatch);
  }
}

TEST(SolveB, ZeroKernel) {
  const auto k = uniform_k_grid(30.0, 64);
  const MarchenkoKernel kern = build_phi(zero_data(k), Potential::zero(), zero_data(k), SpatialGrid(-3.0, 3.0, 61));
  for (double v : solve_b(kern, 1.0)) EXPECT_EQ(v, 0.0);
}

TEST(SolveB, RankOneClosedForm) {
  // trapezoid Nystrom: the error against the closed form is O(dx^2), about 6.6e-5 at dx = 0.01
  const auto k = uniform_k_grid(30.0, 64);
  std::vector<double> errors;
  for (double dx : {0.02, 0.01}) {
    const SpatialGrid g = SpatialGrid::with_spacing(-10.0, 2.5, dx);
    const MarchenkoKernel kern = build_phi(one_soliton(k), Potential::zero(), zero_data(k), g);
    double worst = 0.0;
    for (double x : {-3.0, 0.0, 2.5}) {
      const auto b = solve_b(kern, x);
      for (std::size_t i = 0; i < b.size(); ++i) worst = std::max(worst, std::abs(b[i] - rank_one_b(x, g[i])));
    }
    const MarchenkoSolver solver(kern);
    for (std::size_t i = 0; i < g.n; ++i)
      worst = std::max(worst, std::abs(solver.diagonal()[i] - rank_one_b(g[i], g[i])));
    errors.push_back(worst);
  }
  EXPECT_LT(errors[1], 1e-4);
  EXPECT_GT(errors[0] / errors[1], 3.5);
}

TEST(SolveB, FieldRowsMatchPerPointSolves) {
  const auto k = uniform_k_grid(30.0, 512);
  const SpatialGrid g(-8.0, 4.0, 241);
  const MarchenkoKernel kern = build_phi(forward(catalog::well_plus_soliton(), k, line), Potential::zero(), zero_data(k), g);
  const MarchenkoSolver solver(kern);
  const BField f = solver.field();
  for (std::size_t n : {1u, 60u, 200u, 240u}) {
    const auto direct = solve_b(kern, g[n]);
    ASSERT_EQ(direct.size(), n + 1);
    for (std::size_t i = 0; i <= n; ++i) EXPECT_NEAR(f.b(n, i), direct[i], 1e-10) << n << "," << i;
    EXPECT_NEAR(solver.diagonal()[n], direct[n], 1e-10);
  }
}

TEST(SolveB, LeftEdgeDecays) {
  const auto k = uniform_k_grid(30.0, 2048);
  const SpatialGrid g = SpatialGrid::with_spacing(-20.0, 10.0, 0.02);
  for (const auto& [name, v] : catalog::all()) {
    const MarchenkoSolver solver(build_phi(forward(v, k, line), Potential::zero(), zero_data(k), g));
    EXPECT_LT(std::abs(solver.diagonal().front()), 1e-6) << name;
    EXPECT_LT(solver.condition_estimate(), 1e6) << name;
  }
}

TEST(SolveB, SingularSystemIsReported) {
  // I + int Phi with Phi = -1/|trapezoid mass| has an exact null vector
  const SpatialGrid g(0.0, 1.0, 101);
  const double mass = g.dx() * (static_cast<double>(g.n) - 0.5);
  MarchenkoKernel kern{g, Eigen::MatrixXd::Constant(101, 101, -1.0 / mass), Eigen::MatrixXd::Zero(101, 101),
                       Potential::zero(), zero_data(uniform_k_grid(1.0, 4))};
  try {
    MarchenkoSolver solver(kern);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SingularFredholm);
  }
}

TEST(RecoverPotential, SolitonClosedForm) {
  const auto k = uniform_k_grid(30.0, 2048);
  const SpatialGrid g = SpatialGrid::with_spacing(-12.0, 6.0, 0.005);
  const RecoveredPotential r = reconstruct(one_soliton(k), Potential::zero(), zero_data(k), g);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.n; ++i)
    if (std::abs(g[i]) <= 5.0) worst = std::max(worst, std::abs(r.values[i] + 2.0 / std::pow(std::cosh(g[i]), 2)));
  EXPECT_LT(worst, 1e-4);
}

TEST(RecoverPotential, WellRoundTripFineBand) {
  // Gibbs-limited: the L1 error near the two unit jumps is about 2.2 / k_max
  const auto k = uniform_k_grid(120.0, 8192);
  const SpatialGrid g = SpatialGrid::with_spacing(-20.0, 11.0, 0.005);
  const RecoveredPotential r = reconstruct(forward(catalog::well(), k, line), Potential::zero(), zero_data(k), g);
  EXPECT_LT(l1_on(r, catalog::well(), -10.0, 10.0), 2e-2);
}

TEST(RecoverPotential, ReferenceShiftConsistency) {
  // the soliton recovered against Zero and against its own truncation to [-3, 3]
  const auto k = uniform_k_grid(30.0, 2048);
  const SpatialGrid g = SpatialGrid::with_spacing(-20.0, 11.0, 0.02);
  const Potential v = catalog::soliton();
  const SpatialGrid core(-3.0, 3.0, 601);
  const Potential truncated = Potential::sampled(core, sample(v, core));
  const ScatteringData d = forward(v, k, line);
  const RecoveredPotential from_zero = reconstruct(d, Potential::zero(), zero_data(k), g);
  const RecoveredPotential from_truncated = reconstruct(d, truncated, forward(truncated, k, line), g);
  EXPECT_LT(l1_between(from_zero, from_truncated, -10.0, 10.0), 1e-2);
}

TEST(RecoverPotential, ReferenceCarryingTheJumps) {
  const auto k = uniform_k_grid(30.0, 2048);
  const SpatialGrid g = SpatialGrid::with_spacing(-20.0, 11.0, 0.02);
  const Potential v = catalog::well_plus_soliton();
  const RecoveredPotential r = reconstruct(forward(v, k, line), catalog::well(), forward(catalog::well(), k, line), g);
  EXPECT_LT(l1_on(r, v, -10.0, 10.0), 1e-2);
}

TEST(Residuals, SelfDataVanishes) {
  const auto k = uniform_k_grid(30.0, 256);
  const SpatialGrid g(-10.0, 10.0, 201);
  const ScatteringData d = forward(catalog::well(), k, line);
  const MarchenkoKernel kern = build_phi(d, catalog::well(), d, g);
  const BField f = MarchenkoSolver(kern).field();
  EXPECT_LT(transformation_residual(kern, f, catalog::well(), 2.0), 1e-8);
  EXPECT_EQ(pde_residual(f, catalog::well(), catalog::well()), 0.0);
}

TEST(Residuals, SolitonTransformationOperator) {
  const auto k = uniform_k_grid(30.0, 2048);
  const SpatialGrid g = SpatialGrid::with_spacing(-12.0, 6.0, 0.01);
  const MarchenkoKernel kern = build_phi(one_soliton(k), Potential::zero(), zero_data(k), g);
  const MarchenkoSolver solver(kern);
  const Potential recovered = potential_from_diagonal(g, solver.diagonal(), Potential::zero()).as_potential();
  EXPECT_LT(transformation_residual(kern, solver.field(), recovered, 1.0), 1e-3);
}

TEST(Residuals, WellTransformationOperator) {
  const auto k = uniform_k_grid(30.0, 2048);
  const SpatialGrid g = SpatialGrid::with_spacing(-20.0, 11.0, 0.02);
  const MarchenkoKernel kern = build_phi(forward(catalog::well(), k, line), Potential::zero(), zero_data(k), g);
  const MarchenkoSolver solver(kern);
  const Potential recovered = potential_from_diagonal(g, solver.diagonal(), Potential::zero()).as_potential();
  EXPECT_LT(transformation_residual(kern, solver.field(), recovered, 2.0), 5e-2);
}

TEST(Residuals, PdeOnClosedFormIsSecondOrder) {
  double previous = 0.0;
  for (double dx : {0.04, 0.02, 0.01}) {
    const SpatialGrid g = SpatialGrid::with_spacing(-8.0, 4.0, dx);
    BField f{g, Eigen::MatrixXd::Zero(g.n, g.n), {}};
    for (std::size_t i = 0; i < g.n; ++i)
      for (std::size_t j = 0; j <= i; ++j) f.b(i, j) = rank_one_b(g[i], g[j]);
    const double r = pde_residual(f, catalog::soliton(), Potential::zero(), Window(-5.0, 3.0));
    if (dx == 0.02) {
      EXPECT_LT(r, 1e-3);
    }
    if (previous > 0) {
      EXPECT_GE(previous / r, 3.0) << dx;
    }
    previous = r;
  }
}

TEST(Property, CatalogRoundTrip) {
  // smooth entries at the default band, entries with jumps at k_max 60
  const SpatialGrid fwd = line;
  for (const auto& [name, v] : catalog::all()) {
    const bool jumps = !v.jump_candidates().empty();
    const auto k = jumps ? uniform_k_grid(60.0, 4096) : uniform_k_grid(30.0, 2048);
    const SpatialGrid g = SpatialGrid::with_spacing(-20.0, 11.0, jumps ? 0.01 : 0.02);
    const RecoveredPotential r = reconstruct(forward(v, k, fwd), Potential::zero(), zero_data(k), g);
    EXPECT_LT(l1_on(r, v, -10.0, 10.0), jumps ? 5e-2 : 1e-2) << name;
  }
}
