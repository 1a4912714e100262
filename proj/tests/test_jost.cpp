#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "scatter1d/jost.hpp"

using namespace scatter1d;

namespace {

const SpatialGrid line{-20.0, 20.0, 2001};

double sup_error(const JostField& f, auto&& exact) {
  double worst = 0.0;
  for (std::size_t i = 0; i < f.grid.n; ++i) worst = std::max(worst, std::abs(f.values[i] - exact(f.grid[i])));
  return worst;
}

}  // namespace

TEST(SolveJost, FreeSolution) {
  const JostField f = solve_jost(catalog::zero(), 1.0, Side::Left, line);
  EXPECT_LT(sup_error(f, [](double x) { return std::exp(oracle::I * x); }), 1e-10);
}

TEST(SolveJost, BoundaryConditions) {
  const cd k{1.5, 0.0};
  const JostField l = solve_jost(catalog::well(), k, Side::Left, line);
  EXPECT_LT(std::abs(l.values.back() - std::exp(I * k * line.x_max)), 1e-10);
  EXPECT_LT(std::abs(l.derivatives.back() - I * k * std::exp(I * k * line.x_max)), 1e-10);
  const JostField r = solve_jost(catalog::well(), k, Side::Right, line);
  EXPECT_LT(std::abs(r.values.front() - std::exp(-I * k * line.x_min)), 1e-10);
  EXPECT_LT(std::abs(r.derivatives.front() + I * k * std::exp(-I * k * line.x_min)), 1e-10);
}

TEST(SolveJost, SolitonClosedForm) {
  for (double k : {0.5, 1.0, 3.0}) {
    const JostField f = solve_jost(catalog::soliton(), k, Side::Left, line);
    EXPECT_LT(sup_error(f, [k](double x) { return oracle::soliton_left(k, x); }), 1e-6) << k;
    const JostField r = solve_jost(catalog::soliton(), k, Side::Right, line);
    EXPECT_LT(sup_error(r, [k](double x) { return oracle::soliton_right(k, x); }), 1e-6) << k;
  }
}

TEST(SolveJost, PlainRungeKuttaIsFourthOrder) {
  std::vector<double> err;
  for (double dx : {0.04, 0.02, 0.01}) {
    const SpatialGrid g = SpatialGrid::with_spacing(-20.0, 20.0, dx);
    const JostField f = solve_jost(catalog::soliton(), 1.0, Side::Left, g, IntegratorOptions{0.0, 0.0});
    err.push_back(sup_error(f, [](double x) { return oracle::soliton_left(1.0, x); }));
  }
  EXPECT_GE(err[0] / err[1], 8.0);
  EXPECT_GE(err[1] / err[2], 8.0);
}

TEST(SolveJost, SolitonSlope) {
  const JostField f = solve_jost(catalog::soliton(), 1.0, Side::Left, line);
  double worst = 0.0;
  for (std::size_t i = 0; i < line.n; ++i)
    worst = std::max(worst, std::abs(f.derivatives[i] - oracle::soliton_left_slope(1.0, line[i])));
  EXPECT_LT(worst, 1e-6);
}

TEST(SolveJost, WellAgainstTransferMatrix) {
  const oracle::PiecewiseConstant well{{0.0, 2.0}, {-1.0}};
  const JostField r = solve_jost(catalog::well(), 2.0, Side::Right, line);
  EXPECT_LT(sup_error(r, [&](double x) { return well.right(2.0, x).first; }), 1e-8);
  const JostField l = solve_jost(catalog::well(), 2.0, Side::Left, line);
  EXPECT_LT(sup_error(l, [&](double x) { return well.left(2.0, x).first; }), 1e-8);
}

TEST(SolveJost, RealOnImaginaryAxis) {
  for (const auto& [name, v] : catalog::all()) {
    const JostField f = solve_jost(v, cd(0.0, 0.8), Side::Right, SpatialGrid(-10.0, 10.0, 1001));
    for (std::size_t i = 0; i < f.grid.n; ++i)
      EXPECT_LE(std::abs(f.values[i].imag()), 1e-10 * std::abs(f.values[i])) << name;
  }
}

TEST(SolveJost, ZeroWavenumber) {
  try {
    solve_jost(catalog::well(), 0.0, Side::Left, line);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ZeroWavenumber);
  }
}

TEST(Scattering, ZeroPotential) {
  const auto k = uniform_k_grid(30.0, 64);
  const auto c = scattering_coefficients(catalog::zero(), k, line);
  for (std::size_t j = 0; j < k.size(); ++j) {
    EXPECT_LT(std::abs(c.T[j] - 1.0), 1e-12);
    EXPECT_LT(std::abs(c.L[j]), 1e-12);
    EXPECT_LT(std::abs(c.R[j]), 1e-12);
  }
}

TEST(Scattering, SolitonIsReflectionless) {
  const std::vector<double> k{0.5, 1.0, 2.0, 5.0};
  const auto c = scattering_coefficients(catalog::soliton(), k, line);
  for (std::size_t j = 0; j < k.size(); ++j) {
    EXPECT_LT(std::abs(c.L[j]), 1e-6);
    EXPECT_LT(std::abs(c.T[j] - oracle::soliton_transmission(k[j])), 1e-6);
  }
}

TEST(Scattering, WellAgainstTransferMatrix) {
  const oracle::PiecewiseConstant well{{0.0, 2.0}, {-1.0}};
  const std::vector<double> k{1.0, 0.3, 4.0};
  const auto c = scattering_coefficients(catalog::well(), k, line);
  for (std::size_t j = 0; j < k.size(); ++j) {
    const auto [T, L] = well.transmission_reflection(k[j]);
    const double tol = j == 0 ? 1e-8 : 1e-7;
    EXPECT_LT(std::abs(c.T[j] - T), tol) << k[j];
    EXPECT_LT(std::abs(c.L[j] - L), tol) << k[j];
  }
}

TEST(Scattering, UnitarityAndTwoSidedTransmission) {
  const auto k = uniform_k_grid(30.0, 256);
  for (const auto& [name, v] : catalog::all()) {
    const auto c = scattering_coefficients(v, k, line);
    EXPECT_LT(unitarity_defect(c), 1e-6) << name;
    for (std::size_t j = 0; j < k.size(); ++j) {
      EXPECT_LT(std::abs(std::abs(c.L[j]) - std::abs(c.R[j])), 1e-6) << name;
      EXPECT_LT(std::abs(c.T[j] - c.T_right[j]), 1e-8) << name << " k=" << k[j];
    }
  }
}

TEST(BoundStates, Catalog) {
  EXPECT_TRUE(find_bound_states(catalog::zero(), line).empty());
  const auto s = find_bound_states(catalog::soliton(), line);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_NEAR(s[0], 1.0, 1e-8);
  const auto w = find_bound_states(catalog::well(), line);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_NEAR(w[0], oracle::even_well_state(1.0, 1.0), 1e-8);
}

TEST(BoundStates, DeepWellCount) {
  // depth 9, half-width 1: q h reaches 3, so one even and one odd state
  const Potential deep = Potential::piecewise_constant({-1.0, 1.0}, {-9.0});
  const auto s = find_bound_states(deep, line);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_NEAR(s[1], oracle::even_well_state(9.0, 1.0), 1e-8);
}

TEST(NormingConstants, Soliton) {
  const auto [mm, mp] = norming_constants(catalog::soliton(), 1.0, line);
  EXPECT_NEAR(mm, 2.0, 1e-6);
  EXPECT_NEAR(mp, 2.0, 1e-6);
}

TEST(NormingConstants, ShiftedSoliton) {
  const double c = 0.7;
  const auto [mm, mp] = norming_constants(Potential::soliton(1.0, c), 1.0, line);
  EXPECT_NEAR(mp, 2.0 * std::exp(2.0 * c), 1e-6 * 2.0 * std::exp(2.0 * c));
  EXPECT_NEAR(mm, 2.0 * std::exp(-2.0 * c), 1e-6 * 2.0 * std::exp(-2.0 * c));
}

TEST(NormingConstants, SymmetricWell) {
  const Potential w = Potential::piecewise_constant({-1.0, 1.0}, {-1.0});
  const double kappa = find_bound_states(w, line).at(0);
  const auto [mm, mp] = norming_constants(w, kappa, line);
  EXPECT_NEAR(mm, mp, 1e-8 * mm);
}

TEST(NormingConstants, RejectsNonEigenvalue) {
  try {
    norming_constants(catalog::soliton(), 0.6, line);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotABoundState);
  }
}

TEST(Forward, Soliton) {
  const auto d = forward(catalog::soliton(), uniform_k_grid(30.0, 128), line);
  ASSERT_EQ(d.bound_states.size(), 1u);
  EXPECT_NEAR(d.bound_states[0].kappa, 1.0, 1e-6);
  EXPECT_NEAR(d.bound_states[0].m_minus, 2.0, 1e-6);
  EXPECT_NEAR(d.bound_states[0].m_plus, 2.0, 1e-6);
}

TEST(Forward, MirrorCovariance) {
  const auto k = uniform_k_grid(30.0, 128);
  for (const Potential& v : {catalog::well(), catalog::well_plus_soliton(), Potential::soliton(1.0, 0.4)}) {
    const auto d = forward(v, k, line);
    const auto m = forward(mirror(v), k, line);
    for (std::size_t j = 0; j < k.size(); ++j) {
      EXPECT_LT(std::abs(d.coefficients.L[j] - m.coefficients.R[j]), 1e-8);
      EXPECT_LT(std::abs(d.coefficients.R[j] - m.coefficients.L[j]), 1e-8);
    }
    ASSERT_EQ(d.bound_states.size(), m.bound_states.size());
    for (std::size_t j = 0; j < d.bound_states.size(); ++j) {
      EXPECT_NEAR(d.bound_states[j].m_minus, m.bound_states[j].m_plus, 1e-8 * d.bound_states[j].m_minus);
      EXPECT_NEAR(d.bound_states[j].m_plus, m.bound_states[j].m_minus, 1e-8 * d.bound_states[j].m_plus);
    }
  }
}

TEST(Forward, JsonRoundTrip) {
  const auto d = forward(catalog::well(), uniform_k_grid(10.0, 16), line);
  const auto back = scattering_data_from_json(to_json_value(d));
  EXPECT_EQ(to_json_value(back), to_json_value(d));
}
