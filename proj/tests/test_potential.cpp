#include <gtest/gtest.h>

#include <cmath>

#include "scatter1d/potential.hpp"

using namespace scatter1d;

TEST(Evaluate, CatalogValues) {
  EXPECT_EQ(evaluate(catalog::zero(), 3.7), 0.0);
  EXPECT_DOUBLE_EQ(evaluate(catalog::soliton(), 0.0), -2.0);
  EXPECT_EQ(evaluate(catalog::well(), 1.0), -1.0);
}

TEST(Evaluate, RightContinuousAtBreakpoints) {
  const Potential w = catalog::well();
  EXPECT_EQ(w(0.0), -1.0);
  EXPECT_EQ(w(2.0), 0.0);
  EXPECT_EQ(w.limit(0.0, -1), 0.0);
  EXPECT_EQ(w.limit(2.0, -1), -1.0);
}

TEST(Evaluate, SumAddsTerms) {
  const Potential s = catalog::well_plus_soliton();
  for (double x : {-3.0, 0.5, 1.999, 2.0, 4.0}) EXPECT_DOUBLE_EQ(s(x), catalog::well()(x) + catalog::soliton()(x));
}

TEST(Evaluate, SampledGridInterpolatesAndVanishesOutside) {
  const Potential g = Potential::sampled(SpatialGrid(0.0, 1.0, 3), {1.0, 3.0, 5.0});
  EXPECT_DOUBLE_EQ(g(0.25), 2.0);
  EXPECT_EQ(g(-0.1), 0.0);
  EXPECT_EQ(g(1.1), 0.0);
}

TEST(Construction, RejectsBadParameters) {
  EXPECT_THROW(Potential::piecewise_constant({0.0, 0.0}, {1.0}), Error);
  EXPECT_THROW(Potential::piecewise_constant({0.0, 1.0}, {1.0, 2.0}), Error);
  EXPECT_THROW(Potential::soliton(0.0), Error);
  EXPECT_THROW(Potential::sampled(SpatialGrid(0.0, 1.0, 3), {1.0}), Error);
  EXPECT_THROW(SpatialGrid(1.0, 0.0, 10), Error);
  EXPECT_THROW(SpatialGrid(0.0, 1.0, 1), Error);
  EXPECT_THROW(Window(1.0, 1.0), Error);
}

TEST(FirstMoment, Zero) { EXPECT_EQ(first_moment_norm(catalog::zero()), 0.0); }

TEST(FirstMoment, WellHandIntegral) { EXPECT_NEAR(first_moment_norm(catalog::well()), 4.0, 1e-10); }

TEST(FirstMoment, SolitonAgainstAdaptiveQuadrature) {
  // int (1+|x|) 2 sech^2 x dx = 4 + 4 ln 2 over the line; the tail beyond 20 is below 1e-15
  const double exact = 4.0 + 4.0 * std::log(2.0);
  EXPECT_NEAR(first_moment_norm(catalog::soliton()), exact, 1e-8 * exact);
}

TEST(FirstMoment, SampledGridDiscontinuity) {
  const Potential g = Potential::sampled(SpatialGrid(-1.0, 1.0, 201), std::vector<double>(201, 1.0), {});
  EXPECT_NEAR(first_moment_norm(g), 3.0, 1e-10);
}

TEST(Integrate, MatchesClosedForms) {
  EXPECT_NEAR(integrate(catalog::soliton(), -20.0, 0.0), -2.0, 1e-12);
  EXPECT_NEAR(integrate(catalog::well(), -1.0, 1.0), -1.0, 1e-14);
  EXPECT_NEAR(integrate(catalog::well_plus_soliton(), -20.0, 20.0), -6.0, 1e-12);
}

TEST(AbsoluteContinuity, StructuralDecision) {
  EXPECT_TRUE(is_absolutely_continuous_on_window(catalog::zero().with_window({0.0, 1.0})));
  EXPECT_FALSE(is_absolutely_continuous_on_window(catalog::well().with_window({-1.0, 1.0})));
  EXPECT_TRUE(is_absolutely_continuous_on_window(catalog::soliton().with_window({-1.0, 1.0})));
  EXPECT_TRUE(is_absolutely_continuous_on_window(catalog::well().with_window({0.5, 1.5})));
  EXPECT_FALSE(is_absolutely_continuous_on_window(catalog::well().with_window({1.5, 2.5})));
}

TEST(AbsoluteContinuity, WindowEndpointsAreNotInside) {
  EXPECT_TRUE(is_absolutely_continuous_on_window(catalog::well().with_window({0.0, 2.0})));
}

TEST(AbsoluteContinuity, FlaggedSampledGrid) {
  const Potential g = Potential::sampled(SpatialGrid(-2.0, 2.0, 41), std::vector<double>(41, -1.0), {0.3});
  EXPECT_FALSE(is_absolutely_continuous_on_window(g.with_window({0.0, 1.0})));
  EXPECT_TRUE(is_absolutely_continuous_on_window(g.with_window({0.5, 1.0})));
}

TEST(AbsoluteContinuity, EqualValuesAcrossABreakpointAreNotAJump) {
  const Potential p = Potential::piecewise_constant({0.0, 1.0, 2.0}, {-1.0, -1.0});
  EXPECT_TRUE(is_absolutely_continuous_on_window(p.with_window({0.5, 1.5})));
}

TEST(AbsoluteContinuity, RequiresWindow) {
  try {
    is_absolutely_continuous_on_window(catalog::well());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::WindowMissing);
  }
}

TEST(Mirror, Cases) {
  EXPECT_TRUE(mirror(catalog::zero()).is_zero());
  const Potential m = mirror(catalog::well());
  EXPECT_EQ(m(-1.0), -1.0);
  EXPECT_EQ(m(1.0), 0.0);
  const Potential w = mirror(catalog::well().with_window({-1.0, 1.5}));
  ASSERT_TRUE(w.known_window());
  EXPECT_EQ(w.known_window()->a, -1.5);
  EXPECT_EQ(w.known_window()->b, 1.0);
}

TEST(Json, RoundTrip) {
  for (const auto& [name, v] : catalog::all()) {
    const Potential back = potential_from_json(to_json_value(v.with_window({-1.0, 1.0})));
    EXPECT_EQ(to_json_value(back), to_json_value(v.with_window({-1.0, 1.0}))) << name;
  }
}

TEST(Json, Malformed) {
  try {
    potential_from_json(nlohmann::json{{"kind", "Banana"}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ParseError);
  }
  EXPECT_THROW(potential_from_json(nlohmann::json::array()), Error);
  EXPECT_THROW(potential_from_json(nlohmann::json{{"kind", "PiecewiseConstant"}, {"breakpoints", {1.0, 0.0}}, {"values", {1.0}}}),
               Error);
}
