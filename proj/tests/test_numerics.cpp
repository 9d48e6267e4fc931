#include <gtest/gtest.h>

#include <cmath>

#include "wentropy/model.hpp"
#include "wentropy/numerics.hpp"

using namespace wentropy;

namespace {

NumericConfig cfg42() {
  NumericConfig c;
  c.rng_seed = 42;
  c.mc_samples = 100000;
  return c;
}

}  // namespace

TEST(Integrate, ConstantOnUnitInterval) {
  const Estimate e = integrate_1d([](double) { return 1.0; }, 0.0, 1.0, NumericConfig{});
  EXPECT_NEAR(e.value, 1.0, 1e-14);
  EXPECT_EQ(e.std_error, 0.0);
  EXPECT_EQ(e.method, Method::quadrature);
}

TEST(Integrate, NormalDensityOverRealLine) {
  const Estimate e = integrate_1d(standard_normal_pdf, -INFINITY, INFINITY, NumericConfig{});
  EXPECT_NEAR(e.value, 1.0, 1e-9);
}

TEST(Integrate, HalfLinesMatchHalves) {
  NumericConfig c;
  EXPECT_NEAR(integrate_1d(standard_normal_pdf, 0.0, INFINITY, c).value, 0.5, 1e-9);
  EXPECT_NEAR(integrate_1d(standard_normal_pdf, -INFINITY, 0.0, c).value, 0.5, 1e-9);
  EXPECT_NEAR(integrate_1d([](double x) { return std::exp(-x); }, 1.0, INFINITY, c).value, std::exp(-1.0), 1e-10);
}

TEST(Integrate, NormalShannonEntropy) {
  auto integrand = [](double x) {
    const double f = standard_normal_pdf(x);
    return f > 0 ? -f * std::log(f) : 0.0;
  };
  EXPECT_NEAR(integrate_1d(integrand, -INFINITY, INFINITY, NumericConfig{}).value, 1.4189385332046727, 1e-8);
}

TEST(Integrate, BreakpointsHandleJumps) {
  NumericConfig c;
  std::vector<double> bp{0.3};
  auto step = [](double x) { return x < 0.3 ? 0.0 : 1.0; };
  EXPECT_NEAR(integrate_1d(step, 0.0, 1.0, c, bp).value, 0.7, 1e-13);
}

TEST(Integrate, IntegrableEndpointSingularity) {
  NumericConfig c;
  c.quad_max_subdivisions = 5000;
  EXPECT_NEAR(integrate_1d([](double x) { return 1.0 / std::sqrt(x); }, 0.0, 1.0, c).value, 2.0, 1e-7);
}

TEST(Integrate, NonFiniteRaisesDomainError) {
  EXPECT_THROW(integrate_1d([](double) { return NAN; }, 0.0, 1.0, NumericConfig{}), DomainError);
}

TEST(Integrate, BudgetExhaustionRaises) {
  NumericConfig c;
  c.quad_max_subdivisions = 3;
  c.quad_abs_tol = 1e-15;
  c.quad_rel_tol = 1e-15;
  EXPECT_THROW(integrate_1d([](double x) { return std::sin(200 * x) * std::exp(x); }, 0.0, 10.0, c), NonConvergence);
}

TEST(Integrate, BoxIntegralOfBivariateDensity) {
  const auto g = Distribution::gaussian(Vector::Zero(2), (Matrix(2, 2) << 1.0, 0.4, 0.4, 2.0).finished());
  NumericConfig c;
  const Estimate e = integrate_box([&](Point x) { return g.pdf(x); }, g.box(c.truncation_sigmas), c);
  EXPECT_NEAR(e.value, 1.0, 10 * c.quad_abs_tol);
}

TEST(Integrate, NormalizedDensitiesIntegrateToOne) {
  NumericConfig c;
  const std::vector<Distribution> ds{Distribution::normal(0.3, 2.0), Distribution::uniform(-1, 2),
                                     Distribution::laplace(0.5, 0.7), Distribution::trapezoid(0, 1, -2, 0.5)};
  for (const auto& d : ds) {
    const Estimate e = integrate_box([&](Point x) { return d.pdf(x); }, d.box(c.truncation_sigmas), c);
    EXPECT_NEAR(e.value, 1.0, 10 * c.quad_abs_tol) << d.kind();
  }
}

TEST(MonteCarlo, ConstantHasZeroError) {
  const Estimate e = mc_expectation([](Point) { return 1.0; }, Distribution::normal(0, 1), cfg42());
  EXPECT_EQ(e.value, 1.0);
  EXPECT_EQ(e.std_error, 0.0);
}

TEST(MonteCarlo, SecondAndFourthMoments) {
  const auto n = Distribution::normal(0, 1);
  const Estimate m2 = mc_expectation([](Point x) { return x[0] * x[0]; }, n, cfg42());
  EXPECT_NEAR(m2.value, 1.0, 3 * m2.std_error);
  const Estimate m4 = mc_expectation([](Point x) { return std::pow(x[0], 4); }, n, cfg42());
  // Stein: E[Z^2 g(Z)] = E g + E g'' with g = z^2 gives 1 + 2.
  EXPECT_NEAR(m4.value, 3.0, 3 * m4.std_error);
  EXPECT_EQ(m4.method, Method::monte_carlo);
}

TEST(MonteCarlo, BitIdenticalUnderFixedSeed) {
  const auto n = Distribution::laplace(0, 1);
  auto g = [](Point x) { return std::cos(x[0]); };
  const Estimate a = mc_expectation(g, n, cfg42());
  const Estimate b = mc_expectation(g, n, cfg42());
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.std_error, b.std_error);
}

TEST(MonteCarlo, NonFiniteBeyondBudgetRaises) {
  auto g = [](Point x) { return x[0] > 2.0 ? INFINITY : 1.0; };
  EXPECT_THROW(mc_expectation(g, Distribution::normal(0, 1), cfg42()), DomainError);
  EXPECT_NO_THROW(mc_expectation(g, Distribution::normal(0, 1), cfg42(), 100000));
}

TEST(PowerIteration, StochasticMatrixHasUnitEigenvalue) {
  Matrix p(2, 2);
  p << 0.9, 0.1, 0.2, 0.8;
  const auto r = power_iteration(p, NumericConfig{});
  EXPECT_NEAR(r.eigenvalue, 1.0, 1e-12);
  EXPECT_NEAR(r.left(0), 2.0 / 3.0, 1e-10);
  EXPECT_NEAR(r.right.sum(), 1.0, 1e-14);
}

TEST(PowerIteration, ScalingScalesEigenvalueOnly) {
  Matrix p(3, 3);
  p << 0.5, 0.3, 0.2, 0.1, 0.6, 0.3, 0.4, 0.4, 0.2;
  const auto a = power_iteration(p, NumericConfig{});
  const auto b = power_iteration(2.5 * p, NumericConfig{});
  EXPECT_NEAR(b.eigenvalue, 2.5 * a.eigenvalue, 1e-11);
  EXPECT_LT((a.right - b.right).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((a.left - b.left).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(PowerIteration, MatchesQuadraticFormula) {
  Matrix m(2, 2);
  m << 0.6 * 2, 0.4 * 2, 0.5 * 3, 0.5 * 3;
  const double tr = m.trace(), det = m.determinant();
  const double mu = 0.5 * (tr + std::sqrt(tr * tr - 4 * det));
  const auto r = power_iteration(m, NumericConfig{});
  EXPECT_NEAR(r.eigenvalue, mu, 1e-12);
  EXPECT_LE((m * r.right - r.eigenvalue * r.right).cwiseAbs().maxCoeff(), 1e-11);
}

TEST(PowerIteration, PeriodicMatrixConverges) {
  Matrix p(2, 2);
  p << 0, 1, 1, 0;
  EXPECT_NEAR(power_iteration(p, NumericConfig{}).eigenvalue, 1.0, 1e-12);
}

TEST(PowerIteration, ReducibleRaises) {
  EXPECT_THROW(power_iteration(Matrix::Identity(2, 2), NumericConfig{}), StructureError);
  Matrix n(2, 2);
  n << 0.5, -0.1, 0.2, 0.3;
  EXPECT_THROW(power_iteration(n, NumericConfig{}), StructureError);
}

TEST(FiniteDiff, PolynomialsAreExact) {
  NumericConfig c;
  auto sq = [](double x) { return x * x; };
  EXPECT_NEAR(finite_diff(sq, 3.0, 1, c), 6.0, 1e-6);
  EXPECT_NEAR(finite_diff(sq, 3.0, 2, c), 2.0, 1e-6);
  auto quad = [](double x) { return 4 - 2 * x + 0.5 * x * x; };
  for (double x : {-5.0, 0.0, 0.7, 12.0}) {
    EXPECT_NEAR(finite_diff(quad, x, 1, c), -2 + x, 1e-6);
    EXPECT_NEAR(finite_diff(quad, x, 2, c), 1.0, 1e-6);
  }
}

TEST(FiniteDiff, LogNormalDensitySlope) {
  auto lf = [](double x) { return std::log(standard_normal_pdf(x)); };
  EXPECT_NEAR(finite_diff(lf, 1.0, 1, NumericConfig{}), -1.0, 1e-9);
}

TEST(FiniteDiff, NonFiniteRaises) {
  EXPECT_THROW(finite_diff([](double x) { return std::log(x); }, 0.0, 1, NumericConfig{}), DomainError);
}

TEST(Config, ValidationNamesTheField) {
  NumericConfig c;
  c.mc_samples = -5;
  try {
    c.validate();
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("numeric.mc_samples"), std::string::npos);
  }
  c = NumericConfig{};
  c.truncation_sigmas = 3;
  EXPECT_THROW(c.validate(), DomainError);
}

TEST(Rng, SubstreamsDiffer) {
  EXPECT_NE(substream_seed(42, 1), substream_seed(42, 2));
  Rng a(substream_seed(42, 1)), b(substream_seed(42, 1));
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.normal(), b.normal());
}
