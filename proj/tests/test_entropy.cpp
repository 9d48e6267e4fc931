#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "wentropy/entropy.hpp"

using namespace wentropy;

TEST(WeDiscrete, FairCoin) {
  const auto coin = Distribution::pmf({0.5, 0.5});
  EXPECT_NEAR(we_discrete(coin, WeightFunction::constant(1)), std::log(2.0), 1e-15);
}

TEST(WeDiscrete, LopsidedWeight) {
  const auto coin = Distribution::pmf({0.5, 0.5});
  const auto phi = WeightFunction::tabulated({0.0, 1.0}, {2.0, 0.0});
  EXPECT_NEAR(we_discrete(coin, phi), -2 * 0.5 * std::log(0.5), 1e-15);
}

TEST(WeDiscrete, DegenerateIsZero) {
  EXPECT_EQ(we_discrete(Distribution::pmf({1.0, 0.0}), WeightFunction::exponential({3.0})), 0.0);
}

TEST(Wde, StandardNormal) {
  const Estimate e = wde(Distribution::normal(0, 1), WeightFunction::constant(1), NumericConfig{});
  EXPECT_NEAR(e.value, 0.5 * std::log(2 * M_PI * M_E), 1e-9);
  EXPECT_EQ(e.method, Method::quadrature);
  EXPECT_LT(e.tail_mass, 1e-20);
}

TEST(Wde, UniformUnweighted) {
  EXPECT_NEAR(wde(Distribution::uniform(1, 4.5), WeightFunction::constant(1), NumericConfig{}).value, std::log(3.5),
              1e-12);
}

TEST(Wde, UniformWeightedUsesPrimitive) {
  // Phi(x) = x + x^2 for phi = 1 + 2x.
  const double a = 0.5, b = 2.5, l = b - a;
  const auto phi = WeightFunction::polynomial(std::vector<double>{1.0, 2.0});
  const double expected = ((b + b * b) - (a + a * a)) / l * std::log(l);
  EXPECT_NEAR(wde(Distribution::uniform(a, b), phi, NumericConfig{}).value, expected, 1e-12);
}

TEST(Wde, DiscreteInputRejected) {
  EXPECT_THROW(wde(Distribution::pmf({0.5, 0.5}), WeightFunction(), NumericConfig{}), StructureError);
}

TEST(Wde, HighDimensionFallsBackToMonteCarlo) {
  NumericConfig c;
  c.mc_samples = 50000;
  const Matrix cov = Matrix::Identity(4, 4) * 2.0;
  const Estimate e = wde(Distribution::gaussian(Vector::Zero(4), cov), WeightFunction::constant(1), c);
  EXPECT_EQ(e.method, Method::monte_carlo);
  EXPECT_NEAR(e.value, 2.0 * std::log(2 * M_PI * M_E * 2.0), 3 * e.std_error + 1e-12);
}

TEST(GaussianClosed, ConstantWeight) {
  Matrix c(2, 2);
  c << 2.0, 0.3, 0.3, 0.7;
  const auto r = gaussian_wde_closed(c, WeightFunction::constant(2.5), NumericConfig{});
  EXPECT_NEAR(r.value.value, 2.5 * 0.5 * std::log(std::pow(2 * M_PI * M_E, 2) * c.determinant()), 1e-12);
  EXPECT_EQ(r.value.method, Method::closed_form);
}

TEST(GaussianClosed, ExponentialWeightScalar) {
  // Direct Simpson evaluation of -int e^{tx} f ln f.
  const double t = 0.5;
  const auto r = gaussian_wde_closed(Matrix::Constant(1, 1, 1.0), WeightFunction::exponential({t}), NumericConfig{});
  const double direct = oracle::simpson(
      [&](double x) {
        const double f = oracle::normal_pdf(x, 0, 1);
        return -std::exp(t * x) * f * std::log(f);
      },
      -14, 14);
  EXPECT_NEAR(r.value.value, direct, 1e-9);
  EXPECT_NEAR(r.stats.alpha, std::exp(t * t / 2), 1e-15);
}

TEST(GaussianClosed, ExponentialIdentityOnlyAtZeroTilt) {
  // The shortcut exp(t'Ct/2) h(f) is exact at t = 0; the full value carries an
  // extra alpha * t'Ct / 2.
  const double h = 0.5 * std::log(2 * M_PI * M_E);
  const auto at0 = gaussian_wde_closed(Matrix::Constant(1, 1, 1.0), WeightFunction::exponential({0.0}), NumericConfig{});
  EXPECT_NEAR(at0.value.value, h, 1e-15);
  const double t = 0.5, a = std::exp(t * t / 2);
  const auto r = gaussian_wde_closed(Matrix::Constant(1, 1, 1.0), WeightFunction::exponential({t}), NumericConfig{});
  EXPECT_NEAR(r.value.value, a * (h + 0.5 * t * t), 1e-14);
  EXPECT_GT(std::abs(r.value.value - a * h), 0.1);
}

TEST(GaussianClosed, AgreesWithQuadratureWde) {
  Matrix c(2, 2);
  c << 1.0, 0.4, 0.4, 1.5;
  NumericConfig cfg;
  for (const auto& phi : {WeightFunction::exponential({0.2, -0.3}), WeightFunction::gaussian_bump({0.3, 0.0}, 0.8, 0.5)}) {
    const auto closed = gaussian_wde_closed(c, phi, cfg);
    const Estimate q = wde(Distribution::gaussian(Vector::Zero(2), c), phi, cfg);
    EXPECT_NEAR(closed.value.value, q.value, 1e-6) << phi.kind();
  }
}

TEST(GaussianClosed, NonSpdRaises) {
  EXPECT_THROW(gaussian_wde_closed(Matrix::Constant(1, 1, -1.0), WeightFunction(), NumericConfig{}), StructureError);
}

TEST(WeightedKl, SelfDivergenceIsZero) {
  const auto f = Distribution::laplace(0.2, 1.1);
  EXPECT_NEAR(weighted_kl(f, f, WeightFunction::exponential({0.3}), NumericConfig{}).value, 0.0, 1e-15);
}

TEST(WeightedKl, GaussianShift) {
  const Estimate e = weighted_kl(Distribution::normal(0, 1), Distribution::normal(1, 1), WeightFunction(), NumericConfig{});
  EXPECT_NEAR(e.value, oracle::gaussian_kl(0, 1, 1, 1), 1e-9);
}

TEST(WeightedKl, IndicatorWeightOnIdenticalArguments) {
  const auto f = Distribution::normal(0, 1);
  EXPECT_NEAR(weighted_kl(f, f, WeightFunction::indicator({0.0}, {INFINITY}), NumericConfig{}).value, 0.0, 1e-15);
}

TEST(WeightedKl, HeavyTailAgainstMixtureStaysFinite) {
  // Laplace mass reaches where the mixture density underflows
  const auto f = Distribution::laplace(0, 1.5);
  const auto g = Distribution::mixture({0.5, 0.5}, {Distribution::normal(-1, 0.3), Distribution::normal(1, 0.3)});
  const auto phi = WeightFunction::exponential({-0.2});
  const double ref = oracle::simpson(
      [&](double x) {
        const double lf = -std::abs(x) / 1.5 - std::log(3.0);
        const double a = -(x + 1) * (x + 1) / 0.6, b = -(x - 1) * (x - 1) / 0.6, top = std::max(a, b);
        const double lg = std::log(0.5 / std::sqrt(2 * M_PI * 0.3)) + top + std::log(std::exp(a - top) + std::exp(b - top));
        return std::exp(-0.2 * x) * std::exp(lf) * (lf - lg);
      },
      -80, 80, 200000);
  EXPECT_NEAR(weighted_kl(f, g, phi, NumericConfig{}).value, ref, 1e-6 * std::abs(ref));
}

TEST(WeightedKl, SupportViolationNamesLocation) {
  try {
    weighted_kl(Distribution::normal(0, 1), Distribution::uniform(-1, 1), WeightFunction(), NumericConfig{});
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("x=("), std::string::npos);
  }
}

TEST(WeightedKl, DiscreteSum) {
  const auto f = Distribution::pmf({0.2, 0.8});
  const auto g = Distribution::pmf({0.5, 0.5});
  const auto phi = WeightFunction::tabulated({0.0, 1.0}, {3.0, 1.0});
  const double expected = 3 * 0.2 * std::log(0.2 / 0.5) + 1 * 0.8 * std::log(0.8 / 0.5);
  EXPECT_NEAR(weighted_kl(f, g, phi, NumericConfig{}).value, expected, 1e-15);
}

TEST(Linearity, WeightsCombineLinearly) {
  NumericConfig c;
  const auto f = Distribution::laplace(0, 1), g = Distribution::normal(0.5, 2.0);
  const auto p1 = WeightFunction::exponential({0.2}), p2 = WeightFunction::sine(1.0, 0.5, 2.0);
  const auto mix = WeightFunction::combination({{2.0, p1}, {0.5, p2}});
  EXPECT_NEAR(wde(f, mix, c).value, 2 * wde(f, p1, c).value + 0.5 * wde(f, p2, c).value, 1e-8);
  EXPECT_NEAR(weighted_kl(f, g, mix, c).value, 2 * weighted_kl(f, g, p1, c).value + 0.5 * weighted_kl(f, g, p2, c).value,
              1e-8);
  const auto coin = Distribution::pmf({0.3, 0.7});
  EXPECT_NEAR(we_discrete(coin, mix), 2 * we_discrete(coin, p1) + 0.5 * we_discrete(coin, p2), 1e-14);
}

TEST(ExpFamily, EqualParametersGiveZero) {
  const auto fam = ExponentialFamilySpec::gaussian_location();
  const Vector t = Vector::Constant(1, 0.4);
  EXPECT_NEAR(expfam_rwe(fam, t, t, WeightFunction::exponential({0.3}), NumericConfig{}).value, 0.0, 1e-12);
}

TEST(ExpFamily, UnweightedBregmanMatchesKl) {
  const auto fam = ExponentialFamilySpec::gaussian_location();
  NumericConfig c;
  const Vector t1 = Vector::Constant(1, 0.3), t2 = Vector::Constant(1, -0.9);
  const Estimate r = expfam_rwe(fam, t1, t2, WeightFunction(), c);
  EXPECT_NEAR(r.value, 0.5 * 1.2 * 1.2, 1e-9);
  EXPECT_NEAR(r.value, weighted_kl(fam.at(t1, c), fam.at(t2, c), WeightFunction(), c).value, 1e-8);
}

TEST(ExpFamily, ExponentialWeightMatchesWeightedKl) {
  const auto fam = ExponentialFamilySpec::gaussian_location();
  NumericConfig c;
  const Vector t1 = Vector::Constant(1, 0.5), t2 = Vector::Constant(1, 1.25);
  const auto phi = WeightFunction::exponential({0.4});
  const double kl = weighted_kl(Distribution::normal(0.5, 1), Distribution::normal(1.25, 1), phi, c).value;
  EXPECT_NEAR(expfam_rwe(fam, t1, t2, phi, c).value, kl, 1e-8);
}

TEST(ExpFamily, BernoulliOnBoundedSupportWithIndicatorWeight) {
  // Exponential family on [0,1] with T(x) = x, h = 1 (truncated exponential).
  ExponentialFamilySpec fam;
  fam.base_h = [](Point) { return 1.0; };
  fam.sufficient_stat = [](Point x) { return Vector::Constant(1, x[0]); };
  fam.support = {{0.0}, {1.0}, {{}}};
  NumericConfig c;
  const Vector t1 = Vector::Constant(1, 1.5), t2 = Vector::Constant(1, -0.5);
  const auto phi = WeightFunction::indicator({0.25}, {0.8});
  const auto f1 = fam.at(t1, c), f2 = fam.at(t2, c);
  const double a1 = std::log((std::exp(1.5) - 1) / 1.5), a2 = std::log((std::exp(-0.5) - 1) / -0.5);
  const double direct = oracle::simpson(
      [&](double x) { return std::exp(1.5 * x - a1) * ((1.5 - -0.5) * x - a1 + a2); }, 0.25, 0.8);
  EXPECT_NEAR(expfam_rwe(fam, t1, t2, phi, c).value, direct, 1e-9);
  EXPECT_NEAR(weighted_kl(f1, f2, phi, c).value, direct, 1e-9);
}
