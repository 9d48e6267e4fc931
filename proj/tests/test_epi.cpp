#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "wentropy/epi.hpp"

using namespace wentropy;

namespace {

const double kTwoPiE = 2 * M_PI * M_E;

double trapezoid_pdf(double x, double a1, double b1, double a2, double b2) {
  const double l1 = b1 - a1, l2 = b2 - a2;
  const double lo = std::max(a1, x - b2), hi = std::min(b1, x - a2);
  return hi > lo ? (hi - lo) / (l1 * l2) : 0.0;
}

}  // namespace

TEST(Kappa, MatchedGaussians) {
  const auto c = kappa_and_angle(Distribution::normal(0, 1), Distribution::normal(0, 1), WeightFunction(), NumericConfig{});
  EXPECT_NEAR(c.kappa, 2 * kTwoPiE, 1e-8);
  EXPECT_NEAR(c.alpha_angle, M_PI / 4, 1e-9);
}

TEST(Kappa, UniformAngle) {
  const auto c = kappa_and_angle(Distribution::uniform(0, 1), Distribution::uniform(0, M_E), WeightFunction(),
                                 NumericConfig{});
  EXPECT_NEAR(c.alpha_angle, std::atan(M_E), 1e-8);
  EXPECT_NEAR(c.kappa, 1 + M_E * M_E, 1e-7);
}

TEST(Kappa, VanishingWeightMassRejected) {
  // max(0, x - 100) has no mass on the integration box of N(0, 1)
  const auto phi = WeightFunction::polynomial(std::vector<double>{-100.0, 1.0}, true);
  EXPECT_THROW(kappa_and_angle(Distribution::normal(0, 1), Distribution::normal(0, 1), phi, NumericConfig{}),
               DomainError);
}

TEST(Kappa, DiscreteRejected) {
  const auto d = Distribution::pmf({0.5, 0.5});
  EXPECT_THROW(kappa_and_angle(d, d, WeightFunction(), NumericConfig{}), StructureError);
}

TEST(Wlsi, GaussiansUnitWeight) {
  NumericConfig cfg;
  const auto c = kappa_and_angle(Distribution::normal(0, 1), Distribution::normal(0, 3), WeightFunction(), cfg);
  const auto r = wlsi_check(c, cfg);
  EXPECT_EQ(r.verdict, Verdict::HOLDS);
  EXPECT_NEAR(r.gap.value, 0.0, 1e-7);
  EXPECT_NEAR(r.value_of("decomposition residual X1"), 0.0, 1e-7);
  EXPECT_NEAR(r.value_of("decomposition residual X2"), 0.0, 1e-7);
}

TEST(Wlsi, LaplaceWithWeight) {
  NumericConfig cfg;
  const auto phi = WeightFunction::polynomial(std::vector<double>{1.0, 0.0, 0.2});
  const auto c = kappa_and_angle(Distribution::laplace(0, 1), Distribution::normal(0, 0.5), phi, cfg);
  const auto r = wlsi_check(c, cfg);
  EXPECT_NE(r.verdict, Verdict::INCONCLUSIVE);
  EXPECT_NEAR(r.value_of("decomposition residual X1"), 0.0, 1e-6);
  EXPECT_NEAR(r.value_of("decomposition residual X2"), 0.0, 1e-6);
  EXPECT_TRUE(r.notes.empty());
}

TEST(Wepi, GaussiansAreEquality) {
  NumericConfig cfg;
  const auto c = kappa_and_angle(Distribution::normal(0, 0.7), Distribution::normal(0, 2.0), WeightFunction(), cfg);
  const auto r = wepi_check(c, cfg);
  EXPECT_EQ(r.verdict, Verdict::HOLDS);
  EXPECT_TRUE(r.equality);
  EXPECT_NEAR(r.value_of("N^w(X)"), kTwoPiE * 2.7, 1e-6);
}

TEST(Wepi, UniformsStrict) {
  NumericConfig cfg;
  const auto c = kappa_and_angle(Distribution::uniform(0, 1), Distribution::uniform(0, 2), WeightFunction(), cfg);
  const auto r = wepi_check(c, cfg);
  EXPECT_EQ(r.verdict, Verdict::HOLDS);
  EXPECT_GT(r.gap.value, 0.1);
  EXPECT_NEAR(c.kappa, 5.0, 1e-7);
}

TEST(Wepi, KappaBelowOneFlipsCondition) {
  NumericConfig cfg;
  const auto c = kappa_and_angle(Distribution::uniform(0, 0.3), Distribution::uniform(0, 0.4), WeightFunction(), cfg);
  EXPECT_LT(c.kappa, 1.0);
  const auto r = wepi_check(c, cfg);
  ASSERT_FALSE(r.hypotheses.empty());
  EXPECT_EQ(r.hypotheses.front().requirement, Requirement::nonpositive);
}

TEST(GaussianWlsi, UnitWeightIsEqualityForAnyVariances) {
  for (auto [a, b] : {std::pair{1.0, 1.0}, {0.3, 4.0}, {2.0, 0.5}}) {
    const auto r = gaussian_wlsi_check(a, b, WeightFunction(), NumericConfig{});
    EXPECT_EQ(r.verdict, Verdict::HOLDS);
    EXPECT_NEAR(r.gap.value, 0.0, 1e-8) << a << " " << b;
  }
}

TEST(GaussianWlsi, SteinMatchesDirectMoments) {
  const auto phi = WeightFunction::polynomial(std::vector<double>{1.0, 0.0, 0.5});
  const auto r = gaussian_wlsi_check(1.0, 1.0, phi, NumericConfig{});
  // E[X^2 (1 + X^2/2)] for X ~ N(0, 2): 2 + 6
  EXPECT_NEAR(r.value_of("E[X^2 phi] direct"), 8.0, 1e-8);
  EXPECT_NEAR(r.value_of("E[X^2 phi] Stein"), 8.0, 1e-6);
  EXPECT_NEAR(r.value_of("gap (Stein moments)"), r.gap.value, 1e-5);
  EXPECT_TRUE(r.notes.empty());
}

TEST(GaussianWlsi, AgreesWithGenericSplitting) {
  NumericConfig cfg;
  const auto phi = WeightFunction::exponential({0.2});
  const auto c = kappa_and_angle(Distribution::normal(0, 1), Distribution::normal(0, 2), phi, cfg);
  const auto generic = wlsi_check(c, cfg);
  const auto r = gaussian_wlsi_check(1, 2, phi, cfg);
  EXPECT_NEAR(r.gap.value, generic.gap.value, 1e-6);
  EXPECT_NEAR(r.value_of("alpha"), c.alpha_angle, 1e-8);
}

TEST(GaussianWlsi, RejectsNonPositiveVariance) {
  EXPECT_THROW(gaussian_wlsi_check(0.0, 1.0, WeightFunction(), NumericConfig{}), DomainError);
}

TEST(UniformWlsi, UnitWeightUnitIntervals) {
  const auto [t, r] = uniform_wlsi_check(0, 1, 0, 1, WeightFunction(), NumericConfig{});
  EXPECT_NEAR(r.gap.value, 0.5 - 0.5 * std::log(2.0), 1e-8);
  EXPECT_NEAR(r.value_of("h^w(X)"), 0.5, 1e-8);
  EXPECT_NEAR(r.value_of("h^w(X) direct"), 0.5, 1e-7);
  EXPECT_NEAR(t.Ephi, 1.0, 1e-10);
  EXPECT_EQ(r.verdict, Verdict::HOLDS);
  EXPECT_NEAR(r.value_of("kappa"), 2.0, 1e-12);
}

TEST(UniformWlsi, ExponentialWeightAgainstSimpson) {
  const double a1 = 0.5, b1 = 2.0, a2 = -1.0, b2 = 2.0;
  const auto phi = WeightFunction::exponential({0.3});
  const auto [t, r] = uniform_wlsi_check(a1, b1, a2, b2, phi, NumericConfig{});
  auto f = [&](double x) { return trapezoid_pdf(x, a1, b1, a2, b2); };
  const double e = oracle::simpson([&](double x) { return std::exp(0.3 * x) * f(x); }, a1 + a2, b1 + b2, 40000);
  const double h = oracle::simpson(
      [&](double x) {
        const double p = f(x);
        return p > 0 ? -std::exp(0.3 * x) * p * std::log(p) : 0.0;
      },
      a1 + a2, b1 + b2, 40000);
  EXPECT_NEAR(t.Ephi, e, 1e-7);
  EXPECT_NEAR(t.Ephi_direct, e, 1e-7);
  EXPECT_NEAR(r.value_of("h^w(X)"), h, 1e-6);
  EXPECT_NEAR(r.value_of("h^w(X) direct"), h, 1e-6);
  // the printed forms disagree with the density
  EXPECT_GT(std::abs(t.Ephi_printed - e), 1e-3);
  EXPECT_GT(std::abs(t.Lambda_printed - t.Lambda), 1e-3);
  ASSERT_EQ(r.variants.size(), 1u);
}

TEST(UniformWlsi, CanonicalOrderAndPrimitives) {
  const auto phi = WeightFunction::polynomial(std::vector<double>{1.0, 1.0}, true);
  const auto [t, r] = uniform_wlsi_check(0, 3, 1, 2, phi, NumericConfig{});
  EXPECT_TRUE(t.swapped);
  EXPECT_LE(t.L1, t.L2);
  EXPECT_NEAR(t.Phi(2.0), 4.0, 1e-10);
  EXPECT_NEAR(t.PhiStar(3.0), 4.5 + 9.0, 1e-10);
  EXPECT_NEAR(t.Ephi1, 1 + 1.5, 1e-10);
  EXPECT_NEAR(t.Ephi2, 1 + 1.5, 1e-10);
  EXPECT_NEAR(t.Ephi, 4.0, 1e-9);
}

TEST(UniformWlsi, ShortIntervalRejected) {
  EXPECT_THROW(uniform_wlsi_check(0, 1e-9, 0, 1, WeightFunction(), NumericConfig{}), DomainError);
  EXPECT_THROW(uniform_wlsi_check(1, 0, 0, 1, WeightFunction(), NumericConfig{}), DomainError);
}

TEST(Mmse, GaussianClosedForm) {
  EXPECT_NEAR(mmse_functional(Distribution::normal(0, 1), 1.0, NumericConfig{}).value, 0.5, 1e-14);
  EXPECT_NEAR(mmse_functional(Distribution::normal(2, 4), 0.0, NumericConfig{}).value, 4.0, 1e-14);
}

TEST(Mmse, QuadratureRouteOnGaussian) {
  // Gaussian seen through a mixture of one component takes the quadrature route
  const auto z = Distribution::mixture({1.0}, {Distribution::normal(0, 2)});
  EXPECT_NEAR(mmse_functional(z, 0.7, NumericConfig{}).value, 1 / (0.5 + 0.7), 1e-7);
}

TEST(Mmse, TwoPointLawAgainstSimpson) {
  const double g = 1.3, sg = std::sqrt(g);
  const auto z = Distribution::discrete({Vector::Constant(1, -1.0), Vector::Constant(1, 1.0)}, {0.5, 0.5});
  const double ref = 1.0 - oracle::simpson(
                               [&](double y) {
                                 const double p = 0.5 * (oracle::normal_pdf(y, sg, 1) + oracle::normal_pdf(y, -sg, 1));
                                 return p * std::pow(std::tanh(sg * y), 2);
                               },
                               -15, 15, 40000);
  EXPECT_NEAR(mmse_functional(z, g, NumericConfig{}).value, ref, 1e-7);
}

TEST(Mmse, MonteCarloAgreesWithQuadrature) {
  NumericConfig cfg;
  cfg.mc_samples = 4000;
  const auto z = Distribution::laplace(0, 1);
  const Estimate q = mmse_functional(z, 0.8, cfg);
  const Estimate m = mmse_functional(z, 0.8, cfg, MmseRoute::monte_carlo);
  EXPECT_EQ(m.method, Method::monte_carlo);
  EXPECT_NEAR(m.value, q.value, 4 * m.std_error + 1e-6);
}

TEST(Mmse, BivariateMonteCarlo) {
  NumericConfig cfg;
  cfg.mc_samples = 3000;
  Matrix s(2, 2);
  s << 1.0, 0.3, 0.3, 0.5;
  const auto z = Distribution::mixture({1.0}, {Distribution::gaussian(Vector::Zero(2), s)});
  const double exact = mmse_functional(Distribution::gaussian(Vector::Zero(2), s), 1.0, cfg).value;
  const Estimate m = mmse_functional(z, 1.0, cfg);
  EXPECT_NEAR(m.value, exact, 4 * m.std_error + 0.01);
}

TEST(Mmse, DecreasesInGamma) {
  const auto z = Distribution::uniform(-1, 1);
  NumericConfig cfg;
  double last = INFINITY;
  for (double g : {0.1, 0.5, 2.0, 8.0}) {
    const double v = mmse_functional(z, g, cfg).value;
    EXPECT_LT(v, last);
    EXPECT_LE(v, 1.0 / 3.0 + 1e-12);
    last = v;
  }
}

TEST(Mmse, NegativeGammaRejected) {
  EXPECT_THROW(mmse_functional(Distribution::normal(0, 1), -0.1, NumericConfig{}), DomainError);
}

TEST(MmseRepresentation, Gaussian) {
  const auto r = mmse_representation_check(Distribution::normal(0, 2.5), NumericConfig{});
  EXPECT_EQ(r.verdict, Verdict::HOLDS);
  EXPECT_NEAR(r.value_of("h via MMSE (Gaussian reference)"), oracle::gaussian_entropy(2.5), 1e-6);
  ASSERT_EQ(r.variants.size(), 1u);
  EXPECT_EQ(r.variants.front().verdict, Verdict::INCONCLUSIVE);
}

TEST(MmseRepresentation, Laplace) {
  const auto r = mmse_representation_check(Distribution::laplace(0, 1), NumericConfig{});
  EXPECT_NEAR(r.value_of("h direct"), 1 + std::log(2.0), 1e-7);
  EXPECT_NEAR(r.value_of("h via MMSE (Gaussian reference)"), 1 + std::log(2.0), 1e-4);
}

TEST(DeBruijn, GaussianUnitWeight) {
  const auto r = debruijn_check(Distribution::normal(0, 1), 0.5, WeightFunction(), NumericConfig{});
  EXPECT_NEAR(r.value_of("d/dgamma h^w(Z)"), 1.0 / 3.0, 1e-6);
  EXPECT_NEAR(r.value_of("1/2 tr J^w(Z)"), 1.0 / 3.0, 1e-8);
  EXPECT_EQ(r.verdict, Verdict::HOLDS);
}

TEST(DeBruijn, WeightedLaplace) {
  const auto phi = WeightFunction::polynomial(std::vector<double>{1.0, 0.0, 0.2});
  const auto r = debruijn_check(Distribution::laplace(0, 1), 0.4, phi, NumericConfig{});
  EXPECT_EQ(r.verdict, Verdict::HOLDS);
  EXPECT_NEAR(r.gap.value, 0.0, 1e-4);
  EXPECT_GT(std::abs(r.value_of("1/2 R(gamma)")), 1e-3);
}

TEST(DeBruijn, ExponentialWeightGaussian) {
  const auto phi = WeightFunction::exponential({0.4});
  const auto r = debruijn_check(Distribution::normal(0.3, 0.8), 1.0, phi, NumericConfig{});
  EXPECT_EQ(r.verdict, Verdict::HOLDS);
  EXPECT_NEAR(r.gap.value, 0.0, 1e-5);
}

TEST(WepScan, GaussianIsLinear) {
  const auto [diag, r] = wep_concavity_scan(Distribution::normal(0, 1), WeightFunction(), {0.5, 1.0, 2.0}, NumericConfig{});
  ASSERT_EQ(diag.size(), 3u);
  for (const auto& e : diag) {
    EXPECT_NEAR(e.wep, kTwoPiE * (1 + e.gamma), 1e-6);
    EXPECT_NEAR(e.dpsi, 1.0, 1e-3);
    EXPECT_NEAR(e.dpsi_classical, 1.0, 1e-3);
    EXPECT_NEAR(e.psi_gamma, 1 + e.gamma, 1e-5);
    EXPECT_NEAR(e.M_values.at("X"), 1 / (1 + e.gamma), 1e-12);
  }
  EXPECT_EQ(r.verdict, Verdict::HOLDS);
  EXPECT_NEAR(r.value_of("second difference at gamma=1"), 0.0, 1e-4);
}

TEST(WepScan, UniformUnitWeightIsConcave) {
  const auto [diag, r] = wep_concavity_scan(Distribution::uniform(0, 1), WeightFunction(), {0.05, 0.1, 0.2}, NumericConfig{});
  EXPECT_EQ(r.verdict, Verdict::HOLDS);
  ASSERT_EQ(r.variants.size(), 1u);
  EXPECT_EQ(r.variants.front().verdict, Verdict::HOLDS);
  for (const auto& e : diag) EXPECT_GE(e.dpsi, 1.0 - 1e-3);
}

TEST(WepScan, BadGrid) {
  EXPECT_THROW(wep_concavity_scan(Distribution::normal(0, 1), WeightFunction(), {}, NumericConfig{}), DomainError);
  EXPECT_THROW(wep_concavity_scan(Distribution::normal(0, 1), WeightFunction(), {1.0, 0.5}, NumericConfig{}),
               DomainError);
  EXPECT_THROW(wep_concavity_scan(Distribution::normal(0, 1), WeightFunction(), {0.0}, NumericConfig{}), DomainError);
}
