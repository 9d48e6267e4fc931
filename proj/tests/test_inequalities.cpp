#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "wentropy/inequalities.hpp"

using namespace wentropy;

namespace {

Matrix m1(double v) { return Matrix::Constant(1, 1, v); }

Distribution random_full_support(Rng& rng) {
  const double m = 2 * rng.uniform() - 1, s = 0.5 + 1.5 * rng.uniform();
  if (rng.uniform() < 0.5) return Distribution::normal(m, s * s);
  return Distribution::laplace(m, s);
}

WeightFunction random_weight(Rng& rng) {
  switch (rng.index(4)) {
    case 0: return WeightFunction::constant(0.5 + rng.uniform());
    case 1: return WeightFunction::exponential({rng.uniform() - 0.5});
    case 2: return WeightFunction::gaussian_bump({2 * rng.uniform() - 1}, 0.5 + rng.uniform(), 0.2, 1.0);
    default: return WeightFunction::sine(1.0, 0.9 * rng.uniform(), 0.5 + 2 * rng.uniform());
  }
}

}  // namespace

TEST(Gibbs, IdenticalArgumentsGiveEquality) {
  const auto f = Distribution::normal(0.3, 1.2);
  const CheckReport r = gibbs_check(f, f, WeightFunction::exponential({0.4}), NumericConfig{});
  EXPECT_NEAR(r.hypotheses[0].value, 0.0, 1e-15);
  EXPECT_NEAR(r.gap.value, 0.0, 1e-15);
  EXPECT_EQ(r.verdict, Verdict::HOLDS);
  EXPECT_TRUE(r.equality);
}

TEST(Gibbs, GaussianVarianceChange) {
  const CheckReport r = gibbs_check(Distribution::normal(0, 1), Distribution::normal(0, 2), WeightFunction(), NumericConfig{});
  EXPECT_NEAR(r.hypotheses[0].value, 0.0, 1e-9);
  EXPECT_NEAR(r.gap.value, 0.5 * (std::log(2.0) - 1 + 0.5), 1e-9);
  EXPECT_NEAR(r.gap.value, oracle::gaussian_kl(0, 1, 0, 2), 1e-9);
  EXPECT_EQ(r.verdict, Verdict::HOLDS);
  EXPECT_FALSE(r.equality);
}

TEST(Gibbs, FarTailIndicatorLeavesHypothesisUnmet) {
  // Q(10) - Q(7) < 0: the theorem says nothing, the gap is still reported.
  const CheckReport r = gibbs_check(Distribution::normal(0, 1), Distribution::normal(3, 1),
                                    WeightFunction::indicator({10.0}, {INFINITY}), NumericConfig{});
  EXPECT_LT(r.hypotheses[0].value, 0.0);
  EXPECT_NEAR(r.hypotheses[0].value, -std::erfc(7 / std::sqrt(2.0)) / 2, 1e-15);
  EXPECT_EQ(r.verdict, Verdict::HYPOTHESIS_UNMET);
}

TEST(Gibbs, RandomTriplesNeverViolate) {
  Rng rng(2024);
  NumericConfig cfg;
  int checked = 0;
  for (int i = 0; i < 200; ++i) {
    const auto f = random_full_support(rng), g = random_full_support(rng);
    const auto phi = random_weight(rng);
    const CheckReport r = gibbs_check(f, g, phi, cfg);
    EXPECT_NE(r.verdict, Verdict::VIOLATED) << "trial " << i << " gap " << r.gap.value;
    checked += r.hypotheses_met;
  }
  EXPECT_GT(checked, 20);
}

TEST(Concavity, DegenerateMixtures) {
  NumericConfig c;
  const auto f1 = Distribution::normal(0, 1), f2 = Distribution::laplace(1, 0.5);
  const auto phi = WeightFunction::exponential({0.3});
  EXPECT_NEAR(we_concavity_gap(f1, f2, 1.0, phi, c).gap.value, 0.0, 1e-8);
  EXPECT_NEAR(we_concavity_gap(f1, f1, 0.4, phi, c).gap.value, 0.0, 1e-8);
}

TEST(Concavity, DisjointUniformsGainLn2) {
  const CheckReport r = we_concavity_gap(Distribution::uniform(0, 1), Distribution::uniform(3, 4), 0.5, WeightFunction(),
                                         NumericConfig{});
  EXPECT_NEAR(r.gap.value, std::log(2.0), 1e-10);
  EXPECT_EQ(r.verdict, Verdict::HOLDS);
}

TEST(Concavity, RandomMixturesStayAboveTolerance) {
  Rng rng(5);
  NumericConfig c;
  for (int i = 0; i < 30; ++i) {
    const auto f1 = random_full_support(rng);
    const auto f2 = rng.uniform() < 0.5 ? random_full_support(rng) : Distribution::uniform(-1, 1 + rng.uniform());
    const CheckReport r = we_concavity_gap(f1, f2, rng.uniform(), random_weight(rng), c);
    EXPECT_GE(r.gap.value, -r.tolerance_used) << i;
  }
}

TEST(Concavity, LambdaOutsideUnitIntervalRejected) {
  EXPECT_THROW(we_concavity_gap(Distribution::normal(0, 1), Distribution::normal(1, 1), 1.5, WeightFunction(),
                                NumericConfig{}),
               DomainError);
}

TEST(Convexity, EqualityCases) {
  NumericConfig c;
  const auto f1 = Distribution::normal(0, 1), f2 = Distribution::normal(1, 1);
  const auto g1 = Distribution::normal(0, 2), g2 = Distribution::normal(1, 2);
  EXPECT_NEAR(rwe_convexity_gap(f1, f2, g1, g2, 0.0, WeightFunction(), c).gap.value, 0.0, 1e-8);
  EXPECT_NEAR(rwe_convexity_gap(f1, f1, g1, g1, 0.3, WeightFunction(), c).gap.value, 0.0, 1e-8);
}

TEST(Convexity, GaussianQuadruple) {
  const auto f1 = Distribution::normal(0, 1), f2 = Distribution::normal(1, 1);
  const auto g1 = Distribution::normal(0, 2), g2 = Distribution::normal(1, 2);
  const CheckReport r = rwe_convexity_gap(f1, f2, g1, g2, 0.5, WeightFunction(), NumericConfig{});
  // Independent Simpson evaluation of the mixture divergence.
  auto mix = [](double x, double v) { return 0.5 * oracle::normal_pdf(x, 0, v) + 0.5 * oracle::normal_pdf(x, 1, v); };
  const double dm = oracle::simpson([&](double x) { return mix(x, 1) * std::log(mix(x, 1) / mix(x, 2)); }, -14, 15);
  const double expected = 0.5 * oracle::gaussian_kl(0, 1, 0, 2) + 0.5 * oracle::gaussian_kl(1, 1, 1, 2) - dm;
  EXPECT_NEAR(r.gap.value, expected, 1e-8);
  EXPECT_GT(r.gap.value, 0.0);
  EXPECT_EQ(r.verdict, Verdict::HOLDS);
}

TEST(KyFan, ZeroTiltLiesInS) {
  const auto k = kyfan_diagnostics(Vector::Zero(1), m1(1), m1(4), 0.3);
  EXPECT_NEAR(k.F1, 0.0, 1e-15);
  EXPECT_NEAR(k.F2, 0.0, 1e-14);
  EXPECT_TRUE(k.in_S);
  EXPECT_NEAR(k.lambda1 + k.lambda2, 1.0, 0.0);
  EXPECT_NEAR(k.C(0, 0), 0.3 + 0.7 * 4, 1e-15);
}

TEST(KyFan, EqualCovariancesVanish) {
  Matrix c(2, 2);
  c << 1.0, 0.2, 0.2, 2.0;
  const Vector t = (Vector(2) << 0.3, -0.7).finished();
  const auto k = kyfan_diagnostics(t, c, c, 0.4);
  EXPECT_NEAR(k.F1, 0.0, 1e-14);
  EXPECT_NEAR(k.F2, 0.0, 1e-13);
  EXPECT_TRUE(k.in_S);
  EXPECT_LE(std::abs(kyfan_gap(t, c, c, 0.4).gap.value), 1e-12);
}

TEST(KyFan, ScalarHandEvaluation) {
  const double t = 0.1, l = 0.5, c = l * 1 + l * 4;
  const double e = std::exp(t * t * c / 2), e1 = std::exp(t * t / 2), e2 = std::exp(t * t * 4 / 2);
  const double f1 = l * e1 + l * e2 - e;
  const double f2 = f1 * std::log(2 * M_PI * c) + l * e1 / c + l * e2 * 4 / c - e;
  const auto k = kyfan_diagnostics(Vector::Constant(1, t), m1(1), m1(4), l);
  EXPECT_NEAR(k.F1, f1, 1e-15);
  EXPECT_NEAR(k.F2, f2, 1e-14);
  const CheckReport r = kyfan_gap(Vector::Constant(1, t), m1(1), m1(4), l);
  const double gap = oracle::gaussian_entropy(c) * e - l * oracle::gaussian_entropy(1) * e1 - l * oracle::gaussian_entropy(4) * e2;
  EXPECT_NEAR(r.gap.value, gap, 1e-14);
  EXPECT_EQ(k.in_S, f1 >= 0 && f2 <= 0);
  if (k.in_S) {
    EXPECT_GT(r.gap.value, 0.0);
  }
}

TEST(KyFan, ZeroTiltClosedForm) {
  for (double l : {0.1, 0.5, 0.77}) {
    const CheckReport r = kyfan_gap(Vector::Zero(1), m1(1), m1(4), l);
    const double c = l + (1 - l) * 4;
    EXPECT_NEAR(r.gap.value, 0.5 * (std::log(c) - l * std::log(1.0) - (1 - l) * std::log(4.0)), 1e-12);
  }
}

TEST(KyFan, SwapSymmetry) {
  Matrix c1(2, 2), c2(2, 2);
  c1 << 1.0, 0.1, 0.1, 0.5;
  c2 << 2.0, -0.3, -0.3, 1.0;
  const Vector t = (Vector(2) << 0.2, 0.1).finished();
  EXPECT_NEAR(kyfan_gap(t, c1, c2, 0.35).gap.value, kyfan_gap(t, c2, c1, 0.65).gap.value, 1e-13);
}

TEST(KyFan, GridHasNoViolationsInsideS) {
  int in_s = 0;
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j) {
      const double t = -2.0 + 4.0 * i / 19.0, l = j / 19.0;
      const CheckReport r = kyfan_gap(Vector::Constant(1, t), m1(1), m1(4), l);
      if (r.hypotheses_met) {
        ++in_s;
        EXPECT_GE(r.gap.value, -1e-9) << t << " " << l;
      }
    }
  EXPECT_GT(in_s, 0);
}

TEST(KyFan, NonSpdRejected) { EXPECT_THROW(kyfan_diagnostics(Vector::Zero(1), m1(-1), m1(4), 0.5), StructureError); }

TEST(GaussianMax, GaussianItselfIsEquality) {
  Matrix c(2, 2);
  c << 1.0, 0.3, 0.3, 0.8;
  const CheckReport r =
      gaussian_max_check(Distribution::gaussian(Vector::Zero(2), c), WeightFunction::exponential({0.2, 0.1}), NumericConfig{});
  EXPECT_NEAR(r.hypotheses[0].value, 0.0, 1e-8);
  EXPECT_NEAR(r.hypotheses[1].value, 0.0, 1e-7);
  EXPECT_NEAR(r.gap.value, 0.0, 1e-7);
  EXPECT_EQ(r.verdict, Verdict::HOLDS);
}

TEST(GaussianMax, MatchedUniformUnweighted) {
  const double half = std::sqrt(3.0);  // unit variance
  const CheckReport r = gaussian_max_check(Distribution::uniform(-half, half), WeightFunction(), NumericConfig{});
  EXPECT_NEAR(r.hypotheses[0].value, 0.0, 1e-9);
  EXPECT_NEAR(r.hypotheses[1].value, 0.0, 1e-8);
  EXPECT_NEAR(r.gap.value, oracle::gaussian_entropy(1.0) - std::log(2 * half), 1e-9);
  EXPECT_EQ(r.verdict, Verdict::HOLDS);
}

TEST(GaussianMax, LaplaceWithIndicatorReportsEverything) {
  const CheckReport r =
      gaussian_max_check(Distribution::laplace(0, 1), WeightFunction::indicator({-1.0}, {1.0}), NumericConfig{});
  EXPECT_EQ(r.hypotheses.size(), 2u);
  EXPECT_TRUE(std::isfinite(r.gap.value));
  EXPECT_EQ(r.variants.size(), 1u);
  EXPECT_NE(r.verdict, Verdict::VIOLATED);
}

TEST(GaussianMax, PrintedTraceSignAdmitsCounterexample) {
  // Laplace(0, 0.7) with phi = e^{x/2}: the printed hypotheses hold yet
  // h^w(f) > h^w(N). The Gibbs-derived condition correctly fails.
  const CheckReport r = gaussian_max_check(Distribution::laplace(0, 0.7), WeightFunction::exponential({0.5}), NumericConfig{});
  EXPECT_LT(r.gap.value, -0.1);
  EXPECT_EQ(r.verdict, Verdict::HYPOTHESIS_UNMET);
  ASSERT_EQ(r.variants.size(), 1u);
  EXPECT_TRUE(r.variants[0].hypotheses_met);
  EXPECT_EQ(r.variants[0].verdict, Verdict::VIOLATED);
}

TEST(GaussianMax, NonzeroMeanRejected) {
  EXPECT_THROW(gaussian_max_check(Distribution::normal(0.5, 1), WeightFunction(), NumericConfig{}), DomainError);
}

TEST(GaussianMax, RandomCasesNeverViolateUnderDerivedCondition) {
  Rng rng(9);
  NumericConfig c;
  for (int i = 0; i < 40; ++i) {
    const double b = 0.2 + 2 * rng.uniform();
    const auto f = rng.uniform() < 0.5 ? Distribution::laplace(0, b) : Distribution::uniform(-b, b);
    const CheckReport r = gaussian_max_check(f, random_weight(rng), c);
    EXPECT_NE(r.verdict, Verdict::VIOLATED) << i;
  }
}

TEST(Hadamard, DiagonalIsEquality) {
  const Matrix c = (Vector(2) << 1.5, 0.4).finished().asDiagonal();
  for (const auto& phi : {WeightFunction(), WeightFunction::exponential({0.3, -0.2}),
                          WeightFunction::gaussian_bump({0.1, 0.2}, 0.9, 0.3)}) {
    const CheckReport r = hadamard_weighted_check(c, phi, NumericConfig{});
    EXPECT_LE(std::abs(r.gap.value), 1e-9) << phi.kind();
    EXPECT_LE(std::abs(r.hypotheses[0].value), 1e-9) << phi.kind();
  }
}

TEST(Hadamard, UnweightedIsClassical) {
  Matrix c(2, 2);
  c << 1.0, 0.5, 0.5, 1.0;
  const CheckReport r = hadamard_weighted_check(c, WeightFunction(), NumericConfig{});
  EXPECT_NEAR(r.gap.value, -std::log(0.75), 1e-12);
  EXPECT_EQ(r.verdict, Verdict::HOLDS);
}

TEST(Hadamard, ExponentialWeightAgainstQuadratureOracle) {
  Matrix c(2, 2);
  c << 1.0, 0.5, 0.5, 1.0;
  const CheckReport r = hadamard_weighted_check(c, WeightFunction::exponential({0.1, 0.0}), NumericConfig{});
  // Twice the weighted divergence of the joint from the product of marginals.
  const double det = 0.75;
  auto joint = [&](double x, double y) {
    return std::exp(-(x * x - x * y + y * y) / (2 * det)) / (2 * M_PI * std::sqrt(det));
  };
  auto prod = [&](double x, double y) { return oracle::normal_pdf(x, 0, 1) * oracle::normal_pdf(y, 0, 1); };
  const double d = oracle::simpson2([&](double x, double y) { return std::exp(0.1 * x) * joint(x, y) * std::log(joint(x, y) / prod(x, y)); },
                                    -10, 10, -10, 10);
  EXPECT_NEAR(r.gap.value, 2 * d, 1e-7);
}
