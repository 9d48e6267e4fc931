#pragma once

// Weighted entropy power: kappa and the splitting angle, Lieb-type splitting
// checks (generic, Gaussian, uniform), the MMSE functional, the weighted
// De Bruijn identity and concavity of the weighted entropy power.

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fisher.hpp"

namespace wentropy {

struct WepiContext {
  Distribution X1, X2, X;  // X = X1 + X2
  WeightFunction phi;
  std::size_t d = 1;
  Estimate h1, h2, hX;     // weighted entropies
  Estimate e1, e2, eX;     // E phi
  double kappa = 0.0;
  double alpha_angle = std::numeric_limits<double>::quiet_NaN();  // d = 1 only
  Distribution Y1, Y2;     // X1 / cos(alpha), X2 / sin(alpha)
  WeightFunction phi_c, phi_s;
};

namespace detail {

inline double checked_exp(double a, const char* what) {
  if (!(std::abs(a) <= 700.0)) throw DomainError(std::string(what) + ": exponent " + where(a) + " out of range");
  return std::exp(a);
}

inline Estimate positive_weight_mass(const Distribution& x, const WeightFunction& phi, const NumericConfig& cfg,
                                     const char* label) {
  const Estimate e = expect_weight(x, phi, cfg);
  if (!(e.value > 0)) throw DomainError(std::string("wepi: E phi(") + label + ") = " + where(e.value) + " must be > 0");
  return e;
}

}  // namespace detail

/// kappa = sum_i exp(2 h^w(X_i) / (d E phi(X_i))) and, for d = 1,
/// alpha = arctan exp(h^w(X2)/E phi(X2) - h^w(X1)/E phi(X1)).
inline WepiContext kappa_and_angle(const Distribution& x1, const Distribution& x2, const WeightFunction& phi,
                                   const NumericConfig& cfg) {
  if (x1.dim() != x2.dim()) throw StructureError("wepi: dimension mismatch");
  if (x1.is_discrete() || x2.is_discrete()) throw StructureError("wepi: distributions must be continuous");
  WepiContext c;
  c.X1 = x1;
  c.X2 = x2;
  c.phi = phi;
  c.d = x1.dim();
  c.X = convolve(x1, x2, cfg);
  c.e1 = detail::positive_weight_mass(x1, phi, cfg, "X1");
  c.e2 = detail::positive_weight_mass(x2, phi, cfg, "X2");
  c.eX = detail::positive_weight_mass(c.X, phi, cfg, "X1+X2");
  c.h1 = wde(x1, phi, cfg);
  c.h2 = wde(x2, phi, cfg);
  c.hX = wde(c.X, phi, cfg);
  const double dd = static_cast<double>(c.d);
  const double r1 = c.h1.value / c.e1.value, r2 = c.h2.value / c.e2.value;
  c.kappa = detail::checked_exp(2 * r1 / dd, "kappa") + detail::checked_exp(2 * r2 / dd, "kappa");
  if (c.d == 1) {
    c.alpha_angle = std::atan(detail::checked_exp(r2 - r1, "alpha"));
    const double ca = std::cos(c.alpha_angle), sa = std::sin(c.alpha_angle);
    c.Y1 = x1.scaled(1.0 / ca);
    c.Y2 = x2.scaled(1.0 / sa);
    c.phi_c = phi.scaled_argument(ca);
    c.phi_s = phi.scaled_argument(sa);
  }
  return c;
}

/// h^w(X1+X2) - cos^2(a) h^w_{phi_c}(Y1) - sin^2(a) h^w_{phi_s}(Y2) >= 0.
inline CheckReport wlsi_check(const WepiContext& c, const NumericConfig& cfg) {
  if (c.d != 1) throw StructureError("wlsi_check: needs d = 1");
  const double ca = std::cos(c.alpha_angle), sa = std::sin(c.alpha_angle);
  const Estimate hy1 = wde(c.Y1, c.phi_c, cfg);
  const Estimate hy2 = wde(c.Y2, c.phi_s, cfg);
  CheckReport r;
  r.name = "wlsi";
  r.gap = combine({{1.0, c.hX}, {-ca * ca, hy1}, {-sa * sa, hy2}});
  // h^w(X_i) = h^w(Y_i) + E phi(X_i) ln(cos or sin)
  const double res1 = c.h1.value - hy1.value - c.e1.value * std::log(ca);
  const double res2 = c.h2.value - hy2.value - c.e2.value * std::log(sa);
  r.values = {{"alpha", c.alpha_angle},
              {"kappa", c.kappa},
              {"h^w(X)", c.hX.value},
              {"h^w_phic(Y1)", hy1.value},
              {"h^w_phis(Y2)", hy2.value},
              {"decomposition residual X1", res1},
              {"decomposition residual X2", res2}};
  finalize(r, cfg);
  const double dtol = c.h1.band() + hy1.band() + c.e1.band() + c.h2.band() + hy2.band() + c.e2.band() +
                      10 * cfg.quad_abs_tol + 1e-10 * (std::abs(c.h1.value) + std::abs(c.h2.value));
  if (std::abs(res1) > dtol || std::abs(res2) > dtol)
    r.notes.push_back("change-of-variables identity off by more than " + detail::where(dtol));
  return r;
}

/// WEPI: exp(2 h^w(X)/(d E phi(X))) - kappa >= 0 under the mass condition on
/// E phi and the splitting inequality.
inline CheckReport wepi_check(const WepiContext& c, const NumericConfig& cfg) {
  if (c.d != 1) throw StructureError("wepi_check: needs d = 1");
  CheckReport r;
  r.name = "wepi";
  const double t = detail::hyp_tol(c.e1, c.eX) + detail::hyp_tol(c.e2, c.eX);
  const double g1 = c.e1.value - c.eX.value, g2 = c.e2.value - c.eX.value;
  if (std::abs(c.kappa - 1.0) <= 1e-12 * c.kappa) {
    // ln kappa = 0 makes the condition vacuous; both readings are reported.
    r.add_hypothesis("kappa = 1: E phi condition vacuous", 1.0, Requirement::holds, 0.0);
  } else if (c.kappa > 1.0) {
    r.add_hypothesis("E phi(X1) - E phi(X) (kappa >= 1)", g1, Requirement::nonnegative, t);
    r.add_hypothesis("E phi(X2) - E phi(X) (kappa >= 1)", g2, Requirement::nonnegative, t);
  } else {
    r.add_hypothesis("E phi(X1) - E phi(X) (kappa <= 1)", g1, Requirement::nonpositive, t);
    r.add_hypothesis("E phi(X2) - E phi(X) (kappa <= 1)", g2, Requirement::nonpositive, t);
  }
  const CheckReport lieb = wlsi_check(c, cfg);
  r.add_hypothesis("WLSI", lieb.verdict == Verdict::HOLDS ? 1.0 : 0.0, Requirement::holds, 0.0);
  const double ratio = 2 * c.hX.value / (static_cast<double>(c.d) * c.eX.value);
  const double lhs = detail::checked_exp(ratio, "wepi");
  r.gap = Estimate::exact(lhs - c.kappa);
  r.gap.method = c.hX.method;
  // first-order propagation of the entropy and mass errors
  const double rel = 2.0 / c.eX.value * (c.hX.band() + std::abs(ratio) * c.eX.band());
  const double e1r = 2.0 / c.e1.value * (c.h1.band() + std::abs(c.h1.value / c.e1.value) * c.e1.band());
  const double e2r = 2.0 / c.e2.value * (c.h2.band() + std::abs(c.h2.value / c.e2.value) * c.e2.band());
  r.gap.error_bound = lhs * rel + c.kappa * (e1r + e2r);
  r.gap.std_error = 0.0;
  r.values = {{"kappa", c.kappa},
              {"N^w(X)", lhs},
              {"E phi(X1)", c.e1.value},
              {"E phi(X2)", c.e2.value},
              {"E phi(X)", c.eX.value},
              {"WLSI gap", lieb.gap.value},
              {"h^w(X) - E phi(X) ln(kappa)/2", c.hX.value - 0.5 * c.eX.value * std::log(c.kappa)}};
  finalize(r, cfg, 1e-12 * (lhs + c.kappa));
  return r;
}

// ---------------------------------------------------------------------------
// Gaussian splitting with Stein's formula

/// E[Z^2 phi(Z)] = s2 E phi(Z) + s2^2 E phi''(Z) for Z ~ N(0, s2).
inline Estimate stein_second_moment(double s2, const WeightFunction& phi, const NumericConfig& cfg) {
  const auto z = Distribution::normal(0, s2);
  const auto br = detail::weight_breaks(phi, 1);
  const Estimate e = expect(z, [&](Point x) { return phi(x); }, cfg, br);
  const Estimate e2 = expect(z, [&](Point x) { return phi.second_derivative(x[0]); }, cfg, br);
  return combine({{s2, e}, {s2 * s2, e2}});
}

inline Estimate direct_second_moment(double s2, const WeightFunction& phi, const NumericConfig& cfg) {
  return expect(Distribution::normal(0, s2), [&](Point x) { return x[0] * x[0] * phi(x); }, cfg,
                detail::weight_breaks(phi, 1));
}

/// Splitting inequality for X_i ~ N(0, s_i^2), written through E phi and
/// E[X^2 phi] of X1, X2 and X1 + X2. The second moments are computed directly
/// and through Stein's formula; the gap uses the direct ones.
inline CheckReport gaussian_wlsi_check(double s1, double s2, const WeightFunction& phi, const NumericConfig& cfg) {
  if (!(s1 > 0) || !(s2 > 0)) throw DomainError("gaussian_wlsi: variances must be > 0");
  const double s = s1 + s2;
  const auto br = detail::weight_breaks(phi, 1);
  auto mass = [&](double v) { return expect(Distribution::normal(0, v), [&](Point x) { return phi(x); }, cfg, br); };
  const Estimate e1 = mass(s1), e2 = mass(s2), e = mass(s);
  const Estimate q1 = direct_second_moment(s1, phi, cfg), q2 = direct_second_moment(s2, phi, cfg),
                 q = direct_second_moment(s, phi, cfg);
  const Estimate p1 = stein_second_moment(s1, phi, cfg), p2 = stein_second_moment(s2, phi, cfg),
                 p = stein_second_moment(s, phi, cfg);
  auto hw = [](double v, double ephi, double m2) { return 0.5 * std::log(2 * M_PI * v) * ephi + m2 / (2 * v); };
  for (double ev : {e1.value, e2.value, e.value})
    if (!(ev > 0)) throw DomainError("gaussian_wlsi: E phi must be > 0");
  const double alpha =
      std::atan(detail::checked_exp(hw(s2, e2.value, q2.value) / e2.value - hw(s1, e1.value, q1.value) / e1.value, "alpha"));
  const double c2 = std::pow(std::cos(alpha), 2), sn2 = std::pow(std::sin(alpha), 2);
  auto sides = [&](double m, double m1, double m2) {
    const double lhs = std::log(2 * M_PI * s) * e.value + m / s;
    const double rhs = c2 * std::log(2 * M_PI * s1 / c2) * e1.value + c2 / s1 * m1 + sn2 * std::log(2 * M_PI * s2 / sn2) * e2.value +
                       sn2 / s2 * m2;
    return std::pair{lhs, rhs};
  };
  const auto [lhs, rhs] = sides(q.value, q1.value, q2.value);
  const auto [lhs_s, rhs_s] = sides(p.value, p1.value, p2.value);

  CheckReport r;
  r.name = "gaussian_wlsi";
  // the displayed inequality is twice the splitting inequality
  r.gap.value = 0.5 * (lhs - rhs);
  r.gap.method = Method::quadrature;
  const double logs = std::abs(std::log(2 * M_PI * s)) + std::abs(std::log(2 * M_PI * s1 / c2)) +
                      std::abs(std::log(2 * M_PI * s2 / sn2));
  r.gap.error_bound = 0.5 * (logs * (e.band() + e1.band() + e2.band()) + q.band() / s + q1.band() / s1 + q2.band() / s2);
  const double stein_gap = 0.5 * (lhs_s - rhs_s);
  const double disc = std::max({std::abs(q.value - p.value), std::abs(q1.value - p1.value), std::abs(q2.value - p2.value)});
  r.values = {{"alpha", alpha},
              {"lhs", lhs},
              {"rhs", rhs},
              {"gap (Stein moments)", stein_gap},
              {"E[X^2 phi] direct", q.value},
              {"E[X^2 phi] Stein", p.value},
              {"E[X1^2 phi] direct", q1.value},
              {"E[X1^2 phi] Stein", p1.value},
              {"E[X2^2 phi] direct", q2.value},
              {"E[X2^2 phi] Stein", p2.value},
              {"Stein discrepancy", disc}};
  finalize(r, cfg, 1e-12 * (std::abs(lhs) + std::abs(rhs)));
  const double stol = 1e-6 * std::max(1.0, std::abs(q.value));
  if (disc > stol) r.notes.push_back("Stein and direct second moments differ by " + detail::where(disc));
  return r;
}

// ---------------------------------------------------------------------------
// Uniform splitting

struct UniformWlsiTerms {
  double a1 = 0, b1 = 0, a2 = 0, b2 = 0;  // canonical order: L1 <= L2
  double L1 = 0, L2 = 0;
  double A = 0, B = 0, C1 = 0, C2 = 0;
  bool swapped = false;
  std::function<double(double)> Phi;      // integral_0^x phi
  std::function<double(double)> PhiStar;  // integral_0^x u phi(u) du
  double Lambda = 0;          // so that h^w(X) = -Lambda + ln(L1 L2) E phi(X)
  double Lambda_printed = 0;  // with Phi(C1) - Phi(C2) as printed
  double Ephi = 0;            // E phi(X1 + X2)
  double Ephi_printed = 0;    // printed grouping
  double Ephi_direct = 0;     // quadrature against the trapezoid density
  double Ephi1 = 0, Ephi2 = 0;
  double cond_printed1 = 0, cond_printed2 = 0;  // L2 [Phi(b1)-Phi(a1)], L1 [Phi(b2)-Phi(a2)]
};

/// Splitting check for X_i ~ U[a_i, b_i] from the primitives of phi, with
/// E phi(X) and h^w(X) also computed by direct quadrature.
inline std::pair<UniformWlsiTerms, CheckReport> uniform_wlsi_check(double a1, double b1, double a2, double b2,
                                                                  const WeightFunction& phi, const NumericConfig& cfg) {
  if (!(b1 > a1) || !(b2 > a2)) throw DomainError("uniform_wlsi: need b > a");
  if (b1 - a1 < 1e-8 || b2 - a2 < 1e-8) throw DomainError("uniform_wlsi: interval length below 1e-8");
  UniformWlsiTerms t;
  t.swapped = (b1 - a1) > (b2 - a2);
  if (t.swapped) {
    std::swap(a1, a2);
    std::swap(b1, b2);
  }
  t.a1 = a1, t.b1 = b1, t.a2 = a2, t.b2 = b2;
  t.L1 = b1 - a1;
  t.L2 = b2 - a2;
  t.A = a1 + a2;
  t.B = b1 + b2;
  t.C1 = a2 + b1;
  t.C2 = a1 + b2;
  const std::vector<double> br = phi.breakpoints(0);
  double err = 0.0;
  auto prim = [&, br](auto&& g, double x) {
    if (x == 0.0) return 0.0;
    const Estimate e = x > 0 ? integrate_1d(g, 0.0, x, cfg, br) : integrate_1d(g, x, 0.0, cfg, br);
    err += e.error_bound;
    return x > 0 ? e.value : -e.value;
  };
  t.Phi = [phi, cfg, br](double x) {
    if (x == 0.0) return 0.0;
    auto g = [&](double u) { return phi(u); };
    return x > 0 ? integrate_1d(g, 0.0, x, cfg, br).value : -integrate_1d(g, x, 0.0, cfg, br).value;
  };
  t.PhiStar = [phi, cfg, br](double x) {
    if (x == 0.0) return 0.0;
    auto g = [&](double u) { return u * phi(u); };
    return x > 0 ? integrate_1d(g, 0.0, x, cfg, br).value : -integrate_1d(g, x, 0.0, cfg, br).value;
  };
  auto Phi = [&](double x) { return prim([&](double u) { return phi(u); }, x); };
  auto PhiS = [&](double x) { return prim([&](double u) { return u * phi(u); }, x); };
  const double pA = Phi(t.A), pB = Phi(t.B), pC1 = Phi(t.C1), pC2 = Phi(t.C2);
  const double sA = PhiS(t.A), sB = PhiS(t.B), sC1 = PhiS(t.C1), sC2 = PhiS(t.C2);
  const double p1 = Phi(b1) - Phi(a1), p2 = Phi(b2) - Phi(a2);
  const double L12 = t.L1 * t.L2;
  t.Ephi1 = p1 / t.L1;
  t.Ephi2 = p2 / t.L2;
  t.cond_printed1 = t.L2 * p1;
  t.cond_printed2 = t.L1 * p2;
  const double bracket = sC1 - sA - sB + sC2;
  const double tail = -t.A * (pC1 - pA) + t.L1 * (pC2 - pC1) + t.B * (pB - pC2);
  t.Ephi = (bracket + tail) / L12;
  t.Ephi_printed = bracket / L12 + tail;
  auto xlogx = [&](double lo, double hi, auto&& dist) {
    if (!(hi > lo)) return 0.0;
    const Estimate e = integrate_1d(
        [&](double x) {
          const double u = dist(x);
          return u > 0 ? phi(x) * u * std::log(u) : 0.0;
        },
        lo, hi, cfg, br);
    err += e.error_bound;
    return e.value;
  };
  const double ends = xlogx(t.A, t.C1, [&](double x) { return x - t.A; }) + xlogx(t.C2, t.B, [&](double x) { return t.B - x; });
  t.Lambda = std::log(t.L1) / t.L2 * (pC2 - pC1) + ends / L12;
  t.Lambda_printed = std::log(t.L1) / t.L2 * (pC1 - pC2) + ends / L12;

  const Distribution x = Distribution::trapezoid(a1, b1, a2, b2);
  const Estimate ed = expect_weight(x, phi, cfg);
  t.Ephi_direct = ed.value;
  const Estimate hd = wde(x, phi, cfg);

  const double alpha = std::atan(t.L2 / t.L1);  // h^w(X_i) / E phi(X_i) = ln L_i
  const double ca = std::cos(alpha), sa = std::sin(alpha);
  const double rhs = ca * ca * t.Ephi1 * std::log(t.L1 / ca) + sa * sa * t.Ephi2 * std::log(t.L2 / sa);
  const double lhs = -t.Lambda + std::log(L12) * t.Ephi;
  const double lhs_printed = -t.Lambda_printed + std::log(L12) * t.Ephi_printed;
  const double kappa = t.L1 * t.L1 + t.L2 * t.L2;

  CheckReport r;
  r.name = "uniform_wlsi";
  const double htol = 4 * err + 10 * cfg.quad_abs_tol + ed.band();
  if (std::abs(kappa - 1.0) > 1e-12) {
    const Requirement req = kappa > 1.0 ? Requirement::nonnegative : Requirement::nonpositive;
    r.add_hypothesis("E phi(X1) - E phi(X)", t.Ephi1 - t.Ephi, req, htol);
    r.add_hypothesis("E phi(X2) - E phi(X)", t.Ephi2 - t.Ephi, req, htol);
  }
  r.gap.value = lhs - rhs;
  r.gap.method = Method::quadrature;
  r.gap.error_bound = (1.0 + std::abs(std::log(L12))) * 4 * err;
  r.values = {{"alpha", alpha},
              {"kappa", kappa},
              {"Lambda", t.Lambda},
              {"Lambda (printed sign)", t.Lambda_printed},
              {"E phi(X)", t.Ephi},
              {"E phi(X) (printed grouping)", t.Ephi_printed},
              {"E phi(X) direct", t.Ephi_direct},
              {"E phi(X1)", t.Ephi1},
              {"E phi(X2)", t.Ephi2},
              {"L2 [Phi(b1)-Phi(a1)] (printed condition)", t.cond_printed1},
              {"L1 [Phi(b2)-Phi(a2)] (printed condition)", t.cond_printed2},
              {"h^w(X)", lhs},
              {"h^w(X) direct", hd.value},
              {"gap direct", hd.value - rhs}};
  finalize(r, cfg, 1e-12 * (std::abs(lhs) + std::abs(rhs)));
  Variant printed;
  printed.label = "printed Lambda sign and E phi grouping";
  printed.hypotheses_met = r.hypotheses_met;
  printed.gap = lhs_printed - rhs;
  printed.verdict = printed.hypotheses_met ? gap_verdict(printed.gap, 0.0, r.tolerance_used, Requirement::nonnegative)
                                           : Verdict::HYPOTHESIS_UNMET;
  r.variants.push_back(printed);
  return {t, r};
}

// ---------------------------------------------------------------------------
// MMSE functional

enum class MmseRoute { automatic, monte_carlo };

namespace detail {

/// (integral, first and second moments) of f(z) k(y - sqrt(g) z) over z, d = 1.
struct PosteriorMoments {
  double m0 = 0, m1 = 0, m2 = 0;
};

inline PosteriorMoments posterior_moments_1d(const Distribution& z, double sg, double y, const NumericConfig& cfg) {
  PosteriorMoments p;
  if (const auto* dz = z.as_discrete()) {
    for (std::size_t i = 0; i < dz->points.size(); ++i) {
      const double u = y - sg * dz->points[i](0);
      const double w = dz->masses[i] * std::exp(-0.5 * u * u), v = dz->points[i](0);
      p.m0 += w;
      p.m1 += w * v;
      p.m2 += w * v * v;
    }
    return p;
  }
  const IntegrationBox b = z.box(cfg.truncation_sigmas);
  std::vector<double> br = b.breaks.empty() ? std::vector<double>{} : b.breaks[0];
  double lo = b.lower[0], hi = b.upper[0];
  if (sg > 0) {
    // the kernel confines z to within ~(k+4)/sqrt(g) of y/sqrt(g)
    const double c = y / sg, reach = (cfg.truncation_sigmas + 4.0) / sg;
    lo = std::max(lo, c - reach);
    hi = std::min(hi, c + reach);
    br.push_back(c);
    if (!(hi > lo)) return p;
  }
  for (int k = 0; k < 3; ++k) {
    const double v = integrate_1d(
                         [&](double t) {
                           const double f = z.pdf(t);
                           if (f == 0.0) return 0.0;
                           const double u = y - sg * t;
                           return f * std::exp(-0.5 * u * u) * (k == 0 ? 1.0 : (k == 1 ? t : t * t));
                         },
                         lo, hi, cfg, br)
                         .value;
    (k == 0 ? p.m0 : (k == 1 ? p.m1 : p.m2)) = v;
  }
  return p;
}

}  // namespace detail

/// M(Z; g) = E|Z - E[Z | sqrt(g) Z + N]|^2. Gaussian Z: tr((S^-1 + g I)^-1);
/// d = 1: nested quadrature; otherwise (or with MmseRoute::monte_carlo)
/// Monte Carlo over (Z, N) with the posterior mean evaluated per sample.
inline Estimate mmse_functional(const Distribution& z, double gamma, const NumericConfig& cfg,
                                MmseRoute route = MmseRoute::automatic) {
  if (!(gamma >= 0) || !std::isfinite(gamma)) throw DomainError("mmse: gamma must be >= 0");
  const Matrix s = z.covariance();
  if (!s.allFinite()) throw NonConvergence("mmse: Z has no finite variance");
  const Eigen::Index d = s.rows();
  const double sg = std::sqrt(gamma);
  if (route == MmseRoute::automatic && z.is_gaussian()) {
    if (gamma == 0.0) return Estimate::exact(s.trace());
    const Matrix p = s.llt().solve(Matrix::Identity(d, d)) + gamma * Matrix::Identity(d, d);
    return Estimate::exact(p.llt().solve(Matrix::Identity(d, d)).trace());
  }
  if (gamma == 0.0) return Estimate::exact(s.trace());
  if (d == 1 && route == MmseRoute::automatic) {
    const NumericConfig inner = cfg.nested();
    const IntegrationBox b = z.box(cfg.truncation_sigmas);
    const double k = cfg.truncation_sigmas;
    const double lo = std::min(sg * b.lower[0], sg * b.upper[0]) - k, hi = std::max(sg * b.lower[0], sg * b.upper[0]) + k;
    std::vector<double> br;
    if (const auto* dz = z.as_discrete())
      for (const auto& p : dz->points) br.push_back(sg * p(0));
    Estimate e = integrate_1d(
        [&](double y) {
          const auto p = detail::posterior_moments_1d(z, sg, y, inner);
          if (p.m0 <= 0) return 0.0;
          return std::max(0.0, p.m2 - p.m1 * p.m1 / p.m0) / std::sqrt(2 * M_PI);
        },
        lo, hi, cfg, br);
    e.tail_mass = z.tail_mass(cfg.truncation_sigmas) + 2 * normal_tail(k);
    return e;
  }
  // Monte Carlo over (Z, N)
  const auto ud = static_cast<std::size_t>(d);
  std::function<Vector(const Vector&)> post;
  if (d == 1) {
    const NumericConfig inner = cfg.nested();
    post = [&, inner](const Vector& y) {
      const auto p = detail::posterior_moments_1d(z, sg, y(0), inner);
      return Vector::Constant(1, p.m0 > 0 ? p.m1 / p.m0 : 0.0);
    };
  } else {
    Rng rng(substream_seed(cfg.rng_seed, 53));
    std::vector<Vector> xs;
    std::vector<double> buf(ud);
    for (int i = 0; i < 2000; ++i) {
      z.sample(rng, buf);
      xs.push_back(Eigen::Map<const Vector>(buf.data(), d));
    }
    post = [xs, sg, d](const Vector& y) {
      std::vector<double> lw;
      double top = -INFINITY;
      for (const auto& v : xs) {
        lw.push_back(-0.5 * (y - sg * v).squaredNorm());
        top = std::max(top, lw.back());
      }
      Vector num = Vector::Zero(d);
      double den = 0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const double w = std::exp(lw[i] - top);
        num += w * xs[i];
        den += w;
      }
      return Vector(num / den);
    };
  }
  return mc_mean(
      [&](Rng& rng, std::span<double> out) {
        z.sample(rng, out.subspan(0, ud));
        for (std::size_t i = 0; i < ud; ++i) out[ud + i] = rng.normal();
      },
      2 * ud,
      [&](Point q) {
        const Vector zv = Eigen::Map<const Vector>(q.data(), d);
        const Vector y = sg * zv + Eigen::Map<const Vector>(q.data() + d, d);
        return (zv - post(y)).squaredNorm();
      },
      cfg, substream_seed(cfg.rng_seed, 54));
}

/// h(Z) = h(N(0, I)) + 1/2 integral_0^inf [M(Z; g) - d/(1 + g)] dg, compared
/// with the directly computed entropy. The integral runs in s = ln(1 + g) up
/// to g = 1e4; beyond that M(g) - d/(1+g) ~ (d - tr J(Z))/g^2. The indicator
/// form 1{g < 1} is evaluated on growing ranges and reported only.
inline CheckReport mmse_representation_check(const Distribution& z, const NumericConfig& cfg) {
  if (z.is_discrete()) throw StructureError("mmse_representation: Z must be continuous");
  const auto d = static_cast<double>(z.dim());
  NumericConfig outer = cfg;
  outer.quad_abs_tol = std::max(cfg.quad_abs_tol, 1e-8);
  outer.quad_rel_tol = std::max(cfg.quad_rel_tol, 1e-7);
  auto integrand = [&](double s) {
    const double g = std::expm1(s);
    NumericConfig c = outer;
    c.quad_abs_tol = outer.quad_abs_tol / (1.0 + g);
    return (mmse_functional(z, g, c).value - d / (1.0 + g)) * (1.0 + g);
  };
  const double top = 1e4;
  std::vector<double> cuts{0.0, std::log1p(1.0), std::log1p(10.0), std::log1p(100.0), std::log1p(1000.0), std::log1p(top)};
  std::vector<double> partial{0.0};
  double err = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const Estimate e = integrate_1d(integrand, cuts[i], cuts[i + 1], outer);
    partial.push_back(partial.back() + e.value);
    err += e.error_bound;
  }
  double trj = 0.0;
  if (z.is_gaussian()) {
    trj = z.covariance().llt().solve(Matrix::Identity(z.covariance().rows(), z.covariance().rows())).trace();
  } else {
    trj = expect(z, [&](Point p) {
            const double f = z.pdf(p);
            return f > 0 ? (z.grad_pdf(p) / f).squaredNorm() : 0.0;
          }, cfg).value;
  }
  const double tail = (d - trj) / top;
  const double h_normal = 0.5 * d * std::log(2 * M_PI * M_E);
  const double h_rep = h_normal + 0.5 * (partial.back() + tail);
  const Estimate h_direct = z.is_gaussian() ? Estimate::exact(gaussian_sde(z.covariance())) : wde(z, WeightFunction(), cfg);

  CheckReport r;
  r.name = "mmse_representation";
  r.gap_requirement = Requirement::approx_zero;
  r.gap.value = h_rep - h_direct.value;
  r.gap.method = Method::quadrature;
  // the neglected tail is O(1/top^2) relative to the leading term
  r.gap.error_bound = 0.5 * (err + std::abs(tail) / top + 1e-9 * top) + h_direct.band();
  r.values = {{"h via MMSE (Gaussian reference)", h_rep}, {"h direct", h_direct.value}, {"tail beyond gamma=1e4", 0.5 * tail}};
  // printed counterterm: integral_0^G [M - d 1{g<1}] = I(G) + d ln(1 + G) - d
  double last = 0.0;
  for (std::size_t k = 2; k <= 4; ++k) {
    const double g = std::expm1(cuts[k]);
    last = h_normal + 0.5 * (partial[k] + d * cuts[k] - d);
    r.values.emplace_back("printed indicator form up to gamma=" + detail::where(g), last);
  }
  finalize(r, outer, 1e-6);
  Variant printed;
  printed.label = "printed indicator counterterm (NOT-VERIFIED: integral grows like ln(gamma))";
  printed.hypotheses_met = true;
  printed.gap = last - h_direct.value;
  printed.verdict = Verdict::INCONCLUSIVE;
  r.variants.push_back(printed);
  r.notes.push_back("NOT-VERIFIED: indicator form of the representation; Gaussian-reference form used");
  return r;
}

// ---------------------------------------------------------------------------
// Weighted De Bruijn identity and WEP concavity

namespace detail {

inline Distribution smoothed(const Distribution& x, double gamma, const NumericConfig& cfg) {
  const auto d = static_cast<Eigen::Index>(x.dim());
  return convolve(x, Distribution::gaussian(Vector::Zero(d), gamma * Matrix::Identity(d, d)), cfg);
}

/// Five-point values r(g + k h), k = -2..2, and the first and second derivatives.
struct Stencil {
  double d1 = 0, d2 = 0, h = 0, centre = 0;
};

template <class F>
Stencil stencil(const F& f, double g, double h) {
  const double fm2 = f(g - 2 * h), fm1 = f(g - h), f0 = f(g), fp1 = f(g + h), fp2 = f(g + 2 * h);
  Stencil s;
  s.h = h;
  s.centre = f0;
  s.d1 = (-fp2 + 8 * fp1 - 8 * fm1 + fm2) / (12 * h);
  s.d2 = (-fp2 + 16 * fp1 - 30 * f0 + 16 * fm1 - fm2) / (12 * h * h);
  return s;
}

inline double gamma_step(double g) { return std::min(0.05, g / 4.0) * std::max(1.0, g); }

}  // namespace detail

/// |d/dg h^w(Z) - {1/2 tr J^w(Z) - 1/2 E[phi Lap f/f] + 1/2 R(g)}| for
/// Z = X + sqrt(g) N, with R(g) = E[ln f_Z grad phi . grad ln f_Z].
inline CheckReport debruijn_check(const Distribution& x, double gamma, const WeightFunction& phi, const NumericConfig& cfg) {
  if (!(gamma > 0)) throw DomainError("debruijn: gamma must be > 0");
  const auto ud = x.dim();
  const Distribution z = detail::smoothed(x, gamma, cfg);
  const auto br = detail::weight_breaks(phi, ud);
  const Estimate j = expect(
      z,
      [&](Point p) {
        const double f = z.pdf(p), w = phi(p);
        if (f == 0.0 || w == 0.0) return 0.0;
        return w * (z.grad_pdf(p) / f).squaredNorm();
      },
      cfg, br);
  const Estimate lap = expect(
      z,
      [&](Point p) {
        const double f = z.pdf(p), w = phi(p);
        if (f == 0.0 || w == 0.0) return 0.0;
        return w * z.laplacian_pdf(p) / f;
      },
      cfg, br);
  const Estimate rg = expect(
      z,
      [&](Point p) {
        const double f = z.pdf(p);
        if (f == 0.0) return 0.0;
        return std::log(f) * phi.gradient(p).dot(z.grad_pdf(p) / f);
      },
      cfg, br);
  const double h = 1e-3 * std::max(1.0, gamma);
  double herr = 0.0;
  auto hw = [&](double g) {
    const Estimate e = wde(detail::smoothed(x, g, cfg), phi, cfg);
    herr = std::max(herr, e.band() + 10 * e.tail_mass);
    return e.value;
  };
  const auto st = detail::stencil(hw, gamma, h);
  // Richardson estimate of the stencil's truncation error
  const double trunc = gamma > 4 * h ? std::abs(st.d1 - detail::stencil(hw, gamma, 2 * h).d1) / 15.0 : 0.0;
  const double rhs = 0.5 * j.value - 0.5 * lap.value + 0.5 * rg.value;

  CheckReport r;
  r.name = "debruijn";
  r.gap_requirement = Requirement::approx_zero;
  r.gap.value = st.d1 - rhs;
  r.gap.method = Method::quadrature;
  r.gap.error_bound = 18.0 * (herr + 10 * cfg.quad_abs_tol) / (12 * h) + trunc + 0.5 * (j.band() + lap.band() + rg.band());
  r.gap.tail_mass = std::max({j.tail_mass, lap.tail_mass, rg.tail_mass});
  r.values = {{"d/dgamma h^w(Z)", st.d1},
              {"1/2 tr J^w(Z)", 0.5 * j.value},
              {"-1/2 E[phi Lap f/f]", -0.5 * lap.value},
              {"1/2 R(gamma)", 0.5 * rg.value},
              {"rhs", rhs}};
  finalize(r, cfg);
  return r;
}

struct EpiGammaDiagnostics {
  double gamma = 0;
  std::map<std::string, double> M_values;
  double Lambda_gamma = 0;
  double psi_gamma = 0;
  double dpsi = 0;            // d psi / d gamma
  double dpsi_classical = std::numeric_limits<double>::quiet_NaN();  // d/dg [d / tr J(Z)], unit weight only
  double R_gamma = 0;
  double wep = 0;
  bool inconclusive = false;
};

/// N^w(Z_g) = exp(2 h^w(Z_g) / (d E phi(Z_g))) on a grid, with
/// Lambda = (2/d) d/dg [h^w / E phi], psi = 1/Lambda and the criterion
/// d psi/dg >= 1. Second differences of N^w give an independent verdict.
inline std::pair<std::vector<EpiGammaDiagnostics>, CheckReport> wep_concavity_scan(const Distribution& x,
                                                                                   const WeightFunction& phi,
                                                                                   const std::vector<double>& grid,
                                                                                   const NumericConfig& cfg) {
  if (grid.empty()) throw DomainError("wep_scan: empty gamma grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0)) throw DomainError("wep_scan: gamma values must be > 0");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw DomainError("wep_scan: gamma grid must be increasing");
  }
  const double d = static_cast<double>(x.dim());
  const bool unit = phi.is_constant() && phi.constant_value() == 1.0;
  std::vector<EpiGammaDiagnostics> out;
  CheckReport r;
  r.name = "wep_concavity";
  double worst = INFINITY, noise = 0.0;
  bool any_inconclusive = false;
  for (double g : grid) {
    EpiGammaDiagnostics e;
    e.gamma = g;
    double err = 0.0;
    auto ratio = [&](double gg) {
      const Distribution z = detail::smoothed(x, gg, cfg);
      const Estimate h = wde(z, phi, cfg), m = expect_weight(z, phi, cfg);
      err = std::max(err, (h.band() + std::abs(h.value / m.value) * m.band()) / m.value + 10 * cfg.quad_abs_tol);
      return h.value / m.value;
    };
    const double h = detail::gamma_step(g);
    const auto st = detail::stencil(ratio, g, h);
    e.wep = std::exp(2 * st.centre / d);
    e.Lambda_gamma = 2 / d * st.d1;
    const double lam_err = 2 / d * 18 * err / (12 * h);
    if (std::abs(e.Lambda_gamma) <= std::max(1e-12, lam_err)) {
      e.inconclusive = true;
      any_inconclusive = true;
      e.psi_gamma = e.dpsi = std::numeric_limits<double>::quiet_NaN();
    } else {
      e.psi_gamma = 1 / e.Lambda_gamma;
      // psi' = -Lambda' / Lambda^2, Lambda' = (2/d) r''
      e.dpsi = -(2 / d * st.d2) / (e.Lambda_gamma * e.Lambda_gamma);
      noise = std::max(noise, (2 / d * 64 * err / (12 * h * h)) / (e.Lambda_gamma * e.Lambda_gamma));
      worst = std::min(worst, e.dpsi - 1.0);
    }
    if (unit) {
      const auto st_j = detail::stencil(
          [&](double gg) {
            const Distribution z = detail::smoothed(x, gg, cfg);
            const Estimate j = expect(
                z,
                [&](Point p) {
                  const double f = z.pdf(p);
                  return f == 0.0 ? 0.0 : (z.grad_pdf(p) / f).squaredNorm();
                },
                cfg);
            return d / j.value;
          },
          g, h);
      e.dpsi_classical = st_j.d1;
    }
    const Distribution z = detail::smoothed(x, g, cfg);
    e.R_gamma = expect(
                    z,
                    [&](Point p) {
                      const double f = z.pdf(p);
                      if (f == 0.0) return 0.0;
                      return std::log(f) * phi.gradient(p).dot(z.grad_pdf(p) / f);
                    },
                    cfg, detail::weight_breaks(phi, x.dim()))
                    .value;
    e.M_values["X"] = mmse_functional(x, g, cfg).value;
    r.values.emplace_back("N^w at gamma=" + detail::where(g), e.wep);
    r.values.emplace_back("dpsi/dgamma at gamma=" + detail::where(g), e.dpsi);
    out.push_back(e);
  }
  // second divided differences of N^w over the grid
  double worst_curv = -INFINITY;
  for (std::size_t i = 1; i + 1 < out.size(); ++i) {
    const double g0 = out[i - 1].gamma, g1 = out[i].gamma, g2 = out[i + 1].gamma;
    const double dd = 2 * ((out[i + 1].wep - out[i].wep) / (g2 - g1) - (out[i].wep - out[i - 1].wep) / (g1 - g0)) / (g2 - g0);
    worst_curv = std::max(worst_curv, dd);
    r.values.emplace_back("second difference at gamma=" + detail::where(g1), dd);
  }
  r.gap.value = std::isfinite(worst) ? worst : 0.0;
  r.gap.method = Method::quadrature;
  r.gap.error_bound = noise;
  r.values.emplace_back("min dpsi/dgamma - 1", r.gap.value);
  if (std::isfinite(worst_curv)) r.values.emplace_back("max second difference", worst_curv);
  finalize(r, cfg, 1e-6);
  if (any_inconclusive) {
    r.notes.push_back("Lambda(gamma) within noise of 0 at some grid points");
    if (!std::isfinite(worst)) r.verdict = Verdict::INCONCLUSIVE;
  }
  Variant curv;
  curv.label = "second differences of N^w <= 0";
  curv.hypotheses_met = true;
  curv.gap = std::isfinite(worst_curv) ? -worst_curv : 0.0;
  curv.verdict = std::isfinite(worst_curv) ? gap_verdict(curv.gap, 0.0, 1e-6 * std::max(1.0, out.back().wep), Requirement::nonnegative)
                                           : Verdict::INCONCLUSIVE;
  r.variants.push_back(curv);
  return {out, r};
}

}  // namespace wentropy
