#pragma once

// Weighted Fisher information: WFIM, its link to weighted KL, the weighted
// Fisher information inequality and the additive Gaussian noise form.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "inequalities.hpp"

namespace wentropy {

/// f_theta at a fixed theta, with its score S(x) = grad_theta ln f_theta(x)
/// and (optionally) the score's theta-Jacobian.
struct FamilyMember {
  Distribution law;
  std::function<Vector(Point)> score;
  std::function<Matrix(Point)> score_jacobian;
};

struct ParametricFamily {
  std::string name = "custom";
  std::size_t dim = 1;
  std::size_t param_dim = 1;
  bool location = false;  // f_theta(x) = f_0(x - theta)
  bool smooth = true;     // twice differentiable in theta
  std::function<FamilyMember(const Vector&, const NumericConfig&)> make;

  /// Member at theta; missing scores are filled in by finite differences of
  /// ln f in theta.
  [[nodiscard]] FamilyMember at(const Vector& theta, const NumericConfig& cfg) const {
    if (static_cast<std::size_t>(theta.size()) != param_dim)
      throw StructureError(name + ": theta has dimension " + std::to_string(theta.size()) + ", expected " +
                           std::to_string(param_dim));
    FamilyMember m = make(theta, cfg);
    const auto mk = make;
    const std::size_t p = param_dim;
    if (!m.score) {
      m.score = [mk, theta, cfg, p](Point x) {
        Vector s(static_cast<Eigen::Index>(p));
        for (std::size_t i = 0; i < p; ++i) {
          s(static_cast<Eigen::Index>(i)) = finite_diff(
              [&](double t) {
                Vector th = theta;
                th(static_cast<Eigen::Index>(i)) = t;
                return mk(th, cfg).law.log_pdf(x);
              },
              theta(static_cast<Eigen::Index>(i)), 1, cfg);
        }
        return s;
      };
    }
    if (!m.score_jacobian) {
      const auto self = *this;
      m.score_jacobian = [self, theta, cfg, p](Point x) {
        Matrix j(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
        for (std::size_t k = 0; k < p; ++k)
          for (std::size_t i = 0; i < p; ++i)
            j(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = finite_diff(
                [&](double t) {
                  Vector th = theta;
                  th(static_cast<Eigen::Index>(k)) = t;
                  FamilyMember mm = self.make(th, cfg);
                  if (mm.score) return mm.score(x)(static_cast<Eigen::Index>(i));
                  return self.at(th, cfg).score(x)(static_cast<Eigen::Index>(i));
                },
                theta(static_cast<Eigen::Index>(k)), 1, cfg);
        return j;
      };
    }
    return m;
  }

  /// N(theta, cov): score cov^-1 (x - theta).
  static ParametricFamily gaussian_location(const Matrix& cov) {
    require_spd(cov, "gaussian_location.covariance");
    ParametricFamily f;
    f.name = "gaussian_location";
    f.dim = f.param_dim = static_cast<std::size_t>(cov.rows());
    f.location = true;
    const Matrix prec = cov.llt().solve(Matrix::Identity(cov.rows(), cov.cols()));
    f.make = [cov, prec](const Vector& th, const NumericConfig&) {
      FamilyMember m;
      m.law = Distribution::gaussian(th, cov);
      m.score = [prec, th](Point x) -> Vector { return prec * (to_vector(x) - th); };
      m.score_jacobian = [prec](Point) -> Matrix { return -prec; };
      return m;
    };
    return f;
  }
  static ParametricFamily gaussian_location(double variance) {
    return gaussian_location(Matrix::Constant(1, 1, variance));
  }

  /// N(mean, theta^2), theta = standard deviation.
  static ParametricFamily gaussian_scale(double mean) {
    ParametricFamily f;
    f.name = "gaussian_scale";
    f.make = [mean](const Vector& th, const NumericConfig&) {
      const double s = th(0);
      if (!(s > 0)) throw DomainError("gaussian_scale: theta must be > 0");
      FamilyMember m;
      m.law = Distribution::normal(mean, s * s);
      m.score = [mean, s](Point x) { const double u = x[0] - mean; return Vector::Constant(1, -1.0 / s + u * u / (s * s * s)); };
      m.score_jacobian = [mean, s](Point x) {
        const double u = x[0] - mean;
        return Matrix::Constant(1, 1, 1.0 / (s * s) - 3.0 * u * u / (s * s * s * s));
      };
      return m;
    };
    return f;
  }

  /// Laplace(theta, b): score sign(x - theta)/b.
  static ParametricFamily laplace_location(double b) {
    if (!(b > 0)) throw DomainError("laplace_location: scale must be > 0");
    ParametricFamily f;
    f.name = "laplace_location";
    f.location = true;
    f.smooth = false;
    f.make = [b](const Vector& th, const NumericConfig&) {
      FamilyMember m;
      m.law = Distribution::laplace(th(0), b);
      const double t = th(0);
      m.score = [t, b](Point x) {
        const double u = x[0] - t;
        return Vector::Constant(1, u > 0 ? 1.0 / b : (u < 0 ? -1.0 / b : 0.0));
      };
      m.score_jacobian = [](Point) { return Matrix::Zero(1, 1).eval(); };
      return m;
    };
    return f;
  }

  /// Location family generated by a base law: f_theta(x) = f_0(x - theta).
  static ParametricFamily location_of(const Distribution& base) {
    if (base.is_discrete()) throw StructureError("location_of: base law must be continuous");
    ParametricFamily f;
    f.name = "location(" + base.kind() + ")";
    f.dim = f.param_dim = base.dim();
    f.location = true;
    f.smooth = base.kind() != "laplace" && base.kind() != "uniform" && base.kind() != "trapezoid";
    f.make = [base](const Vector& th, const NumericConfig&) {
      FamilyMember m;
      m.law = base.shifted(th);
      m.score = [base, th](Point x) -> Vector {
        const Vector u = to_vector(x) - th;
        const Point up(u.data(), static_cast<std::size_t>(u.size()));
        const double p = base.pdf(up);
        if (p == 0.0) return Vector::Zero(u.size());
        return -base.grad_pdf(up) / p;
      };
      return m;
    };
    return f;
  }

  /// Exponential family h(x) exp(<theta,T(x)> - A(theta)): S = T - E_theta T,
  /// dS/dtheta = -Cov_theta(T).
  static ParametricFamily exponential(const ExponentialFamilySpec& spec) {
    ParametricFamily f;
    f.name = "exponential_family";
    f.dim = spec.dim;
    f.param_dim = spec.param_dim;
    f.make = [spec](const Vector& th, const NumericConfig& cfg) {
      FamilyMember m;
      m.law = spec.at(th, cfg);
      const auto p = static_cast<Eigen::Index>(spec.param_dim);
      Vector mt(p);
      Matrix ct(p, p);
      const Distribution law = m.law;
      for (Eigen::Index i = 0; i < p; ++i)
        mt(i) = integrate_box([&](Point x) { return law.pdf(x) * spec.sufficient_stat(x)(i); }, spec.support, cfg).value;
      for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) {
          ct(i, j) = ct(j, i) = integrate_box(
                                    [&](Point x) {
                                      const Vector t = spec.sufficient_stat(x) - mt;
                                      return law.pdf(x) * t(i) * t(j);
                                    },
                                    spec.support, cfg)
                                    .value;
        }
      m.score = [spec, mt](Point x) -> Vector { return spec.sufficient_stat(x) - mt; };
      m.score_jacobian = [ct](Point) -> Matrix { return -ct; };
      return m;
    };
    return f;
  }

  /// Any theta -> law map; scores by finite differences.
  static ParametricFamily custom(std::string name, std::size_t d, std::size_t m,
                                 std::function<Distribution(const Vector&)> law) {
    ParametricFamily f;
    f.name = std::move(name);
    f.dim = d;
    f.param_dim = m;
    f.make = [law](const Vector& th, const NumericConfig&) { return FamilyMember{law(th), {}, {}}; };
    return f;
  }
};

namespace detail {

inline IntegrationBox law_box(const Distribution& f, const WeightFunction& phi, const NumericConfig& cfg) {
  IntegrationBox b = f.box(cfg.truncation_sigmas);
  b.breaks.resize(b.dim());
  for (std::size_t i = 0; i < b.dim(); ++i) {
    auto br = phi.breakpoints(i);
    b.breaks[i].insert(b.breaks[i].end(), br.begin(), br.end());
  }
  return b;
}

/// Symmetric matrix E[g(X)] entry by entry, g returning a p x p matrix.
template <class G>
std::pair<Matrix, Estimate> matrix_expect(const Distribution& f, std::size_t p, const G& g, const NumericConfig& cfg,
                                          const std::vector<std::vector<double>>& br, bool symmetric = true) {
  const auto n = static_cast<Eigen::Index>(p);
  Matrix out = Matrix::Zero(n, n);
  Estimate meta = Estimate::exact(0.0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (symmetric && j > i) continue;
      const Estimate e = expect(f, [&](Point x) { return g(x)(i, j); }, cfg, br);
      out(i, j) = e.value;
      if (symmetric) out(j, i) = e.value;
      meta.error_bound = std::max(meta.error_bound, e.error_bound);
      meta.std_error = std::max(meta.std_error, e.std_error);
      meta.tail_mass = std::max(meta.tail_mass, e.tail_mass);
      meta.method = e.method;
    }
  return {out, meta};
}

inline double min_eigenvalue(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()));
  return es.eigenvalues().minCoeff();
}

}  // namespace detail

struct WfimResult {
  Matrix value;
  Estimate meta;  // worst entry error
};

/// E[phi(X) S S^T] under f_theta, symmetrised; StructureError if not PSD.
inline WfimResult wfim_estimate(const ParametricFamily& fam, const Vector& theta, const WeightFunction& phi,
                                const NumericConfig& cfg) {
  const FamilyMember m = fam.at(theta, cfg);
  const auto br = detail::weight_breaks(phi, m.law.dim());
  auto [j, meta] = detail::matrix_expect(
      m.law, fam.param_dim,
      [&](Point x) -> Matrix {
        const double w = phi(x);
        if (w == 0.0) return Matrix::Zero(static_cast<Eigen::Index>(fam.param_dim), static_cast<Eigen::Index>(fam.param_dim));
        const Vector s = m.score(x);
        return w * s * s.transpose();
      },
      cfg, br);
  j = 0.5 * (j + j.transpose()).eval();
  const double lo = detail::min_eigenvalue(j);
  if (lo < -(1e-9 + meta.band() * static_cast<double>(fam.param_dim)))
    throw StructureError("wfim: result is not positive semidefinite (min eigenvalue " + detail::where(lo) + ")");
  return {j, meta};
}

inline Matrix wfim(const ParametricFamily& fam, const Vector& theta, const WeightFunction& phi, const NumericConfig& cfg) {
  return wfim_estimate(fam, theta, phi, cfg).value;
}

/// E_theta[S] with the uncertainty used to judge it against zero.
inline std::vector<Estimate> score_mean(const ParametricFamily& fam, const Vector& theta, const NumericConfig& cfg) {
  const FamilyMember m = fam.at(theta, cfg);
  std::vector<Estimate> out;
  for (std::size_t i = 0; i < fam.param_dim; ++i)
    out.push_back(expect(m.law, [&](Point x) { return m.score(x)(static_cast<Eigen::Index>(i)); }, cfg));
  return out;
}

// ---------------------------------------------------------------------------
// KL / WFIM Taylor link

/// Residual of the second-order expansion of D^w(f_t1 || f_t2) divided by
/// (t2 - t1)^2, over the steps d, d/2, d/4, d/8. The check HOLDS when the
/// ratio shrinks across halvings (one non-monotone step allowed) or stays
/// within noise throughout.
inline CheckReport kl_taylor_check(const ParametricFamily& fam, double theta1, double theta2, const WeightFunction& phi,
                                   const NumericConfig& cfg) {
  if (fam.param_dim != 1) throw StructureError("kl_taylor_check: needs a one-parameter family");
  CheckReport r;
  r.name = "kl_taylor";
  r.gap_requirement = Requirement::nonnegative;
  r.add_hypothesis("family twice differentiable in theta", fam.smooth ? 1.0 : 0.0, Requirement::holds, 0.0);
  const Vector t1 = Vector::Constant(1, theta1);
  const FamilyMember m = fam.at(t1, cfg);
  const auto br = detail::weight_breaks(phi, m.law.dim());
  const Estimate j = expect(m.law, [&](Point x) { const double s = m.score(x)(0); return phi(x) * s * s; }, cfg, br);
  const Estimate b = expect(m.law, [&](Point x) { return phi(x) * m.score(x)(0); }, cfg, br);
  // D^2 f / f = S^2 + dS/dtheta
  const Estimate c2 = expect(
      m.law,
      [&](Point x) {
        const double w = phi(x);
        if (w == 0.0) return 0.0;
        const double s = m.score(x)(0);
        return w * (s * s + m.score_jacobian(x)(0, 0));
      },
      cfg, br);
  r.values = {{"J_w", j.value}, {"E[phi S]", b.value}, {"E[phi D2f/f]", c2.value}};
  const double delta = theta2 - theta1;
  if (delta == 0.0) {
    r.gap = Estimate::exact(0.0);
    r.values.emplace_back("residual/delta^2", 0.0);
    r.tolerance_used = 0.0;
    r.verdict = r.hypotheses_met ? Verdict::HOLDS : Verdict::HYPOTHESIS_UNMET;
    r.equality = true;
    return r;
  }
  std::vector<double> ratio, noise;
  for (int k = 0; k < 4; ++k) {
    const double dk = delta / std::ldexp(1.0, k);
    const FamilyMember m2 = fam.at(Vector::Constant(1, theta1 + dk), cfg);
    const Estimate d = weighted_kl(m.law, m2.law, phi, cfg);
    const double pred = 0.5 * j.value * dk * dk - b.value * dk - 0.5 * c2.value * dk * dk;
    ratio.push_back((d.value - pred) / (dk * dk));
    const double err = d.band() + 10 * d.tail_mass + 10 * cfg.quad_abs_tol + b.band() * std::abs(dk) +
                       0.5 * (j.band() + c2.band()) * dk * dk + 1e-12 * (std::abs(d.value) + std::abs(pred));
    noise.push_back(err / (dk * dk));
    r.values.emplace_back("residual/delta^2 at delta=" + detail::where(dk), ratio.back());
  }
  int non_monotone = 0;
  for (std::size_t k = 0; k + 1 < ratio.size(); ++k)
    if (std::abs(ratio[k + 1]) > std::abs(ratio[k]) + noise[k] + noise[k + 1]) ++non_monotone;
  r.values.emplace_back("non_monotone_steps", non_monotone);
  r.gap = Estimate::exact(std::abs(ratio.front()) - std::abs(ratio.back()));
  r.tolerance_used = noise.front() + noise.back();
  const bool flat = std::abs(ratio.back()) <= noise.back() && std::abs(ratio.front()) <= noise.front();
  if (flat) {
    r.verdict = Verdict::HOLDS;
    r.equality = true;
  } else {
    r.verdict = (non_monotone <= 1 && r.gap.value >= -r.tolerance_used) ? Verdict::HOLDS : Verdict::VIOLATED;
  }
  if (!r.hypotheses_met) {
    r.variants.push_back({"ignoring the smoothness hypothesis", false, r.gap.value, r.verdict});
    r.verdict = Verdict::HYPOTHESIS_UNMET;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Weighted Fisher information inequality

struct WfiiTerms {
  Matrix M;   // M_phi
  Matrix G;   // J1^-1 M J2^-1
  Matrix Xi;  // Xi_{phi1,phi2}
  Matrix J1;  // J^w_{phi1}(X)
  Matrix J2;  // J^w_{phi2}(Y)
  Matrix M_x_reading;  // M_phi with d ln f2 evaluated at x, as printed
  WeightFunction phi1, phi2, phibar;
  Estimate meta;
};

namespace detail {

inline IntegrationBox pair_box(const Distribution& f1, const Distribution& f2, const WeightFunction& phi,
                               const NumericConfig& cfg) {
  const IntegrationBox a = f1.box(cfg.truncation_sigmas), b = f2.box(cfg.truncation_sigmas);
  IntegrationBox out{{a.lower[0], b.lower[0]}, {a.upper[0], b.upper[0]}, {{}, {}}};
  if (!a.breaks.empty()) out.breaks[0] = a.breaks[0];
  if (!b.breaks.empty()) out.breaks[1] = b.breaks[0];
  for (std::size_t i = 0; i < 2; ++i) {
    auto br = phi.breakpoints(i);
    out.breaks[i].insert(out.breaks[i].end(), br.begin(), br.end());
  }
  return out;
}

/// Largest |cosine| between the components of d f1/d theta and d f2/d theta as
/// functions on the line.
inline double score_alignment(const FamilyMember& m1, const FamilyMember& m2, std::size_t p, const NumericConfig& cfg) {
  const IntegrationBox a = m1.law.box(cfg.truncation_sigmas), b = m2.law.box(cfg.truncation_sigmas);
  // each density on its own box; a narrow one is lost on the union
  auto breaks_of = [](const IntegrationBox& bx) { return bx.breaks.empty() ? std::vector<double>{} : bx.breaks[0]; };
  std::vector<double> br1 = breaks_of(a), br2 = breaks_of(b);
  br1.push_back(m1.law.mean()(0));
  br2.push_back(m2.law.mean()(0));
  std::vector<double> br12 = br1;
  br12.insert(br12.end(), br2.begin(), br2.end());
  const double lo = std::max(a.lower[0], b.lower[0]), hi = std::min(a.upper[0], b.upper[0]);
  double worst = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    auto g1 = [&](double x) { Point px(&x, 1); const double f = m1.law.pdf(px); return f == 0.0 ? 0.0 : f * m1.score(px)(k); };
    auto g2 = [&](double x) { Point px(&x, 1); const double f = m2.law.pdf(px); return f == 0.0 ? 0.0 : f * m2.score(px)(k); };
    const double s12 = hi > lo ? integrate_1d([&](double x) { return g1(x) * g2(x); }, lo, hi, cfg, br12).value : 0.0;
    const double s11 = integrate_1d([&](double x) { const double v = g1(x); return v * v; }, a.lower[0], a.upper[0], cfg, br1).value;
    const double s22 = integrate_1d([&](double x) { const double v = g2(x); return v * v; }, b.lower[0], b.upper[0], cfg, br2).value;
    if (s11 > 0 && s22 > 0) worst = std::max(worst, std::abs(s12) / std::sqrt(s11 * s22));
  }
  return worst;
}

}  // namespace detail

/// M_phi, G_phi, Xi and the reduced-weight Fisher matrices for independent
/// one-dimensional X ~ f1(., theta), Y ~ f2(., theta) and a weight phi(x, y).
inline WfiiTerms wfii_terms(const ParametricFamily& fam1, const ParametricFamily& fam2, const Vector& theta,
                            const WeightFunction& phi, const NumericConfig& cfg) {
  if (fam1.dim != 1 || fam2.dim != 1) throw StructureError("wfii: families must be one-dimensional");
  if (fam1.param_dim != fam2.param_dim) throw StructureError("wfii: families have different parameter dimensions");
  if (phi.dim() != 0 && phi.dim() != 2) throw StructureError("wfii: weight must be a function of (x, y)");
  const std::size_t p = fam1.param_dim;
  const auto n = static_cast<Eigen::Index>(p);
  const FamilyMember m1 = fam1.at(theta, cfg), m2 = fam2.at(theta, cfg);
  const double align = detail::score_alignment(m1, m2, p, cfg);
  if (align >= 1.0 - 1e-6)
    throw StructureError("wfii: d f1/d theta is a multiple of d f2/d theta (|cos| = " + detail::where(align) + ")");

  const IntegrationBox box = detail::pair_box(m1.law, m2.law, phi, cfg);
  WfiiTerms t;
  t.meta = Estimate::exact(0.0);
  auto pair_matrix = [&](auto&& g, bool symmetric) {
    Matrix out = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        if (symmetric && j > i) continue;
        const Estimate e = integrate_box(
            [&](Point z) {
              const double f = m1.law.pdf(z.subspan(0, 1)) * m2.law.pdf(z.subspan(1, 1));
              return f == 0.0 ? 0.0 : f * g(z, i, j);
            },
            box, cfg);
        out(i, j) = e.value;
        if (symmetric) out(j, i) = e.value;
        t.meta.error_bound = std::max(t.meta.error_bound, e.error_bound);
      }
    return out;
  };
  auto phi_at = [&](double x, double y) {
    const double q[2] = {x, y};
    return phi(Point(q, 2));
  };
  t.J1 = pair_matrix(
      [&](Point z, Eigen::Index i, Eigen::Index j) {
        const double w = phi_at(z[0] + z[1], z[1]);
        if (w == 0.0) return 0.0;
        const Vector s = m1.score(z.subspan(0, 1));
        return w * s(i) * s(j);
      },
      true);
  t.J2 = pair_matrix(
      [&](Point z, Eigen::Index i, Eigen::Index j) {
        const double w = phi_at(z[0], z[0] + z[1]);
        if (w == 0.0) return 0.0;
        const Vector s = m2.score(z.subspan(1, 1));
        return w * s(i) * s(j);
      },
      true);
  t.M = pair_matrix(
      [&](Point z, Eigen::Index i, Eigen::Index j) {
        const double w = phi_at(z[0], z[1]);
        if (w == 0.0) return 0.0;
        return w * m1.score(z.subspan(0, 1))(i) * m2.score(z.subspan(1, 1))(j);
      },
      false);
  t.M_x_reading = pair_matrix(
      [&](Point z, Eigen::Index i, Eigen::Index j) {
        const double w = phi_at(z[0], z[1]);
        if (w == 0.0 || m2.law.pdf(z.subspan(0, 1)) == 0.0) return 0.0;
        return w * m1.score(z.subspan(0, 1))(i) * m2.score(z.subspan(0, 1))(j);
      },
      false);

  const Matrix j1i = guarded_inverse(t.J1, "wfii.J1");
  const Matrix j2i = guarded_inverse(t.J2, "wfii.J2");
  const Matrix id = Matrix::Identity(n, n);
  t.G = j1i * t.M * j2i;
  const Matrix k = guarded_inverse(id - t.M * t.G, "wfii.(I - M G)");
  // G (I-MG)^-1 M G J2 M^-1 = G (I-MG)^-1 M J1^-1, because G J2 M^-1 = J1^-1;
  // the right side stays defined when M is singular.
  t.Xi = t.M * t.J1 * t.G * k * t.M * (t.G * t.J2 * t.G - t.J1) + t.G * k * t.M * j1i -
         t.G * k * t.M * t.G * t.J2 * t.G - t.G * t.J2 * t.G - t.G;

  // Reduced weights, evaluated on demand.
  const auto l1 = m1.law, l2 = m2.law;
  const NumericConfig inner = cfg.nested();
  const IntegrationBox b1 = l1.box(cfg.truncation_sigmas), b2 = l2.box(cfg.truncation_sigmas);
  std::vector<double> br1 = b1.breaks.empty() ? std::vector<double>{} : b1.breaks[0];
  std::vector<double> br2 = b2.breaks.empty() ? std::vector<double>{} : b2.breaks[0];
  t.phi1 = WeightFunction::custom_1d([=](double x) {
    return integrate_1d([&](double y) { const double q[2] = {x + y, y}; return phi(Point(q, 2)) * l2.pdf(y); },
                        b2.lower[0], b2.upper[0], inner, br2)
        .value;
  });
  t.phi2 = WeightFunction::custom_1d([=](double y) {
    return integrate_1d([&](double x) { const double q[2] = {x, x + y}; return phi(Point(q, 2)) * l1.pdf(x); },
                        b1.lower[0], b1.upper[0], inner, br1)
        .value;
  });
  t.phibar = WeightFunction::custom_1d([=](double u) {
    double den = 0.0;
    const double num = integrate_1d(
                           [&](double v) {
                             const double q[2] = {v, u - v};
                             const double f = l1.pdf(v) * l2.pdf(u - v);
                             return f == 0.0 ? 0.0 : phi(Point(q, 2)) * f;
                           },
                           b1.lower[0], b1.upper[0], inner, br1)
                           .value;
    den = integrate_1d([&](double v) { return l1.pdf(v) * l2.pdf(u - v); }, b1.lower[0], b1.upper[0], inner, br1).value;
    return den > 0 ? num / den : 0.0;
  });
  return t;
}

/// J^w_{phibar}(X+Y) against (I - M G)[J1^-1 + J2^-1 -/+ Xi]^-1 for location
/// families. The primary gap uses -Xi; the +Xi reading is a variant.
inline CheckReport wfii_check(const ParametricFamily& fam1, const ParametricFamily& fam2, const Vector& theta,
                              const WeightFunction& phi, const NumericConfig& cfg) {
  if (fam1.param_dim != 1 || fam2.param_dim != 1)
    throw StructureError("wfii_check: only one-parameter location families are supported");
  const WfiiTerms t = wfii_terms(fam1, fam2, theta, phi, cfg);
  const FamilyMember m1 = fam1.at(theta, cfg), m2 = fam2.at(theta, cfg);
  const Distribution z = convolve(m1.law, m2.law, cfg);
  const IntegrationBox box = detail::pair_box(m1.law, m2.law, phi, cfg);
  // phibar(u) f_Z(u) = integral phi(v, u - v) f1(v) f2(u - v) dv, so J^w_phibar(X+Y)
  // is a double integral against f1 f2 with the location score of X+Y.
  const Estimate lhs = integrate_box(
      [&](Point q) {
        const double f = m1.law.pdf(q.subspan(0, 1)) * m2.law.pdf(q.subspan(1, 1));
        if (f == 0.0) return 0.0;
        const double w = phi(q);
        if (w == 0.0) return 0.0;
        const double u = q[0] + q[1];
        const Point pu(&u, 1);
        const double fz = z.pdf(pu);
        if (fz == 0.0) return 0.0;
        const double s = z.grad_pdf(pu)(0) / fz;
        return w * f * s * s;
      },
      box, cfg);

  const Matrix id = Matrix::Identity(1, 1);
  const Matrix j1i = t.J1.inverse(), j2i = t.J2.inverse();
  auto rhs_of = [&](double sign) -> std::optional<double> {
    const Matrix inner = j1i + j2i + sign * t.Xi;
    if (std::abs(inner(0, 0)) < 1e-300) return std::nullopt;
    return ((id - t.M * t.G) * inner.inverse())(0, 0);
  };
  const auto rhs_minus = rhs_of(-1.0), rhs_plus = rhs_of(1.0);

  CheckReport r;
  r.name = "wfii";
  const double rhs_val = rhs_minus.value_or(std::numeric_limits<double>::infinity());
  const double rel = t.meta.error_bound * (1.0 / (t.J1(0, 0) * t.J1(0, 0)) + 1.0 / (t.J2(0, 0) * t.J2(0, 0)));
  const double rhs_err = std::isfinite(rhs_val) ? rhs_val * rhs_val * rel + 1e-12 * std::abs(rhs_val) : 0.0;
  r.add_hypothesis("|cos(d f1, d f2)| < 1 - 1e-6", 1.0, Requirement::holds, 0.0);
  r.gap = lhs;
  r.gap.value = rhs_val - lhs.value;
  r.gap.error_bound = lhs.error_bound + rhs_err;
  r.gap.tail_mass = m1.law.tail_mass(cfg.truncation_sigmas) + m2.law.tail_mass(cfg.truncation_sigmas);
  r.values = {{"lhs J^w(X+Y)", lhs.value},
              {"J1", t.J1(0, 0)},
              {"J2", t.J2(0, 0)},
              {"M", t.M(0, 0)},
              {"M (x reading)", t.M_x_reading(0, 0)},
              {"G", t.G(0, 0)},
              {"Xi", t.Xi(0, 0)},
              {"rhs (-Xi)", rhs_val},
              {"rhs (+Xi)", rhs_plus.value_or(std::numeric_limits<double>::infinity())}};
  finalize(r, cfg, 1e-12 * std::abs(lhs.value));
  for (const auto& [label, rv] : {std::pair{"statement: -Xi", rhs_minus}, std::pair{"proof: +Xi", rhs_plus}}) {
    Variant v;
    v.label = label;
    v.hypotheses_met = r.hypotheses_met;
    v.gap = rv.value_or(std::numeric_limits<double>::infinity()) - lhs.value;
    v.verdict = gap_verdict(v.gap, 0.0, r.tolerance_used, Requirement::nonnegative);
    r.variants.push_back(v);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Additive Gaussian noise

namespace detail {

/// E[X | X + N = z] for N ~ N(0, sigma).
inline std::function<Vector(Point)> posterior_mean(const Distribution& x, const Matrix& sigma, const NumericConfig& cfg) {
  const Eigen::Index d = sigma.rows();
  if (x.is_gaussian()) {
    const Vector mu = x.mean();
    const Matrix s = x.covariance();
    const Matrix gain = (s + sigma).llt().solve(s).transpose();  // S (S + Sigma)^-1
    return [mu, gain](Point z) -> Vector { return mu + gain * (to_vector(z) - mu); };
  }
  const Distribution noise = Distribution::gaussian(Vector::Zero(d), sigma);
  if (x.is_discrete()) {
    const auto atoms = x.atoms();
    return [atoms, noise, d](Point z) -> Vector {
      Vector num = Vector::Zero(d);
      double den = 0.0, top = -std::numeric_limits<double>::infinity();
      std::vector<double> lw;
      for (const auto& [p, m] : atoms) {
        const Vector u = to_vector(z) - p;
        lw.push_back(m > 0 ? std::log(m) + noise.log_pdf(Point(u.data(), static_cast<std::size_t>(d))) : -INFINITY);
        top = std::max(top, lw.back());
      }
      for (std::size_t i = 0; i < atoms.size(); ++i) {
        const double w = std::exp(lw[i] - top);
        num += w * atoms[i].first;
        den += w;
      }
      return num / den;
    };
  }
  if (d == 1) {
    const IntegrationBox b = x.box(cfg.truncation_sigmas);
    const NumericConfig inner = cfg.nested();
    const std::vector<double> br = b.breaks.empty() ? std::vector<double>{} : b.breaks[0];
    const double s = std::sqrt(sigma(0, 0));
    return [x, b, inner, br, s](Point z) -> Vector {
      auto k = [&](double v) { return x.pdf(v) * standard_normal_pdf((z[0] - v) / s); };
      const double den = integrate_1d(k, b.lower[0], b.upper[0], inner, br).value;
      const double num = integrate_1d([&](double v) { return v * k(v); }, b.lower[0], b.upper[0], inner, br).value;
      return Vector::Constant(1, den > 0 ? num / den : z[0]);
    };
  }
  // Self-normalised importance weights over a fixed draw of X.
  const int inner_n = 4000;
  Rng rng(substream_seed(cfg.rng_seed, 31));
  std::vector<Vector> xs;
  std::vector<double> buf(static_cast<std::size_t>(d));
  for (int i = 0; i < inner_n; ++i) {
    x.sample(rng, buf);
    xs.push_back(Eigen::Map<const Vector>(buf.data(), d));
  }
  return [xs, noise, d](Point z) -> Vector {
    std::vector<double> lw;
    double top = -INFINITY;
    for (const auto& v : xs) {
      const Vector u = to_vector(z) - v;
      lw.push_back(noise.log_pdf(Point(u.data(), static_cast<std::size_t>(d))));
      top = std::max(top, lw.back());
    }
    Vector num = Vector::Zero(d);
    double den = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double w = std::exp(lw[i] - top);
      num += w * xs[i];
      den += w;
    }
    return num / den;
  };
}

}  // namespace detail

/// J^w_phibar(Z) for Z = X + N(0, Sigma) computed two ways: from the density
/// of Z, and as Sigma^-1 {E[phibar N N^T] + E + E^T - V} Sigma^-1 with the
/// posterior mean E[X | Z]. The gap is the largest entrywise difference.
inline CheckReport additive_noise_wfim_check(const Distribution& x, const Matrix& sigma, const WeightFunction& phibar,
                                             const NumericConfig& cfg) {
  require_spd(sigma, "additive_noise.sigma");
  const Eigen::Index d = sigma.rows();
  if (static_cast<Eigen::Index>(x.dim()) != d) throw StructureError("additive_noise: dimension mismatch");
  const auto ud = static_cast<std::size_t>(d);
  const Distribution noise = Distribution::gaussian(Vector::Zero(d), sigma);
  const Distribution z = convolve(x, noise, cfg);
  const Matrix sinv = sigma.llt().solve(Matrix::Identity(d, d));

  // Density route.
  auto [lhs, lhs_meta] = detail::matrix_expect(
      z, ud,
      [&](Point p) -> Matrix {
        const double w = phibar(p);
        const double f = z.pdf(p);
        if (w == 0.0 || f == 0.0) return Matrix::Zero(d, d);
        const Vector s = z.grad_pdf(p) / f;
        return w * s * s.transpose();
      },
      cfg, detail::weight_breaks(phibar, ud));

  // Estimation route, integrated over (X, N).
  const auto xhat = detail::posterior_mean(x, sigma, cfg);
  auto inner_matrix = [&](const Vector& xv, const Vector& nv) -> Matrix {
    const Vector zv = xv + nv;
    const Point zp(zv.data(), ud);
    const double w = phibar(zp);
    if (w == 0.0) return Matrix::Zero(d, d);
    const Vector xh = xhat(zp);
    const Vector dx = xv - xh, dz = zv - xh;
    const Matrix e = dz * dx.transpose();
    return w * (nv * nv.transpose() + e + e.transpose() - dx * dx.transpose());
  };
  Matrix mid = Matrix::Zero(d, d);
  Estimate rhs_meta = Estimate::exact(0.0);
  if (x.is_discrete()) {
    for (const auto& [pt, mass] : x.atoms()) {
      if (mass == 0.0) continue;
      auto [m, meta] = detail::matrix_expect(
          noise, ud, [&](Point n) { return inner_matrix(pt, to_vector(n)); }, cfg, {});
      mid += mass * m;
      rhs_meta.error_bound += mass * meta.error_bound;
      rhs_meta.std_error = std::max(rhs_meta.std_error, meta.std_error);
      rhs_meta.tail_mass = std::max(rhs_meta.tail_mass, meta.tail_mass);
      rhs_meta.method = meta.method;
    }
  } else if (2 * ud <= kMaxQuadratureDim) {
    const IntegrationBox bx = x.box(cfg.truncation_sigmas), bn = noise.box(cfg.truncation_sigmas);
    IntegrationBox box{{bx.lower[0], bn.lower[0]}, {bx.upper[0], bn.upper[0]}, {{}, {}}};
    if (!bx.breaks.empty()) box.breaks[0] = bx.breaks[0];
    const Estimate e = integrate_box(
        [&](Point q) {
          const double f = x.pdf(q.subspan(0, 1)) * noise.pdf(q.subspan(1, 1));
          if (f == 0.0) return 0.0;
          return f * inner_matrix(Vector::Constant(1, q[0]), Vector::Constant(1, q[1]))(0, 0);
        },
        box, cfg);
    mid(0, 0) = e.value;
    rhs_meta = e;
    rhs_meta.tail_mass = x.tail_mass(cfg.truncation_sigmas) + noise.tail_mass(cfg.truncation_sigmas);
  } else {
    const auto sampler = [&](Rng& rng, std::span<double> out) {
      x.sample(rng, out.subspan(0, ud));
      noise.sample(rng, out.subspan(ud, ud));
    };
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) {
        const Estimate e = mc_mean(
            sampler, 2 * ud,
            [&](Point q) {
              return inner_matrix(Eigen::Map<const Vector>(q.data(), d), Eigen::Map<const Vector>(q.data() + d, d))(i, j);
            },
            cfg, cfg.rng_seed);
        mid(i, j) = mid(j, i) = e.value;
        rhs_meta.std_error = std::max(rhs_meta.std_error, e.std_error);
        rhs_meta.method = Method::monte_carlo;
      }
  }
  const Matrix rhs = sinv.transpose() * mid * sinv;
  const double scale = sinv.cwiseAbs().sum() * sinv.cwiseAbs().sum();

  CheckReport r;
  r.name = "additive_noise_wfim";
  r.gap_requirement = Requirement::approx_zero;
  Eigen::Index bi = 0, bj = 0;
  (lhs - rhs).cwiseAbs().maxCoeff(&bi, &bj);
  r.gap.value = lhs(bi, bj) - rhs(bi, bj);
  r.gap.method = rhs_meta.method == Method::monte_carlo ? Method::monte_carlo : Method::quadrature;
  r.gap.std_error = std::hypot(lhs_meta.std_error, scale * rhs_meta.std_error);
  r.gap.error_bound = lhs_meta.error_bound + scale * rhs_meta.error_bound;
  r.gap.tail_mass = std::max(lhs_meta.tail_mass, rhs_meta.tail_mass);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) {
      const std::string ij = "[" + std::to_string(i) + "," + std::to_string(j) + "]";
      r.values.emplace_back("J^w(Z)" + ij, lhs(i, j));
      r.values.emplace_back("representation" + ij, rhs(i, j));
    }
  finalize(r, cfg, 1e-10 * (lhs.cwiseAbs().maxCoeff() + 1.0));
  return r;
}

}  // namespace wentropy
