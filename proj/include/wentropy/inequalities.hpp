#pragma once

// Hypothesis checks and conclusion gaps for the weighted Gibbs, concavity,
// convexity, Ky-Fan, Gaussian-maximisation and Hadamard inequalities.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "entropy.hpp"

namespace wentropy {

enum class Verdict { HOLDS, VIOLATED, HYPOTHESIS_UNMET, INCONCLUSIVE };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::HOLDS: return "HOLDS";
    case Verdict::VIOLATED: return "VIOLATED";
    case Verdict::HYPOTHESIS_UNMET: return "HYPOTHESIS_UNMET";
    case Verdict::INCONCLUSIVE: return "INCONCLUSIVE";
  }
  return "?";
}

enum class Requirement { nonnegative, nonpositive, approx_zero, holds };

inline const char* to_string(Requirement r) {
  switch (r) {
    case Requirement::nonnegative: return ">=0";
    case Requirement::nonpositive: return "<=0";
    case Requirement::approx_zero: return "==0";
    case Requirement::holds: return "true";
  }
  return "?";
}

struct Hypothesis {
  std::string label;
  double value = 0.0;
  Requirement requirement = Requirement::nonnegative;
  double tolerance = 0.0;
  bool met = false;
};

/// An alternative reading of a statement, evaluated side by side.
struct Variant {
  std::string label;
  bool hypotheses_met = false;
  double gap = 0.0;
  Verdict verdict = Verdict::INCONCLUSIVE;
};

struct CheckReport {
  std::string name;
  std::vector<Hypothesis> hypotheses;
  bool hypotheses_met = true;
  Estimate gap;
  Requirement gap_requirement = Requirement::nonnegative;
  Verdict verdict = Verdict::INCONCLUSIVE;
  double tolerance_used = 0.0;
  bool equality = false;
  std::vector<std::pair<std::string, double>> values;  // named diagnostics
  std::vector<Variant> variants;
  std::vector<std::string> notes;

  void add_hypothesis(std::string label, double value, Requirement req, double tol) {
    Hypothesis h{std::move(label), value, req, tol, false};
    switch (req) {
      case Requirement::nonnegative: h.met = value >= -tol; break;
      case Requirement::nonpositive: h.met = value <= tol; break;
      case Requirement::approx_zero: h.met = std::abs(value) <= tol; break;
      case Requirement::holds: h.met = value != 0.0; break;
    }
    hypotheses_met = hypotheses_met && h.met;
    hypotheses.push_back(std::move(h));
  }

  [[nodiscard]] double value_of(const std::string& key) const {
    for (const auto& [k, v] : values)
      if (k == key) return v;
    throw std::out_of_range("CheckReport: no value named " + key);
  }
};

/// Verdict of a signed gap: deterministic gaps are compared with -tol, noisy
/// ones with a +-(tol + 3 se) band, inside which the result is INCONCLUSIVE.
inline Verdict gap_verdict(double gap, double se, double tol, Requirement req) {
  const double band = tol + 3.0 * se;
  if (req == Requirement::approx_zero) {
    if (std::abs(gap) <= band) return Verdict::HOLDS;
    return se > 0 && std::abs(gap) <= band + 3.0 * se ? Verdict::INCONCLUSIVE : Verdict::VIOLATED;
  }
  const double g = req == Requirement::nonpositive ? -gap : gap;
  if (se == 0.0) return g >= -tol ? Verdict::HOLDS : Verdict::VIOLATED;
  if (g > band) return Verdict::HOLDS;
  if (g < -band) return Verdict::VIOLATED;
  return Verdict::INCONCLUSIVE;
}

/// Fills verdict, tolerance and the equality flag. `extra_tol` covers
/// quadrature and truncation error of the gap's ingredients.
inline void finalize(CheckReport& r, const NumericConfig& cfg, double extra_tol = 0.0) {
  r.tolerance_used = 10.0 * cfg.quad_abs_tol + r.gap.error_bound + 10.0 * r.gap.tail_mass + extra_tol;
  const Verdict v = gap_verdict(r.gap.value, r.gap.std_error, r.tolerance_used, r.gap_requirement);
  r.verdict = r.hypotheses_met ? v : Verdict::HYPOTHESIS_UNMET;
  const double eq_band = std::max(r.tolerance_used, 10.0 * (cfg.quad_abs_tol + 3.0 * r.gap.std_error));
  r.equality = std::abs(r.gap.value) <= eq_band;
}

namespace detail {

inline double hyp_tol(const Estimate& a, const Estimate& b) {
  return a.band() + b.band() + a.tail_mass + b.tail_mass + 1e-12 * (std::abs(a.value) + std::abs(b.value));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Gibbs

/// D^w(f||g) >= 0 under integral phi (f - g) >= 0.
inline CheckReport gibbs_check(const Distribution& f, const Distribution& g, const WeightFunction& phi,
                               const NumericConfig& cfg) {
  CheckReport r;
  r.name = "gibbs";
  const Estimate af = expect_weight(f, phi, cfg);
  const Estimate ag = expect_weight(g, phi, cfg);
  r.add_hypothesis("integral phi (f - g)", af.value - ag.value, Requirement::nonnegative, detail::hyp_tol(af, ag));
  r.gap = weighted_kl(f, g, phi, cfg);
  r.values = {{"E_f phi", af.value}, {"E_g phi", ag.value}};
  finalize(r, cfg);
  if (r.equality) {
    // Equality needs phi (g/f - 1) = 0 f-a.e.; probe it on a seeded sample.
    Rng rng(substream_seed(cfg.rng_seed, 7));
    std::vector<double> x(f.dim());
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      f.sample(rng, x);
      const double w = phi(x);
      if (w == 0.0) continue;
      worst = std::max(worst, std::abs(w * std::expm1(g.log_pdf(x) - f.log_pdf(x))));
    }
    r.values.emplace_back("max sampled |phi (g/f - 1)|", worst);
    r.equality = worst <= 1e-9;
    if (!r.equality) r.notes.push_back("gap within equality band but phi (g/f - 1) != 0 on sampled points");
  }
  return r;
}

// ---------------------------------------------------------------------------
// Concavity / convexity

inline void require_lambda(double l) {
  if (!(l >= 0.0 && l <= 1.0)) throw DomainError("lambda must lie in [0,1]");
}

/// h(l1 f1 + l2 f2) - l1 h(f1) - l2 h(f2) >= 0.
inline CheckReport we_concavity_gap(const Distribution& f1, const Distribution& f2, double lambda1,
                                    const WeightFunction& phi, const NumericConfig& cfg) {
  require_lambda(lambda1);
  const double lambda2 = 1.0 - lambda1;
  CheckReport r;
  r.name = "we_concavity";
  r.add_hypothesis("lambda1 in [0,1]", 1.0, Requirement::holds, 0.0);
  const Distribution mix = Distribution::mixture({lambda1, lambda2}, {f1, f2});
  const Estimate hm = weighted_entropy(mix, phi, cfg);
  const Estimate h1 = weighted_entropy(f1, phi, cfg);
  const Estimate h2 = weighted_entropy(f2, phi, cfg);
  r.gap = combine({{1.0, hm}, {-lambda1, h1}, {-lambda2, h2}});
  r.values = {{"h_mixture", hm.value}, {"h1", h1.value}, {"h2", h2.value}};
  finalize(r, cfg);
  return r;
}

/// l1 D(f1||g1) + l2 D(f2||g2) - D(l1 f1 + l2 f2 || l1 g1 + l2 g2) >= 0.
inline CheckReport rwe_convexity_gap(const Distribution& f1, const Distribution& f2, const Distribution& g1,
                                     const Distribution& g2, double lambda1, const WeightFunction& phi,
                                     const NumericConfig& cfg) {
  require_lambda(lambda1);
  const double lambda2 = 1.0 - lambda1;
  CheckReport r;
  r.name = "rwe_convexity";
  r.add_hypothesis("lambda1 in [0,1]", 1.0, Requirement::holds, 0.0);
  const Estimate d1 = weighted_kl(f1, g1, phi, cfg);
  const Estimate d2 = weighted_kl(f2, g2, phi, cfg);
  const Estimate dm = weighted_kl(Distribution::mixture({lambda1, lambda2}, {f1, f2}),
                                  Distribution::mixture({lambda1, lambda2}, {g1, g2}), phi, cfg);
  r.gap = combine({{lambda1, d1}, {lambda2, d2}, {-1.0, dm}});
  r.values = {{"D1", d1.value}, {"D2", d2.value}, {"D_mixture", dm.value}};
  finalize(r, cfg);
  return r;
}

// ---------------------------------------------------------------------------
// Ky-Fan with exponential weight exp(t'x)

struct KyFanDiagnostics {
  Vector t;
  double F1 = 0.0;
  double F2 = 0.0;
  bool in_S = false;
  Matrix C, C1, C2;
  double lambda1 = 0.0, lambda2 = 0.0;
};

inline KyFanDiagnostics kyfan_diagnostics(const Vector& t, const Matrix& c1, const Matrix& c2, double lambda1) {
  require_lambda(lambda1);
  require_spd(c1, "kyfan.C1");
  require_spd(c2, "kyfan.C2");
  if (c1.rows() != c2.rows() || t.size() != c1.rows()) throw StructureError("kyfan: dimension mismatch");
  KyFanDiagnostics k;
  k.t = t;
  k.C1 = c1;
  k.C2 = c2;
  k.lambda1 = lambda1;
  k.lambda2 = 1.0 - lambda1;
  k.C = k.lambda1 * c1 + k.lambda2 * c2;
  const double d = static_cast<double>(t.size());
  const double e = std::exp(0.5 * t.dot(k.C * t));
  const double e1 = std::exp(0.5 * t.dot(c1 * t));
  const double e2 = std::exp(0.5 * t.dot(c2 * t));
  const Matrix cinv = k.C.llt().solve(Matrix::Identity(k.C.rows(), k.C.cols()));
  const double mix = k.lambda1 * e1 + k.lambda2 * e2;
  k.F1 = mix - e;
  k.F2 = k.F1 * (d * std::log(2 * M_PI) + log_det_spd(k.C)) + k.lambda1 * e1 * (cinv * c1).trace() +
         k.lambda2 * e2 * (cinv * c2).trace() - d * e;
  // Round-off guard: at t = 0 both functions vanish identically.
  const double scale = 1e-13 * (mix + e) * (1.0 + d);
  k.in_S = k.F1 >= -scale && k.F2 <= scale * (1.0 + std::abs(std::log(2 * M_PI) * d + log_det_spd(k.C)));
  return k;
}

inline double gaussian_sde(const Matrix& c) {
  return 0.5 * (static_cast<double>(c.rows()) * std::log(2 * M_PI * M_E) + log_det_spd(c));
}

/// h(N_C) e^{t'Ct/2} - sum_i lambda_i h(N_Ci) e^{t'C_i t/2} >= 0 for t in S.
inline CheckReport kyfan_gap(const Vector& t, const Matrix& c1, const Matrix& c2, double lambda1) {
  const KyFanDiagnostics k = kyfan_diagnostics(t, c1, c2, lambda1);
  CheckReport r;
  r.name = "kyfan";
  r.add_hypothesis("F1(t)", k.F1, Requirement::nonnegative, 0.0);
  r.add_hypothesis("F2(t)", k.F2, Requirement::nonpositive, 0.0);
  r.hypotheses[0].met = r.hypotheses[1].met = k.in_S;
  r.hypotheses_met = k.in_S;
  const double e = std::exp(0.5 * t.dot(k.C * t));
  const double e1 = std::exp(0.5 * t.dot(c1 * t));
  const double e2 = std::exp(0.5 * t.dot(c2 * t));
  const double h = gaussian_sde(k.C), h1 = gaussian_sde(c1), h2 = gaussian_sde(c2);
  double gap;
  if (t.isZero(0.0)) {
    // Exact cancellation of the (2 pi e)^d factors.
    gap = 0.5 * (log_det_spd(k.C) - k.lambda1 * log_det_spd(c1) - k.lambda2 * log_det_spd(c2));
  } else {
    gap = h * e - k.lambda1 * h1 * e1 - k.lambda2 * h2 * e2;
  }
  r.gap = Estimate::exact(gap);
  r.values = {{"F1", k.F1}, {"F2", k.F2}, {"in_S", k.in_S ? 1.0 : 0.0}, {"lambda1", k.lambda1}};
  const double tol = 1e-12 * (std::abs(h * e) + std::abs(h1 * e1) + std::abs(h2 * e2) + 1.0);
  r.tolerance_used = tol;
  r.verdict = r.hypotheses_met ? gap_verdict(gap, 0.0, tol, Requirement::nonnegative) : Verdict::HYPOTHESIS_UNMET;
  r.equality = std::abs(gap) <= tol;
  return r;
}

// ---------------------------------------------------------------------------
// Gaussian maximisation

namespace detail {

/// E[phi(X) X X^T] for a (zero-mean) law.
inline std::pair<Matrix, Estimate> weighted_second_moment(const Distribution& f, const WeightFunction& phi,
                                                          const NumericConfig& cfg) {
  const Eigen::Index d = static_cast<Eigen::Index>(f.dim());
  const auto br = weight_breaks(phi, f.dim());
  Matrix m = Matrix::Zero(d, d);
  Estimate meta = Estimate::exact(0.0);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      const Estimate e = expect(
          f,
          [&](Point x) {
            const double w = phi(x);
            return w == 0.0 ? 0.0 : w * x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(j)];
          },
          cfg, br);
      m(i, j) = m(j, i) = e.value;
      meta = combine({{1.0, meta}, {1.0, e}});
    }
  return {m, meta};
}

}  // namespace detail

/// h^w(f) <= h^w(N(0,C)) for a zero-mean f with covariance C. The verdict uses
/// the condition that follows from the weighted Gibbs inequality,
///   ln[(2pi)^d det C] H1 - tr[C^-1 (Phi_N - Phi)] <= 0;
/// the printed form with +tr[...] is reported as a separate variant.
inline CheckReport gaussian_max_check(const Distribution& f, const WeightFunction& phi, const NumericConfig& cfg) {
  const Vector mu = f.mean();
  const Matrix c = f.covariance();
  require_spd(c, "gaussian_max.covariance");
  if (f.kind() == "custom") {
    NumericConfig mc = cfg;
    mc.mc_samples = std::max(cfg.mc_samples, 20000);
    for (std::size_t i = 0; i < f.dim(); ++i) {
      const Estimate m = mc_expectation([&](Point x) { return x[i]; }, f, mc);
      if (std::abs(m.value) > 3.0 * m.std_error)
        throw DomainError("gaussian_max: sampled mean of coordinate " + std::to_string(i) + " is " +
                          detail::where(m.value) + ", not 0 within 3 standard errors");
    }
  }
  if (mu.cwiseAbs().maxCoeff() > 1e-12 * (1.0 + std::sqrt(c.diagonal().maxCoeff())))
    throw DomainError("gaussian_max: distribution must have mean 0 (got " + detail::where(mu.cwiseAbs().maxCoeff()) + ")");
  const auto n = Distribution::gaussian(Vector::Zero(c.rows()), c);
  const Estimate af = expect_weight(f, phi, cfg);
  const Estimate an = expect_weight(n, phi, cfg);
  const auto [phif, pf_meta] = detail::weighted_second_moment(f, phi, cfg);
  const auto [phin, pn_meta] = detail::weighted_second_moment(n, phi, cfg);
  const Matrix cinv = c.llt().solve(Matrix::Identity(c.rows(), c.cols()));
  const double logterm = static_cast<double>(c.rows()) * std::log(2 * M_PI) + log_det_spd(c);
  const double h1 = af.value - an.value;
  const double tr = (cinv * (phin - phif)).trace();
  const double h2 = logterm * h1 - tr;
  const double h2_printed = logterm * h1 + tr;
  const double t1 = detail::hyp_tol(af, an);
  const double t2 = std::abs(logterm) * t1 + cinv.cwiseAbs().sum() * (pf_meta.band() + pn_meta.band()) +
                    1e-12 * (std::abs(logterm * h1) + std::abs(tr));

  CheckReport r;
  r.name = "gaussian_max";
  r.add_hypothesis("H1: integral phi (f - f_N)", h1, Requirement::nonnegative, t1);
  r.add_hypothesis("H2: ln[(2pi)^d det C] H1 - tr[C^-1 (Phi_N - Phi)]", h2, Requirement::nonpositive, t2);
  const Estimate hn = wde(n, phi, cfg);
  const Estimate hf = wde(f, phi, cfg);
  r.gap = combine({{1.0, hn}, {-1.0, hf}});
  r.values = {{"H1", h1}, {"H2", h2}, {"H2_as_printed", h2_printed}, {"h_gaussian", hn.value}, {"h_f", hf.value}};
  finalize(r, cfg);
  Variant printed;
  printed.label = "H2 as printed: ln[(2pi)^d det C] H1 + tr[C^-1 (Phi_N - Phi)] <= 0";
  printed.hypotheses_met = r.hypotheses.front().met && h2_printed <= t2;
  printed.gap = r.gap.value;
  printed.verdict = printed.hypotheses_met
                        ? gap_verdict(r.gap.value, r.gap.std_error, r.tolerance_used, Requirement::nonnegative)
                        : Verdict::HYPOTHESIS_UNMET;
  r.variants.push_back(printed);
  return r;
}

// ---------------------------------------------------------------------------
// Weighted Hadamard

/// alpha ln prod(2 pi C_jj) + sum Phi_jj / C_jj - alpha ln[(2pi)^d det C] - tr C^-1 Phi >= 0
/// under integral phi [f_C - prod_j f_Cjj] >= 0.
inline CheckReport hadamard_weighted_check(const Matrix& c, const WeightFunction& phi, const NumericConfig& cfg) {
  require_spd(c, "hadamard.covariance");
  const Eigen::Index d = c.rows();
  const auto joint = Distribution::gaussian(Vector::Zero(d), c);
  const Matrix diag = c.diagonal().asDiagonal();
  const auto product = Distribution::gaussian(Vector::Zero(d), diag);
  const GaussianWeightStats st = gaussian_weight_stats(c, phi, cfg);
  const Estimate aprod = expect_weight(product, phi, cfg);
  Estimate ajoint = st.meta;
  ajoint.value = st.alpha;
  const double hyp = st.alpha - aprod.value;

  CheckReport r;
  r.name = "hadamard";
  r.add_hypothesis("integral phi (f_C - prod f_Cjj)", hyp, Requirement::nonnegative, detail::hyp_tol(ajoint, aprod));
  const Matrix cinv = c.llt().solve(Matrix::Identity(d, d));
  double log_prod = 0.0, diag_sum = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    log_prod += std::log(2 * M_PI * c(j, j));
    diag_sum += st.Phi(j, j) / c(j, j);
  }
  const double logdet = static_cast<double>(d) * std::log(2 * M_PI) + log_det_spd(c);
  const double gap =
      st.alpha * (log_prod - logdet) + diag_sum - (cinv * st.Phi).trace();
  r.gap = st.meta;
  r.gap.value = gap;
  r.gap.error_bound = st.meta.error_bound * (std::abs(log_prod - logdet) + 1.0 + cinv.cwiseAbs().sum());
  r.gap.std_error = st.meta.std_error * (std::abs(log_prod - logdet) + 1.0 + cinv.cwiseAbs().sum());
  r.values = {{"alpha", st.alpha}, {"ln det C", log_det_spd(c)}};
  finalize(r, cfg, 1e-12 * (std::abs(st.alpha * log_prod) + std::abs(diag_sum) + 1.0));
  return r;
}

}  // namespace wentropy
