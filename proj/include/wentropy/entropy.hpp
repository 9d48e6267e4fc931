#pragma once

// Weighted entropy, weighted differential entropy and weighted KL divergence.

#include <cmath>
#include <string>
#include <vector>

#include "model.hpp"

namespace wentropy {

namespace detail {

inline std::vector<std::vector<double>> weight_breaks(const WeightFunction& phi, std::size_t d) {
  std::vector<std::vector<double>> br;
  for (std::size_t i = 0; i < d; ++i) br.push_back(phi.breakpoints(i));
  return br;
}

inline std::string point_string(Point x) {
  std::string s = "(";
  for (std::size_t i = 0; i < x.size(); ++i) s += (i ? "," : "") + where(x[i]);
  return s + ")";
}

}  // namespace detail

/// -sum phi(x) p(x) ln p(x), with 0 ln 0 = 0.
inline double we_discrete(const Distribution& p, const WeightFunction& phi) {
  double s = 0.0;
  for (const auto& [x, m] : p.atoms()) {
    if (m == 0.0) continue;
    s -= phi(Point(x.data(), static_cast<std::size_t>(x.size()))) * m * std::log(m);
  }
  return s;
}

/// -integral phi f ln f. Quadrature over the truncation box for d <= 3,
/// otherwise -E[phi(X) ln f(X)] by seeded Monte Carlo.
inline Estimate wde(const Distribution& f, const WeightFunction& phi, const NumericConfig& cfg) {
  if (f.is_discrete()) throw StructureError("wde: distribution is discrete; use we_discrete");
  return expect(
      f,
      [&](Point x) {
        const double w = phi(x);
        return w == 0.0 ? 0.0 : -w * f.log_pdf(x);
      },
      cfg, detail::weight_breaks(phi, f.dim()));
}

/// we_discrete or wde, whichever applies.
inline Estimate weighted_entropy(const Distribution& f, const WeightFunction& phi, const NumericConfig& cfg) {
  if (f.is_discrete()) return Estimate::exact(we_discrete(f, phi));
  return wde(f, phi, cfg);
}

struct GaussianWeightStats {
  double alpha = 0.0;  // integral phi f
  Matrix Phi;          // integral x x^T phi f
  Estimate meta;       // method and error bookkeeping for alpha/Phi
};

/// alpha and Phi for f = N(mean, C); closed form for constant and exponential
/// weights (zero mean), quadrature (d <= 3) or Monte Carlo otherwise.
inline GaussianWeightStats gaussian_weight_stats(const Matrix& c, const WeightFunction& phi, const NumericConfig& cfg,
                                                 const Vector& mean = Vector()) {
  require_spd(c, "gaussian_weight_stats");
  const Eigen::Index d = c.rows();
  const Vector mu = mean.size() == 0 ? Vector::Zero(d) : mean;
  GaussianWeightStats s;
  if (auto k = phi.constant_value()) {
    s.alpha = *k;
    s.Phi = *k * (c + mu * mu.transpose());
    s.meta = Estimate::exact(0.0);
    return s;
  }
  if (auto t = phi.exponential_t(); t && static_cast<Eigen::Index>(t->size()) == d) {
    const Vector tv = Eigen::Map<const Vector>(t->data(), d);
    const Vector shifted = mu + c * tv;  // tilted mean
    s.alpha = std::exp(tv.dot(mu) + 0.5 * tv.dot(c * tv));
    s.Phi = s.alpha * (c + shifted * shifted.transpose());
    s.meta = Estimate::exact(0.0);
    return s;
  }
  const auto f = Distribution::gaussian(mu, c);
  const auto br = detail::weight_breaks(phi, static_cast<std::size_t>(d));
  const Estimate a = expect(f, [&](Point x) { return phi(x); }, cfg, br);
  s.alpha = a.value;
  s.Phi = Matrix::Zero(d, d);
  s.meta = a;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      const Estimate e = expect(
          f,
          [&](Point x) {
            const double w = phi(x);
            return w == 0.0 ? 0.0 : w * x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(j)];
          },
          cfg, br);
      s.Phi(i, j) = s.Phi(j, i) = e.value;
      s.meta.error_bound += e.error_bound;
      s.meta.std_error = std::max(s.meta.std_error, e.std_error);
    }
  return s;
}

struct GaussianWde {
  Estimate value;
  GaussianWeightStats stats;
};

/// h^w(N(0,C)) = alpha/2 ln[(2 pi)^d det C] + 1/2 tr(C^-1 Phi).
inline GaussianWde gaussian_wde_closed(const Matrix& c, const WeightFunction& phi, const NumericConfig& cfg) {
  GaussianWde out;
  out.stats = gaussian_weight_stats(c, phi, cfg);
  const double d = static_cast<double>(c.rows());
  const double logdet = log_det_spd(c);
  const Matrix cinv = c.llt().solve(Matrix::Identity(c.rows(), c.cols()));
  const double v = 0.5 * out.stats.alpha * (d * std::log(2 * M_PI) + logdet) + 0.5 * (cinv * out.stats.Phi).trace();
  out.value = out.stats.meta;
  out.value.value = v;
  if (out.stats.meta.method != Method::closed_form) {
    const double scale = 0.5 * std::abs(d * std::log(2 * M_PI) + logdet) + 0.5 * cinv.cwiseAbs().sum();
    out.value.error_bound = scale * out.stats.meta.error_bound;
    out.value.std_error = scale * out.stats.meta.std_error;
  }
  return out;
}

/// integral phi f ln(f/g), evaluated where f > 0. Raises DomainError at the
/// first point where f phi > 0 but g = 0.
inline Estimate weighted_kl(const Distribution& f, const Distribution& g, const WeightFunction& phi,
                            const NumericConfig& cfg) {
  if (f.dim() != g.dim()) throw StructureError("weighted_kl: dimension mismatch");
  if (f.is_discrete() != g.is_discrete()) throw StructureError("weighted_kl: cannot compare discrete and continuous laws");
  auto term = [&](Point x) {
    const double w = phi(x);
    if (w == 0.0) return 0.0;
    const double lg = g.log_pdf(x);
    if (std::isinf(lg) && lg < 0)
      throw DomainError("weighted_kl: f is not absolutely continuous w.r.t. g; g = 0 at x=" + detail::point_string(x));
    return w * (f.log_pdf(x) - lg);
  };
  if (f.is_discrete()) return expect(f, term, cfg);
  auto br = detail::weight_breaks(phi, f.dim());
  const IntegrationBox gb = g.box(cfg.truncation_sigmas);
  for (std::size_t i = 0; i < br.size() && i < gb.breaks.size(); ++i) {
    br[i].insert(br[i].end(), gb.breaks[i].begin(), gb.breaks[i].end());
    br[i].push_back(gb.lower[i]);
    br[i].push_back(gb.upper[i]);
  }
  return expect(f, term, cfg, br);
}

/// Weighted relative entropy inside an exponential family:
/// e^{A_phi(t1) - A(t1)} (A(t2) - A(t1) - <grad A_phi(t1), t2 - t1>),
/// with A_phi(t) = ln integral phi h e^{<t,T>} and its gradient taken through
/// the moment identity grad A_phi = integral T phi h e^{<t,T>} / e^{A_phi}.
inline Estimate expfam_rwe(const ExponentialFamilySpec& fam, const Vector& theta1, const Vector& theta2,
                           const WeightFunction& phi, const NumericConfig& cfg) {
  if (static_cast<std::size_t>(theta1.size()) != fam.param_dim || static_cast<std::size_t>(theta2.size()) != fam.param_dim)
    throw StructureError("expfam_rwe: theta has wrong dimension");
  const double a1 = fam.log_partition(theta1, cfg);
  const double a2 = fam.log_partition(theta2, cfg);
  const Estimate zphi = fam.weighted_partition(theta1, phi, cfg);
  const double aphi = std::log(zphi.value);
  Vector grad(static_cast<Eigen::Index>(fam.param_dim));
  double err = zphi.error_bound / zphi.value;
  for (std::size_t k = 0; k < fam.param_dim; ++k) {
    IntegrationBox box = fam.support;
    box.breaks.resize(box.dim());
    for (std::size_t i = 0; i < box.dim(); ++i) {
      auto b = phi.breakpoints(i);
      box.breaks[i].insert(box.breaks[i].end(), b.begin(), b.end());
    }
    const Estimate m = integrate_box(
        [&](Point x) {
          const double h = fam.base_h(x);
          if (h == 0.0) return 0.0;
          const double w = phi(x);
          if (w == 0.0) return 0.0;
          const Vector t = fam.sufficient_stat(x);
          return w * h * t(static_cast<Eigen::Index>(k)) * std::exp(theta1.dot(t) - aphi);
        },
        box, cfg);
    grad(static_cast<Eigen::Index>(k)) = m.value;
    err += m.error_bound;
  }
  const double scale = std::exp(aphi - a1);
  const double v = scale * (a2 - a1 - grad.dot(theta2 - theta1));
  return {v, 0.0, Method::quadrature, scale * err * (1.0 + std::abs(a2 - a1) + (theta2 - theta1).cwiseAbs().sum()), 0.0};
}

}  // namespace wentropy
