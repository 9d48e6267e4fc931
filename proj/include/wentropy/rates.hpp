#pragma once

// Weighted entropy rates of i.i.d. and Markov sources for additive
// (phi_n = sum psi) and multiplicative (phi_n = prod psi) weights.

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "entropy.hpp"

namespace wentropy {

enum class RateKind { additive, multiplicative };

inline const char* to_string(RateKind k) { return k == RateKind::additive ? "additive" : "multiplicative"; }

struct RateReport {
  RateKind kind = RateKind::additive;
  double primary_rate = 0.0;                 // theoretical A0 or B0
  std::optional<double> secondary_rate;      // A1 or B1
  std::vector<std::pair<long, double>> convergence_trace;
  std::vector<double> trace_std_error;       // empty for exact traces
  double empirical_primary = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::pair<std::string, double>> values;
  std::vector<std::string> notes;

  [[nodiscard]] double value_of(const std::string& key) const {
    for (const auto& [k, v] : values)
      if (k == key) return v;
    throw std::out_of_range("RateReport: no value named " + key);
  }
};

namespace detail {

struct SymbolLaw {
  std::vector<double> p, psi;
};

inline SymbolLaw symbol_law(const Distribution& p, const WeightFunction& psi) {
  if (!p.is_discrete()) throw StructureError("rates: source law must be discrete");
  SymbolLaw s;
  for (const auto& [x, m] : p.atoms()) {
    s.p.push_back(m);
    s.psi.push_back(psi(Point(x.data(), static_cast<std::size_t>(x.size()))));
  }
  return s;
}

inline double xlogx_neg(double p) { return p > 0 ? -p * std::log(p) : 0.0; }

inline void check_grid(const std::vector<long>& grid) {
  if (grid.empty()) throw DomainError("rates: empty n grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 1) throw DomainError("rates: n must be >= 1");
    if (i > 0 && grid[i] <= grid[i - 1]) throw DomainError("rates: n grid must be strictly increasing");
  }
}

inline unsigned worker_count() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* e = std::getenv("WENTROPY_THREADS")) {
    const int v = std::atoi(e);
    if (v >= 1) n = std::min(n, static_cast<unsigned>(v));
  }
  return n;
}

/// Runs f(i) for i in [0, count) on up to worker_count() threads. Each index
/// writes only its own output, so results do not depend on scheduling.
template <class F>
void parallel_for(std::size_t count, const F& f) {
  const unsigned w = std::min<std::size_t>(worker_count(), count);
  if (w <= 1) {
    for (std::size_t i = 0; i < count; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(w);
  for (unsigned t = 0; t < w; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < count; i += w) f(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// i.i.d. sources

/// n(n-1) S(p) E psi + n H^w_psi(p), strings x_0..x_{n-1}.
inline double iid_additive_we(const Distribution& p, const WeightFunction& psi, long n) {
  if (n < 1) throw DomainError("iid_additive_we: n must be >= 1");
  const auto s = detail::symbol_law(p, psi);
  double S = 0, E = 0, H = 0;
  for (std::size_t i = 0; i < s.p.size(); ++i) {
    S += detail::xlogx_neg(s.p[i]);
    E += s.p[i] * s.psi[i];
    H += s.psi[i] * detail::xlogx_neg(s.p[i]);
  }
  const double nn = static_cast<double>(n);
  return nn * (nn - 1) * S * E + nn * H;
}

/// ln of n H^w_psi(p) (E psi)^{n-1}; -inf when H^w_psi(p) = 0.
inline double iid_multiplicative_log_we(const Distribution& p, const WeightFunction& psi, long n) {
  if (n < 1) throw DomainError("iid_multiplicative_we: n must be >= 1");
  const auto s = detail::symbol_law(p, psi);
  double E = 0, H = 0;
  for (std::size_t i = 0; i < s.p.size(); ++i) {
    E += s.p[i] * s.psi[i];
    H += s.psi[i] * detail::xlogx_neg(s.p[i]);
  }
  if (H == 0.0) return -INFINITY;
  if (E == 0.0) return n == 1 ? std::log(H) : -INFINITY;
  return std::log(static_cast<double>(n)) + std::log(H) + static_cast<double>(n - 1) * std::log(E);
}

inline double iid_multiplicative_we(const Distribution& p, const WeightFunction& psi, long n) {
  const double l = iid_multiplicative_log_we(p, psi, n);
  if (l > 709.0) throw DomainError("iid_multiplicative_we: value overflows (ln = " + detail::where(l) + ")");
  return std::exp(l);
}

// ---------------------------------------------------------------------------
// Markov sources: exact transfer recursions

/// h^w_{phi_n}(p_n, lambda) for a Markov chain. Additive weights return the
/// value itself; multiplicative ones return its logarithm (the value grows
/// geometrically). Entries at the requested n in increasing order.
inline std::vector<double> markov_we_transfer(const MarkovChainSpec& mc, const std::vector<long>& grid, RateKind kind) {
  mc.validate();
  detail::check_grid(grid);
  const Eigen::Index k = mc.transition.rows();
  const Matrix& P = mc.transition;
  Matrix C = Matrix::Zero(k, k);  // -ln p(x, y), 0 where p = 0
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j)
      if (P(i, j) > 0) C(i, j) = -std::log(P(i, j));
  Vector q = mc.initial, e(k);
  for (Eigen::Index i = 0; i < k; ++i) e(i) = detail::xlogx_neg(mc.initial(i));
  std::vector<double> out;
  std::size_t gi = 0;
  if (kind == RateKind::additive) {
    // q = sum p_n, w = sum phi p_n, e = sum p_n L, z = sum phi p_n L, L = -ln p_n
    Vector w = mc.psi.cwiseProduct(q), z = mc.psi.cwiseProduct(e);
    for (long n = 1; gi < grid.size(); ++n) {
      if (n == grid[gi]) {
        out.push_back(z.sum());
        ++gi;
      }
      Vector q2 = Vector::Zero(k), w2 = Vector::Zero(k), e2 = Vector::Zero(k), z2 = Vector::Zero(k);
      for (Eigen::Index x = 0; x < k; ++x)
        for (Eigen::Index y = 0; y < k; ++y) {
          const double p = P(x, y);
          if (p == 0.0) continue;
          const double c = C(x, y), s = mc.psi(y);
          q2(y) += p * q(x);
          w2(y) += p * (w(x) + s * q(x));
          e2(y) += p * (e(x) + c * q(x));
          z2(y) += p * (z(x) + c * w(x) + s * e(x) + s * c * q(x));
        }
      q = q2, w = w2, e = e2, z = z2;
    }
    return out;
  }
  // u = sum phi p_n, v = sum phi p_n L, both divided by exp(logscale)
  Vector u = mc.psi.cwiseProduct(q), v = mc.psi.cwiseProduct(e);
  double logscale = 0.0;
  for (long n = 1; gi < grid.size(); ++n) {
    if (n == grid[gi]) {
      const double sv = v.sum();
      out.push_back(sv > 0 ? logscale + std::log(sv) : -INFINITY);
      ++gi;
    }
    Vector u2 = Vector::Zero(k), v2 = Vector::Zero(k);
    for (Eigen::Index x = 0; x < k; ++x)
      for (Eigen::Index y = 0; y < k; ++y) {
        const double p = P(x, y);
        if (p == 0.0) continue;
        u2(y) += p * mc.psi(y) * u(x);
        v2(y) += p * mc.psi(y) * (v(x) + C(x, y) * u(x));
      }
    const double m = std::max(u2.cwiseAbs().maxCoeff(), v2.cwiseAbs().maxCoeff());
    if (m > 0 && std::isfinite(m)) {
      u = u2 / m;
      v = v2 / m;
      logscale += std::log(m);
    } else {
      u = u2, v = v2;
    }
  }
  return out;
}

/// Entropy rate -sum_x pi(x) sum_y p(x,y) ln p(x,y).
inline double markov_entropy_rate(const MarkovChainSpec& mc, const NumericConfig& cfg = {}) {
  const Vector pi = stationary_distribution(mc, cfg);
  double s = 0.0;
  for (Eigen::Index x = 0; x < pi.size(); ++x)
    for (Eigen::Index y = 0; y < pi.size(); ++y) s += pi(x) * detail::xlogx_neg(mc.transition(x, y));
  return s;
}

/// Largest modulus among the non-Perron eigenvalues of m.
inline double second_eigenvalue_modulus(const Matrix& m, double perron) {
  Eigen::EigenSolver<Matrix> es(m, false);
  std::vector<double> mods;
  for (Eigen::Index i = 0; i < m.rows(); ++i) mods.push_back(std::abs(es.eigenvalues()(i)));
  std::sort(mods.begin(), mods.end(), std::greater<>());
  // drop the one closest to the Perron root
  std::size_t drop = 0;
  for (std::size_t i = 1; i < mods.size(); ++i)
    if (std::abs(mods[i] - perron) < std::abs(mods[drop] - perron)) drop = i;
  mods.erase(mods.begin() + static_cast<std::ptrdiff_t>(drop));
  return mods.empty() ? 0.0 : mods.front();
}

/// B0 = ln mu, mu the Perron root of (psi(x) p(x,y)); trace of (1/n) ln h^w_{phi_n}
/// over the grid from the transfer recursion. The secondary value is the
/// estimate h_n / (n mu^{n-1}) at the last grid point.
inline RateReport markov_multiplicative_rate(const MarkovChainSpec& mc, const NumericConfig& cfg,
                                             std::vector<long> grid = {10, 50, 100, 500, 1000, 2000}) {
  mc.validate();
  detail::check_grid(grid);
  if ((mc.transition.array() <= 0).any()) throw StructureError("markov_multiplicative_rate: every transition must be > 0");
  if ((mc.psi.array() <= 0).any()) throw StructureError("markov_multiplicative_rate: psi must be > 0 on every symbol");
  const Matrix M = mc.psi.asDiagonal() * mc.transition;
  const PerronResult pr = power_iteration(M, cfg);
  // Rayleigh polish with both Perron vectors
  const double mu = pr.left.dot(M * pr.right) / pr.left.dot(pr.right);
  const auto logs = markov_we_transfer(mc, grid, RateKind::multiplicative);
  RateReport r;
  r.kind = RateKind::multiplicative;
  r.primary_rate = std::log(mu);
  for (std::size_t i = 0; i < grid.size(); ++i)
    r.convergence_trace.emplace_back(grid[i], logs[i] / static_cast<double>(grid[i]));
  r.empirical_primary = r.convergence_trace.back().second;
  const double nl = static_cast<double>(grid.back());
  r.secondary_rate = std::exp(logs.back() - std::log(nl) - (nl - 1) * std::log(mu));
  const double l2 = second_eigenvalue_modulus(M, mu);
  r.values = {{"mu", mu},
              {"B0_rate", r.primary_rate},
              {"B1 estimate", *r.secondary_rate},
              {"|lambda2|/mu", l2 / mu},
              {"|trace - B0| at n=" + std::to_string(grid.back()), std::abs(r.empirical_primary - r.primary_rate)}};
  r.notes.push_back("B1 is an ESTIMATE: h_n / (n mu^(n-1)) at the largest n");
  return r;
}

/// A1 = E psi H(pi) + sum_{|k| <= J} (E[psi(X_0) c_k] - E psi S), c_k = -ln p(X_{k-1}, X_k),
/// under the stationary law. Checked against h_n - h_{n-1} - 2(n-1) A0 from the
/// transfer recursion.
inline RateReport markov_additive_secondary_rate(const MarkovChainSpec& mc, int J, const NumericConfig& cfg) {
  mc.validate();
  if (J < 0) throw DomainError("markov_additive_secondary_rate: J must be >= 0");
  const Vector pi = stationary_distribution(mc, cfg);
  const Matrix& P = mc.transition;
  const Eigen::Index k = P.rows();
  const double rho = second_eigenvalue_modulus(P, 1.0);
  if (!(rho < 1.0 - 1e-12)) throw StructureError("markov_additive_secondary_rate: chain is not mixing (|lambda2| = 1)");
  Vector cost(k);  // E[c | X_{k-1} = y]
  for (Eigen::Index y = 0; y < k; ++y) {
    cost(y) = 0.0;
    for (Eigen::Index z = 0; z < k; ++z) cost(y) += detail::xlogx_neg(P(y, z));
  }
  const double a = pi.dot(mc.psi);
  const double S = pi.dot(cost);
  double hpi = 0.0;
  for (Eigen::Index x = 0; x < k; ++x) hpi += detail::xlogx_neg(pi(x));
  // joint (X_{k-1}, X_k) cost weighted by pi(z) p(z, .) -ln p, pushed forward to X_0
  Matrix Wc(k, k);  // Wc(y, z) = pi(y) p(y,z) (-ln p(y,z))
  for (Eigen::Index y = 0; y < k; ++y)
    for (Eigen::Index z = 0; z < k; ++z) Wc(y, z) = pi(y) * detail::xlogx_neg(P(y, z));
  const Vector piPsi = pi.cwiseProduct(mc.psi);
  auto g = [&](int lag) {
    if (lag >= 1) {
      // X_0 = x, X_{lag-1} = y, X_lag = z
      Vector row = piPsi;
      for (int i = 1; i < lag; ++i) row = (row.transpose() * P).transpose();
      return row.dot(cost) - a * S;
    }
    // X_{lag-1} = y, X_lag = z, X_0 = x with |lag| further steps
    Vector col = mc.psi;
    for (int i = 0; i < -lag; ++i) col = P * col;
    return (Wc.transpose() * Vector::Ones(k)).dot(col) - a * S;
  };
  double sum = 0.0;
  for (int lag = -J; lag <= J; ++lag) sum += g(lag);
  const double A1 = a * hpi + sum;
  const double tail = rho > 0 ? 2.0 * (std::abs(g(J)) + std::abs(g(-J))) * rho / (1.0 - rho) : 0.0;

  MarkovChainSpec st = mc;
  st.initial = pi;
  RateReport r;
  r.kind = RateKind::additive;
  r.primary_rate = a * S;
  r.secondary_rate = A1;
  std::vector<long> grid;
  for (long n = 1; n <= 200; ++n) grid.push_back(n);
  const auto h = markov_we_transfer(st, grid, RateKind::additive);
  for (long n = 2; n <= 200; ++n) {
    const double d = h[static_cast<std::size_t>(n - 1)] - h[static_cast<std::size_t>(n - 2)] - 2.0 * static_cast<double>(n - 1) * r.primary_rate;
    if (n <= 14 || n % 20 == 0) r.convergence_trace.emplace_back(n, d);
  }
  r.empirical_primary = h.back() / (200.0 * 200.0);
  r.values = {{"A0", r.primary_rate},
              {"A1", A1},
              {"alpha = E_pi psi", a},
              {"S", S},
              {"|lambda2|", rho},
              {"tail bound", tail},
              {"transfer A1 at n=14", r.convergence_trace[12].second},
              {"transfer A1 at n=200", r.convergence_trace.back().second}};
  r.notes.push_back("lag terms are centred by E psi S so the series converges; the uncentred series diverges linearly in J");
  return r;
}

// ---------------------------------------------------------------------------
// Empirical SMB-type convergence

enum class SmbMode { additive, multiplicative };

/// Simulates `paths` seeded paths and traces, per n in the grid, the mean of
/// I^w/n^2 (additive) or (1/n) ln I^w (multiplicative) with its standard error.
inline RateReport empirical_smb(const MarkovChainSpec& mc, SmbMode mode, std::vector<long> grid, int paths,
                                const NumericConfig& cfg) {
  mc.validate();
  detail::check_grid(grid);
  if (paths < 2) throw DomainError("empirical_smb: need at least 2 paths");
  const Vector pi = stationary_distribution(mc, cfg);
  const Eigen::Index k = pi.size();
  if (mode == SmbMode::multiplicative && (mc.psi.array() <= 0).any())
    throw StructureError("empirical_smb: multiplicative mode needs psi > 0");
  double S = 0.0;
  for (Eigen::Index x = 0; x < k; ++x)
    for (Eigen::Index y = 0; y < k; ++y) S += pi(x) * detail::xlogx_neg(mc.transition(x, y));
  RateReport r;
  r.kind = mode == SmbMode::additive ? RateKind::additive : RateKind::multiplicative;
  const double alpha = pi.dot(mc.psi);
  double beta = 0.0;
  for (Eigen::Index x = 0; x < k; ++x)
    if (pi(x) > 0) beta += pi(x) * std::log(mc.psi(x));
  r.primary_rate = mode == SmbMode::additive ? alpha * S : beta;

  const auto np = static_cast<std::size_t>(paths);
  std::vector<std::vector<double>> stats(np, std::vector<double>(grid.size()));
  detail::parallel_for(np, [&](std::size_t p) {
    const auto path = simulate_path(mc, static_cast<std::size_t>(grid.back()), cfg, 1000 + p);
    double lp = 0.0, phi_add = 0.0, logphi = 0.0;
    std::size_t gi = 0;
    for (std::size_t j = 0; j < path.size(); ++j) {
      const auto x = static_cast<Eigen::Index>(path[j]);
      lp += std::log(j == 0 ? mc.initial(x) : mc.transition(static_cast<Eigen::Index>(path[j - 1]), x));
      phi_add += mc.psi(x);
      if (mode == SmbMode::multiplicative) logphi += std::log(mc.psi(x));
      if (static_cast<long>(j + 1) == grid[gi]) {
        const double n = static_cast<double>(j + 1);
        stats[p][gi] = mode == SmbMode::additive ? phi_add * (-lp) / (n * n) : (logphi + std::log(-lp)) / n;
        ++gi;
      }
    }
  });
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    double m = 0.0, m2 = 0.0;
    for (std::size_t p = 0; p < np; ++p) m += stats[p][gi];
    m /= static_cast<double>(np);
    for (std::size_t p = 0; p < np; ++p) m2 += (stats[p][gi] - m) * (stats[p][gi] - m);
    if (!std::isfinite(m)) throw NonConvergence("empirical_smb: non-finite statistic at n=" + std::to_string(grid[gi]));
    r.convergence_trace.emplace_back(grid[gi], m);
    r.trace_std_error.push_back(std::sqrt(m2 / static_cast<double>(np - 1) / static_cast<double>(np)));
  }
  r.empirical_primary = r.convergence_trace.back().second;
  r.values = {{"alpha", alpha}, {"S", S}, {"beta", beta}, {"theory", r.primary_rate}, {"empirical", r.empirical_primary},
              {"std error", r.trace_std_error.back()}};
  return r;
}

/// i.i.d. source written as a chain with identical rows.
inline MarkovChainSpec iid_as_chain(const Distribution& p, const WeightFunction& psi) {
  const auto s = detail::symbol_law(p, psi);
  const auto k = static_cast<Eigen::Index>(s.p.size());
  MarkovChainSpec mc;
  mc.initial = Eigen::Map<const Vector>(s.p.data(), k);
  mc.psi = Eigen::Map<const Vector>(s.psi.data(), k);
  mc.transition = Matrix(k, k);
  for (Eigen::Index i = 0; i < k; ++i) mc.transition.row(i) = mc.initial.transpose();
  return mc;
}

inline RateReport empirical_smb(const Distribution& p, const WeightFunction& psi, SmbMode mode, std::vector<long> grid,
                                int paths, const NumericConfig& cfg) {
  return empirical_smb(iid_as_chain(p, psi), mode, std::move(grid), paths, cfg);
}

// ---------------------------------------------------------------------------
// Gaussian examples

/// (a n / 2)[n ln(2 pi e) + ln det C_n] for phi_n = a n.
inline double nonstationary_gaussian_wde(double alpha_w, const Matrix& c) {
  require_spd(c, "nonstationary_gaussian_wde");
  const double n = static_cast<double>(c.rows());
  return 0.5 * alpha_w * n * (n * std::log(2 * M_PI * M_E) + log_det_spd(c));
}

/// Scan with C_n = diag(c, 2c, ..., nc): trace of h / (n^2 ln n); the value
/// "h/n^2" column shows the missing n^2 scaling.
inline RateReport nonstationary_gaussian_scan(double alpha_w, double c, const std::vector<long>& grid) {
  detail::check_grid(grid);
  if (!(c > 0)) throw DomainError("nonstationary_gaussian_scan: c must be > 0");
  RateReport r;
  r.kind = RateKind::additive;
  r.primary_rate = alpha_w / 2;
  for (long n : grid) {
    Vector d(n);
    for (long j = 0; j < n; ++j) d(j) = c * static_cast<double>(j + 1);
    const double h = nonstationary_gaussian_wde(alpha_w, Matrix(d.asDiagonal()));
    const double nn = static_cast<double>(n);
    r.convergence_trace.emplace_back(n, n > 1 ? h / (nn * nn * std::log(nn)) : std::numeric_limits<double>::quiet_NaN());
    r.values.emplace_back("h/n^2 at n=" + std::to_string(n), h / (nn * nn));
  }
  r.empirical_primary = r.convergence_trace.back().second;
  r.notes.push_back("h / (n^2 ln n) tends to alpha_w / 2 slowly (Stirling: ln n! = n ln n - n + ...)");
  return r;
}

enum class Ar1Route { automatic, quadrature, monte_carlo };

/// Stationary AR(1) covariance alpha^|i-j| / (1 - alpha^2), unit innovations.
inline Matrix ar1_covariance(double a, long n) {
  Matrix c(n, n);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < n; ++j) c(i, j) = std::pow(a, static_cast<double>(std::abs(i - j))) / (1 - a * a);
  return c;
}

/// h^w_{phi_n}(f_n) = 1/2 E[prod psi(X_j) (x' Q x + n ln 2 pi - ln(1 - a^2))]
/// with Q the tridiagonal AR(1) precision. Quadrature for n <= 3, otherwise
/// Monte Carlo over simulated paths.
inline Estimate ar1_multiplicative_wde(double a, const WeightFunction& psi, long n, const NumericConfig& cfg,
                                       Ar1Route route = Ar1Route::automatic) {
  if (!(std::abs(a) < 1)) throw DomainError("ar1: |alpha| must be < 1");
  if (n < 1) throw DomainError("ar1: n must be >= 1");
  if (route == Ar1Route::quadrature && n > 3) throw StructureError("ar1: quadrature supports n <= 3");
  const auto un = static_cast<std::size_t>(n);
  auto integrand = [&, a, n, un](Point x) {
    double w = 1.0;
    for (std::size_t j = 0; j < un; ++j) w *= psi(x[j]);
    if (w == 0.0) return 0.0;
    double q;
    if (n == 1) {
      q = (1 - a * a) * x[0] * x[0];
    } else {
      q = x[0] * x[0] + x[un - 1] * x[un - 1];
      for (std::size_t j = 1; j + 1 < un; ++j) q += (1 + a * a) * x[j] * x[j];
      for (std::size_t j = 0; j + 1 < un; ++j) q -= 2 * a * x[j] * x[j + 1];
    }
    return 0.5 * w * (q + static_cast<double>(n) * std::log(2 * M_PI) - std::log(1 - a * a));
  };
  const bool quad = route == Ar1Route::quadrature || (route == Ar1Route::automatic && n <= 3);
  if (quad) {
    const auto f = Distribution::gaussian(Vector::Zero(n), ar1_covariance(a, n));
    return expect(f, integrand, cfg);
  }
  const double sd0 = 1 / std::sqrt(1 - a * a);
  return mc_mean(
      [&](Rng& rng, std::span<double> out) {
        out[0] = sd0 * rng.normal();
        for (std::size_t j = 1; j < un; ++j) out[j] = a * out[j - 1] + rng.normal();
      },
      un, integrand, cfg, substream_seed(cfg.rng_seed, 77));
}

}  // namespace wentropy
