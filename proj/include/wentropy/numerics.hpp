#pragma once

// Deterministic numerical substrate: adaptive Gauss-Kronrod quadrature,
// tensor-product box quadrature, seeded Monte-Carlo, finite differences and
// Perron-Frobenius power iteration.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <queue>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace wentropy {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when an integrand, weight or density leaves its admissible domain
/// (NaN/Inf values, negative weights, support violations).
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an adaptive scheme exhausts its budget before meeting tolerance.
class NonConvergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for structurally invalid inputs: non-SPD covariances, reducible
/// matrices, dimension mismatches, singular Fisher matrices.
class StructureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NumericConfig {
  double quad_abs_tol = 1e-9;
  double quad_rel_tol = 1e-8;
  int quad_max_subdivisions = 2000;
  int mc_samples = 200000;
  std::uint64_t rng_seed = 42;
  double fd_step = 1e-5;
  double truncation_sigmas = 10.0;
  double power_iter_tol = 1e-12;
  int power_iter_max = 10000;

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw DomainError("numeric." + field + ": " + why);
    };
    if (!(quad_abs_tol > 0)) fail("quad_abs_tol", "must be > 0");
    if (!(quad_rel_tol > 0)) fail("quad_rel_tol", "must be > 0");
    if (quad_max_subdivisions < 1) fail("quad_max_subdivisions", "must be >= 1");
    if (mc_samples < 100) fail("mc_samples", "must be >= 100");
    if (!(fd_step > 0)) fail("fd_step", "must be > 0");
    if (!(truncation_sigmas >= 4)) fail("truncation_sigmas", "must be >= 4");
    if (!(power_iter_tol > 0)) fail("power_iter_tol", "must be > 0");
    if (power_iter_max < 1) fail("power_iter_max", "must be >= 1");
  }

  /// Tighter copy for an integral nested inside another integral.
  [[nodiscard]] NumericConfig nested() const {
    NumericConfig c = *this;
    c.quad_abs_tol *= 0.1;
    c.quad_rel_tol *= 0.1;
    return c;
  }
};

enum class Method { quadrature, monte_carlo, closed_form };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::quadrature: return "quadrature";
    case Method::monte_carlo: return "monte_carlo";
    case Method::closed_form: return "closed_form";
  }
  return "?";
}

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;  // 0 for deterministic routes
  Method method = Method::closed_form;
  double error_bound = 0.0;  // quadrature error estimate
  double tail_mass = 0.0;    // probability mass cut off by box truncation

  static Estimate exact(double v) { return {v, 0.0, Method::closed_form, 0.0, 0.0}; }

  /// Combined deterministic + statistical uncertainty at `k` standard errors.
  [[nodiscard]] double band(double k = 3.0) const { return error_bound + k * std_error; }
};

/// Linear combination of independent-or-not estimates; errors add in the
/// worst case, standard errors add in quadrature.
inline Estimate combine(std::initializer_list<std::pair<double, Estimate>> terms) {
  Estimate out;
  out.method = Method::closed_form;
  double var = 0.0;
  for (const auto& [c, e] : terms) {
    out.value += c * e.value;
    out.error_bound += std::abs(c) * e.error_bound;
    out.tail_mass = std::max(out.tail_mass, e.tail_mass);
    var += c * c * e.std_error * e.std_error;
    if (e.method == Method::monte_carlo) out.method = Method::monte_carlo;
    else if (e.method == Method::quadrature && out.method == Method::closed_form)
      out.method = Method::quadrature;
  }
  out.std_error = std::sqrt(var);
  return out;
}

// ---------------------------------------------------------------------------
// Random numbers

/// Seeded generator with its own normal transform so streams are identical
/// across standard-library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on the open interval (0,1).
  double uniform_open() {
    double u;
    do { u = uniform(); } while (u == 0.0);
    return u;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * M_PI * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
  }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Independent, reproducible sub-stream seed (splitmix64 finaliser).
inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// One-dimensional adaptive quadrature

namespace detail {

inline constexpr std::array<double, 8> kXgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kWgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> kWg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
  double a, b, value, error;
  bool operator<(const Segment& o) const { return error < o.error; }
};

inline std::string where(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

template <class F>
Segment gauss_kronrod15(const F& f, double a, double b) {
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  auto eval = [&](double x) {
    const double v = f(x);
    if (!std::isfinite(v)) throw DomainError("integrand is not finite at x=" + where(x));
    return v;
  };
  const double fc = eval(c);
  double resk = fc * kWgk[7];
  double resg = fc * kWg[3];
  double resabs = std::abs(resk);
  std::array<double, 7> f1{}, f2{};
  for (int j = 0; j < 7; ++j) {
    const double dx = h * kXgk[j];
    f1[j] = eval(c - dx);
    f2[j] = eval(c + dx);
    resk += kWgk[j] * (f1[j] + f2[j]);
    resabs += kWgk[j] * (std::abs(f1[j]) + std::abs(f2[j]));
    if (j % 2 == 1) resg += kWg[j / 2] * (f1[j] + f2[j]);
  }
  const double mean = 0.5 * resk;
  double resasc = kWgk[7] * std::abs(fc - mean);
  for (int j = 0; j < 7; ++j) resasc += kWgk[j] * (std::abs(f1[j] - mean) + std::abs(f2[j] - mean));
  const double ah = std::abs(h);
  resk *= h;
  resabs *= ah;
  resasc *= ah;
  double err = std::abs((resk - resg * h));
  if (resasc != 0.0 && err != 0.0) err = resasc * std::min(1.0, std::pow(200.0 * err / resasc, 1.5));
  constexpr double eps = std::numeric_limits<double>::epsilon();
  if (resabs > std::numeric_limits<double>::min() / (50.0 * eps)) err = std::max(50.0 * eps * resabs, err);
  return {a, b, resk, err};
}

/// Adaptive bisection over a set of initial pieces sharing one error budget.
template <class F>
Estimate adaptive(const F& f, const std::vector<double>& cuts, const NumericConfig& cfg) {
  std::priority_queue<Segment> heap;
  double total = 0.0, total_err = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    if (!(cuts[i + 1] > cuts[i])) continue;
    Segment s = gauss_kronrod15(f, cuts[i], cuts[i + 1]);
    total += s.value;
    total_err += s.error;
    heap.push(s);
  }
  int splits = 0;
  constexpr double eps = std::numeric_limits<double>::epsilon();
  std::vector<Segment> frozen;
  while (!heap.empty() && total_err > std::max(cfg.quad_abs_tol, cfg.quad_rel_tol * std::abs(total))) {
    if (splits >= cfg.quad_max_subdivisions) {
      throw NonConvergence("adaptive quadrature: subdivision budget " +
                           std::to_string(cfg.quad_max_subdivisions) + " exhausted (error estimate " +
                           where(total_err) + ")");
    }
    Segment s = heap.top();
    heap.pop();
    const double mid = 0.5 * (s.a + s.b);
    if (std::abs(s.b - s.a) <= 8 * eps * std::max(std::abs(s.a), std::abs(s.b)) ||
        std::abs(s.b - s.a) < 1e-250) {
      // Cannot be refined further in double precision; keep as is.
      frozen.push_back(s);
      continue;
    }
    Segment l = gauss_kronrod15(f, s.a, mid);
    Segment r = gauss_kronrod15(f, mid, s.b);
    total += l.value + r.value - s.value;
    total_err += l.error + r.error - s.error;
    heap.push(l);
    heap.push(r);
    ++splits;
  }
  // Re-sum to shed accumulated update round-off.
  double sum = 0.0, err = 0.0;
  for (const auto& s : frozen) { sum += s.value; err += s.error; }
  std::vector<Segment> rest;
  while (!heap.empty()) { rest.push_back(heap.top()); heap.pop(); }
  std::sort(rest.begin(), rest.end(), [](const Segment& x, const Segment& y) { return x.a < y.a; });
  for (const auto& s : rest) { sum += s.value; err += s.error; }
  return {sum, 0.0, Method::quadrature, err, 0.0};
}

}  // namespace detail

/// Adaptive Gauss-Kronrod (7/15) integral of `f` over [a,b]. Infinite limits
/// are mapped to finite intervals by rational substitution. Interior
/// `breakpoints` (e.g. discontinuities of indicator weights) start new pieces.
template <class F>
Estimate integrate_1d(const F& f, double a, double b, const NumericConfig& cfg,
                      std::span<const double> breakpoints = {}) {
  if (std::isnan(a) || std::isnan(b) || !(a < b)) {
    if (a == b) return {0.0, 0.0, Method::quadrature, 0.0, 0.0};
    throw DomainError("integrate_1d: need a < b");
  }
  const bool inf_a = std::isinf(a), inf_b = std::isinf(b);
  if (!inf_a && !inf_b) {
    std::vector<double> cuts{a};
    std::vector<double> bp(breakpoints.begin(), breakpoints.end());
    std::sort(bp.begin(), bp.end());
    for (double p : bp)
      if (p > cuts.back() && p < b) cuts.push_back(p);
    cuts.push_back(b);
    return detail::adaptive(f, cuts, cfg);
  }
  // Map to a finite parameter interval; breakpoints are mapped as well.
  std::function<double(double)> to_x, jac, to_t;
  double ta, tb;
  if (inf_a && inf_b) {
    to_x = [](double t) { return t / (1.0 - t * t); };
    jac = [](double t) { const double d = 1.0 - t * t; return (1.0 + t * t) / (d * d); };
    to_t = [](double x) { return x == 0.0 ? 0.0 : (std::sqrt(1.0 + 4.0 * x * x) - 1.0) / (2.0 * x); };
    ta = -1.0; tb = 1.0;
  } else if (inf_b) {
    to_x = [a](double t) { return a + t / (1.0 - t); };
    jac = [](double t) { return 1.0 / ((1.0 - t) * (1.0 - t)); };
    to_t = [a](double x) { return (x - a) / (1.0 + x - a); };
    ta = 0.0; tb = 1.0;
  } else {
    to_x = [b](double t) { return b - t / (1.0 - t); };
    jac = [](double t) { return 1.0 / ((1.0 - t) * (1.0 - t)); };
    to_t = [b](double x) { return (b - x) / (1.0 + b - x); };
    ta = 0.0; tb = 1.0;
  }
  auto g = [&](double t) {
    const double x = to_x(t);
    if (!std::isfinite(x)) return 0.0;
    const double v = f(x);
    if (v == 0.0) return 0.0;
    return v * jac(t);
  };
  std::vector<double> cuts{ta, tb};
  for (double p : breakpoints) {
    if (std::isfinite(p) && p > a && p < b) cuts.push_back(to_t(p));
  }
  std::sort(cuts.begin(), cuts.end());
  return detail::adaptive(g, cuts, cfg);
}

/// Axis-aligned integration region with optional interior breakpoints per axis.
struct IntegrationBox {
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<std::vector<double>> breaks;

  [[nodiscard]] std::size_t dim() const { return lower.size(); }
};

inline constexpr std::size_t kMaxQuadratureDim = 3;

/// Tensor-product adaptive quadrature for d <= 3 via nested 1-D integration.
template <class F>
Estimate integrate_box(const F& f, const IntegrationBox& box, const NumericConfig& cfg) {
  const std::size_t d = box.dim();
  if (d == 0 || d > kMaxQuadratureDim) throw StructureError("integrate_box: dimension must be 1..3");
  std::vector<double> point(d, 0.0);
  std::function<Estimate(std::size_t, const NumericConfig&)> level;
  level = [&](std::size_t axis, const NumericConfig& c) -> Estimate {
    std::span<const double> bp;
    if (axis < box.breaks.size()) bp = box.breaks[axis];
    if (axis + 1 == d) {
      return integrate_1d([&](double x) { point[axis] = x; return f(std::span<const double>(point)); },
                          box.lower[axis], box.upper[axis], c, bp);
    }
    const NumericConfig inner = c.nested();
    double inner_err = 0.0;
    Estimate e = integrate_1d(
        [&](double x) {
          point[axis] = x;
          const Estimate r = level(axis + 1, inner);
          inner_err = std::max(inner_err, r.error_bound);
          point[axis] = x;
          return r.value;
        },
        box.lower[axis], box.upper[axis], c, bp);
    e.error_bound += inner_err * (box.upper[axis] - box.lower[axis]);
    return e;
  };
  return level(0, cfg);
}

// ---------------------------------------------------------------------------
// Monte-Carlo

/// Sample mean of `g(X)` for i.i.d. draws from `sample(rng, out)`, with
/// standard error sd/sqrt(n). Deterministic for a fixed seed.
template <class Sampler, class G>
Estimate mc_mean(const Sampler& sample, std::size_t dim, const G& g, const NumericConfig& cfg,
                 std::uint64_t seed, int rejection_budget = 0) {
  Rng rng(seed);
  std::vector<double> x(dim);
  double mean = 0.0, m2 = 0.0;
  long n = 0;
  int rejected = 0;
  for (int i = 0; i < cfg.mc_samples; ++i) {
    sample(rng, std::span<double>(x));
    const double v = g(std::span<const double>(x));
    if (!std::isfinite(v)) {
      if (++rejected > rejection_budget) throw DomainError("mc_expectation: non-finite sample value");
      continue;
    }
    ++n;
    const double delta = v - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (v - mean);
  }
  const double var = n > 1 ? m2 / static_cast<double>(n - 1) : 0.0;
  return {mean, std::sqrt(var / static_cast<double>(n)), Method::monte_carlo, 0.0, 0.0};
}

// ---------------------------------------------------------------------------
// Finite differences

/// Central five-point differences (Richardson-extrapolated stencils), O(h^4).
/// Order 1 uses h = fd_step * max(1,|x|); order 2 uses h = sqrt(fd_step) * max(1,|x|)
/// so that cancellation stays below 1e-8 relative.
template <class F>
double finite_diff(const F& f, double x, int order, const NumericConfig& cfg) {
  const double scale = std::max(1.0, std::abs(x));
  auto eval = [&](double t) {
    const double v = f(t);
    if (!std::isfinite(v)) throw DomainError("finite_diff: non-finite evaluation at x=" + detail::where(t));
    return v;
  };
  if (order == 1) {
    const double h = cfg.fd_step * scale;
    return (-eval(x + 2 * h) + 8 * eval(x + h) - 8 * eval(x - h) + eval(x - 2 * h)) / (12 * h);
  }
  if (order == 2) {
    const double h = std::sqrt(cfg.fd_step) * scale;
    return (-eval(x + 2 * h) + 16 * eval(x + h) - 30 * eval(x) + 16 * eval(x - h) - eval(x - 2 * h)) /
           (12 * h * h);
  }
  throw DomainError("finite_diff: order must be 1 or 2");
}

// ---------------------------------------------------------------------------
// Perron-Frobenius

struct PerronResult {
  double eigenvalue = 0.0;
  Vector right;  // M v = mu v, sum(v) = 1
  Vector left;   // u^T M = mu u^T, sum(u) = 1
  int iterations = 0;
};

/// True when the directed graph of positive entries is strongly connected.
inline bool is_irreducible(const Matrix& m) {
  const Eigen::Index n = m.rows();
  auto reach_all = [&](bool transpose) {
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::vector<Eigen::Index> stack{0};
    seen[0] = 1;
    Eigen::Index count = 1;
    while (!stack.empty()) {
      const Eigen::Index i = stack.back();
      stack.pop_back();
      for (Eigen::Index j = 0; j < n; ++j) {
        const double v = transpose ? m(j, i) : m(i, j);
        if (v > 0 && !seen[static_cast<std::size_t>(j)]) {
          seen[static_cast<std::size_t>(j)] = 1;
          ++count;
          stack.push_back(j);
        }
      }
    }
    return count == n;
  };
  return n > 0 && reach_all(false) && reach_all(true);
}

namespace detail {

inline Vector perron_vector(const Matrix& m, double shift, const NumericConfig& cfg, double& mu, int& iters) {
  const Eigen::Index n = m.rows();
  Vector v = Vector::Constant(n, 1.0 / static_cast<double>(n));
  for (iters = 1; iters <= cfg.power_iter_max; ++iters) {
    Vector w = m * v + shift * v;
    v = w / w.sum();
    const Vector mv = m * v;
    mu = mv.sum();  // sum(v) == 1
    const double resid = (mv - mu * v).cwiseAbs().maxCoeff();
    if (resid <= cfg.power_iter_tol * v.cwiseAbs().maxCoeff()) return v;
  }
  throw NonConvergence("power_iteration: no convergence within " + std::to_string(cfg.power_iter_max) +
                       " iterations");
}

}  // namespace detail

/// Perron-Frobenius eigenvalue and eigenvectors of an irreducible nonnegative
/// matrix. Iterates on M + sI so periodic matrices converge as well.
inline PerronResult power_iteration(const Matrix& m, const NumericConfig& cfg) {
  if (m.rows() != m.cols() || m.rows() == 0) throw StructureError("power_iteration: matrix must be square");
  if ((m.array() < 0).any() || !m.allFinite()) throw StructureError("power_iteration: matrix must be nonnegative");
  if (!is_irreducible(m)) throw StructureError("power_iteration: matrix is reducible");
  const bool positive = (m.array() > 0).all();
  const double shift = positive ? 0.0 : 0.5 * m.rowwise().sum().maxCoeff();
  PerronResult out;
  int it_r = 0, it_l = 0;
  double mu_l = 0.0;
  out.right = detail::perron_vector(m, shift, cfg, out.eigenvalue, it_r);
  out.left = detail::perron_vector(m.transpose(), shift, cfg, mu_l, it_l);
  out.iterations = std::max(it_r, it_l);
  return out;
}

// ---------------------------------------------------------------------------
// Small dense helpers

/// Cholesky-checked symmetric positive-definite matrix.
inline void require_spd(const Matrix& c, const char* what) {
  if (c.rows() != c.cols() || c.rows() == 0) throw StructureError(std::string(what) + ": matrix must be square");
  if (!c.allFinite()) throw StructureError(std::string(what) + ": matrix has non-finite entries");
  if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, c.cwiseAbs().maxCoeff()))
    throw StructureError(std::string(what) + ": matrix is not symmetric");
  Eigen::LLT<Matrix> llt(c);
  if (llt.info() != Eigen::Success) throw StructureError(std::string(what) + ": matrix is not positive definite");
}

inline double log_det_spd(const Matrix& c) {
  Eigen::LLT<Matrix> llt(c);
  if (llt.info() != Eigen::Success) throw StructureError("log_det: matrix is not positive definite");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

/// Inverse with a condition-number guard (cond > 1e12 rejected).
inline Matrix guarded_inverse(const Matrix& a, const char* what) {
  if (a.rows() != a.cols()) throw StructureError(std::string(what) + ": matrix must be square");
  Eigen::JacobiSVD<Matrix> svd(a);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(s.size() - 1) <= 0 || s(0) / s(s.size() - 1) > 1e12)
    throw StructureError(std::string(what) + ": matrix is singular or ill-conditioned");
  return a.inverse();
}

inline double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
inline double standard_normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

/// Upper tail mass of N(0,1) beyond k.
inline double normal_tail(double k) { return 0.5 * std::erfc(k / std::sqrt(2.0)); }

}  // namespace wentropy
