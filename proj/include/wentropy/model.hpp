#pragma once

// Weight functions, distributions, exponential families and Markov chains.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "numerics.hpp"

namespace wentropy {

using Point = std::span<const double>;

inline Vector to_vector(Point x) { return Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size())); }

// ===========================================================================
// Weight functions

namespace wf {

struct Node {
  virtual ~Node() = default;
  virtual double eval(Point x) const = 0;
  /// Partial derivative along `axis`; nullopt means "use finite differences".
  virtual std::optional<double> partial(Point, std::size_t) const { return std::nullopt; }
  virtual std::optional<double> laplacian(Point) const { return std::nullopt; }
  virtual bool analytic() const { return false; }
  virtual void breakpoints(std::size_t, std::vector<double>&) const {}
  virtual bool has_boundary() const { return false; }
  /// Dimension the weight is tied to; 0 means any.
  virtual std::size_t dim() const { return 0; }
};

using NodePtr = std::shared_ptr<const Node>;

struct Constant final : Node {
  double c;
  explicit Constant(double c_) : c(c_) {}
  double eval(Point) const override { return c; }
  std::optional<double> partial(Point, std::size_t) const override { return 0.0; }
  std::optional<double> laplacian(Point) const override { return 0.0; }
  bool analytic() const override { return true; }
};

struct Indicator final : Node {
  std::vector<double> lo, hi;
  Indicator(std::vector<double> l, std::vector<double> h) : lo(std::move(l)), hi(std::move(h)) {}
  double eval(Point x) const override {
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (x[i] < lo[i] || x[i] > hi[i]) return 0.0;
    return 1.0;
  }
  // Derivatives vanish off the measure-zero boundary.
  std::optional<double> partial(Point, std::size_t) const override { return 0.0; }
  std::optional<double> laplacian(Point) const override { return 0.0; }
  bool analytic() const override { return true; }
  void breakpoints(std::size_t axis, std::vector<double>& out) const override {
    if (axis >= lo.size()) return;
    if (std::isfinite(lo[axis])) out.push_back(lo[axis]);
    if (std::isfinite(hi[axis])) out.push_back(hi[axis]);
  }
  bool has_boundary() const override { return true; }
  std::size_t dim() const override { return lo.size(); }
};

struct Exponential final : Node {
  std::vector<double> t;
  explicit Exponential(std::vector<double> t_) : t(std::move(t_)) {}
  double dot(Point x) const {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * x[i];
    return s;
  }
  double eval(Point x) const override { return std::exp(dot(x)); }
  std::optional<double> partial(Point x, std::size_t i) const override { return t[i] * eval(x); }
  std::optional<double> laplacian(Point x) const override {
    double tt = 0.0;
    for (double v : t) tt += v * v;
    return tt * eval(x);
  }
  bool analytic() const override { return true; }
  std::size_t dim() const override { return t.size(); }
};

/// Sum of monomials c * prod x_i^k_i.
struct Polynomial final : Node {
  struct Term {
    double coef;
    std::vector<int> powers;
  };
  std::vector<Term> terms;
  std::size_t d;
  bool clip;
  Polynomial(std::vector<Term> t, std::size_t d_, bool clip_) : terms(std::move(t)), d(d_), clip(clip_) {}

  double raw(Point x) const {
    double s = 0.0;
    for (const auto& term : terms) {
      double m = term.coef;
      for (std::size_t i = 0; i < d; ++i) m *= std::pow(x[i], term.powers[i]);
      s += m;
    }
    return s;
  }
  double eval(Point x) const override {
    const double v = raw(x);
    return clip ? std::max(0.0, v) : v;
  }
  double derivative(Point x, std::size_t i, int times) const {
    double s = 0.0;
    for (const auto& term : terms) {
      const int k = term.powers[i];
      if (k < times) continue;
      double m = term.coef;
      for (int r = 0; r < times; ++r) m *= static_cast<double>(k - r);
      for (std::size_t j = 0; j < d; ++j) m *= std::pow(x[j], j == i ? k - times : term.powers[j]);
      s += m;
    }
    return s;
  }
  std::optional<double> partial(Point x, std::size_t i) const override {
    if (clip && raw(x) < 0) return 0.0;
    return derivative(x, i, 1);
  }
  std::optional<double> laplacian(Point x) const override {
    if (clip && raw(x) < 0) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += derivative(x, i, 2);
    return s;
  }
  bool analytic() const override { return true; }
  std::size_t dim() const override { return d; }
};

/// floor + height * exp(-|x-center|^2 / (2 width^2)).
struct GaussianBump final : Node {
  std::vector<double> center;
  double width, floor, height;
  GaussianBump(std::vector<double> c, double w, double f, double h)
      : center(std::move(c)), width(w), floor(f), height(h) {}
  double r2(Point x) const {
    double s = 0.0;
    for (std::size_t i = 0; i < center.size(); ++i) s += (x[i] - center[i]) * (x[i] - center[i]);
    return s;
  }
  double bump(Point x) const { return height * std::exp(-0.5 * r2(x) / (width * width)); }
  double eval(Point x) const override { return floor + bump(x); }
  std::optional<double> partial(Point x, std::size_t i) const override {
    return -(x[i] - center[i]) / (width * width) * bump(x);
  }
  std::optional<double> laplacian(Point x) const override {
    const double w2 = width * width;
    return bump(x) * (r2(x) / (w2 * w2) - static_cast<double>(center.size()) / w2);
  }
  bool analytic() const override { return true; }
  std::size_t dim() const override { return center.size(); }
};

/// Piecewise-linear on a 1-D grid, constant beyond the ends.
struct Tabulated final : Node {
  std::vector<double> xs, ys;
  Tabulated(std::vector<double> x, std::vector<double> y) : xs(std::move(x)), ys(std::move(y)) {}
  double eval(Point p) const override {
    const double x = p[0];
    if (x <= xs.front()) return ys.front();
    if (x >= xs.back()) return ys.back();
    const auto it = std::upper_bound(xs.begin(), xs.end(), x);
    const std::size_t j = static_cast<std::size_t>(it - xs.begin());
    const double w = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
    return (1 - w) * ys[j - 1] + w * ys[j];
  }
  void breakpoints(std::size_t axis, std::vector<double>& out) const override {
    if (axis == 0) out.insert(out.end(), xs.begin(), xs.end());
  }
  std::size_t dim() const override { return 1; }
};

/// offset + amplitude * sin(frequency * x + phase), 1-D.
struct Sine final : Node {
  double offset, amplitude, frequency, phase;
  Sine(double o, double a, double f, double p) : offset(o), amplitude(a), frequency(f), phase(p) {}
  double eval(Point x) const override { return offset + amplitude * std::sin(frequency * x[0] + phase); }
  std::optional<double> partial(Point x, std::size_t) const override {
    return amplitude * frequency * std::cos(frequency * x[0] + phase);
  }
  std::optional<double> laplacian(Point x) const override {
    return -amplitude * frequency * frequency * std::sin(frequency * x[0] + phase);
  }
  bool analytic() const override { return true; }
  std::size_t dim() const override { return 1; }
};

struct Combination final : Node {
  std::vector<std::pair<double, NodePtr>> terms;
  explicit Combination(std::vector<std::pair<double, NodePtr>> t) : terms(std::move(t)) {}
  double eval(Point x) const override {
    double s = 0.0;
    for (const auto& [c, n] : terms) s += c * n->eval(x);
    return s;
  }
  std::optional<double> partial(Point x, std::size_t i) const override {
    double s = 0.0;
    for (const auto& [c, n] : terms) {
      auto v = n->partial(x, i);
      if (!v) return std::nullopt;
      s += c * *v;
    }
    return s;
  }
  std::optional<double> laplacian(Point x) const override {
    double s = 0.0;
    for (const auto& [c, n] : terms) {
      auto v = n->laplacian(x);
      if (!v) return std::nullopt;
      s += c * *v;
    }
    return s;
  }
  bool analytic() const override {
    return std::all_of(terms.begin(), terms.end(), [](const auto& t) { return t.second->analytic(); });
  }
  void breakpoints(std::size_t axis, std::vector<double>& out) const override {
    for (const auto& t : terms) t.second->breakpoints(axis, out);
  }
  bool has_boundary() const override {
    return std::any_of(terms.begin(), terms.end(), [](const auto& t) { return t.second->has_boundary(); });
  }
  std::size_t dim() const override {
    std::size_t d = 0;
    for (const auto& t : terms) d = std::max(d, t.second->dim());
    return d;
  }
};

/// x -> inner(factor * x).
struct ScaledArgument final : Node {
  NodePtr inner;
  double factor;
  ScaledArgument(NodePtr n, double f) : inner(std::move(n)), factor(f) {}
  std::vector<double> scaled(Point x) const {
    std::vector<double> y(x.begin(), x.end());
    for (double& v : y) v *= factor;
    return y;
  }
  double eval(Point x) const override { return inner->eval(scaled(x)); }
  std::optional<double> partial(Point x, std::size_t i) const override {
    auto v = inner->partial(scaled(x), i);
    if (!v) return std::nullopt;
    return factor * *v;
  }
  std::optional<double> laplacian(Point x) const override {
    auto v = inner->laplacian(scaled(x));
    if (!v) return std::nullopt;
    return factor * factor * *v;
  }
  bool analytic() const override { return inner->analytic(); }
  void breakpoints(std::size_t axis, std::vector<double>& out) const override {
    std::vector<double> b;
    inner->breakpoints(axis, b);
    for (double v : b) out.push_back(v / factor);
  }
  bool has_boundary() const override { return inner->has_boundary(); }
  std::size_t dim() const override { return inner->dim(); }
};

struct Custom final : Node {
  std::function<double(Point)> f;
  std::function<double(Point, std::size_t)> df;
  std::function<double(Point)> lap;
  std::size_t d;
  double eval(Point x) const override { return f(x); }
  std::optional<double> partial(Point x, std::size_t i) const override {
    if (df) return df(x, i);
    return std::nullopt;
  }
  std::optional<double> laplacian(Point x) const override {
    if (lap) return lap(x);
    return std::nullopt;
  }
  bool analytic() const override { return static_cast<bool>(df) && static_cast<bool>(lap); }
  std::size_t dim() const override { return d; }
};

}  // namespace wf

/// Nonnegative weight function phi on R^d (or on a finite alphabet, viewed as
/// points of R). Evaluation raises DomainError on a negative or non-finite value.
class WeightFunction {
 public:
  WeightFunction() : node_(std::make_shared<wf::Constant>(1.0)), kind_("constant") {}

  static WeightFunction constant(double c) {
    if (!(c >= 0) || !std::isfinite(c)) throw DomainError("weight: constant must be finite and >= 0");
    return {std::make_shared<wf::Constant>(c), "constant"};
  }
  /// 1(x in [lo,hi]) per coordinate; bounds may be infinite.
  static WeightFunction indicator(std::vector<double> lo, std::vector<double> hi) {
    if (lo.size() != hi.size() || lo.empty()) throw StructureError("weight.indicator: bound sizes differ");
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (!(lo[i] < hi[i])) throw DomainError("weight.indicator: need lower < upper");
    return {std::make_shared<wf::Indicator>(std::move(lo), std::move(hi)), "indicator"};
  }
  static WeightFunction exponential(std::vector<double> t) {
    if (t.empty()) throw StructureError("weight.exponential: empty t");
    return {std::make_shared<wf::Exponential>(std::move(t)), "exponential"};
  }
  /// 1-D polynomial sum_k c_k x^k.
  static WeightFunction polynomial(const std::vector<double>& coefficients, bool clip = false) {
    std::vector<wf::Polynomial::Term> terms;
    for (std::size_t k = 0; k < coefficients.size(); ++k)
      if (coefficients[k] != 0.0) terms.push_back({coefficients[k], {static_cast<int>(k)}});
    return {std::make_shared<wf::Polynomial>(std::move(terms), 1, clip), "polynomial"};
  }
  /// Multivariate polynomial from monomials; `clip` replaces negative values by 0.
  static WeightFunction polynomial(std::vector<wf::Polynomial::Term> terms, std::size_t d, bool clip = false) {
    for (const auto& t : terms) {
      if (t.powers.size() != d) throw StructureError("weight.polynomial: monomial power count != dimension");
      for (int p : t.powers)
        if (p < 0) throw DomainError("weight.polynomial: negative power");
    }
    return {std::make_shared<wf::Polynomial>(std::move(terms), d, clip), "polynomial"};
  }
  static WeightFunction gaussian_bump(std::vector<double> center, double width, double floor, double height = 1.0) {
    if (!(width > 0)) throw DomainError("weight.gaussian_bump: width must be > 0");
    if (!(floor >= 0) || !(height >= -floor)) throw DomainError("weight.gaussian_bump: weight would be negative");
    return {std::make_shared<wf::GaussianBump>(std::move(center), width, floor, height), "gaussian_bump"};
  }
  static WeightFunction tabulated(std::vector<double> xs, std::vector<double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2) throw StructureError("weight.tabulated: need >= 2 matching points");
    for (std::size_t i = 1; i < xs.size(); ++i)
      if (!(xs[i] > xs[i - 1])) throw DomainError("weight.tabulated: grid must be strictly increasing");
    for (double y : ys)
      if (!(y >= 0)) throw DomainError("weight.tabulated: values must be >= 0");
    return {std::make_shared<wf::Tabulated>(std::move(xs), std::move(ys)), "tabulated"};
  }
  static WeightFunction sine(double offset, double amplitude, double frequency, double phase = 0.0) {
    if (std::abs(amplitude) > offset) throw DomainError("weight.sine: |amplitude| > offset makes the weight negative");
    return {std::make_shared<wf::Sine>(offset, amplitude, frequency, phase), "sine"};
  }
  static WeightFunction combination(const std::vector<std::pair<double, WeightFunction>>& terms) {
    std::vector<std::pair<double, wf::NodePtr>> nodes;
    for (const auto& [c, w] : terms) nodes.emplace_back(c, w.node_);
    return {std::make_shared<wf::Combination>(std::move(nodes)), "combination"};
  }
  static WeightFunction custom(std::function<double(Point)> f, std::size_t d = 0,
                               std::function<double(Point, std::size_t)> df = {},
                               std::function<double(Point)> lap = {}) {
    auto n = std::make_shared<wf::Custom>();
    n->f = std::move(f);
    n->df = std::move(df);
    n->lap = std::move(lap);
    n->d = d;
    return {n, "custom"};
  }
  static WeightFunction custom_1d(std::function<double(double)> f) {
    return custom([f = std::move(f)](Point x) { return f(x[0]); }, 1);
  }

  /// x -> phi(factor * x): the phi_c, phi_s views of the splitting construction.
  [[nodiscard]] WeightFunction scaled_argument(double factor) const {
    return {std::make_shared<wf::ScaledArgument>(node_, factor), "scaled"};
  }
  [[nodiscard]] WeightFunction times(double c) const { return combination({{c, *this}}); }

  double operator()(Point x) const {
    const double v = node_->eval(x);
    if (!(v >= 0) || !std::isfinite(v)) {
      std::string at;
      for (double c : x) at += (at.empty() ? "" : ",") + detail::where(c);
      throw DomainError("weight function is negative or non-finite (" + detail::where(v) + ") at x=(" + at + ")");
    }
    return v;
  }
  double operator()(double x) const { return (*this)(Point(&x, 1)); }

  [[nodiscard]] bool analytic_derivatives() const { return node_->analytic(); }
  [[nodiscard]] bool boundary_warning() const { return node_->has_boundary(); }
  [[nodiscard]] const std::string& kind() const { return kind_; }
  [[nodiscard]] std::size_t dim() const { return node_->dim(); }
  [[nodiscard]] bool is_constant() const { return dynamic_cast<const wf::Constant*>(node_.get()) != nullptr; }
  [[nodiscard]] std::optional<double> constant_value() const {
    if (auto* c = dynamic_cast<const wf::Constant*>(node_.get())) return c->c;
    return std::nullopt;
  }
  [[nodiscard]] std::optional<std::vector<double>> exponential_t() const {
    if (auto* e = dynamic_cast<const wf::Exponential*>(node_.get())) return e->t;
    return std::nullopt;
  }

  double partial(Point x, std::size_t i) const {
    if (auto v = node_->partial(x, i)) return *v;
    std::vector<double> y(x.begin(), x.end());
    const double xi = y[i];
    NumericConfig c;
    return finite_diff([&](double s) { y[i] = s; return node_->eval(y); }, xi, 1, c);
  }
  Vector gradient(Point x) const {
    Vector g(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) g(static_cast<Eigen::Index>(i)) = partial(x, i);
    return g;
  }
  double laplacian(Point x) const {
    if (auto v = node_->laplacian(x)) return *v;
    std::vector<double> y(x.begin(), x.end());
    NumericConfig c;
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double xi = y[i];
      s += finite_diff([&](double t) { y[i] = t; return node_->eval(y); }, xi, 2, c);
      y[i] = xi;
    }
    return s;
  }
  double derivative(double x) const { return partial(Point(&x, 1), 0); }
  double second_derivative(double x) const { return laplacian(Point(&x, 1)); }

  /// Discontinuity locations along `axis` for quadrature subdivision.
  [[nodiscard]] std::vector<double> breakpoints(std::size_t axis) const {
    std::vector<double> b;
    node_->breakpoints(axis, b);
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
    return b;
  }

  /// Checks phi >= 0 and phi > 0 somewhere on a sample of points in `box`.
  void validate_on(const IntegrationBox& box, std::uint64_t seed = 1) const {
    Rng rng(seed);
    std::vector<double> x(box.dim());
    bool positive = false;
    for (int k = 0; k < 256; ++k) {
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = box.lower[i] + (box.upper[i] - box.lower[i]) * rng.uniform();
      if ((*this)(x) > 0) positive = true;
    }
    if (!positive) throw DomainError("weight function vanishes on every sampled point of the region");
  }

 private:
  WeightFunction(wf::NodePtr n, std::string kind) : node_(std::move(n)), kind_(std::move(kind)) {}
  wf::NodePtr node_;
  std::string kind_;
};

// ===========================================================================
// Distributions

namespace dist {

struct Impl {
  virtual ~Impl() = default;
  virtual std::string kind() const = 0;
  virtual std::size_t dim() const = 0;
  virtual bool discrete() const { return false; }
  virtual double pdf(Point x) const = 0;
  virtual double log_pdf(Point x) const { return std::log(pdf(x)); }
  virtual std::optional<Vector> grad_pdf(Point) const { return std::nullopt; }
  virtual std::optional<double> laplacian_pdf(Point) const { return std::nullopt; }
  virtual void sample(Rng& rng, std::span<double> out) const = 0;
  virtual Vector mean() const = 0;
  virtual Matrix covariance() const = 0;
  /// Integration region and the probability mass it leaves out.
  virtual IntegrationBox box(double sigmas) const {
    const Vector m = mean();
    const Matrix c = covariance();
    IntegrationBox b;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double s = std::sqrt(c(i, i));
      b.lower.push_back(m(i) - sigmas * s);
      b.upper.push_back(m(i) + sigmas * s);
    }
    b.breaks.resize(dim());
    return b;
  }
  virtual double tail_mass(double sigmas) const = 0;
};

using ImplPtr = std::shared_ptr<const Impl>;

struct Discrete final : Impl {
  std::vector<Vector> points;
  std::vector<double> masses;
  std::vector<double> cdf;
  Discrete(std::vector<Vector> p, std::vector<double> m) : points(std::move(p)), masses(std::move(m)) {
    double s = 0.0;
    for (double v : masses) cdf.push_back(s += v);
  }
  std::string kind() const override { return "discrete"; }
  std::size_t dim() const override { return static_cast<std::size_t>(points.front().size()); }
  bool discrete() const override { return true; }
  double pdf(Point x) const override {
    const Vector v = to_vector(x);
    for (std::size_t i = 0; i < points.size(); ++i)
      if ((points[i] - v).cwiseAbs().maxCoeff() == 0.0) return masses[i];
    return 0.0;
  }
  void sample(Rng& rng, std::span<double> out) const override {
    const double u = rng.uniform() * cdf.back();
    std::size_t i = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    i = std::min(i, points.size() - 1);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = points[i](static_cast<Eigen::Index>(k));
  }
  Vector mean() const override {
    Vector m = Vector::Zero(points.front().size());
    for (std::size_t i = 0; i < points.size(); ++i) m += masses[i] * points[i];
    return m;
  }
  Matrix covariance() const override {
    const Vector m = mean();
    Matrix c = Matrix::Zero(m.size(), m.size());
    for (std::size_t i = 0; i < points.size(); ++i) c += masses[i] * (points[i] - m) * (points[i] - m).transpose();
    return c;
  }
  IntegrationBox box(double) const override {
    IntegrationBox b;
    for (Eigen::Index i = 0; i < points.front().size(); ++i) {
      double lo = points.front()(i), hi = lo;
      for (const auto& p : points) { lo = std::min(lo, p(i)); hi = std::max(hi, p(i)); }
      b.lower.push_back(lo);
      b.upper.push_back(hi);
    }
    b.breaks.resize(dim());
    return b;
  }
  double tail_mass(double) const override { return 0.0; }
};

struct Gaussian final : Impl {
  Vector mu;
  Matrix cov, prec;
  Eigen::MatrixXd chol;
  double log_norm;
  Gaussian(Vector m, Matrix c) : mu(std::move(m)), cov(std::move(c)) {
    require_spd(cov, "gaussian.covariance");
    Eigen::LLT<Matrix> llt(cov);
    chol = llt.matrixL();
    prec = llt.solve(Matrix::Identity(cov.rows(), cov.cols()));
    log_norm = -0.5 * (static_cast<double>(mu.size()) * std::log(2 * M_PI) + log_det_spd(cov));
  }
  std::string kind() const override { return "gaussian"; }
  std::size_t dim() const override { return static_cast<std::size_t>(mu.size()); }
  double log_pdf(Point x) const override {
    const Vector r = to_vector(x) - mu;
    return log_norm - 0.5 * r.dot(prec * r);
  }
  double pdf(Point x) const override { return std::exp(log_pdf(x)); }
  std::optional<Vector> grad_pdf(Point x) const override {
    const Vector r = to_vector(x) - mu;
    return Vector(-pdf(x) * (prec * r));
  }
  std::optional<double> laplacian_pdf(Point x) const override {
    const Vector r = to_vector(x) - mu;
    const Vector pr = prec * r;
    return pdf(x) * (pr.squaredNorm() - prec.trace());
  }
  void sample(Rng& rng, std::span<double> out) const override {
    Vector z(mu.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
    const Vector x = mu + chol * z;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x(static_cast<Eigen::Index>(i));
  }
  Vector mean() const override { return mu; }
  Matrix covariance() const override { return cov; }
  double tail_mass(double sigmas) const override { return 2.0 * static_cast<double>(dim()) * normal_tail(sigmas); }
};

struct Uniform final : Impl {
  std::vector<double> lo, hi;
  double density;
  Uniform(std::vector<double> l, std::vector<double> h) : lo(std::move(l)), hi(std::move(h)) {
    double vol = 1.0;
    for (std::size_t i = 0; i < lo.size(); ++i) vol *= hi[i] - lo[i];
    density = 1.0 / vol;
  }
  std::string kind() const override { return "uniform"; }
  std::size_t dim() const override { return lo.size(); }
  double pdf(Point x) const override {
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (x[i] < lo[i] || x[i] > hi[i]) return 0.0;
    return density;
  }
  std::optional<Vector> grad_pdf(Point) const override { return Vector(Vector::Zero(static_cast<Eigen::Index>(dim()))); }
  std::optional<double> laplacian_pdf(Point) const override { return 0.0; }
  void sample(Rng& rng, std::span<double> out) const override {
    for (std::size_t i = 0; i < lo.size(); ++i) out[i] = lo[i] + (hi[i] - lo[i]) * rng.uniform();
  }
  Vector mean() const override {
    Vector m(static_cast<Eigen::Index>(dim()));
    for (std::size_t i = 0; i < lo.size(); ++i) m(static_cast<Eigen::Index>(i)) = 0.5 * (lo[i] + hi[i]);
    return m;
  }
  Matrix covariance() const override {
    Matrix c = Matrix::Zero(static_cast<Eigen::Index>(dim()), static_cast<Eigen::Index>(dim()));
    for (std::size_t i = 0; i < lo.size(); ++i) {
      const double l = hi[i] - lo[i];
      c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = l * l / 12.0;
    }
    return c;
  }
  IntegrationBox box(double) const override { return {lo, hi, std::vector<std::vector<double>>(dim())}; }
  double tail_mass(double) const override { return 0.0; }
};

struct Laplace final : Impl {
  double mu, b;
  Laplace(double m, double b_) : mu(m), b(b_) {}
  std::string kind() const override { return "laplace"; }
  std::size_t dim() const override { return 1; }
  double pdf(Point x) const override { return std::exp(log_pdf(x)); }
  double log_pdf(Point x) const override { return -std::abs(x[0] - mu) / b - std::log(2 * b); }
  std::optional<Vector> grad_pdf(Point x) const override {
    Vector g(1);
    const double s = x[0] > mu ? -1.0 : (x[0] < mu ? 1.0 : 0.0);
    g(0) = s / b * pdf(x);
    return g;
  }
  std::optional<double> laplacian_pdf(Point x) const override { return pdf(x) / (b * b); }
  void sample(Rng& rng, std::span<double> out) const override {
    const double u = rng.uniform_open() - 0.5;
    out[0] = mu - b * (u < 0 ? -1.0 : 1.0) * std::log(1 - 2 * std::abs(u));
  }
  Vector mean() const override { return Vector::Constant(1, mu); }
  Matrix covariance() const override { return Matrix::Constant(1, 1, 2 * b * b); }
  double half_width(double sigmas) const { return b * std::max(40.0, sigmas * std::sqrt(2.0)); }
  IntegrationBox box(double sigmas) const override {
    const double w = half_width(sigmas);
    return {{mu - w}, {mu + w}, {{mu}}};
  }
  double tail_mass(double sigmas) const override { return std::exp(-half_width(sigmas) / b); }
};

/// Density of U[a1,b1] + U[a2,b2] (trapezoid).
struct Trapezoid final : Impl {
  double a1, b1, a2, b2;
  Trapezoid(double a1_, double b1_, double a2_, double b2_) : a1(a1_), b1(b1_), a2(a2_), b2(b2_) {}
  std::string kind() const override { return "trapezoid"; }
  std::size_t dim() const override { return 1; }
  double pdf(Point p) const override {
    const double z = p[0];
    const double lo = std::max(a1, z - b2), hi = std::min(b1, z - a2);
    if (hi <= lo) return 0.0;
    return (hi - lo) / ((b1 - a1) * (b2 - a2));
  }
  void sample(Rng& rng, std::span<double> out) const override {
    const double u = rng.uniform(), v = rng.uniform();
    out[0] = a1 + (b1 - a1) * u + a2 + (b2 - a2) * v;
  }
  Vector mean() const override { return Vector::Constant(1, 0.5 * (a1 + b1 + a2 + b2)); }
  Matrix covariance() const override {
    return Matrix::Constant(1, 1, ((b1 - a1) * (b1 - a1) + (b2 - a2) * (b2 - a2)) / 12.0);
  }
  IntegrationBox box(double) const override {
    std::vector<double> br{a1 + b2, a2 + b1};
    std::sort(br.begin(), br.end());
    return {{a1 + a2}, {b1 + b2}, {br}};
  }
  double tail_mass(double) const override { return 0.0; }
};

/// Density of U[a,b] + N(0,s^2), closed form through normal tails.
struct UniformGaussian final : Impl {
  double a, b, s;
  UniformGaussian(double a_, double b_, double s_) : a(a_), b(b_), s(s_) {}
  std::string kind() const override { return "uniform_gaussian"; }
  std::size_t dim() const override { return 1; }
  double mass_between(double z) const {
    // P(z-b <= sN <= z-a), evaluated on the tail closest to zero loss of precision.
    const double u = (z - b) / s, v = (z - a) / s;
    if (u > 0) return normal_tail(u) - normal_tail(v);
    if (v < 0) return normal_tail(-v) - normal_tail(-u);
    return 1.0 - normal_tail(-u) - normal_tail(v);
  }
  double pdf(Point p) const override { return std::max(0.0, mass_between(p[0])) / (b - a); }
  std::optional<Vector> grad_pdf(Point p) const override {
    const double z = p[0];
    Vector g(1);
    g(0) = (standard_normal_pdf((z - a) / s) - standard_normal_pdf((z - b) / s)) / (s * (b - a));
    return g;
  }
  std::optional<double> laplacian_pdf(Point p) const override {
    const double z = p[0], u = (z - b) / s, v = (z - a) / s;
    return (u * standard_normal_pdf(u) - v * standard_normal_pdf(v)) / (s * s * (b - a));
  }
  void sample(Rng& rng, std::span<double> out) const override { out[0] = a + (b - a) * rng.uniform() + s * rng.normal(); }
  Vector mean() const override { return Vector::Constant(1, 0.5 * (a + b)); }
  Matrix covariance() const override { return Matrix::Constant(1, 1, (b - a) * (b - a) / 12.0 + s * s); }
  IntegrationBox box(double sigmas) const override { return {{a - sigmas * s}, {b + sigmas * s}, {{a, b}}}; }
  double tail_mass(double sigmas) const override { return 2.0 * normal_tail(sigmas); }
};

struct Mixture final : Impl {
  std::vector<double> weights;
  std::vector<ImplPtr> parts;
  std::vector<double> cdf;
  Mixture(std::vector<double> w, std::vector<ImplPtr> p) : weights(std::move(w)), parts(std::move(p)) {
    double s = 0.0;
    for (double v : weights) cdf.push_back(s += v);
  }
  std::string kind() const override { return "mixture"; }
  std::size_t dim() const override { return parts.front()->dim(); }
  double pdf(Point x) const override {
    double s = 0.0;
    for (std::size_t i = 0; i < parts.size(); ++i) s += weights[i] * parts[i]->pdf(x);
    return s;
  }
  // log-sum-exp, so far tails do not underflow to -inf
  double log_pdf(Point x) const override {
    std::vector<double> l(parts.size());
    double top = -INFINITY;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      l[i] = weights[i] > 0 ? std::log(weights[i]) + parts[i]->log_pdf(x) : -INFINITY;
      top = std::max(top, l[i]);
    }
    if (std::isinf(top)) return top;
    double s = 0.0;
    for (double v : l) s += std::exp(v - top);
    return top + std::log(s);
  }
  std::optional<Vector> grad_pdf(Point x) const override {
    Vector g = Vector::Zero(static_cast<Eigen::Index>(dim()));
    for (std::size_t i = 0; i < parts.size(); ++i) {
      auto gi = parts[i]->grad_pdf(x);
      if (!gi) return std::nullopt;
      g += weights[i] * *gi;
    }
    return g;
  }
  std::optional<double> laplacian_pdf(Point x) const override {
    double s = 0.0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      auto li = parts[i]->laplacian_pdf(x);
      if (!li) return std::nullopt;
      s += weights[i] * *li;
    }
    return s;
  }
  void sample(Rng& rng, std::span<double> out) const override {
    const double u = rng.uniform() * cdf.back();
    std::size_t i = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    parts[std::min(i, parts.size() - 1)]->sample(rng, out);
  }
  Vector mean() const override {
    Vector m = Vector::Zero(static_cast<Eigen::Index>(dim()));
    for (std::size_t i = 0; i < parts.size(); ++i) m += weights[i] * parts[i]->mean();
    return m;
  }
  Matrix covariance() const override {
    const Vector m = mean();
    Matrix c = Matrix::Zero(m.size(), m.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const Vector d = parts[i]->mean() - m;
      c += weights[i] * (parts[i]->covariance() + d * d.transpose());
    }
    return c;
  }
  IntegrationBox box(double sigmas) const override {
    IntegrationBox b = parts.front()->box(sigmas);
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const IntegrationBox p = parts[k]->box(sigmas);
      for (std::size_t i = 0; i < b.dim(); ++i) {
        if (k > 0) {
          b.lower[i] = std::min(b.lower[i], p.lower[i]);
          b.upper[i] = std::max(b.upper[i], p.upper[i]);
        }
        if (i < p.breaks.size()) b.breaks[i].insert(b.breaks[i].end(), p.breaks[i].begin(), p.breaks[i].end());
        // Component support edges are interior kinks of the mixture.
        b.breaks[i].push_back(p.lower[i]);
        b.breaks[i].push_back(p.upper[i]);
      }
    }
    return b;
  }
  double tail_mass(double sigmas) const override {
    double t = 0.0;
    for (std::size_t i = 0; i < parts.size(); ++i) t += weights[i] * parts[i]->tail_mass(sigmas);
    return t;
  }
};

/// Y = c * X + shift.
struct Affine final : Impl {
  ImplPtr inner;
  double c;
  Vector shift;
  Affine(ImplPtr in, double c_, Vector s) : inner(std::move(in)), c(c_), shift(std::move(s)) {}
  std::string kind() const override { return "scaled"; }
  std::size_t dim() const override { return inner->dim(); }
  std::vector<double> back(Point y) const {
    std::vector<double> x(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) x[i] = (y[i] - shift(static_cast<Eigen::Index>(i))) / c;
    return x;
  }
  double jac() const { return std::pow(std::abs(c), -static_cast<double>(dim())); }
  bool discrete() const override { return inner->discrete(); }
  double pdf(Point y) const override { return inner->discrete() ? inner->pdf(back(y)) : inner->pdf(back(y)) * jac(); }
  std::optional<Vector> grad_pdf(Point y) const override {
    auto g = inner->grad_pdf(back(y));
    if (!g) return std::nullopt;
    return Vector(*g * (jac() / c));
  }
  std::optional<double> laplacian_pdf(Point y) const override {
    auto l = inner->laplacian_pdf(back(y));
    if (!l) return std::nullopt;
    return *l * jac() / (c * c);
  }
  void sample(Rng& rng, std::span<double> out) const override {
    inner->sample(rng, out);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * out[i] + shift(static_cast<Eigen::Index>(i));
  }
  Vector mean() const override { return c * inner->mean() + shift; }
  Matrix covariance() const override { return c * c * inner->covariance(); }
  IntegrationBox box(double sigmas) const override {
    IntegrationBox b = inner->box(sigmas);
    for (std::size_t i = 0; i < b.dim(); ++i) {
      const double s = shift(static_cast<Eigen::Index>(i));
      double lo = c * b.lower[i] + s, hi = c * b.upper[i] + s;
      if (lo > hi) std::swap(lo, hi);
      b.lower[i] = lo;
      b.upper[i] = hi;
      if (i < b.breaks.size())
        for (double& v : b.breaks[i]) v = c * v + s;
    }
    return b;
  }
  double tail_mass(double sigmas) const override { return inner->tail_mass(sigmas); }
};

/// X + N(0, s^2) for a 1-D continuous X: density by a smoothing integral.
struct GaussianSmoothed final : Impl {
  ImplPtr x;
  double s;
  NumericConfig cfg;
  GaussianSmoothed(ImplPtr x_, double s_, NumericConfig c) : x(std::move(x_)), s(s_), cfg(c.nested()) {}
  std::string kind() const override { return "convolved"; }
  std::size_t dim() const override { return 1; }
  template <class K>
  double smooth(double z, const K& kernel) const {
    // Only the part of X's region within reach of the Gaussian kernel matters.
    IntegrationBox b = x->box(cfg.truncation_sigmas);
    const double reach = (cfg.truncation_sigmas + 4.0) * s;
    const double lo = std::max(b.lower[0], z - reach), hi = std::min(b.upper[0], z + reach);
    if (!(hi > lo)) return 0.0;
    std::vector<double> br;
    if (!b.breaks.empty()) br = b.breaks[0];
    br.push_back(z);
    return integrate_1d(
               [&](double t) {
                 const double fx = x->pdf(Point(&t, 1));
                 return fx == 0.0 ? 0.0 : fx * kernel((z - t) / s);
               },
               lo, hi, cfg, br)
        .value;
  }
  double pdf(Point p) const override {
    return std::max(0.0, smooth(p[0], [&](double u) { return standard_normal_pdf(u) / s; }));
  }
  std::optional<Vector> grad_pdf(Point p) const override {
    Vector g(1);
    g(0) = smooth(p[0], [&](double u) { return -u * standard_normal_pdf(u) / (s * s); });
    return g;
  }
  std::optional<double> laplacian_pdf(Point p) const override {
    return smooth(p[0], [&](double u) { return (u * u - 1) * standard_normal_pdf(u) / (s * s * s); });
  }
  void sample(Rng& rng, std::span<double> out) const override {
    x->sample(rng, out);
    out[0] += s * rng.normal();
  }
  Vector mean() const override { return x->mean(); }
  Matrix covariance() const override { return x->covariance() + Matrix::Constant(1, 1, s * s); }
  IntegrationBox box(double sigmas) const override {
    IntegrationBox b = x->box(sigmas);
    return {{b.lower[0] - sigmas * s}, {b.upper[0] + sigmas * s}, {{}}};
  }
  double tail_mass(double sigmas) const override { return x->tail_mass(sigmas) + 2.0 * normal_tail(sigmas); }
};

/// Sum of two independent variables without a closed-form density: sampling
/// and moments are exact; the density is a 1-D convolution integral.
struct Sum final : Impl {
  ImplPtr x, y;
  NumericConfig cfg;
  Sum(ImplPtr a, ImplPtr b, NumericConfig c) : x(std::move(a)), y(std::move(b)), cfg(c.nested()) {}
  std::string kind() const override { return "convolved"; }
  std::size_t dim() const override { return x->dim(); }
  double pdf(Point p) const override {
    if (dim() != 1) throw StructureError("convolve: numerical density only available for d = 1");
    const double z = p[0];
    IntegrationBox bx = x->box(cfg.truncation_sigmas), by = y->box(cfg.truncation_sigmas);
    const double lo = std::max(bx.lower[0], z - by.upper[0]), hi = std::min(bx.upper[0], z - by.lower[0]);
    if (!(hi > lo)) return 0.0;
    std::vector<double> br = bx.breaks.empty() ? std::vector<double>{} : bx.breaks[0];
    if (!by.breaks.empty())
      for (double v : by.breaks[0]) br.push_back(z - v);
    br.push_back(z - by.lower[0]);
    br.push_back(z - by.upper[0]);
    return std::max(0.0, integrate_1d(
                             [&](double t) {
                               const double fx = x->pdf(Point(&t, 1));
                               if (fx == 0.0) return 0.0;
                               const double u = z - t;
                               return fx * y->pdf(Point(&u, 1));
                             },
                             lo, hi, cfg, br)
                             .value);
  }
  void sample(Rng& rng, std::span<double> out) const override {
    std::vector<double> tmp(out.size());
    x->sample(rng, out);
    y->sample(rng, tmp);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += tmp[i];
  }
  Vector mean() const override { return x->mean() + y->mean(); }
  Matrix covariance() const override { return x->covariance() + y->covariance(); }
  IntegrationBox box(double sigmas) const override {
    IntegrationBox a = x->box(sigmas), b = y->box(sigmas);
    IntegrationBox out;
    for (std::size_t i = 0; i < a.dim(); ++i) {
      out.lower.push_back(a.lower[i] + b.lower[i]);
      out.upper.push_back(a.upper[i] + b.upper[i]);
    }
    out.breaks.resize(a.dim());
    return out;
  }
  double tail_mass(double sigmas) const override { return x->tail_mass(sigmas) + y->tail_mass(sigmas); }
};

struct Custom final : Impl {
  std::size_t d;
  std::function<double(Point)> density;
  std::function<double(Point)> log_density;  // optional, for underflow-free ratios
  std::function<void(Rng&, std::span<double>)> sampler;
  Vector mu;
  Matrix cov;
  std::optional<IntegrationBox> support;
  std::string kind() const override { return "custom"; }
  std::size_t dim() const override { return d; }
  double pdf(Point x) const override { return density(x); }
  double log_pdf(Point x) const override { return log_density ? log_density(x) : std::log(density(x)); }
  void sample(Rng& rng, std::span<double> out) const override {
    if (!sampler) throw StructureError("custom distribution has no sampler");
    sampler(rng, out);
  }
  Vector mean() const override { return mu; }
  Matrix covariance() const override { return cov; }
  IntegrationBox box(double sigmas) const override {
    if (support) return *support;
    return Impl::box(sigmas);
  }
  double tail_mass(double sigmas) const override {
    if (support) return 0.0;
    // Chebyshev-type bound per coordinate for an unknown density.
    return static_cast<double>(d) / (sigmas * sigmas);
  }
};

}  // namespace dist

/// Discrete PMF or continuous density on R^d.
class Distribution {
 public:
  Distribution() = default;
  explicit Distribution(dist::ImplPtr p) : impl_(std::move(p)) {}

  static Distribution discrete(std::vector<Vector> points, std::vector<double> masses) {
    if (points.empty() || points.size() != masses.size()) throw StructureError("discrete: support and masses differ in size");
    double s = 0.0;
    for (double m : masses) {
      if (!(m >= 0)) throw DomainError("discrete: masses must be >= 0");
      s += m;
    }
    if (std::abs(s - 1.0) > 1e-12) throw DomainError("discrete: masses sum to " + detail::where(s) + ", not 1");
    for (const auto& p : points)
      if (p.size() != points.front().size()) throw StructureError("discrete: support points differ in dimension");
    return Distribution(std::make_shared<dist::Discrete>(std::move(points), std::move(masses)));
  }
  /// PMF on the 1-D support 0..k-1.
  static Distribution pmf(const std::vector<double>& masses) {
    std::vector<Vector> pts;
    for (std::size_t i = 0; i < masses.size(); ++i) pts.push_back(Vector::Constant(1, static_cast<double>(i)));
    return discrete(std::move(pts), masses);
  }
  static Distribution point_mass(const Vector& at) { return discrete({at}, {1.0}); }
  static Distribution gaussian(Vector mean, Matrix cov) {
    if (mean.size() != cov.rows()) throw StructureError("gaussian: mean and covariance dimensions differ");
    return Distribution(std::make_shared<dist::Gaussian>(std::move(mean), std::move(cov)));
  }
  static Distribution normal(double mean, double variance) {
    return gaussian(Vector::Constant(1, mean), Matrix::Constant(1, 1, variance));
  }
  static Distribution uniform(std::vector<double> lo, std::vector<double> hi) {
    if (lo.size() != hi.size() || lo.empty()) throw StructureError("uniform: bound sizes differ");
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (!(hi[i] > lo[i]) || !std::isfinite(lo[i]) || !std::isfinite(hi[i]))
        throw DomainError("uniform: need finite lower < upper");
    return Distribution(std::make_shared<dist::Uniform>(std::move(lo), std::move(hi)));
  }
  static Distribution uniform(double a, double b) { return uniform(std::vector<double>{a}, std::vector<double>{b}); }
  static Distribution laplace(double mu, double b) {
    if (!(b > 0)) throw DomainError("laplace: scale must be > 0");
    return Distribution(std::make_shared<dist::Laplace>(mu, b));
  }
  static Distribution mixture(std::vector<double> weights, const std::vector<Distribution>& parts) {
    if (weights.size() != parts.size() || parts.empty()) throw StructureError("mixture: weights and parts differ in size");
    double s = 0.0;
    for (double w : weights) {
      if (!(w >= 0)) throw DomainError("mixture: weights must be >= 0");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-12) throw DomainError("mixture: weights must sum to 1");
    std::vector<dist::ImplPtr> impls;
    bool disc = parts.front().is_discrete();
    for (const auto& p : parts) {
      if (p.dim() != parts.front().dim()) throw StructureError("mixture: component dimensions differ");
      if (p.is_discrete() != disc) throw StructureError("mixture: cannot mix discrete and continuous parts");
      impls.push_back(p.impl_);
    }
    if (disc) {
      std::vector<Vector> pts;
      std::vector<double> ms;
      for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& d = static_cast<const dist::Discrete&>(parts[k].impl());
        for (std::size_t i = 0; i < d.points.size(); ++i) {
          auto it = std::find_if(pts.begin(), pts.end(), [&](const Vector& v) { return v == d.points[i]; });
          if (it == pts.end()) {
            pts.push_back(d.points[i]);
            ms.push_back(weights[k] * d.masses[i]);
          } else {
            ms[static_cast<std::size_t>(it - pts.begin())] += weights[k] * d.masses[i];
          }
        }
      }
      return Distribution(std::make_shared<dist::Discrete>(std::move(pts), std::move(ms)));
    }
    return Distribution(std::make_shared<dist::Mixture>(std::move(weights), std::move(impls)));
  }
  /// Law of c*X.
  [[nodiscard]] Distribution scaled(double c) const {
    if (!(c != 0) || !std::isfinite(c)) throw DomainError("scaled: factor must be finite and nonzero");
    return affine(c, Vector::Zero(static_cast<Eigen::Index>(dim())));
  }
  /// Law of X + m.
  [[nodiscard]] Distribution shifted(const Vector& m) const {
    if (static_cast<std::size_t>(m.size()) != dim()) throw StructureError("shifted: dimension mismatch");
    return affine(1.0, m);
  }
  static Distribution trapezoid(double a1, double b1, double a2, double b2) {
    if (!(b1 > a1) || !(b2 > a2)) throw DomainError("trapezoid: need b > a");
    return Distribution(std::make_shared<dist::Trapezoid>(a1, b1, a2, b2));
  }
  static Distribution custom(std::size_t d, std::function<double(Point)> pdf, Vector mean, Matrix cov,
                             std::function<void(Rng&, std::span<double>)> sampler = {},
                             std::optional<IntegrationBox> support = std::nullopt) {
    if (static_cast<std::size_t>(mean.size()) != d || static_cast<std::size_t>(cov.rows()) != d)
      throw StructureError("custom: mean/covariance dimension mismatch");
    require_spd(cov, "custom.covariance");
    auto c = std::make_shared<dist::Custom>();
    c->d = d;
    c->density = std::move(pdf);
    c->sampler = std::move(sampler);
    c->mu = std::move(mean);
    c->cov = std::move(cov);
    c->support = std::move(support);
    return Distribution(c);
  }

  [[nodiscard]] bool valid() const { return impl_ != nullptr; }
  [[nodiscard]] const dist::Impl& impl() const { return *impl_; }
  [[nodiscard]] dist::ImplPtr impl_ptr() const { return impl_; }
  [[nodiscard]] std::string kind() const { return impl_->kind(); }
  [[nodiscard]] std::size_t dim() const { return impl_->dim(); }
  [[nodiscard]] bool is_discrete() const { return impl_->discrete(); }
  [[nodiscard]] bool is_gaussian() const { return dynamic_cast<const dist::Gaussian*>(impl_.get()) != nullptr; }
  [[nodiscard]] const dist::Discrete* as_discrete() const { return dynamic_cast<const dist::Discrete*>(impl_.get()); }
  [[nodiscard]] const dist::Uniform* as_uniform() const { return dynamic_cast<const dist::Uniform*>(impl_.get()); }

  double pdf(Point x) const { return impl_->pdf(x); }
  double pdf(double x) const { return impl_->pdf(Point(&x, 1)); }
  double log_pdf(Point x) const { return impl_->log_pdf(x); }
  Vector grad_pdf(Point x) const {
    if (auto g = impl_->grad_pdf(x)) return *g;
    std::vector<double> y(x.begin(), x.end());
    Vector g(static_cast<Eigen::Index>(x.size()));
    const Matrix c = covariance();
    NumericConfig fd;
    fd.fd_step = 1e-4;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double xi = y[i], s = std::sqrt(c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)));
      g(static_cast<Eigen::Index>(i)) =
          finite_diff([&](double t) { y[i] = xi + s * t; return impl_->pdf(y); }, 0.0, 1, fd) / s;
      y[i] = xi;
    }
    return g;
  }
  double laplacian_pdf(Point x) const {
    if (auto l = impl_->laplacian_pdf(x)) return *l;
    std::vector<double> y(x.begin(), x.end());
    const Matrix c = covariance();
    NumericConfig fd;
    fd.fd_step = 1e-6;
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double xi = y[i], sd = std::sqrt(c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)));
      s += finite_diff([&](double t) { y[i] = xi + sd * t; return impl_->pdf(y); }, 0.0, 2, fd) / (sd * sd);
      y[i] = xi;
    }
    return s;
  }
  void sample(Rng& rng, std::span<double> out) const { impl_->sample(rng, out); }
  [[nodiscard]] Vector mean() const { return impl_->mean(); }
  [[nodiscard]] Matrix covariance() const { return impl_->covariance(); }
  [[nodiscard]] IntegrationBox box(double sigmas) const { return impl_->box(sigmas); }
  [[nodiscard]] double tail_mass(double sigmas) const { return impl_->tail_mass(sigmas); }

  /// Discrete support as (point, mass) pairs.
  [[nodiscard]] std::vector<std::pair<Vector, double>> atoms() const {
    const auto* d = as_discrete();
    if (!d) throw StructureError("atoms: distribution is not discrete");
    std::vector<std::pair<Vector, double>> out;
    for (std::size_t i = 0; i < d->points.size(); ++i) out.emplace_back(d->points[i], d->masses[i]);
    return out;
  }

 private:
  [[nodiscard]] Distribution affine(double c, const Vector& s) const {
    if (const auto* g = dynamic_cast<const dist::Gaussian*>(impl_.get())) return gaussian(c * g->mu + s, c * c * g->cov);
    if (const auto* u = dynamic_cast<const dist::Uniform*>(impl_.get())) {
      std::vector<double> lo(u->lo), hi(u->hi);
      for (std::size_t i = 0; i < lo.size(); ++i) {
        lo[i] = c * lo[i] + s(static_cast<Eigen::Index>(i));
        hi[i] = c * hi[i] + s(static_cast<Eigen::Index>(i));
        if (lo[i] > hi[i]) std::swap(lo[i], hi[i]);
      }
      return uniform(lo, hi);
    }
    if (const auto* d = as_discrete()) {
      std::vector<Vector> pts;
      for (const auto& p : d->points) pts.push_back(c * p + s);
      return Distribution(std::make_shared<dist::Discrete>(std::move(pts), d->masses));
    }
    return Distribution(std::make_shared<dist::Affine>(impl_, c, s));
  }

  dist::ImplPtr impl_;
};

/// Law of X + Y for independent X, Y. Closed forms are used where they exist:
/// Gaussian + Gaussian, uniform + uniform (1-D), uniform + Gaussian (1-D),
/// point masses, and discrete + anything (a mixture of shifts).
inline Distribution convolve(const Distribution& x, const Distribution& y, const NumericConfig& cfg = {}) {
  if (x.dim() != y.dim()) throw StructureError("convolve: dimension mismatch (" + std::to_string(x.dim()) + " vs " +
                                               std::to_string(y.dim()) + ")");
  if (x.is_gaussian() && y.is_gaussian()) return Distribution::gaussian(x.mean() + y.mean(), x.covariance() + y.covariance());
  if (y.is_discrete() && !x.is_discrete()) return convolve(y, x, cfg);
  if (const auto* d = x.as_discrete()) {
    if (d->points.size() == 1) return y.shifted(d->points.front());
    if (const auto* e = y.as_discrete()) {
      std::vector<Vector> pts;
      std::vector<double> ms;
      for (std::size_t i = 0; i < d->points.size(); ++i)
        for (std::size_t j = 0; j < e->points.size(); ++j) {
          const Vector p = d->points[i] + e->points[j];
          auto it = std::find_if(pts.begin(), pts.end(), [&](const Vector& v) { return v == p; });
          if (it == pts.end()) {
            pts.push_back(p);
            ms.push_back(d->masses[i] * e->masses[j]);
          } else {
            ms[static_cast<std::size_t>(it - pts.begin())] += d->masses[i] * e->masses[j];
          }
        }
      return Distribution(std::make_shared<dist::Discrete>(std::move(pts), std::move(ms)));
    }
    std::vector<Distribution> parts;
    for (const auto& p : d->points) parts.push_back(y.shifted(p));
    return Distribution::mixture(d->masses, parts);
  }
  if (x.dim() == 1) {
    const auto* ux = x.as_uniform();
    const auto* uy = y.as_uniform();
    if (ux && uy) return Distribution::trapezoid(ux->lo[0], ux->hi[0], uy->lo[0], uy->hi[0]);
    if (y.is_gaussian() && !x.is_gaussian()) {
      const double m = y.mean()(0), s = std::sqrt(y.covariance()(0, 0));
      Distribution base;
      if (ux) base = Distribution(std::make_shared<dist::UniformGaussian>(ux->lo[0], ux->hi[0], s));
      else if (const auto* sm = dynamic_cast<const dist::GaussianSmoothed*>(&x.impl()))
        base = Distribution(std::make_shared<dist::GaussianSmoothed>(sm->x, std::hypot(sm->s, s), cfg));
      else if (const auto* ug = dynamic_cast<const dist::UniformGaussian*>(&x.impl()))
        base = Distribution(std::make_shared<dist::UniformGaussian>(ug->a, ug->b, std::hypot(ug->s, s)));
      else base = Distribution(std::make_shared<dist::GaussianSmoothed>(x.impl_ptr(), s, cfg));
      return m == 0.0 ? base : base.shifted(Vector::Constant(1, m));
    }
    if (x.is_gaussian() && !y.is_gaussian()) return convolve(y, x, cfg);
  }
  return Distribution(std::make_shared<dist::Sum>(x.impl_ptr(), y.impl_ptr(), cfg));
}

/// E[g(X)]: exact sum for discrete X, box quadrature for continuous d <= 3,
/// seeded Monte Carlo otherwise. `extra_breaks` adds discontinuities of g.
template <class G>
Estimate expect(const Distribution& x, const G& g, const NumericConfig& cfg,
                const std::vector<std::vector<double>>& extra_breaks = {}) {
  if (const auto* d = x.as_discrete()) {
    double s = 0.0;
    for (std::size_t i = 0; i < d->points.size(); ++i) {
      if (d->masses[i] == 0.0) continue;
      const Vector& p = d->points[i];
      s += d->masses[i] * g(Point(p.data(), static_cast<std::size_t>(p.size())));
    }
    return Estimate::exact(s);
  }
  if (x.dim() <= kMaxQuadratureDim) {
    IntegrationBox box = x.box(cfg.truncation_sigmas);
    box.breaks.resize(box.dim());
    for (std::size_t i = 0; i < extra_breaks.size() && i < box.dim(); ++i)
      box.breaks[i].insert(box.breaks[i].end(), extra_breaks[i].begin(), extra_breaks[i].end());
    Estimate e = integrate_box(
        [&](Point p) {
          const double f = x.pdf(p);
          return f == 0.0 ? 0.0 : f * g(p);
        },
        box, cfg);
    e.tail_mass = x.tail_mass(cfg.truncation_sigmas);
    return e;
  }
  return mc_mean([&](Rng& r, std::span<double> out) { x.sample(r, out); }, x.dim(), g, cfg, cfg.rng_seed);
}

/// E[phi(X)].
inline Estimate expect_weight(const Distribution& x, const WeightFunction& phi, const NumericConfig& cfg) {
  std::vector<std::vector<double>> br;
  for (std::size_t i = 0; i < x.dim(); ++i) br.push_back(phi.breakpoints(i));
  return expect(x, [&](Point p) { return phi(p); }, cfg, br);
}

/// Monte-Carlo estimate of E[g(X)] under the seeded stream.
template <class G>
Estimate mc_expectation(const G& g, const Distribution& sampler, const NumericConfig& cfg, int rejection_budget = 0) {
  return mc_mean([&](Rng& r, std::span<double> out) { sampler.sample(r, out); }, sampler.dim(), g, cfg, cfg.rng_seed,
                 rejection_budget);
}

// ===========================================================================
// Exponential families

/// f_theta(x) = h(x) exp(<theta, T(x)> - A(theta)) on a 1-D to 3-D support box.
struct ExponentialFamilySpec {
  std::size_t dim = 1;
  std::size_t param_dim = 1;
  std::function<double(Point)> base_h;
  std::function<Vector(Point)> sufficient_stat;
  std::function<double(const Vector&)> log_partition_closed;  // optional
  IntegrationBox support;

  [[nodiscard]] double log_partition(const Vector& theta, const NumericConfig& cfg) const {
    if (log_partition_closed) return log_partition_closed(theta);
    return std::log(weighted_partition(theta, WeightFunction::constant(1.0), cfg).value);
  }

  /// integral of phi h exp(<theta,T>) over the support.
  [[nodiscard]] Estimate weighted_partition(const Vector& theta, const WeightFunction& phi,
                                            const NumericConfig& cfg) const {
    IntegrationBox box = support;
    box.breaks.resize(box.dim());
    for (std::size_t i = 0; i < box.dim(); ++i) {
      auto b = phi.breakpoints(i);
      box.breaks[i].insert(box.breaks[i].end(), b.begin(), b.end());
    }
    Estimate e = integrate_box(
        [&](Point x) {
          const double h = base_h(x);
          if (h == 0.0) return 0.0;
          const double w = phi(x);
          if (w == 0.0) return 0.0;
          return w * h * std::exp(theta.dot(sufficient_stat(x)));
        },
        box, cfg);
    if (!(e.value > 0) || !std::isfinite(e.value))
      throw NonConvergence("exponential family: weighted partition integral is not finite and positive");
    return e;
  }

  [[nodiscard]] double density(const Vector& theta, Point x, double a) const {
    const double h = base_h(x);
    if (h == 0.0) return 0.0;
    return h * std::exp(theta.dot(sufficient_stat(x)) - a);
  }

  /// f_theta as a Distribution (moments by quadrature, no sampler).
  [[nodiscard]] Distribution at(const Vector& theta, const NumericConfig& cfg) const {
    if (static_cast<std::size_t>(theta.size()) != param_dim) throw StructureError("exponential family: theta has wrong dimension");
    const double a = log_partition(theta, cfg);
    auto self = *this;
    auto pdf = [self, theta, a](Point x) { return self.density(theta, x, a); };
    const std::size_t d = dim;
    Vector m = Vector::Zero(static_cast<Eigen::Index>(d));
    Matrix s = Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i) {
      m(static_cast<Eigen::Index>(i)) = integrate_box([&](Point x) { return pdf(x) * x[i]; }, support, cfg).value;
    }
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        const double v = integrate_box(
                             [&](Point x) {
                               return pdf(x) * (x[i] - m(static_cast<Eigen::Index>(i))) *
                                      (x[j] - m(static_cast<Eigen::Index>(j)));
                             },
                             support, cfg)
                             .value;
        s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
        s(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
      }
    Distribution out = Distribution::custom(d, pdf, m, s, {}, support);
    auto impl = std::make_shared<dist::Custom>(static_cast<const dist::Custom&>(out.impl()));
    impl->log_density = [self, theta, a](Point x) {
      return std::log(self.base_h(x)) + theta.dot(self.sufficient_stat(x)) - a;
    };
    return Distribution(impl);
  }

  /// Gaussian location family with unit variance: h = N(x;0,1), T(x) = x.
  static ExponentialFamilySpec gaussian_location(double half_width = 40.0) {
    ExponentialFamilySpec f;
    f.base_h = [](Point x) { return standard_normal_pdf(x[0]); };
    f.sufficient_stat = [](Point x) { return Vector::Constant(1, x[0]); };
    f.log_partition_closed = [](const Vector& th) { return 0.5 * th(0) * th(0); };
    // Interior cuts keep the adaptive rule from stepping over the bulk.
    std::vector<double> cuts;
    for (int k = -12; k <= 12; k += 2) cuts.push_back(k);
    f.support = {{-half_width}, {half_width}, {cuts}};
    return f;
  }
};

// ===========================================================================
// Markov chains

struct MarkovChainSpec {
  Matrix transition;  // row-stochastic k x k
  Vector initial;     // lambda
  Vector psi;         // per-symbol weight

  [[nodiscard]] std::size_t k() const { return static_cast<std::size_t>(transition.rows()); }

  void validate() const {
    const Eigen::Index n = transition.rows();
    if (n == 0 || transition.cols() != n) throw StructureError("markov: transition matrix must be square and nonempty");
    if (initial.size() != n || psi.size() != n) throw StructureError("markov: initial/psi length must equal alphabet size");
    if ((transition.array() < 0).any() || !transition.allFinite()) throw DomainError("markov: transition entries must be >= 0");
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::abs(transition.row(i).sum() - 1.0) > 1e-12)
        throw DomainError("markov: row " + std::to_string(i) + " of the transition matrix does not sum to 1");
    if ((initial.array() < 0).any() || std::abs(initial.sum() - 1.0) > 1e-12)
      throw DomainError("markov: initial distribution must be a PMF");
    if ((psi.array() < 0).any() || !psi.allFinite()) throw DomainError("markov: psi must be >= 0");
  }
};

/// Invariant law pi with pi^T P = pi^T.
inline Vector stationary_distribution(const MarkovChainSpec& mc, const NumericConfig& cfg = {}) {
  mc.validate();
  if (!is_irreducible(mc.transition)) throw StructureError("stationary_distribution: chain is reducible");
  // Left Perron vector of a stochastic matrix, polished by a direct solve of
  // the balance equations with one row replaced by the normalization.
  PerronResult r = power_iteration(mc.transition, cfg);
  const Eigen::Index n = mc.transition.rows();
  Matrix a = mc.transition.transpose() - Matrix::Identity(n, n);
  a.row(n - 1).setOnes();
  Vector rhs = Vector::Zero(n);
  rhs(n - 1) = 1.0;
  Vector pi = a.fullPivLu().solve(rhs);
  if (!pi.allFinite() || (pi - r.left).cwiseAbs().maxCoeff() > 1e-6) pi = r.left;
  pi = pi.cwiseMax(0.0);
  return pi / pi.sum();
}

/// Seeded path X_0..X_{n-1}.
inline std::vector<int> simulate_path(const MarkovChainSpec& mc, std::size_t n, const NumericConfig& cfg,
                                      std::uint64_t stream = 0) {
  mc.validate();
  if (n < 1) throw DomainError("simulate_path: n must be >= 1");
  Rng rng(stream == 0 ? cfg.rng_seed : substream_seed(cfg.rng_seed, stream));
  const Eigen::Index k = mc.transition.rows();
  auto draw = [&](const auto& probs) {
    const double u = rng.uniform();
    double c = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      c += probs(j);
      if (u < c) return static_cast<int>(j);
    }
    for (Eigen::Index j = k - 1; j >= 0; --j)
      if (probs(j) > 0) return static_cast<int>(j);
    return 0;
  };
  std::vector<int> path(n);
  path[0] = draw(mc.initial);
  for (std::size_t i = 1; i < n; ++i) path[i] = draw(mc.transition.row(path[i - 1]));
  return path;
}

}  // namespace wentropy
