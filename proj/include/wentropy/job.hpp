#pragma once

// JSON job specifications: strict parsing, dispatch to the checkers, and
// report assembly for the command-line tool.

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "epi.hpp"
#include "rates.hpp"

namespace wentropy::job {

using json = nlohmann::ordered_json;

inline constexpr const char* kToolVersion = "1.0.0";

/// Malformed job; `what()` starts with the offending field path.
class SchemaError : public std::runtime_error {
 public:
  SchemaError(const std::string& path, const std::string& why) : std::runtime_error(path + ": " + why), path_(path) {}
  [[nodiscard]] const std::string& path() const { return path_; }

 private:
  std::string path_;
};

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"entropy", "divergence", "gibbs",   "concavity", "kyfan",    "hadamard",
                                          "gauss-max", "fisher",   "wfii",    "taylor",    "wepi",     "wlsi",
                                          "stein",   "debruijn",   "wep-scan", "rates",    "sweep"};
  return c;
}

// ---------------------------------------------------------------------------
// Field access with unknown-field rejection

class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw SchemaError(path_, "expected an object");
  }

  [[nodiscard]] std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  [[nodiscard]] bool has(const std::string& key) {
    known_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }
  const json& req(const std::string& key) {
    if (!has(key)) throw SchemaError(at(key), "required field missing");
    return j_.at(key);
  }

  double num(const std::string& key) { return as_number(req(key), at(key)); }
  double num(const std::string& key, double def) { return has(key) ? num(key) : def; }
  long integer(const std::string& key) { return as_integer(req(key), at(key)); }
  long integer(const std::string& key, long def) { return has(key) ? integer(key) : def; }
  bool boolean(const std::string& key, bool def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw SchemaError(at(key), "expected true or false");
    return v.get<bool>();
  }
  std::string str(const std::string& key) {
    const json& v = req(key);
    if (!v.is_string()) throw SchemaError(at(key), "expected a string");
    return v.get<std::string>();
  }
  std::string str(const std::string& key, const std::string& def) { return has(key) ? str(key) : def; }
  std::string choice(const std::string& key, const std::vector<std::string>& allowed, const std::string& def = "") {
    const std::string v = def.empty() ? str(key) : str(key, def);
    if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw SchemaError(at(key), "'" + v + "' is not one of {" + list + "}");
    }
    return v;
  }
  /// Number or list of numbers.
  std::vector<double> vec(const std::string& key) { return as_vector(req(key), at(key)); }
  std::vector<long> ivec(const std::string& key) {
    const json& v = req(key);
    if (!v.is_array()) throw SchemaError(at(key), "expected a list of integers");
    std::vector<long> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_integer(v[i], at(key) + "[" + std::to_string(i) + "]"));
    return out;
  }
  /// Number (1x1), list (diagonal) or list of rows.
  Matrix mat(const std::string& key) { return as_matrix(req(key), at(key)); }

  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!known_.count(it.key())) throw SchemaError(at(it.key()), "unknown field");
  }

  static double as_number(const json& v, const std::string& path) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      if (s == "inf") return INFINITY;
      if (s == "-inf") return -INFINITY;
    }
    throw SchemaError(path, "expected a number");
  }
  static long as_integer(const json& v, const std::string& path) {
    if (v.is_number_integer()) return v.get<long>();
    if (v.is_number_float() && v.get<double>() == std::floor(v.get<double>()) && std::abs(v.get<double>()) < 9e15)
      return static_cast<long>(v.get<double>());
    throw SchemaError(path, "expected an integer");
  }
  static std::vector<double> as_vector(const json& v, const std::string& path) {
    if (v.is_number() || v.is_string()) return {as_number(v, path)};
    if (!v.is_array() || v.empty()) throw SchemaError(path, "expected a number or a nonempty list of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_number(v[i], path + "[" + std::to_string(i) + "]"));
    return out;
  }
  static Matrix as_matrix(const json& v, const std::string& path) {
    if (v.is_number()) return Matrix::Constant(1, 1, v.get<double>());
    if (!v.is_array() || v.empty()) throw SchemaError(path, "expected a number or a square list of rows");
    if (!v[0].is_array()) {
      const auto d = as_vector(v, path);
      return Eigen::Map<const Vector>(d.data(), static_cast<Eigen::Index>(d.size())).asDiagonal();
    }
    const auto n = static_cast<Eigen::Index>(v.size());
    Matrix m(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const std::string rp = path + "[" + std::to_string(i) + "]";
      const auto row = as_vector(v[static_cast<std::size_t>(i)], rp);
      if (static_cast<Eigen::Index>(row.size()) != n) throw SchemaError(rp, "matrix must be square");
      for (Eigen::Index j = 0; j < n; ++j) m(i, j) = row[static_cast<std::size_t>(j)];
    }
    return m;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

// ---------------------------------------------------------------------------
// Model blocks

inline NumericConfig parse_numeric(const json& j, const std::string& path) {
  Obj o(j, path);
  NumericConfig c;
  c.rng_seed = static_cast<std::uint64_t>([&] {
    const long s = o.integer("rng_seed");
    if (s < 0) throw SchemaError(o.at("rng_seed"), "must be >= 0");
    return s;
  }());
  c.quad_abs_tol = o.num("quad_abs_tol", c.quad_abs_tol);
  c.quad_rel_tol = o.num("quad_rel_tol", c.quad_rel_tol);
  c.quad_max_subdivisions = static_cast<int>(o.integer("quad_max_subdivisions", c.quad_max_subdivisions));
  c.mc_samples = static_cast<int>(o.integer("mc_samples", c.mc_samples));
  c.fd_step = o.num("fd_step", c.fd_step);
  c.truncation_sigmas = o.num("truncation_sigmas", c.truncation_sigmas);
  c.power_iter_tol = o.num("power_iter_tol", c.power_iter_tol);
  c.power_iter_max = static_cast<int>(o.integer("power_iter_max", c.power_iter_max));
  o.done();
  try {
    c.validate();
  } catch (const DomainError& e) {
    // validate() names the field as numeric.<name>
    const std::string m = e.what();
    const auto colon = m.find(':');
    throw SchemaError(m.substr(0, colon), colon == std::string::npos ? m : m.substr(colon + 2));
  }
  return c;
}

inline json numeric_to_json(const NumericConfig& c) {
  return json{{"rng_seed", c.rng_seed},
              {"quad_abs_tol", c.quad_abs_tol},
              {"quad_rel_tol", c.quad_rel_tol},
              {"quad_max_subdivisions", c.quad_max_subdivisions},
              {"mc_samples", c.mc_samples},
              {"fd_step", c.fd_step},
              {"truncation_sigmas", c.truncation_sigmas},
              {"power_iter_tol", c.power_iter_tol},
              {"power_iter_max", c.power_iter_max}};
}

/// Runs a library constructor, turning its argument errors into schema errors at `path`.
template <class F>
auto build(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const DomainError& e) {
    throw SchemaError(path, e.what());
  } catch (const StructureError& e) {
    throw SchemaError(path, e.what());
  }
}

inline Distribution parse_distribution(const json& j, const std::string& path) {
  Obj o(j, path);
  const std::string kind = o.choice("kind", {"gaussian", "normal", "uniform", "laplace", "discrete", "pmf", "mixture"});
  Distribution d;
  if (kind == "gaussian") {
    const Matrix c = o.mat("covariance");
    std::vector<double> m = o.has("mean") ? o.vec("mean") : std::vector<double>(static_cast<std::size_t>(c.rows()), 0.0);
    d = build(path, [&] { return Distribution::gaussian(Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(m.size())), c); });
  } else if (kind == "normal") {
    const double m = o.num("mean", 0.0), v = o.num("variance");
    d = build(path, [&] { return Distribution::normal(m, v); });
  } else if (kind == "uniform") {
    const auto lo = o.vec("lower"), hi = o.vec("upper");
    d = build(path, [&] { return Distribution::uniform(lo, hi); });
  } else if (kind == "laplace") {
    const double m = o.num("location", 0.0), b = o.num("scale");
    d = build(path, [&] { return Distribution::laplace(m, b); });
  } else if (kind == "pmf") {
    const auto m = o.vec("masses");
    d = build(path, [&] { return Distribution::pmf(m); });
  } else if (kind == "discrete") {
    const json& pts = o.req("points");
    if (!pts.is_array() || pts.empty()) throw SchemaError(o.at("points"), "expected a nonempty list of points");
    std::vector<Vector> p;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto v = Obj::as_vector(pts[i], o.at("points") + "[" + std::to_string(i) + "]");
      p.emplace_back(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    const auto m = o.vec("masses");
    d = build(path, [&] { return Distribution::discrete(p, m); });
  } else {
    const auto w = o.vec("weights");
    const json& comps = o.req("components");
    if (!comps.is_array()) throw SchemaError(o.at("components"), "expected a list of distributions");
    std::vector<Distribution> parts;
    for (std::size_t i = 0; i < comps.size(); ++i)
      parts.push_back(parse_distribution(comps[i], o.at("components") + "[" + std::to_string(i) + "]"));
    d = build(path, [&] { return Distribution::mixture(w, parts); });
  }
  o.done();
  return d;
}

inline WeightFunction parse_weight(const json& j, const std::string& path) {
  Obj o(j, path);
  const std::string kind = o.choice(
      "kind", {"constant", "indicator", "exponential", "polynomial", "gaussian_bump", "tabulated", "sine", "combination"});
  WeightFunction w;
  if (kind == "constant") {
    const double c = o.num("c", 1.0);
    w = build(path, [&] { return WeightFunction::constant(c); });
  } else if (kind == "indicator") {
    const auto lo = o.vec("lower"), hi = o.vec("upper");
    w = build(path, [&] { return WeightFunction::indicator(lo, hi); });
  } else if (kind == "exponential") {
    const auto t = o.vec("t");
    w = build(path, [&] { return WeightFunction::exponential(t); });
  } else if (kind == "polynomial") {
    const bool clip = o.boolean("clip", false);
    if (o.has("coefficients")) {
      const auto c = o.vec("coefficients");
      w = build(path, [&] { return WeightFunction::polynomial(c, clip); });
    } else {
      const long d = o.integer("dim");
      const json& ts = o.req("terms");
      if (!ts.is_array() || ts.empty()) throw SchemaError(o.at("terms"), "expected a nonempty list of monomials");
      std::vector<wf::Polynomial::Term> terms;
      for (std::size_t i = 0; i < ts.size(); ++i) {
        Obj t(ts[i], o.at("terms") + "[" + std::to_string(i) + "]");
        std::vector<int> pw;
        for (long p : t.ivec("powers")) pw.push_back(static_cast<int>(p));
        terms.push_back({t.num("coefficient"), pw});
        t.done();
      }
      if (d < 1) throw SchemaError(o.at("dim"), "must be >= 1");
      w = build(path, [&] { return WeightFunction::polynomial(terms, static_cast<std::size_t>(d), clip); });
    }
  } else if (kind == "gaussian_bump") {
    const auto c = o.vec("center");
    const double width = o.num("width"), floor = o.num("floor"), height = o.num("height", 1.0);
    w = build(path, [&] { return WeightFunction::gaussian_bump(c, width, floor, height); });
  } else if (kind == "tabulated") {
    const auto x = o.vec("x"), y = o.vec("y");
    w = build(path, [&] { return WeightFunction::tabulated(x, y); });
  } else if (kind == "sine") {
    const double off = o.num("offset"), amp = o.num("amplitude"), fr = o.num("frequency"), ph = o.num("phase", 0.0);
    w = build(path, [&] { return WeightFunction::sine(off, amp, fr, ph); });
  } else {
    const json& ts = o.req("terms");
    if (!ts.is_array() || ts.empty()) throw SchemaError(o.at("terms"), "expected a nonempty list");
    std::vector<std::pair<double, WeightFunction>> terms;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      Obj t(ts[i], o.at("terms") + "[" + std::to_string(i) + "]");
      const double c = t.num("weight");
      if (!(c >= 0)) throw SchemaError(t.at("weight"), "must be >= 0");
      terms.emplace_back(c, parse_weight(t.req("phi"), t.at("phi")));
      t.done();
    }
    w = WeightFunction::combination(terms);
  }
  o.done();
  return w;
}

inline WeightFunction weight_or_unit(Obj& o, const std::string& key) {
  return o.has(key) ? parse_weight(o.req(key), o.at(key)) : WeightFunction();
}

inline MarkovChainSpec parse_chain(const json& j, const std::string& path) {
  Obj o(j, path);
  MarkovChainSpec mc;
  mc.transition = o.mat("transition");
  const auto k = static_cast<std::size_t>(mc.transition.rows());
  const auto init = o.has("initial") ? o.vec("initial") : std::vector<double>(k, 1.0 / static_cast<double>(k));
  const auto psi = o.has("psi") ? o.vec("psi") : std::vector<double>(k, 1.0);
  mc.initial = Eigen::Map<const Vector>(init.data(), static_cast<Eigen::Index>(init.size()));
  mc.psi = Eigen::Map<const Vector>(psi.data(), static_cast<Eigen::Index>(psi.size()));
  o.done();
  build(path, [&] {
    mc.validate();
    return 0;
  });
  return mc;
}

inline ParametricFamily parse_family(const json& j, const std::string& path) {
  Obj o(j, path);
  const std::string kind = o.choice("kind", {"gaussian_location", "gaussian_scale", "laplace_location", "location_of"});
  ParametricFamily f;
  if (kind == "gaussian_location") {
    const Matrix c = o.mat("covariance");
    f = build(path, [&] { return ParametricFamily::gaussian_location(c); });
  } else if (kind == "gaussian_scale") {
    const double m = o.num("mean", 0.0);
    f = ParametricFamily::gaussian_scale(m);
  } else if (kind == "laplace_location") {
    const double b = o.num("scale");
    f = build(path, [&] { return ParametricFamily::laplace_location(b); });
  } else {
    const Distribution base = parse_distribution(o.req("base"), o.at("base"));
    f = build(path, [&] { return ParametricFamily::location_of(base); });
  }
  o.done();
  return f;
}

// ---------------------------------------------------------------------------
// Serialisation

inline json to_json(const Estimate& e) {
  return json{{"value", e.value},
              {"std_error", e.std_error},
              {"method", to_string(e.method)},
              {"error_bound", e.error_bound},
              {"tail_mass", e.tail_mass}};
}

inline json to_json(const CheckReport& r) {
  json hyps = json::array();
  for (const auto& h : r.hypotheses)
    hyps.push_back({{"label", h.label}, {"value", h.value}, {"requirement", to_string(h.requirement)},
                    {"tolerance", h.tolerance}, {"met", h.met}});
  json values = json::object();
  for (const auto& [k, v] : r.values) values[k] = v;
  json variants = json::array();
  for (const auto& v : r.variants)
    variants.push_back({{"label", v.label}, {"hypotheses_met", v.hypotheses_met}, {"gap", v.gap}, {"verdict", to_string(v.verdict)}});
  return json{{"check", r.name},
              {"verdict", to_string(r.verdict)},
              {"equality", r.equality},
              {"gap", to_json(r.gap)},
              {"gap_requirement", to_string(r.gap_requirement)},
              {"tolerance", r.tolerance_used},
              {"hypotheses_met", r.hypotheses_met},
              {"hypotheses", hyps},
              {"values", values},
              {"variants", variants},
              {"notes", r.notes}};
}

inline json to_json(const RateReport& r) {
  json trace = json::array();
  for (const auto& [n, v] : r.convergence_trace) trace.push_back({n, v});
  json values = json::object();
  for (const auto& [k, v] : r.values) values[k] = v;
  json out{{"kind", to_string(r.kind)}, {"primary_rate", r.primary_rate}};
  out["secondary_rate"] = r.secondary_rate ? json(*r.secondary_rate) : json(nullptr);
  out["trace"] = trace;
  out["trace_std_error"] = r.trace_std_error;
  out["empirical_primary"] = r.empirical_primary;
  out["values"] = values;
  out["notes"] = r.notes;
  return out;
}

inline json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

/// Plot-ready table written as CSV.
struct Series {
  std::vector<std::string> columns;
  std::vector<std::vector<json>> rows;

  [[nodiscard]] bool empty() const { return columns.empty(); }
  [[nodiscard]] json to_json() const { return json{{"columns", columns}, {"rows", rows}}; }
  [[nodiscard]] std::string csv() const {
    std::ostringstream s;
    for (std::size_t i = 0; i < columns.size(); ++i) s << (i ? "," : "") << columns[i];
    s << "\n";
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (i) s << ",";
        if (r[i].is_string()) s << r[i].get<std::string>();
        else if (r[i].is_null()) s << "nan";
        else s << r[i].dump();
      }
      s << "\n";
    }
    return s.str();
  }
};

// ---------------------------------------------------------------------------
// Commands

struct CommandResult {
  json result;
  Series series;
  const CheckReport* check = nullptr;  // primary report when the command is a check
  std::optional<CheckReport> report;
};

inline CommandResult with_check(CheckReport r, json extra = json::object()) {
  CommandResult out;
  out.report = std::move(r);
  out.result = to_json(*out.report);
  for (auto it = extra.begin(); it != extra.end(); ++it) out.result[it.key()] = it.value();
  return out;
}

inline Vector to_eigen(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }

inline CommandResult run_rates(Obj& m, const NumericConfig& cfg) {
  const std::string mode = m.choice("mode", {"iid_additive", "iid_multiplicative", "markov_multiplicative", "markov_additive",
                                             "smb", "nonstationary_gaussian", "ar1"});
  CommandResult out;
  auto trace_series = [&](const RateReport& r, const std::string& stat) {
    out.series.columns = {"n", stat, "primary_rate"};
    if (!r.trace_std_error.empty()) out.series.columns.push_back("std_error");
    for (std::size_t i = 0; i < r.convergence_trace.size(); ++i) {
      std::vector<json> row{r.convergence_trace[i].first, r.convergence_trace[i].second, r.primary_rate};
      if (!r.trace_std_error.empty()) row.emplace_back(r.trace_std_error[i]);
      out.series.rows.push_back(row);
    }
  };
  if (mode == "iid_additive" || mode == "iid_multiplicative") {
    const Distribution p = parse_distribution(m.req("distribution"), m.at("distribution"));
    const WeightFunction psi = weight_or_unit(m, "psi");
    const long n = m.integer("n");
    if (mode == "iid_additive") {
      out.result = {{"mode", mode}, {"n", n}, {"value", iid_additive_we(p, psi, n)}};
    } else {
      const double l = iid_multiplicative_log_we(p, psi, n);
      out.result = {{"mode", mode}, {"n", n}, {"log_value", l}};
      out.result["value"] = l <= 709.0 ? json(std::exp(l)) : json(nullptr);
    }
  } else if (mode == "markov_multiplicative") {
    const MarkovChainSpec mc = parse_chain(m.req("chain"), m.at("chain"));
    std::vector<long> grid = m.has("n_grid") ? m.ivec("n_grid") : std::vector<long>{10, 50, 100, 500, 1000, 2000};
    const RateReport r = markov_multiplicative_rate(mc, cfg, grid);
    out.result = to_json(r);
    trace_series(r, "log_h_over_n");
  } else if (mode == "markov_additive") {
    const MarkovChainSpec mc = parse_chain(m.req("chain"), m.at("chain"));
    const RateReport r = markov_additive_secondary_rate(mc, static_cast<int>(m.integer("truncation", 50)), cfg);
    out.result = to_json(r);
    trace_series(r, "transfer_A1");
  } else if (mode == "smb") {
    const std::string sm = m.choice("smb_mode", {"additive", "multiplicative"}, "additive");
    const std::vector<long> grid = m.ivec("n_grid");
    const int paths = static_cast<int>(m.integer("paths", 20));
    RateReport r;
    const SmbMode smode = sm == "additive" ? SmbMode::additive : SmbMode::multiplicative;
    if (m.has("chain")) {
      r = empirical_smb(parse_chain(m.req("chain"), m.at("chain")), smode, grid, paths, cfg);
    } else {
      const Distribution p = parse_distribution(m.req("distribution"), m.at("distribution"));
      r = empirical_smb(p, weight_or_unit(m, "psi"), smode, grid, paths, cfg);
    }
    out.result = to_json(r);
    trace_series(r, smode == SmbMode::additive ? "I_over_n2" : "log_I_over_n");
  } else if (mode == "nonstationary_gaussian") {
    const double a = m.num("alpha_w", 1.0), c = m.num("c", 1.0);
    const RateReport r = nonstationary_gaussian_scan(a, c, m.ivec("n_grid"));
    out.result = to_json(r);
    trace_series(r, "h_over_n2_log_n");
  } else {
    const double a = m.num("alpha");
    const WeightFunction psi = weight_or_unit(m, "psi");
    const long n = m.integer("n");
    const std::string route = m.choice("route", {"automatic", "quadrature", "monte_carlo"}, "automatic");
    const Ar1Route rt = route == "quadrature" ? Ar1Route::quadrature
                        : route == "monte_carlo" ? Ar1Route::monte_carlo : Ar1Route::automatic;
    out.result = {{"mode", mode}, {"n", n}, {"estimate", to_json(ar1_multiplicative_wde(a, psi, n, cfg, rt))}};
  }
  return out;
}

inline CommandResult run_command(const std::string& cmd, const json& model, const NumericConfig& cfg) {
  Obj m(model, "model");
  CommandResult out;
  auto dist = [&](const std::string& k) { return parse_distribution(m.req(k), m.at(k)); };
  auto phi = [&](const std::string& k = "phi") { return weight_or_unit(m, k); };
  if (cmd == "entropy") {
    const Distribution f = dist("distribution");
    const WeightFunction w = phi();
    const Estimate e = weighted_entropy(f, w, cfg);
    out.result = {{"value", e.value}, {"estimate", to_json(e)}};
    if (f.is_gaussian() && f.mean().isZero(0.0))
      out.result["closed_form"] = gaussian_wde_closed(f.covariance(), w, cfg).value.value;
  } else if (cmd == "divergence") {
    const Estimate e = weighted_kl(dist("f"), dist("g"), phi(), cfg);
    out.result = {{"value", e.value}, {"estimate", to_json(e)}};
  } else if (cmd == "gibbs") {
    out = with_check(gibbs_check(dist("f"), dist("g"), phi(), cfg));
  } else if (cmd == "concavity") {
    const std::string kind = m.choice("kind", {"entropy", "divergence"}, "entropy");
    const double l = m.num("lambda");
    if (kind == "entropy")
      out = with_check(we_concavity_gap(dist("f1"), dist("f2"), l, phi(), cfg));
    else
      out = with_check(rwe_convexity_gap(dist("f1"), dist("f2"), dist("g1"), dist("g2"), l, phi(), cfg));
  } else if (cmd == "kyfan") {
    out = with_check(kyfan_gap(to_eigen(m.vec("t")), m.mat("c1"), m.mat("c2"), m.num("lambda")));
  } else if (cmd == "hadamard") {
    out = with_check(hadamard_weighted_check(m.mat("covariance"), phi(), cfg));
  } else if (cmd == "gauss-max") {
    out = with_check(gaussian_max_check(dist("distribution"), phi(), cfg));
  } else if (cmd == "fisher") {
    const ParametricFamily fam = parse_family(m.req("family"), m.at("family"));
    const Vector th = to_eigen(m.vec("theta"));
    const WfimResult r = wfim_estimate(fam, th, phi(), cfg);
    json means = json::array();
    for (const auto& e : score_mean(fam, th, cfg)) means.push_back(to_json(e));
    out.result = {{"wfim", to_json(r.value)}, {"meta", to_json(r.meta)}, {"score_mean", means}};
  } else if (cmd == "wfii") {
    const ParametricFamily f1 = parse_family(m.req("family1"), m.at("family1"));
    const ParametricFamily f2 = parse_family(m.req("family2"), m.at("family2"));
    out = with_check(wfii_check(f1, f2, to_eigen(m.vec("theta")), phi(), cfg));
  } else if (cmd == "taylor") {
    const ParametricFamily fam = parse_family(m.req("family"), m.at("family"));
    out = with_check(kl_taylor_check(fam, m.num("theta1"), m.num("theta2"), phi(), cfg));
  } else if (cmd == "wepi") {
    const WepiContext c = kappa_and_angle(dist("x1"), dist("x2"), phi(), cfg);
    out = with_check(wepi_check(c, cfg), json{{"kappa", c.kappa}, {"alpha", c.alpha_angle}});
  } else if (cmd == "wlsi") {
    const std::string v = m.choice("variant", {"generic", "gaussian", "uniform"}, "generic");
    if (v == "generic") {
      const WepiContext c = kappa_and_angle(dist("x1"), dist("x2"), phi(), cfg);
      out = with_check(wlsi_check(c, cfg));
    } else if (v == "gaussian") {
      out = with_check(gaussian_wlsi_check(m.num("s1"), m.num("s2"), phi(), cfg));
    } else {
      auto [t, r] = uniform_wlsi_check(m.num("a1"), m.num("b1"), m.num("a2"), m.num("b2"), phi(), cfg);
      out = with_check(std::move(r), json{{"swapped", t.swapped}});
    }
  } else if (cmd == "stein") {
    const WeightFunction w = phi();
    out.series.columns = {"variance", "direct", "stein", "abs_difference"};
    json rows = json::array();
    for (double s2 : m.vec("variance")) {
      if (!(s2 > 0)) throw SchemaError(m.at("variance"), "variances must be > 0");
      const Estimate d = direct_second_moment(s2, w, cfg), s = stein_second_moment(s2, w, cfg);
      rows.push_back({{"variance", s2}, {"direct", to_json(d)}, {"stein", to_json(s)}, {"abs_difference", std::abs(d.value - s.value)}});
      out.series.rows.push_back({s2, d.value, s.value, std::abs(d.value - s.value)});
    }
    out.result = {{"moments", rows}};
  } else if (cmd == "debruijn") {
    out = with_check(debruijn_check(dist("distribution"), m.num("gamma"), phi(), cfg));
  } else if (cmd == "wep-scan") {
    auto [diag, r] = wep_concavity_scan(dist("distribution"), phi(), m.vec("gammas"), cfg);
    out = with_check(std::move(r));
    out.series.columns = {"gamma", "wep", "Lambda", "psi", "dpsi", "dpsi_classical", "R", "mmse", "second_difference"};
    for (std::size_t i = 0; i < diag.size(); ++i) {
      const auto& e = diag[i];
      json sd = nullptr;
      if (i > 0 && i + 1 < diag.size()) {
        const double g0 = diag[i - 1].gamma, g1 = e.gamma, g2 = diag[i + 1].gamma;
        sd = 2 * ((diag[i + 1].wep - e.wep) / (g2 - g1) - (e.wep - diag[i - 1].wep) / (g1 - g0)) / (g2 - g0);
      }
      out.series.rows.push_back({e.gamma, e.wep, e.Lambda_gamma, e.psi_gamma, e.dpsi, e.dpsi_classical, e.R_gamma,
                                 e.M_values.at("X"), sd});
    }
  } else if (cmd == "rates") {
    out = run_rates(m, cfg);
  } else {
    throw SchemaError("command", "'" + cmd + "' cannot be run directly");
  }
  m.done();
  return out;
}

// ---------------------------------------------------------------------------
// Jobs

struct JobSpec {
  std::string command;
  NumericConfig numeric;
  json model;
  json sweep;  // only for command == "sweep"
  std::string output_path, csv_path;
  json echo;   // normalised job
};

inline JobSpec parse_job(const json& j) {
  Obj o(j, "");
  JobSpec s;
  s.command = o.choice("command", commands());
  if (!o.has("numeric")) throw SchemaError("numeric.rng_seed", "required field missing (every job needs an explicit seed)");
  s.numeric = parse_numeric(o.req("numeric"), "numeric");
  s.model = o.has("model") ? o.req("model") : json::object();
  if (!s.model.is_object()) throw SchemaError("model", "expected an object");
  if (s.command == "sweep") {
    s.sweep = o.req("sweep");
  } else if (o.has("sweep")) {
    throw SchemaError("sweep", "only allowed with command 'sweep'");
  }
  if (o.has("output")) {
    Obj out(o.req("output"), "output");
    s.output_path = out.str("path", "");
    s.csv_path = out.str("csv", "");
    out.done();
  }
  o.done();
  s.echo = json{{"command", s.command}, {"numeric", numeric_to_json(s.numeric)}, {"model", s.model}};
  if (s.command == "sweep") s.echo["sweep"] = s.sweep;
  if (!s.output_path.empty() || !s.csv_path.empty()) {
    s.echo["output"] = json::object();
    if (!s.output_path.empty()) s.echo["output"]["path"] = s.output_path;
    if (!s.csv_path.empty()) s.echo["output"]["csv"] = s.csv_path;
  }
  return s;
}

struct Axis {
  std::string name;
  json::json_pointer pointer;
  std::vector<double> values;
};

inline std::vector<Axis> parse_axes(const json& sweep, std::string& target) {
  Obj o(sweep, "sweep");
  target = o.choice("command", {"entropy", "divergence", "gibbs", "concavity", "kyfan", "hadamard", "gauss-max", "fisher",
                                "wfii", "taylor", "wepi", "wlsi", "stein", "debruijn", "wep-scan", "rates"});
  const json& ax = o.req("axes");
  if (!ax.is_array() || ax.empty() || ax.size() > 2) throw SchemaError("sweep.axes", "expected one or two axes");
  std::vector<Axis> axes;
  for (std::size_t i = 0; i < ax.size(); ++i) {
    const std::string p = "sweep.axes[" + std::to_string(i) + "]";
    Obj a(ax[i], p);
    Axis x;
    const std::string ptr = a.str("pointer");
    try {
      x.pointer = json::json_pointer(ptr);
    } catch (const json::exception&) {
      throw SchemaError(a.at("pointer"), "not a JSON pointer: " + ptr);
    }
    x.name = a.str("name", ptr.substr(ptr.find_last_of('/') + 1));
    if (a.has("values")) {
      x.values = a.vec("values");
    } else {
      const double from = a.num("from"), to = a.num("to");
      const long count = a.integer("count");
      const std::string scale = a.choice("scale", {"linear", "log"}, "linear");
      if (count < 1 || count > 1000000) throw SchemaError(a.at("count"), "must be in [1, 1e6]");
      if (scale == "log" && !(from > 0 && to > 0)) throw SchemaError(a.at("from"), "log scale needs positive limits");
      for (long k = 0; k < count; ++k) {
        const double u = count == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(count - 1);
        x.values.push_back(scale == "linear" ? from + u * (to - from) : std::exp(std::log(from) + u * (std::log(to) - std::log(from))));
      }
    }
    a.done();
    axes.push_back(std::move(x));
  }
  o.done();
  double cells = 1;
  for (const auto& a : axes) cells *= static_cast<double>(a.values.size());
  if (cells > 1e6) throw SchemaError("sweep.axes", "grid has more than 1e6 cells");
  return axes;
}

struct Report {
  json document;
  Series series;
};

inline Report run_sweep(const JobSpec& s) {
  std::string target;
  const std::vector<Axis> axes = parse_axes(s.sweep, target);
  std::vector<std::vector<double>> cells{{}};
  for (const auto& a : axes) {
    std::vector<std::vector<double>> next;
    for (const auto& c : cells)
      for (double v : a.values) {
        next.push_back(c);
        next.back().push_back(v);
      }
    cells = std::move(next);
  }
  auto model_for = [&](const std::vector<double>& cell) {
    json m = s.model;
    for (std::size_t i = 0; i < axes.size(); ++i) {
      const auto parent = axes[i].pointer.parent_pointer();
      if (!m.contains(parent)) throw SchemaError("sweep.axes[" + std::to_string(i) + "].pointer", "no such location in model");
      // integer fields stay integers (log grids land next to them)
      const double x = cell[i];
      const bool integral = m.contains(axes[i].pointer) && m.at(axes[i].pointer).is_number_integer() &&
                            std::abs(x) < 9e15 && std::abs(x - std::round(x)) <= 1e-9 * std::max(1.0, std::abs(x));
      m[axes[i].pointer] = integral ? json(std::lround(x)) : json(x);
    }
    return m;
  };
  // validate substitution on the first cell before running anything
  model_for(cells.front());

  std::vector<json> results(cells.size());
  std::vector<std::string> verdicts(cells.size());
  std::vector<std::vector<std::pair<std::string, double>>> vals(cells.size());
  std::vector<double> gaps(cells.size(), std::numeric_limits<double>::quiet_NaN());
  std::atomic<bool> schema_failed{false};
  std::string schema_message;
  detail::parallel_for(cells.size(), [&](std::size_t i) {
    try {
      CommandResult r = run_command(target, model_for(cells[i]), s.numeric);
      if (r.report) {
        verdicts[i] = to_string(r.report->verdict);
        gaps[i] = r.report->gap.value;
        vals[i] = r.report->values;
      } else {
        verdicts[i] = "-";
        if (r.result.contains("value") && r.result["value"].is_number()) gaps[i] = r.result["value"].get<double>();
      }
      results[i] = std::move(r.result);
    } catch (const SchemaError& e) {
      if (!schema_failed.exchange(true)) schema_message = e.what();
      verdicts[i] = "ERROR";
    } catch (const std::exception& e) {
      verdicts[i] = "ERROR";
      results[i] = json{{"error", e.what()}};
    }
  });
  if (schema_failed) {
    const std::string msg = schema_message;
    throw SchemaError(msg.substr(0, msg.find(':')), msg.substr(msg.find(':') + 2));
  }

  Report rep;
  Series& se = rep.series;
  for (const auto& a : axes) se.columns.push_back(a.name);
  se.columns.push_back("verdict");
  se.columns.push_back("gap");
  std::vector<std::string> keys;
  for (const auto& v : vals)
    for (const auto& [k, x] : v)
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  for (const auto& k : keys) se.columns.push_back(k);
  json summary{{"HOLDS", 0}, {"VIOLATED", 0}, {"HYPOTHESIS_UNMET", 0}, {"INCONCLUSIVE", 0}, {"ERROR", 0}};
  json cells_json = json::array();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::vector<json> row(cells[i].begin(), cells[i].end());
    row.emplace_back(verdicts[i]);
    row.emplace_back(gaps[i]);
    for (const auto& k : keys) {
      json v = nullptr;
      for (const auto& [kk, x] : vals[i])
        if (kk == k) v = x;
      row.push_back(v);
    }
    se.rows.push_back(row);
    if (summary.contains(verdicts[i])) summary[verdicts[i]] = summary[verdicts[i]].get<int>() + 1;
    json at = json::object();
    for (std::size_t a = 0; a < axes.size(); ++a) at[axes[a].name] = cells[i][a];
    cells_json.push_back({{"at", at}, {"verdict", verdicts[i]}, {"result", results[i]}});
  }
  rep.document = json{{"command", target}, {"summary", summary}, {"cells", cells_json}};
  return rep;
}

/// Runs a parsed job and assembles the report document. Timing is returned
/// separately so that documents are reproducible bit for bit.
inline Report run_job(const JobSpec& s, double* seconds = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  Report rep;
  json results;
  if (s.command == "sweep") {
    Report sw = run_sweep(s);
    results = std::move(sw.document);
    rep.series = std::move(sw.series);
  } else {
    CommandResult r = run_command(s.command, s.model, s.numeric);
    results = std::move(r.result);
    rep.series = std::move(r.series);
  }
  rep.document = json{{"tool", "wentropy"},
                      {"version", kToolVersion},
                      {"job", s.echo},
                      {"results", results},
                      {"provenance", {{"rng_seed", s.numeric.rng_seed}, {"numeric", numeric_to_json(s.numeric)}}}};
  if (!rep.series.empty()) rep.document["series"] = rep.series.to_json();
  if (seconds) *seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError(path, "cannot open job file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path, std::string("invalid JSON: ") + e.what());
  }
}

/// JSON schema of the job format (draft 2020-12).
inline std::string schema() {
  return R"JSON({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "wentropy job",
  "type": "object",
  "additionalProperties": false,
  "required": ["command", "numeric"],
  "properties": {
    "command": {"enum": ["entropy", "divergence", "gibbs", "concavity", "kyfan", "hadamard", "gauss-max", "fisher",
                         "wfii", "taylor", "wepi", "wlsi", "stein", "debruijn", "wep-scan", "rates", "sweep"]},
    "numeric": {"$ref": "#/$defs/numeric"},
    "model": {"type": "object"},
    "sweep": {"$ref": "#/$defs/sweep"},
    "output": {
      "type": "object", "additionalProperties": false,
      "properties": {"path": {"type": "string"}, "csv": {"type": "string"}}
    }
  },
  "$defs": {
    "number": {"oneOf": [{"type": "number"}, {"enum": ["inf", "-inf"]}]},
    "vector": {"oneOf": [{"$ref": "#/$defs/number"}, {"type": "array", "minItems": 1, "items": {"$ref": "#/$defs/number"}}]},
    "matrix": {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}},
                         {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}]},
    "numeric": {
      "type": "object", "additionalProperties": false, "required": ["rng_seed"],
      "properties": {
        "rng_seed": {"type": "integer", "minimum": 0},
        "quad_abs_tol": {"type": "number", "exclusiveMinimum": 0},
        "quad_rel_tol": {"type": "number", "exclusiveMinimum": 0},
        "quad_max_subdivisions": {"type": "integer", "minimum": 1},
        "mc_samples": {"type": "integer", "minimum": 100},
        "fd_step": {"type": "number", "exclusiveMinimum": 0},
        "truncation_sigmas": {"type": "number", "minimum": 4},
        "power_iter_tol": {"type": "number", "exclusiveMinimum": 0},
        "power_iter_max": {"type": "integer", "minimum": 1}
      }
    },
    "distribution": {
      "type": "object",
      "required": ["kind"],
      "properties": {
        "kind": {"enum": ["gaussian", "normal", "uniform", "laplace", "discrete", "pmf", "mixture"]},
        "mean": {"$ref": "#/$defs/vector"}, "covariance": {"$ref": "#/$defs/matrix"}, "variance": {"type": "number"},
        "lower": {"$ref": "#/$defs/vector"}, "upper": {"$ref": "#/$defs/vector"},
        "location": {"type": "number"}, "scale": {"type": "number"},
        "points": {"type": "array", "items": {"$ref": "#/$defs/vector"}}, "masses": {"$ref": "#/$defs/vector"},
        "weights": {"$ref": "#/$defs/vector"}, "components": {"type": "array", "items": {"$ref": "#/$defs/distribution"}}
      },
      "additionalProperties": false
    },
    "weight": {
      "type": "object",
      "required": ["kind"],
      "properties": {
        "kind": {"enum": ["constant", "indicator", "exponential", "polynomial", "gaussian_bump", "tabulated", "sine", "combination"]},
        "c": {"type": "number", "minimum": 0},
        "lower": {"$ref": "#/$defs/vector"}, "upper": {"$ref": "#/$defs/vector"},
        "t": {"$ref": "#/$defs/vector"},
        "coefficients": {"$ref": "#/$defs/vector"}, "clip": {"type": "boolean"}, "dim": {"type": "integer", "minimum": 1},
        "terms": {"type": "array"},
        "center": {"$ref": "#/$defs/vector"}, "width": {"type": "number"}, "floor": {"type": "number"}, "height": {"type": "number"},
        "x": {"$ref": "#/$defs/vector"}, "y": {"$ref": "#/$defs/vector"},
        "offset": {"type": "number"}, "amplitude": {"type": "number"}, "frequency": {"type": "number"}, "phase": {"type": "number"}
      },
      "additionalProperties": false
    },
    "chain": {
      "type": "object", "additionalProperties": false, "required": ["transition"],
      "properties": {"transition": {"$ref": "#/$defs/matrix"}, "initial": {"$ref": "#/$defs/vector"}, "psi": {"$ref": "#/$defs/vector"}}
    },
    "family": {
      "type": "object", "additionalProperties": false, "required": ["kind"],
      "properties": {
        "kind": {"enum": ["gaussian_location", "gaussian_scale", "laplace_location", "location_of"]},
        "covariance": {"$ref": "#/$defs/matrix"}, "mean": {"type": "number"}, "scale": {"type": "number"},
        "base": {"$ref": "#/$defs/distribution"}
      }
    },
    "sweep": {
      "type": "object", "additionalProperties": false, "required": ["command", "axes"],
      "properties": {
        "command": {"type": "string"},
        "axes": {
          "type": "array", "minItems": 1, "maxItems": 2,
          "items": {
            "type": "object", "additionalProperties": false, "required": ["pointer"],
            "properties": {
              "pointer": {"type": "string"}, "name": {"type": "string"},
              "values": {"$ref": "#/$defs/vector"},
              "from": {"type": "number"}, "to": {"type": "number"}, "count": {"type": "integer", "minimum": 1},
              "scale": {"enum": ["linear", "log"]}
            }
          }
        }
      }
    }
  }
}
)JSON";
}

}  // namespace wentropy::job
