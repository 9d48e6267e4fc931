#pragma once

// Independent reference computations used as test oracles. Nothing here
// calls into the library's quadrature or closed-form code.

#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

/// Composite Simpson rule with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 20000) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

/// Tensor Simpson over a rectangle.
inline double simpson2(const std::function<double(double, double)>& f, double ax, double bx, double ay, double by,
                       int n = 600) {
  return simpson([&](double x) { return simpson([&](double y) { return f(x, y); }, ay, by, n); }, ax, bx, n);
}

inline double normal_pdf(double x, double m, double v) {
  return std::exp(-0.5 * (x - m) * (x - m) / v) / std::sqrt(2 * M_PI * v);
}

/// KL(N(m1,v1) || N(m2,v2)).
inline double gaussian_kl(double m1, double v1, double m2, double v2) {
  return 0.5 * (std::log(v2 / v1) + (v1 + (m1 - m2) * (m1 - m2)) / v2 - 1.0);
}

inline double gaussian_entropy(double v) { return 0.5 * std::log(2 * M_PI * M_E * v); }

/// Larger root of the characteristic polynomial of a 2x2 matrix.
inline double perron_2x2(double a, double b, double c, double d) {
  const double tr = a + d, det = a * d - b * c;
  return 0.5 * (tr + std::sqrt(tr * tr - 4 * det));
}

/// Visit every string of length n over alphabet {0..k-1}.
inline void for_each_string(int k, int n, const std::function<void(const std::vector<int>&)>& visit) {
  std::vector<int> s(static_cast<std::size_t>(n), 0);
  while (true) {
    visit(s);
    int i = n - 1;
    while (i >= 0 && s[static_cast<std::size_t>(i)] == k - 1) s[static_cast<std::size_t>(i--)] = 0;
    if (i < 0) return;
    ++s[static_cast<std::size_t>(i)];
  }
}

/// Weighted entropy of a length-n string law by exhaustive enumeration:
/// -sum phi_n(x) p_n(x) ln p_n(x), with p_n from an initial law and a
/// transition matrix (i.i.d. when all rows equal the initial law).
inline double enumerate_we(const std::vector<double>& init, const std::vector<std::vector<double>>& trans,
                           const std::vector<double>& psi, int n, bool multiplicative) {
  const int k = static_cast<int>(init.size());
  double h = 0.0;
  for_each_string(k, n, [&](const std::vector<int>& s) {
    double p = init[static_cast<std::size_t>(s[0])];
    for (int j = 1; j < n; ++j) p *= trans[static_cast<std::size_t>(s[j - 1])][static_cast<std::size_t>(s[j])];
    if (p <= 0) return;
    double phi = multiplicative ? 1.0 : 0.0;
    for (int x : s) {
      if (multiplicative) phi *= psi[static_cast<std::size_t>(x)];
      else phi += psi[static_cast<std::size_t>(x)];
    }
    h -= phi * p * std::log(p);
  });
  return h;
}

}  // namespace oracle
