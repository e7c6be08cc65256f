#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "bms/types.hpp"

namespace testing {

/// Central-difference gradient of f at x.
inline bms::Vec fd_gradient(const std::function<double(const bms::Vec&)>& f, bms::Vec x, double h = 1e-5) {
  bms::Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = f(x);
    x[i] = xi - h;
    const double fm = f(x);
    x[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double max_abs_diff(const bms::Vec& a, const bms::Vec& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double norm(const bms::Vec& a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

/// Relative error |a-b| / max(|b|, floor).
inline double rel_err(const bms::Vec& a, const bms::Vec& b, double floor = 1e-8) {
  bms::Vec d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return norm(d) / std::max(norm(b), floor);
}

struct Moments {
  double mean = 0.0;
  double var = 0.0;
  std::size_t n = 0;
  double se_mean() const { return std::sqrt(var / static_cast<double>(n)); }
  // Standard error of the sample variance for Gaussian data.
  double se_var() const { return var * std::sqrt(2.0 / static_cast<double>(n - 1)); }
};

inline Moments moments(const std::vector<double>& v) {
  Moments m;
  m.n = v.size();
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(m.n);
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= static_cast<double>(m.n - 1);
  return m;
}

}  // namespace testing

namespace testing {

/// Ordinary least squares y = b0 + b1 x with homoscedastic standard errors.
struct LineFit {
  double b0, b1, se0, se1;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  LineFit f;
  f.b1 = sxy / sxx;
  f.b0 = my - f.b1 * mx;
  double rss = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - f.b0 - f.b1 * x[i];
    rss += r * r;
  }
  const double s2 = rss / (n - 2);
  f.se1 = std::sqrt(s2 / sxx);
  f.se0 = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
  return f;
}

}  // namespace testing

namespace testing {

/// Dense solve A x = b by Gaussian elimination with partial pivoting (A is n x n, row major).
inline std::vector<double> solve(std::vector<double> A, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(A[r * n + c]) > std::abs(A[piv * n + c])) piv = r;
    if (piv != c) {
      for (std::size_t k = 0; k < n; ++k) std::swap(A[c * n + k], A[piv * n + k]);
      std::swap(b[c], b[piv]);
    }
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = A[r * n + c] / A[c * n + c];
      for (std::size_t k = c; k < n; ++k) A[r * n + k] -= f * A[c * n + k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= A[i * n + k] * x[k];
    x[i] = s / A[i * n + i];
  }
  return x;
}

/// Least squares min |y - Z beta|^2 via the normal equations; Z is rows x p.
inline std::vector<double> least_squares(const std::vector<std::vector<double>>& Z, const std::vector<double>& y) {
  const std::size_t p = Z.front().size();
  std::vector<double> A(p * p, 0.0), b(p, 0.0);
  for (std::size_t r = 0; r < Z.size(); ++r)
    for (std::size_t i = 0; i < p; ++i) {
      b[i] += Z[r][i] * y[r];
      for (std::size_t j = 0; j < p; ++j) A[i * p + j] += Z[r][i] * Z[r][j];
    }
  return solve(A, b);
}

}  // namespace testing
