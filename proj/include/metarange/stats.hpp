#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "metarange/errors.hpp"

// Special functions needed by the margin analysis: the standard normal CDF
// through a rational-approximation erfc, the regularized lower incomplete
// gamma function, and the chi-square quantile obtained by bisection.

namespace metarange {

namespace detail {

// W. J. Cody's rational Chebyshev approximation for erf/erfc (Math. Comp. 23,
// 1969; the netlib CALERF coefficients). Absolute error below 1e-16 for erf
// and relative error below 1.2e-16 for erfc on double precision, comfortably
// inside the documented 1e-12 budget for the normal CDF.
inline double cody_erf_core(double x, bool complement) {
  static const double a[5] = {3.16112374387056560e00, 1.13864154151050156e02,
                              3.77485237685302021e02, 3.20937758913846947e03,
                              1.85777706184603153e-1};
  static const double b[4] = {2.36012909523441209e01, 2.44024637934444173e02,
                              1.28261652607737228e03, 2.84423683343917062e03};
  static const double c[9] = {5.64188496988670089e-1, 8.88314979438837594e00,
                              6.61191906371416295e01, 2.98635138197400131e02,
                              8.81952221241769090e02, 1.71204761263407058e03,
                              2.05107837782607147e03, 1.23033935479799725e03,
                              2.15311535474403846e-8};
  static const double d[8] = {1.57449261107098347e01, 1.17693950891312499e02,
                              5.37181101862009858e02, 1.62138957456669019e03,
                              3.29079923573345963e03, 4.36261909014324716e03,
                              3.43936767414372164e03, 1.23033935480374942e03};
  static const double p[6] = {3.05326634961232344e-1, 3.60344899949804439e-1,
                              1.25781726111229246e-1, 1.60837851487422766e-2,
                              6.58749161529837803e-4, 1.63153871373020978e-2};
  static const double q[5] = {2.56852019228982242e00, 1.87295284992346047e00,
                              5.27905102951428412e-1, 6.05183413124413191e-2,
                              2.33520497626869185e-3};
  const double y = std::abs(x);
  double result;
  if (y <= 0.46875) {
    double ysq = 0.0;
    if (y > std::numeric_limits<double>::min()) ysq = y * y;
    double xnum = a[4] * ysq, xden = ysq;
    for (int i = 0; i < 3; ++i) {
      xnum = (xnum + a[i]) * ysq;
      xden = (xden + b[i]) * ysq;
    }
    result = x * (xnum + a[3]) / (xden + b[3]);
    return complement ? 1.0 - result : result;
  }
  if (y <= 4.0) {
    double xnum = c[8] * y, xden = y;
    for (int i = 0; i < 7; ++i) {
      xnum = (xnum + c[i]) * y;
      xden = (xden + d[i]) * y;
    }
    result = (xnum + c[7]) / (xden + d[7]);
    const double ysq = std::trunc(y * 16.0) / 16.0;
    const double del = (y - ysq) * (y + ysq);
    result *= std::exp(-ysq * ysq) * std::exp(-del);
  } else {
    if (y >= 26.543) {
      result = 0.0;
    } else {
      const double ysq = 1.0 / (y * y);
      double xnum = p[5] * ysq, xden = ysq;
      for (int i = 0; i < 4; ++i) {
        xnum = (xnum + p[i]) * ysq;
        xden = (xden + q[i]) * ysq;
      }
      result = ysq * (xnum + p[4]) / (xden + q[4]);
      result = (0.5641895835477562869 - result) / y;  // 1/sqrt(pi) leading term
      const double ysq2 = std::trunc(y * 16.0) / 16.0;
      const double del = (y - ysq2) * (y + ysq2);
      result *= std::exp(-ysq2 * ysq2) * std::exp(-del);
    }
  }
  // result currently holds erfc(y)
  if (complement) return x < 0.0 ? 2.0 - result : result;
  return x < 0.0 ? result - 1.0 : 1.0 - result;
}

}  // namespace detail

inline double erf_approx(double x) { return detail::cody_erf_core(x, false); }
inline double erfc_approx(double x) { return detail::cody_erf_core(x, true); }

/// Standard normal CDF, Phi(x) = erfc(-x / sqrt(2)) / 2.
inline double normal_cdf(double x) {
  return 0.5 * erfc_approx(-x * 0.7071067811865475244);
}

/// Regularized lower incomplete gamma P(a, x): series expansion for
/// x < a + 1, continued fraction otherwise (both classic formulations).
inline double regularized_gamma_p(double a, double x) {
  if (a <= 0.0 || x < 0.0) throw ArgumentError("regularized_gamma_p: invalid arguments");
  if (x == 0.0) return 0.0;
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-16;
  const double lg = std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a;
    double sum = 1.0 / a;
    double term = sum;
    for (int i = 0; i < kMaxIter; ++i) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::abs(term) < std::abs(sum) * kEps)
        return sum * std::exp(-x + a * std::log(x) - lg);
    }
    throw NumericError("regularized_gamma_p: series did not converge");
  }
  // Lentz's continued fraction for Q(a, x)
  constexpr double kTiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= kMaxIter; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) {
      const double q = std::exp(-x + a * std::log(x) - lg) * h;
      return 1.0 - q;
    }
  }
  throw NumericError("regularized_gamma_p: continued fraction did not converge");
}

/// Chi-square CDF with d degrees of freedom.
inline double chi_square_cdf(int d, double x) {
  if (d < 1) throw ArgumentError("chi_square_cdf: d must be >= 1");
  if (x <= 0.0) return 0.0;
  return regularized_gamma_p(0.5 * d, 0.5 * x);
}

/// Chi-square quantile by bisection on the CDF, absolute tolerance 1e-10.
inline double chi_square_quantile(int d, double p) {
  if (d < 1) throw ArgumentError("chi_square_quantile: d must be >= 1");
  if (!(p >= 0.0 && p < 1.0)) throw ArgumentError("chi_square_quantile: p must be in [0, 1)");
  if (p == 0.0) return 0.0;
  double lo = 0.0;
  double hi = static_cast<double>(d);
  while (chi_square_cdf(d, hi) < p) {
    hi *= 2.0;
    if (hi > 1e12) throw NumericError("chi_square_quantile: bracketing failed");
  }
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    if (chi_square_cdf(d, mid) < p)
      lo = mid;
    else
      hi = mid;
    if (mid == lo || mid == hi) break;  // interval at floating-point resolution
  }
  return 0.5 * (lo + hi);
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Population standard deviation (divides by N, matching how the reported
/// "+- std" spreads are computed).
inline double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace metarange
