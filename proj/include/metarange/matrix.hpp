#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "metarange/errors.hpp"

// Small dense row-major matrices. Everything here is sized by episode shapes
// (tens of rows, tens of columns), so plain loops are enough.

namespace metarange {

using Vec = std::vector<double>;

struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

  double* row(std::size_t i) { return a.data() + i * cols; }
  const double* row(std::size_t i) const { return a.data() + i * cols; }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

inline Mat matmul(const Mat& x, const Mat& y) {
  if (x.cols != y.rows) throw ArgumentError("matmul: inner dimensions differ");
  Mat out(x.rows, y.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t k = 0; k < x.cols; ++k) {
      const double xv = x(i, k);
      if (xv == 0.0) continue;
      const double* yr = y.row(k);
      double* orow = out.row(i);
      for (std::size_t j = 0; j < y.cols; ++j) orow[j] += xv * yr[j];
    }
  }
  return out;
}

inline Mat transpose(const Mat& x) {
  Mat out(x.cols, x.rows);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) out(j, i) = x(i, j);
  return out;
}

inline double dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

inline double dot(const Vec& x, const Vec& y) {
  if (x.size() != y.size()) throw ArgumentError("dot: length mismatch");
  return dot(x.data(), y.data(), x.size());
}

inline double norm2(const Vec& x) { return std::sqrt(dot(x, x)); }

inline double squared_distance(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

/// Cholesky factorization of a symmetric positive definite matrix, in place
/// into the lower triangle. Throws NumericError when a pivot degenerates.
inline Mat cholesky(const Mat& spd) {
  if (spd.rows != spd.cols) throw ArgumentError("cholesky: matrix not square");
  const std::size_t n = spd.rows;
  Mat l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = spd(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (!(s > 0.0) || !std::isfinite(s))
          throw NumericError("cholesky: matrix not positive definite");
        l(i, i) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return l;
}

/// Solves A X = B for SPD A via Cholesky; B may have several columns.
inline Mat solve_spd(const Mat& a, const Mat& b) {
  if (a.rows != b.rows) throw ArgumentError("solve_spd: shape mismatch");
  const Mat l = cholesky(a);
  const std::size_t n = a.rows;
  Mat x = b;
  // forward substitution L y = b
  for (std::size_t c = 0; c < b.cols; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = x(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x(k, c);
      x(i, c) = s / l(i, i);
    }
    // back substitution L^T x = y
    for (std::size_t ii = n; ii-- > 0;) {
      double s = x(ii, c);
      for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x(k, c);
      x(ii, c) = s / l(ii, ii);
    }
  }
  return x;
}

struct SymmetricEigen {
  Vec values;   // descending
  Mat vectors;  // column j pairs with values[j]
};

/// Cyclic Jacobi eigendecomposition for symmetric matrices. Deterministic,
/// dependency-free; intended for the small matrices this library builds
/// (N up to a few hundred).
inline SymmetricEigen jacobi_eigen(Mat a, double tol = 1e-12, int max_sweeps = 100) {
  if (a.rows != a.cols) throw ArgumentError("jacobi_eigen: matrix not square");
  const std::size_t n = a.rows;
  Mat v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) scale = std::max(scale, std::abs(a(i, j)));
  if (scale == 0.0) scale = 1.0;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= tol * scale) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  SymmetricEigen out;
  out.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.values[i] = a(i, i);

  // sort eigenpairs by descending eigenvalue (stable in index for ties)
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    std::size_t best = i;
    for (std::size_t j = i + 1; j < n; ++j)
      if (out.values[order[j]] > out.values[order[best]]) best = j;
    std::swap(order[i], order[best]);
  }
  SymmetricEigen sorted;
  sorted.values.resize(n);
  sorted.vectors = Mat(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    sorted.values[j] = out.values[order[j]];
    for (std::size_t i = 0; i < n; ++i) sorted.vectors(i, j) = v(i, order[j]);
  }
  return sorted;
}

}  // namespace metarange
