#pragma once

// Unblocked textbook kernels. They are the correctness baseline: every
// optimized kernel is checked against these in the test suite.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "glsweep/error.hpp"
#include "glsweep/matrix.hpp"

namespace glsweep::kernels::reference {

// Outer-product Cholesky on the lower triangle; the strict upper part is zeroed.
inline void chol_factor(MatrixView a) {
  const std::size_t n = a.rows;
  for (std::size_t j = 0; j < n; ++j) {
    const double d = a(j, j);
    if (!(d > 0.0)) {
      throw IndefiniteError("cholesky: non-positive pivot " + std::to_string(d) + " at index " + std::to_string(j), j);
    }
    const double ljj = std::sqrt(d);
    a(j, j) = ljj;
    double* cj = a.data + j * a.ld;
    for (std::size_t i = j + 1; i < n; ++i) cj[i] /= ljj;
    for (std::size_t k = j + 1; k < n; ++k) {
      const double ljk = cj[k];
      double* ck = a.data + k * a.ld;
      for (std::size_t i = k; i < n; ++i) ck[i] -= cj[i] * ljk;
    }
  }
  for (std::size_t j = 1; j < n; ++j)
    for (std::size_t i = 0; i < j; ++i) a(i, j) = 0.0;
}

// Forward substitution L X = B, column by column, B overwritten.
inline void tri_solve_left(ConstMatrixView l, MatrixView b) {
  const std::size_t n = l.rows;
  for (std::size_t k = 0; k < n; ++k) {
    if (l(k, k) == 0.0) throw SingularError("triangular solve: zero diagonal at index " + std::to_string(k), k);
  }
  for (std::size_t c = 0; c < b.cols; ++c) {
    double* x = b.data + c * b.ld;
    for (std::size_t k = 0; k < n; ++k) {
      const double xk = x[k] / l(k, k);
      x[k] = xk;
      const double* lk = l.data + k * l.ld;
      for (std::size_t i = k + 1; i < n; ++i) x[i] -= xk * lk[i];
    }
  }
}

inline void cross_product(ConstMatrixView a, MatrixView out) {
  const std::size_t q = a.cols;
  for (std::size_t j = 0; j < q; ++j) {
    const double* aj = a.data + j * a.ld;
    for (std::size_t i = j; i < q; ++i) {
      const double* ai = a.data + i * a.ld;
      double s = 0.0;
      for (std::size_t r = 0; r < a.rows; ++r) s += ai[r] * aj[r];
      out(i, j) = s;
      out(j, i) = s;
    }
  }
}

// out = a^T b
inline void gemm_t(ConstMatrixView a, ConstMatrixView b, MatrixView out) {
  for (std::size_t j = 0; j < b.cols; ++j) {
    const double* bj = b.data + j * b.ld;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double* ai = a.data + i * a.ld;
      double s = 0.0;
      for (std::size_t r = 0; r < a.rows; ++r) s += ai[r] * bj[r];
      out(i, j) = s;
    }
  }
}

// out = a b
inline void gemm(ConstMatrixView a, ConstMatrixView b, MatrixView out) {
  for (std::size_t j = 0; j < b.cols; ++j) {
    double* oj = out.data + j * out.ld;
    std::fill_n(oj, out.rows, 0.0);
    for (std::size_t r = 0; r < a.cols; ++r) {
      const double brj = b(r, j);
      const double* ar = a.data + r * a.ld;
      for (std::size_t i = 0; i < a.rows; ++i) oj[i] += ar[i] * brj;
    }
  }
}

namespace detail {

// Householder reduction to tridiagonal form, accumulating the transform in v.
// On entry v holds the symmetric matrix (lower triangle is read).
inline void tridiagonalize(MatrixView v, std::vector<double>& d, std::vector<double>& e) {
  const std::size_t n = v.rows;
  for (std::size_t j = 0; j < n; ++j) d[j] = v(n - 1, j);

  for (std::size_t i = n - 1; i > 0; --i) {
    double scale = 0.0;
    double h = 0.0;
    for (std::size_t k = 0; k < i; ++k) scale += std::abs(d[k]);
    if (scale == 0.0) {
      e[i] = d[i - 1];
      for (std::size_t j = 0; j < i; ++j) {
        d[j] = v(i - 1, j);
        v(i, j) = 0.0;
        v(j, i) = 0.0;
      }
    } else {
      for (std::size_t k = 0; k < i; ++k) {
        d[k] /= scale;
        h += d[k] * d[k];
      }
      double f = d[i - 1];
      double g = std::sqrt(h);
      if (f > 0) g = -g;
      e[i] = scale * g;
      h -= f * g;
      d[i - 1] = f - g;
      for (std::size_t j = 0; j < i; ++j) e[j] = 0.0;

      for (std::size_t j = 0; j < i; ++j) {
        f = d[j];
        v(j, i) = f;
        g = e[j] + v(j, j) * f;
        for (std::size_t k = j + 1; k <= i - 1; ++k) {
          g += v(k, j) * d[k];
          e[k] += v(k, j) * f;
        }
        e[j] = g;
      }
      f = 0.0;
      for (std::size_t j = 0; j < i; ++j) {
        e[j] /= h;
        f += e[j] * d[j];
      }
      const double hh = f / (h + h);
      for (std::size_t j = 0; j < i; ++j) e[j] -= hh * d[j];
      for (std::size_t j = 0; j < i; ++j) {
        f = d[j];
        g = e[j];
        for (std::size_t k = j; k <= i - 1; ++k) v(k, j) -= (f * e[k] + g * d[k]);
        d[j] = v(i - 1, j);
        v(i, j) = 0.0;
      }
    }
    d[i] = h;
  }

  for (std::size_t i = 0; i + 1 < n; ++i) {
    v(n - 1, i) = v(i, i);
    v(i, i) = 1.0;
    const double h = d[i + 1];
    if (h != 0.0) {
      for (std::size_t k = 0; k <= i; ++k) d[k] = v(k, i + 1) / h;
      for (std::size_t j = 0; j <= i; ++j) {
        double g = 0.0;
        for (std::size_t k = 0; k <= i; ++k) g += v(k, i + 1) * v(k, j);
        for (std::size_t k = 0; k <= i; ++k) v(k, j) -= g * d[k];
      }
    }
    for (std::size_t k = 0; k <= i; ++k) v(k, i + 1) = 0.0;
  }
  for (std::size_t j = 0; j < n; ++j) {
    d[j] = v(n - 1, j);
    v(n - 1, j) = 0.0;
  }
  v(n - 1, n - 1) = 1.0;
  e[0] = 0.0;
}

// Implicit QL iterations on the tridiagonal (d, e), rotating the columns of v.
inline void tridiagonal_ql(MatrixView v, std::vector<double>& d, std::vector<double>& e) {
  const std::size_t n = v.rows;
  for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;

  const std::size_t max_iterations = 30 * n + 30;
  double f = 0.0;
  double tst1 = 0.0;
  const double eps = std::numeric_limits<double>::epsilon();
  for (std::size_t l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
    std::size_t m = l;
    while (m < n) {
      if (std::abs(e[m]) <= eps * tst1) break;
      ++m;
    }
    if (m == n) m = n - 1;

    if (m > l) {
      std::size_t iter = 0;
      do {
        if (++iter > max_iterations) {
          throw NumericError("eigensolver: QL iteration did not converge for eigenvalue " + std::to_string(l) +
                                 " after " + std::to_string(max_iterations) + " iterations (residual " +
                                 std::to_string(std::abs(e[l])) + ")",
                             l);
        }
        double g = d[l];
        double p = (d[l + 1] - g) / (2.0 * e[l]);
        double r = std::hypot(p, 1.0);
        if (p < 0) r = -r;
        d[l] = e[l] / (p + r);
        d[l + 1] = e[l] * (p + r);
        const double dl1 = d[l + 1];
        double h = g - d[l];
        for (std::size_t i = l + 2; i < n; ++i) d[i] -= h;
        f += h;

        p = d[m];
        double c = 1.0, c2 = c, c3 = c;
        const double el1 = e[l + 1];
        double s = 0.0, s2 = 0.0;
        for (std::size_t ii = m; ii-- > l;) {
          c3 = c2;
          c2 = c;
          s2 = s;
          g = c * e[ii];
          h = c * p;
          r = std::hypot(p, e[ii]);
          e[ii + 1] = s * r;
          s = e[ii] / r;
          c = p / r;
          p = c * d[ii] - s * g;
          d[ii + 1] = h + s * (c * g + s * d[ii]);
          double* vi = v.data + ii * v.ld;
          double* vi1 = v.data + (ii + 1) * v.ld;
          for (std::size_t k = 0; k < n; ++k) {
            h = vi1[k];
            vi1[k] = s * vi[k] + c * h;
            vi[k] = c * vi[k] - s * h;
          }
        }
        p = -s * s2 * c3 * el1 * e[l] / dl1;
        e[l] = s * p;
        d[l] = c * p;
      } while (std::abs(e[l]) > eps * tst1);
    }
    d[l] += f;
    e[l] = 0.0;
  }
}

}  // namespace detail

// Symmetric eigendecomposition; a is overwritten with eigenvectors (columns),
// eigenvalues are returned in ascending order.
inline std::vector<double> sym_eig(MatrixView a) {
  const std::size_t n = a.rows;
  std::vector<double> d(n), e(n);
  if (n == 0) return d;
  if (n == 1) {
    d[0] = a(0, 0);
    a(0, 0) = 1.0;
    return d;
  }
  detail::tridiagonalize(a, d, e);
  detail::tridiagonal_ql(a, d, e);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return d[x] < d[y]; });
  bool sorted = true;
  for (std::size_t i = 0; i < n; ++i) sorted = sorted && order[i] == i;
  if (!sorted) {
    Matrix tmp = Matrix::copy_of(a);
    std::vector<double> w(n);
    for (std::size_t j = 0; j < n; ++j) {
      w[j] = d[order[j]];
      std::copy_n(tmp.data() + order[j] * n, n, a.data + j * a.ld);
    }
    d.swap(w);
  }
  return d;
}

}  // namespace glsweep::kernels::reference
