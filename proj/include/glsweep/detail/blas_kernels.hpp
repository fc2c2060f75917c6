#pragma once

// Optimized kernels on top of a BLAS/LAPACK implementation (OpenBLAS).
// Only compiled when GLSWEEP_HAVE_OPENBLAS is defined.

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "glsweep/error.hpp"
#include "glsweep/matrix.hpp"
#include "glsweep/detail/reference_kernels.hpp"

extern "C" {
void dpotrf_(const char* uplo, const int* n, double* a, const int* lda, int* info);
void dsyev_(const char* jobz, const char* uplo, const int* n, double* a, const int* lda, double* w, double* work,
            const int* lwork, int* info);
void openblas_set_num_threads(int num_threads);
int openblas_get_num_threads(void);
}

namespace glsweep::kernels::blas {

inline int to_int(std::size_t v) { return static_cast<int>(v); }

inline void chol_factor(MatrixView a) {
  const int n = to_int(a.rows);
  const int lda = to_int(std::max<std::size_t>(a.ld, 1));
  int info = 0;
  dpotrf_("L", &n, a.data, &lda, &info);
  if (info > 0) {
    const auto pivot = static_cast<std::size_t>(info - 1);
    throw IndefiniteError("cholesky: non-positive pivot at index " + std::to_string(pivot), pivot);
  }
  if (info < 0) throw NumericError("dpotrf: illegal argument " + std::to_string(-info), 0);
  for (std::size_t j = 1; j < a.rows; ++j)
    for (std::size_t i = 0; i < j; ++i) a(i, j) = 0.0;
}

inline void tri_solve_left(ConstMatrixView l, MatrixView b) {
  for (std::size_t k = 0; k < l.rows; ++k) {
    if (l(k, k) == 0.0) throw SingularError("triangular solve: zero diagonal at index " + std::to_string(k), k);
  }
  if (b.cols == 0 || b.rows == 0) return;
  cblas_dtrsm(CblasColMajor, CblasLeft, CblasLower, CblasNoTrans, CblasNonUnit, to_int(b.rows), to_int(b.cols), 1.0,
              l.data, to_int(l.ld), b.data, to_int(b.ld));
}

inline void cross_product(ConstMatrixView a, MatrixView out) {
  const std::size_t q = a.cols;
  if (q == 0) return;
  if (a.rows == 0) {
    for (std::size_t j = 0; j < q; ++j)
      for (std::size_t i = 0; i < q; ++i) out(i, j) = 0.0;
    return;
  }
  cblas_dsyrk(CblasColMajor, CblasLower, CblasTrans, to_int(q), to_int(a.rows), 1.0, a.data, to_int(a.ld), 0.0,
              out.data, to_int(out.ld));
  for (std::size_t j = 1; j < q; ++j)
    for (std::size_t i = 0; i < j; ++i) out(i, j) = out(j, i);
}

inline void gemm_t(ConstMatrixView a, ConstMatrixView b, MatrixView out) {
  if (out.rows == 0 || out.cols == 0) return;
  cblas_dgemm(CblasColMajor, CblasTrans, CblasNoTrans, to_int(a.cols), to_int(b.cols), to_int(a.rows), 1.0, a.data,
              to_int(a.ld), b.data, to_int(b.ld), 0.0, out.data, to_int(out.ld));
}

inline void gemm(ConstMatrixView a, ConstMatrixView b, MatrixView out) {
  if (out.rows == 0 || out.cols == 0) return;
  cblas_dgemm(CblasColMajor, CblasNoTrans, CblasNoTrans, to_int(a.rows), to_int(b.cols), to_int(a.cols), 1.0, a.data,
              to_int(a.ld), b.data, to_int(b.ld), 0.0, out.data, to_int(out.ld));
}

// QR-iteration driver: the eigenvectors overwrite a, workspace is O(n).
inline std::vector<double> sym_eig(MatrixView a) {
  const int n = to_int(a.rows);
  const int lda = to_int(std::max<std::size_t>(a.ld, 1));
  std::vector<double> w(a.rows);
  if (n == 0) return w;
  int info = 0;
  int lwork = -1;
  double query = 0.0;
  dsyev_("V", "L", &n, a.data, &lda, w.data(), &query, &lwork, &info);
  lwork = std::max(static_cast<int>(query), 3 * n);
  Buffer work(static_cast<std::size_t>(lwork));
  dsyev_("V", "L", &n, a.data, &lda, w.data(), work.data(), &lwork, &info);
  if (info > 0) {
    throw NumericError("eigensolver: dsyev failed to converge; " + std::to_string(info) +
                           " off-diagonal elements did not reach zero",
                       static_cast<std::size_t>(info));
  }
  if (info < 0) throw NumericError("dsyev: illegal argument " + std::to_string(-info), 0);
  return w;
}

inline void set_threads(int count) { openblas_set_num_threads(count); }
inline int threads() { return openblas_get_num_threads(); }

// Some OpenBLAS builds pick kernels for the detected CPU that return wrong
// results (seen with the Cooperlake DGEMM/DTRSM kernels of 0.3.20 on newer
// Xeons). Every optimized kernel is compared against the reference once,
// at sizes that cross the library's blocking thresholds.
inline bool self_test() {
  std::uint64_t state = 0x2545f4914f6cdd1dULL;
  auto next = [&] {
    state = state * 6364136223846793005ULL + 1442695040888963407ULL;
    return static_cast<double>(state >> 11) * 0x1.0p-53 - 0.5;
  };
  auto close = [](ConstMatrixView a, ConstMatrixView b, double tol) {
    const double scale = std::max(1.0, max_abs(a));
    for (std::size_t j = 0; j < a.cols; ++j)
      for (std::size_t i = 0; i < a.rows; ++i)
        if (!(std::abs(a(i, j) - b(i, j)) <= tol * scale)) return false;
    return true;
  };
  for (std::size_t n : {40, 150, 320}) {
    Matrix a(n, n), b(n, n);
    for (std::size_t i = 0; i < n * n; ++i) a.data()[i] = next();
    for (std::size_t i = 0; i < n * n; ++i) b.data()[i] = next();
    Matrix c1(n, n), c2(n, n);
    gemm(a.view(), b.view(), c1.view());
    reference::gemm(a.view(), b.view(), c2.view());
    if (!close(c1.view(), c2.view(), 1e-12 * double(n))) return false;
    gemm_t(a.view(), b.view(), c1.view());
    reference::gemm_t(a.view(), b.view(), c2.view());
    if (!close(c1.view(), c2.view(), 1e-12 * double(n))) return false;
    cross_product(a.view(), c1.view());
    reference::cross_product(a.view(), c2.view());
    if (!close(c1.view(), c2.view(), 1e-12 * double(n))) return false;

    // SPD test matrix: A^T A + n I.
    for (std::size_t i = 0; i < n; ++i) c2(i, i) += double(n);
    Matrix l1 = Matrix::copy_of(c2.view()), l2 = Matrix::copy_of(c2.view());
    try {
      chol_factor(l1.view());
    } catch (const Error&) {
      return false;
    }
    reference::chol_factor(l2.view());
    if (!close(l1.view(), l2.view(), 1e-10)) return false;
    Matrix x1 = Matrix::copy_of(b.view()), x2 = Matrix::copy_of(b.view());
    tri_solve_left(l2.view(), x1.view());
    reference::tri_solve_left(l2.view(), x2.view());
    if (!close(x1.view(), x2.view(), 1e-10)) return false;
  }
  Matrix s(64, 64);
  for (std::size_t j = 0; j < 64; ++j)
    for (std::size_t i = j; i < 64; ++i) s(i, j) = s(j, i) = next();
  Matrix z1 = Matrix::copy_of(s.view()), z2 = Matrix::copy_of(s.view());
  try {
    const auto w1 = sym_eig(z1.view());
    const auto w2 = reference::sym_eig(z2.view());
    for (std::size_t i = 0; i < w1.size(); ++i)
      if (!(std::abs(w1[i] - w2[i]) <= 1e-10)) return false;
  } catch (const Error&) {
    return false;
  }
  return true;
}

/// Result of self_test(), computed on first use.
inline bool healthy() {
  static const bool ok = self_test();
  return ok;
}

}  // namespace glsweep::kernels::blas
