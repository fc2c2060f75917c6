#pragma once

// Dense kernels the solvers are built from. Every operation has a
// reference implementation; the optimized backend is available when the
// project is configured with OpenBLAS.

#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "glsweep/error.hpp"
#include "glsweep/matrix.hpp"
#include "glsweep/detail/reference_kernels.hpp"
#ifdef GLSWEEP_HAVE_OPENBLAS
#include "glsweep/detail/blas_kernels.hpp"
#endif

namespace glsweep::kernels {

enum class Backend { reference, optimized };

constexpr bool optimized_built() noexcept {
#ifdef GLSWEEP_HAVE_OPENBLAS
  return true;
#else
  return false;
#endif
}

/// Built and passing its one-time comparison against the reference kernels.
inline bool optimized_available() {
#ifdef GLSWEEP_HAVE_OPENBLAS
  return blas::healthy();
#else
  return false;
#endif
}

inline Backend default_backend() {
  return optimized_available() ? Backend::optimized : Backend::reference;
}

/// For executables: if the optimized kernels fail their self-test and the
/// user has not chosen an OpenBLAS core type, restart the process once with
/// a conservative one. OpenBLAS reads the variable only at load time.
/// Returns normally when no restart is needed or possible.
inline void restart_with_working_kernels(char** argv) {
#ifdef GLSWEEP_HAVE_OPENBLAS
  if (blas::healthy() || std::getenv("OPENBLAS_CORETYPE") != nullptr) return;
  ::setenv("OPENBLAS_CORETYPE", __builtin_cpu_supports("avx512f") ? "SkylakeX" : "Haswell", 1);
  ::execv("/proc/self/exe", argv);
#else
  (void)argv;
#endif
}

inline std::string_view to_string(Backend b) noexcept {
  return b == Backend::reference ? "reference" : "optimized";
}

inline Backend parse_backend(std::string_view s) {
  if (s == "reference") return Backend::reference;
  if (s == "optimized") {
    if (!optimized_built()) throw ConfigError("kernel_backend=optimized requested but not built");
    if (!optimized_available()) {
      throw ConfigError("kernel_backend=optimized failed its self-test on this CPU; try setting OPENBLAS_CORETYPE");
    }
    return Backend::optimized;
  }
  throw ConfigError("unknown kernel_backend '" + std::string(s) + "' (expected reference | optimized)");
}

/// Lower-triangular Cholesky factor; the strict upper part is stored as zero.
struct LowerTriangular {
  Matrix l;
  std::size_t size() const noexcept { return l.rows(); }
};

/// Eigenvectors as columns of z, eigenvalues ascending.
struct EigenPair {
  Matrix z;
  std::vector<double> w;
};

namespace detail {
inline void require_square(ConstMatrixView a, const char* what) {
  if (a.rows != a.cols) throw StructuralError(std::string(what) + ": expected square matrix, got " + shape_string(a.rows, a.cols));
}
}  // namespace detail

// In place: the lower triangle of a becomes L with L L^T = a.
inline void chol_factor_inplace(Backend backend, MatrixView a) {
  detail::require_square(a, "chol_factor");
#ifdef GLSWEEP_HAVE_OPENBLAS
  if (backend == Backend::optimized) return blas::chol_factor(a);
#endif
  (void)backend;
  reference::chol_factor(a);
}

inline LowerTriangular chol_factor(Backend backend, ConstMatrixView a) {
  LowerTriangular out{Matrix::copy_of(a)};
  chol_factor_inplace(backend, out.l.view());
  return out;
}

// In place: b is overwritten with L^{-1} b. All right-hand sides go through one call.
inline void tri_solve_left_inplace(Backend backend, ConstMatrixView l, MatrixView b) {
  detail::require_square(l, "tri_solve_left");
  if (l.rows != b.rows) {
    throw StructuralError("tri_solve_left: factor is " + shape_string(l.rows, l.cols) + " but right-hand side is " +
                          shape_string(b.rows, b.cols));
  }
#ifdef GLSWEEP_HAVE_OPENBLAS
  if (backend == Backend::optimized) return blas::tri_solve_left(l, b);
#endif
  (void)backend;
  reference::tri_solve_left(l, b);
}

inline Matrix tri_solve_left(Backend backend, const LowerTriangular& l, ConstMatrixView b) {
  Matrix x = Matrix::copy_of(b);
  tri_solve_left_inplace(backend, l.l.view(), x.view());
  return x;
}

// In place: a is overwritten by its eigenvectors; eigenvalues returned ascending.
inline std::vector<double> sym_eig_inplace(Backend backend, MatrixView a) {
  detail::require_square(a, "sym_eig");
#ifdef GLSWEEP_HAVE_OPENBLAS
  if (backend == Backend::optimized) return blas::sym_eig(a);
#endif
  (void)backend;
  return reference::sym_eig(a);
}

inline EigenPair sym_eig(Backend backend, ConstMatrixView a) {
  EigenPair out{Matrix::copy_of(a), {}};
  out.w = sym_eig_inplace(backend, out.z.view());
  return out;
}

inline void cross_product_into(Backend backend, ConstMatrixView a, MatrixView out) {
  if (out.rows != a.cols || out.cols != a.cols) throw StructuralError("cross_product: output must be " + shape_string(a.cols, a.cols));
#ifdef GLSWEEP_HAVE_OPENBLAS
  if (backend == Backend::optimized) return blas::cross_product(a, out);
#endif
  (void)backend;
  reference::cross_product(a, out);
}

/// A^T A, symmetric.
inline Matrix cross_product(Backend backend, ConstMatrixView a) {
  Matrix out(a.cols, a.cols);
  cross_product_into(backend, a, out.view());
  return out;
}

inline void gemm_t_into(Backend backend, ConstMatrixView a, ConstMatrixView b, MatrixView out) {
  if (a.rows != b.rows || out.rows != a.cols || out.cols != b.cols) {
    throw StructuralError("gemm_t: incompatible shapes " + shape_string(a.rows, a.cols) + "^T * " +
                          shape_string(b.rows, b.cols) + " -> " + shape_string(out.rows, out.cols));
  }
#ifdef GLSWEEP_HAVE_OPENBLAS
  if (backend == Backend::optimized) return blas::gemm_t(a, b, out);
#endif
  (void)backend;
  reference::gemm_t(a, b, out);
}

/// A^T B.
inline Matrix gemm_t(Backend backend, ConstMatrixView a, ConstMatrixView b) {
  Matrix out(a.cols, b.cols);
  gemm_t_into(backend, a, b, out.view());
  return out;
}

inline void gemm_into(Backend backend, ConstMatrixView a, ConstMatrixView b, MatrixView out) {
  if (a.cols != b.rows || out.rows != a.rows || out.cols != b.cols) {
    throw StructuralError("gemm: incompatible shapes " + shape_string(a.rows, a.cols) + " * " +
                          shape_string(b.rows, b.cols) + " -> " + shape_string(out.rows, out.cols));
  }
#ifdef GLSWEEP_HAVE_OPENBLAS
  if (backend == Backend::optimized) return blas::gemm(a, b, out);
#endif
  (void)backend;
  reference::gemm(a, b, out);
}

/// A B.
inline Matrix gemm(Backend backend, ConstMatrixView a, ConstMatrixView b) {
  Matrix out(a.rows, b.cols);
  gemm_into(backend, a, b, out.view());
  return out;
}

// Restricts the optimized backend to `count` threads for the lifetime of the
// guard. Engines hold one around regions where they run their own workers.
class ScopedKernelThreads {
 public:
  explicit ScopedKernelThreads(int count) {
#ifdef GLSWEEP_HAVE_OPENBLAS
    previous_ = blas::threads();
    blas::set_threads(count);
#else
    (void)count;
#endif
  }
  ~ScopedKernelThreads() {
#ifdef GLSWEEP_HAVE_OPENBLAS
    blas::set_threads(previous_);
#endif
  }
  ScopedKernelThreads(const ScopedKernelThreads&) = delete;
  ScopedKernelThreads& operator=(const ScopedKernelThreads&) = delete;

 private:
  int previous_ = 1;
};

// ---------------------------------------------------------------------------
// Small SPD systems (w <= 64): the bordered normal equations of one SNP.
// Hand-coded for both backends; per-call library overhead would dominate.

inline constexpr std::size_t kMaxSmallDim = 64;

// A pivot below this fraction of the original diagonal entry is treated as
// a rank deficiency (collinear design columns).
inline constexpr double kSmallPivotTolerance = 1e-10;

struct SmallSolve {
  std::vector<double> solution;
  std::vector<double> inverse_diagonal;
};

/// Outcome of the non-throwing solver: failed_pivot is set when S is not
/// (numerically) positive definite.
struct SmallSolveStatus {
  std::optional<std::size_t> failed_pivot;
  bool ok() const noexcept { return !failed_pivot; }
};

// Reads the lower triangle of s. work must hold at least w*w doubles.
// Writes x = S^{-1} rhs and diag(S^{-1}).
inline SmallSolveStatus small_spd_solve_into(ConstMatrixView s, std::span<const double> rhs, std::span<double> x,
                                             std::span<double> inv_diag, std::span<double> work) noexcept {
  const std::size_t w = s.rows;
  double* l = work.data();  // column-major w x w, lower part used
  for (std::size_t j = 0; j < w; ++j)
    for (std::size_t i = j; i < w; ++i) l[i + j * w] = s(i, j);

  for (std::size_t j = 0; j < w; ++j) {
    const double original = l[j + j * w];
    double d = original;
    for (std::size_t k = 0; k < j; ++k) d -= l[j + k * w] * l[j + k * w];
    if (!(d > kSmallPivotTolerance * original) || !std::isfinite(d)) return {j};
    const double ljj = std::sqrt(d);
    l[j + j * w] = ljj;
    for (std::size_t i = j + 1; i < w; ++i) {
      double v = l[i + j * w];
      for (std::size_t k = 0; k < j; ++k) v -= l[i + k * w] * l[j + k * w];
      l[i + j * w] = v / ljj;
    }
  }

  // L L^T x = rhs
  for (std::size_t i = 0; i < w; ++i) {
    double v = rhs[i];
    for (std::size_t k = 0; k < i; ++k) v -= l[i + k * w] * x[k];
    x[i] = v / l[i + i * w];
  }
  for (std::size_t i = w; i-- > 0;) {
    double v = x[i];
    for (std::size_t k = i + 1; k < w; ++k) v -= l[k + i * w] * x[k];
    x[i] = v / l[i + i * w];
  }

  // diag(S^{-1}) = column sums of squares of L^{-1}; the inverse overwrites
  // the strict upper triangle of work (transposed), its diagonal goes to inv_diag.
  for (std::size_t i = 0; i < w; ++i) inv_diag[i] = 0.0;
  for (std::size_t c = 0; c < w; ++c) {
    // solve L u = e_c; u[r] stored at work[c + r*w] for r > c (upper part), u[c] kept local
    const double uc = 1.0 / l[c + c * w];
    inv_diag[c] += uc * uc;
    for (std::size_t r = c + 1; r < w; ++r) {
      double v = -l[r + c * w] * uc;
      for (std::size_t k = c + 1; k < r; ++k) v -= l[r + k * w] * work[c + k * w];
      v /= l[r + r * w];
      work[c + r * w] = v;
      inv_diag[c] += v * v;
    }
  }
  return {};
}

/// Solves S x = rhs for a small SPD S (lower triangle read).
inline SmallSolve small_spd_solve(ConstMatrixView s, std::span<const double> rhs) {
  const std::size_t w = s.rows;
  if (s.cols != w || rhs.size() != w) throw StructuralError("small_spd_solve: shape mismatch");
  if (w > kMaxSmallDim) throw StructuralError("small_spd_solve: dimension " + std::to_string(w) + " exceeds 64");
  SmallSolve out{std::vector<double>(w), std::vector<double>(w)};
  std::vector<double> work(w * w);
  const auto status = small_spd_solve_into(s, rhs, out.solution, out.inverse_diagonal, work);
  if (!status.ok()) {
    throw IndefiniteError("small_spd_solve: system not positive definite at pivot " + std::to_string(*status.failed_pivot),
                          *status.failed_pivot);
  }
  return out;
}

}  // namespace glsweep::kernels
