#pragma once

// Test-only helpers: seeded generators and oracles that share no code with
// the library's solvers.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "glsweep/glsweep.hpp"

namespace testing_support {

using glsweep::Matrix;

struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng); }
  std::size_t index(std::size_t bound) { return std::uniform_int_distribution<std::size_t>(0, bound - 1)(rng); }

  Matrix matrix(std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t i = 0; i < r; ++i) m(i, j) = normal();
    return m;
  }

  /// B B^T / n + shift I, well conditioned for moderate shift.
  Matrix spd(std::size_t n, double shift = 0.5) {
    Matrix b = matrix(n, n);
    Matrix a(n, n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += b(i, k) * b(j, k);
        a(i, j) = s / double(n) + (i == j ? shift : 0.0);
      }
    return a;
  }

  Matrix symmetric(std::size_t n) {
    Matrix a(n, n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = j; i < n; ++i) a(i, j) = a(j, i) = normal();
    return a;
  }

  /// A valid kinship: SPD with unit diagonal.
  glsweep::KinshipMatrix kinship(std::size_t n, double coupling = 0.3) {
    Matrix a = spd(n, 1.0);
    Matrix k(n, n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < n; ++i) {
        const double c = a(i, j) / std::sqrt(a(i, i) * a(j, j));
        k(i, j) = i == j ? 1.0 : coupling * c;
      }
    return {std::move(k)};
  }

  /// [1 | U(0,1) | N(0,1) ...] with c covariates.
  glsweep::CovariateBlock covariates(std::size_t n, std::size_t c) {
    Matrix x(n, c + 1);
    for (std::size_t i = 0; i < n; ++i) {
      x(i, 0) = 1.0;
      for (std::size_t j = 1; j <= c; ++j) x(i, j) = j == 1 ? uniform() : normal();
    }
    return {std::move(x)};
  }

  Matrix dosages(std::size_t n, std::size_t m) {
    Matrix g(n, m);
    for (std::size_t j = 0; j < m; ++j) {
      const double f = uniform(0.1, 0.5);
      for (std::size_t i = 0; i < n; ++i) g(i, j) = double((uniform() < f) + (uniform() < f));
    }
    return g;
  }
};

/// Plain triple loop.
inline Matrix multiply(const Matrix& a, const Matrix& b, bool transpose_a = false) {
  const std::size_t r = transpose_a ? a.cols() : a.rows();
  const std::size_t inner = transpose_a ? a.rows() : a.cols();
  Matrix c(r, b.cols());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < inner; ++k) s += (transpose_a ? a(k, i) : a(i, k)) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t j = 0; j < a.cols(); ++j)
    for (std::size_t i = 0; i < a.rows(); ++i) t(j, i) = a(i, j);
  return t;
}

/// Gauss-Jordan with partial pivoting.
inline Matrix inverse(const Matrix& a) {
  const std::size_t n = a.rows();
  Matrix w = Matrix::copy_of(a.view());
  Matrix inv = Matrix::identity(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(w(r, c)) > std::abs(w(p, c))) p = r;
    for (std::size_t k = 0; k < n; ++k) {
      std::swap(w(c, k), w(p, k));
      std::swap(inv(c, k), inv(p, k));
    }
    const double d = w(c, c);
    for (std::size_t k = 0; k < n; ++k) {
      w(c, k) /= d;
      inv(c, k) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = w(r, c);
      if (f == 0.0) continue;
      for (std::size_t k = 0; k < n; ++k) {
        w(r, k) -= f * w(c, k);
        inv(r, k) -= f * inv(c, k);
      }
    }
  }
  return inv;
}

struct GlsOracle {
  std::vector<double> beta, se;
};

/// GLS by explicit inversion of M and of X^T M^{-1} X.
inline GlsOracle gls_by_inversion(const Matrix& phi, double sigma2, double h2, const Matrix& x, const std::vector<double>& y) {
  const std::size_t n = phi.rows();
  Matrix m(n, n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i) m(i, j) = sigma2 * (h2 * phi(i, j) + (i == j ? 1.0 - h2 : 0.0));
  const Matrix minv = inverse(m);
  const Matrix mx = multiply(minv, x);
  const Matrix a = multiply(x, mx, true);
  Matrix ycol(n, 1);
  for (std::size_t i = 0; i < n; ++i) ycol(i, 0) = y[i];
  const Matrix b = multiply(mx, ycol, true);
  const Matrix ainv = inverse(a);
  GlsOracle out;
  for (std::size_t i = 0; i < x.cols(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < x.cols(); ++k) s += ainv(i, k) * b(k, 0);
    out.beta.push_back(s);
    out.se.push_back(std::sqrt(sigma2 * ainv(i, i)));
  }
  return out;
}

inline double rel_diff(double a, double b) {
  if (a == b) return 0.0;
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

inline double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, rel_diff(a[i], b[i]));
  return d;
}

struct Comparison {
  double beta = 0.0, se = 0.0;
  std::size_t status_mismatches = 0;
};

/// Matches results by (trait, snp); both inputs must cover the same problems.
inline Comparison compare(std::vector<glsweep::GlsResult> a, std::vector<glsweep::GlsResult> b) {
  auto key = [](const glsweep::GlsResult& r) { return std::pair(r.trait_index, r.snp_index); };
  auto by_key = [&](const auto& l, const auto& r) { return key(l) < key(r); };
  std::sort(a.begin(), a.end(), by_key);
  std::sort(b.begin(), b.end(), by_key);
  Comparison c;
  if (a.size() != b.size()) {
    c.status_mismatches = std::max(a.size(), b.size());
    return c;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (key(a[i]) != key(b[i]) || a[i].status != b[i].status) {
      ++c.status_mismatches;
      continue;
    }
    if (!a[i].ok()) continue;
    c.beta = std::max(c.beta, max_rel_diff(a[i].beta, b[i].beta));
    c.se = std::max(c.se, max_rel_diff(a[i].se, b[i].se));
  }
  return c;
}

/// A fresh directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("glsweep-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Validated in-memory dataset plus its genotype matrix.
struct Problem {
  glsweep::Dataset ds;
  Matrix genotypes;
};

inline Problem make_problem(std::uint64_t seed, std::size_t n, std::size_t c, std::size_t m, std::size_t t) {
  Gen g(seed);
  auto phi = g.kinship(n);
  auto xl = g.covariates(n, c);
  Matrix geno = g.dosages(n, m);
  Matrix y(n, t);
  std::vector<glsweep::TraitParams> params;
  for (std::size_t j = 0; j < t; ++j) {
    params.push_back({g.uniform(0.5, 2.0), g.uniform(0.1, 0.9)});
    for (std::size_t i = 0; i < n; ++i) y(i, j) = 0.3 * xl.xl(i, c > 0 ? 1 : 0) + 0.2 * geno(i, j % m) + g.normal();
  }
  glsweep::Dimensions dims{n, m, t, c};
  return {glsweep::make_dataset(dims, std::move(phi), std::move(xl), {std::move(y)}, std::move(params)), std::move(geno)};
}

}  // namespace testing_support
