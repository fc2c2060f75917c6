#pragma once

// Domain types of the variance-components association model
//
//   y_j = X_i beta_ij + r_j,   r_j ~ N(0, M_j),
//   M_j = sigma2_j * (h2_j * Phi + (1 - h2_j) * I),
//
// with X_i = [1 | covariates | g_i] and the closed-form covariance
// assembly shared by all solvers.

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "glsweep/error.hpp"
#include "glsweep/kernels.hpp"
#include "glsweep/matrix.hpp"

namespace glsweep {

struct Dimensions {
  std::size_t n = 0;  // individuals
  std::size_t m = 0;  // markers
  std::size_t t = 0;  // traits
  std::size_t c = 0;  // fixed covariates (excluding the intercept)

  /// Design width: intercept + covariates + one genotype column.
  std::size_t width() const noexcept { return c + 2; }
  std::size_t fixed_width() const noexcept { return c + 1; }
};

struct KinshipMatrix {
  Matrix phi;
  std::size_t size() const noexcept { return phi.rows(); }
};

struct TraitParams {
  double sigma2 = 1.0;
  double h2 = 0.0;
};

/// X_L = [1 | L]; column 0 is the intercept.
struct CovariateBlock {
  Matrix xl;
  std::size_t covariate_count() const noexcept { return xl.cols() == 0 ? 0 : xl.cols() - 1; }
};

/// A contiguous run of genotype columns, starting at global SNP index first_snp_index.
struct GenotypeBlock {
  MatrixView xr;
  std::size_t first_snp_index = 0;
  std::size_t width() const noexcept { return xr.cols; }
};

struct PhenotypeMatrix {
  Matrix y;
  std::size_t traits() const noexcept { return y.cols(); }
};

enum class ResultStatus : std::uint32_t {
  ok = 0,
  collinear = 1,      // bordered normal equations not positive definite
  non_finite = 2,     // NaN/Inf in the estimate
  trait_failure = 3,  // the trait's covariance could not be factored
};

inline const char* to_string(ResultStatus s) noexcept {
  switch (s) {
    case ResultStatus::ok: return "ok";
    case ResultStatus::collinear: return "collinear";
    case ResultStatus::non_finite: return "non_finite";
    case ResultStatus::trait_failure: return "trait_failure";
  }
  return "unknown";
}

/// Estimates for one (SNP, trait) problem. The last coefficient is the genotype effect.
struct GlsResult {
  std::uint64_t snp_index = 0;
  std::uint32_t trait_index = 0;
  ResultStatus status = ResultStatus::ok;
  std::vector<double> beta;
  std::vector<double> se;  // standard errors, sqrt(diag Var(beta))

  bool ok() const noexcept { return status == ResultStatus::ok; }

  static GlsResult failure(std::uint64_t snp, std::uint32_t trait, ResultStatus status, std::size_t w) {
    return {snp, trait, status, std::vector<double>(w, 0.0), std::vector<double>(w, 0.0)};
  }
};

inline void check_trait_params(const TraitParams& p) {
  if (!(p.sigma2 > 0.0) || !std::isfinite(p.sigma2)) throw ConfigError("trait sigma2 must be positive and finite");
  if (!(p.h2 >= 0.0 && p.h2 <= 1.0)) throw ConfigError("trait h2 must lie in [0, 1]");
}

/// M = sigma2 * (h2 * phi + (1 - h2) * I), written into out (n x n).
inline void assemble_covariance_into(const KinshipMatrix& phi, const TraitParams& params, MatrixView out) {
  const std::size_t n = phi.size();
  if (phi.phi.cols() != n) throw StructuralError("kinship must be square, got " + shape_string(phi.phi.rows(), phi.phi.cols()));
  if (out.rows != n || out.cols != n) throw StructuralError("covariance output must be " + shape_string(n, n));
  const double a = params.sigma2 * params.h2;
  const double b = params.sigma2 * (1.0 - params.h2);
  for (std::size_t j = 0; j < n; ++j) {
    out(j, j) = a * phi.phi(j, j) + b;
    for (std::size_t i = j + 1; i < n; ++i) {
      const double v = a * phi.phi(i, j);
      out(i, j) = v;
      out(j, i) = v;
    }
  }
}

/// Lower triangle of M only, column by column; the strict upper part of out is untouched.
inline void assemble_covariance_lower_into(const KinshipMatrix& phi, const TraitParams& params, MatrixView out) {
  const std::size_t n = phi.size();
  if (phi.phi.cols() != n) throw StructuralError("kinship must be square, got " + shape_string(phi.phi.rows(), phi.phi.cols()));
  if (out.rows != n || out.cols != n) throw StructuralError("covariance output must be " + shape_string(n, n));
  const double a = params.sigma2 * params.h2;
  const double b = params.sigma2 * (1.0 - params.h2);
  for (std::size_t j = 0; j < n; ++j) {
    const double* src = phi.phi.data() + j * n;
    double* dst = out.data + j * out.ld;
    dst[j] = a * src[j] + b;
    for (std::size_t i = j + 1; i < n; ++i) dst[i] = a * src[i];
  }
}

inline Matrix assemble_covariance(const KinshipMatrix& phi, const TraitParams& params) {
  Matrix m(phi.size(), phi.size());
  assemble_covariance_into(phi, params, m.view());
  return m;
}

struct SpectralOptions {
  // Minimum admissible sigma2 * (h2 * w_i + 1 - h2).
  double epsilon = 1e-10;
  // Replace offending values with epsilon instead of failing.
  bool clamp = false;
};

/// D_i = 1 / (sigma2 * (h2 * w_i + 1 - h2)) for the kinship eigenvalues w.
inline std::vector<double> assemble_spectral_weights(std::span<const double> eigvals, const TraitParams& params,
                                                     const SpectralOptions& options = {}) {
  std::vector<double> d(eigvals.size());
  for (std::size_t i = 0; i < eigvals.size(); ++i) {
    double v = params.sigma2 * (params.h2 * eigvals[i] + (1.0 - params.h2));
    if (!(v > options.epsilon)) {
      if (!options.clamp) {
        std::ostringstream os;
        os << "trait covariance is not positive definite: eigenvalue " << i << " (" << eigvals[i]
           << ") gives spectral variance " << v << " <= " << options.epsilon;
        throw IndefiniteError(os.str(), i);
      }
      v = options.epsilon;
    }
    d[i] = 1.0 / v;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  std::string field;
  std::string message;
  std::optional<std::size_t> row;
  std::optional<std::size_t> col;
  std::optional<std::size_t> trait;

  std::string to_string() const {
    std::string s = field + ": " + message;
    if (row) s += " [row " + std::to_string(*row) + "]";
    if (col) s += " [col " + std::to_string(*col) + "]";
    if (trait) s += " [trait " + std::to_string(*trait) + "]";
    return s;
  }
};

/// Everything except the streamed genotypes, checked against the type invariants.
struct Dataset {
  Dimensions dims;
  KinshipMatrix kinship;
  CovariateBlock covariates;
  PhenotypeMatrix phenotypes;
  std::vector<TraitParams> params;

  std::span<const double> phenotype(std::size_t trait) const { return phenotypes.y.col(trait); }
};

namespace detail {

inline void check_full_rank(const Matrix& xl, std::vector<Violation>& out) {
  const std::size_t q = xl.cols();
  if (q == 0 || q > kernels::kMaxSmallDim) return;
  Matrix s = kernels::cross_product(kernels::Backend::reference, xl.view());
  std::vector<double> rhs(q, 0.0), x(q), inv(q), work(q * q);
  const auto status = kernels::small_spd_solve_into(s.view(), rhs, x, inv, work);
  if (!status.ok()) {
    out.push_back({"covariates", "design X_L is rank deficient", std::nullopt, *status.failed_pivot, std::nullopt});
  }
}

}  // namespace detail

/// Returns every invariant violation; an empty list means the dataset is usable.
inline std::vector<Violation> validate_dataset(const Dimensions& dims, const KinshipMatrix& phi, const CovariateBlock& xl,
                                               const PhenotypeMatrix& y, std::span<const TraitParams> params) {
  std::vector<Violation> v;
  const std::size_t n = dims.n;
  if (n < dims.width()) v.push_back({"dims", "n=" + std::to_string(n) + " is smaller than design width w=" + std::to_string(dims.width())});
  if (dims.m < 1) v.push_back({"dims", "m must be at least 1"});
  if (dims.t < 1) v.push_back({"dims", "t must be at least 1"});

  if (phi.phi.rows() != n || phi.phi.cols() != n) {
    v.push_back({"kinship", "expected " + shape_string(n, n) + ", got " + shape_string(phi.phi.rows(), phi.phi.cols())});
  } else {
    for (std::size_t j = 0; j < n; ++j) {
      const double d = phi.phi(j, j);
      if (!std::isfinite(d) || d < 0.9 || d > 1.1) {
        v.push_back({"kinship", "diagonal entry " + std::to_string(d) + " outside [0.9, 1.1]", j, j});
      }
      for (std::size_t i = j + 1; i < n; ++i) {
        const double a = phi.phi(i, j);
        const double b = phi.phi(j, i);
        if (!std::isfinite(a) || !std::isfinite(b) || std::abs(a - b) > 1e-12) {
          v.push_back({"kinship", "not symmetric", i, j});
        } else if (a < -1.0 || a > 1.0) {
          v.push_back({"kinship", "off-diagonal entry " + std::to_string(a) + " outside [-1, 1]", i, j});
        }
      }
    }
  }

  if (xl.xl.rows() != n || xl.xl.cols() != dims.fixed_width()) {
    v.push_back({"covariates", "expected " + shape_string(n, dims.fixed_width()) + ", got " +
                                   shape_string(xl.xl.rows(), xl.xl.cols())});
  } else {
    bool finite = true;
    for (std::size_t i = 0; i < n; ++i) {
      if (xl.xl(i, 0) != 1.0) v.push_back({"covariates", "intercept entry is not 1.0", i, 0});
      for (std::size_t j = 0; j < xl.xl.cols(); ++j) {
        if (!std::isfinite(xl.xl(i, j))) {
          v.push_back({"covariates", "non-finite entry", i, j});
          finite = false;
        }
      }
    }
    if (finite) detail::check_full_rank(xl.xl, v);
  }

  if (y.y.rows() != n || y.y.cols() != dims.t) {
    v.push_back({"phenotypes", "expected " + shape_string(n, dims.t) + ", got " + shape_string(y.y.rows(), y.y.cols())});
  } else {
    for (std::size_t j = 0; j < y.y.cols(); ++j)
      for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(y.y(i, j))) v.push_back({"phenotypes", "non-finite entry", i, std::nullopt, j});
  }

  if (params.size() != dims.t) {
    v.push_back({"params", "expected " + std::to_string(dims.t) + " trait parameter sets, got " + std::to_string(params.size())});
  }
  for (std::size_t j = 0; j < params.size(); ++j) {
    if (!(params[j].sigma2 > 0.0) || !std::isfinite(params[j].sigma2)) {
      v.push_back({"params", "sigma2 must be positive, got " + std::to_string(params[j].sigma2), std::nullopt, std::nullopt, j});
    }
    if (!(params[j].h2 >= 0.0 && params[j].h2 <= 1.0)) {
      v.push_back({"params", "h2 must lie in [0, 1], got " + std::to_string(params[j].h2), std::nullopt, std::nullopt, j});
    }
  }
  return v;
}

/// Validates and bundles; throws ConfigError listing every violation.
inline Dataset make_dataset(Dimensions dims, KinshipMatrix phi, CovariateBlock xl, PhenotypeMatrix y,
                            std::vector<TraitParams> params) {
  const auto violations = validate_dataset(dims, phi, xl, y, params);
  if (!violations.empty()) {
    std::string msg = "dataset failed validation:";
    const std::size_t shown = std::min<std::size_t>(violations.size(), 10);
    for (std::size_t i = 0; i < shown; ++i) msg += "\n  " + violations[i].to_string();
    if (violations.size() > shown) msg += "\n  ... " + std::to_string(violations.size() - shown) + " more";
    throw ConfigError(msg);
  }
  return Dataset{dims, std::move(phi), std::move(xl), std::move(y), std::move(params)};
}

/// X_i = [X_L | g] as a dense n x w matrix.
inline Matrix design_matrix(const CovariateBlock& xl, std::span<const double> genotype) {
  const std::size_t n = xl.xl.rows();
  const std::size_t q = xl.xl.cols();
  if (genotype.size() != n) throw StructuralError("design_matrix: genotype length mismatch");
  Matrix x(n, q + 1);
  copy_into(xl.xl.view(), x.columns(0, q));
  std::copy(genotype.begin(), genotype.end(), x.col(q).begin());
  return x;
}

}  // namespace glsweep
