#pragma once

// Deterministic synthetic datasets.
//
// Every random stream is a std::mt19937_64 seeded through splitmix64 from
// (seed, stream tag, index), and the distributions below are written out
// by hand, so a seed gives the same bits with any conforming standard
// library. Genotype column j depends only on (seed, j).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "glsweep/kernels.hpp"
#include "glsweep/model.hpp"
#include "glsweep/stream_io.hpp"

namespace glsweep::datagen {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

enum class Stream : std::uint64_t { genotype = 1, kinship = 2, covariate = 3, trait = 4, causal = 5 };

class Rng {
 public:
  Rng(std::uint64_t seed, Stream stream, std::uint64_t index = 0)
      : engine_(splitmix64(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream))) + index)) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t below(std::uint64_t bound) { return engine_() % bound; }

  /// Box-Muller; the second variate of each pair is kept for the next call.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do u1 = uniform(); while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline constexpr double kMinMaf = 0.05;
inline constexpr double kMaxMaf = 0.5;

/// Dosages for SNP j: f ~ U(0.05, 0.5), then binomial(2, f) per individual.
inline double fill_genotype_column(std::uint64_t seed, std::uint64_t j, std::span<double> out) {
  Rng rng(seed, Stream::genotype, j);
  const double f = rng.uniform(kMinMaf, kMaxMaf);
  for (double& g : out) g = static_cast<double>(int(rng.bernoulli(f)) + int(rng.bernoulli(f)));
  return f;
}

inline Matrix gen_genotype_matrix(std::size_t n, std::size_t m, std::uint64_t seed) {
  Matrix g(n, m);
  for (std::size_t j = 0; j < m; ++j) fill_genotype_column(seed, j, g.col(j));
  return g;
}

/// Streams an n x m genotype file without holding more than `chunk` columns.
inline void gen_genotypes(const std::filesystem::path& path, std::size_t n, std::size_t m, std::uint64_t seed,
                          std::size_t chunk = 256) {
  MatrixFileWriter writer(path, n);
  Matrix buf(n, std::min(chunk, std::max<std::size_t>(m, 1)));
  for (std::size_t first = 0; first < m; first += buf.cols()) {
    const std::size_t k = std::min(buf.cols(), m - first);
    for (std::size_t c = 0; c < k; ++c) fill_genotype_column(seed, first + c, buf.col(c));
    writer.append(buf.columns(0, k));
  }
  writer.close();
}

/// Phi = 0.95 A A^T / q + 0.05 I over q = 4n standardized auxiliary SNPs,
/// rescaled to unit diagonal.
inline KinshipMatrix gen_kinship(std::size_t n, std::uint64_t seed, kernels::Backend backend = kernels::default_backend()) {
  const std::size_t q = 4 * n;
  Matrix at(q, n);  // A^T: column i holds individual i's standardized auxiliary genotypes
  for (std::size_t l = 0; l < q; ++l) {
    Rng rng(seed, Stream::kinship, l);
    const double f = rng.uniform(kMinMaf, kMaxMaf);
    const double mean = 2.0 * f;
    const double sd = std::sqrt(2.0 * f * (1.0 - f));
    for (std::size_t i = 0; i < n; ++i) {
      const double g = static_cast<double>(int(rng.bernoulli(f)) + int(rng.bernoulli(f)));
      at(l, i) = (g - mean) / sd;
    }
  }
  Matrix phi = kernels::cross_product(backend, at.view());
  at.release();

  const double scale = 0.95 / static_cast<double>(q);
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = scale * phi(i, i) + 0.05;
  for (std::size_t j = 0; j < n; ++j) {
    phi(j, j) = 1.0;
    for (std::size_t i = j + 1; i < n; ++i) {
      const double v = scale * phi(i, j) / std::sqrt(d[i] * d[j]);
      phi(i, j) = v;
      phi(j, i) = v;
    }
  }
  return {std::move(phi)};
}

/// [1 | sex | age | N(0,1)...] with sex ~ Bernoulli(0.5) and age ~ U(20, 80).
inline CovariateBlock gen_covariates(std::size_t n, std::size_t c, std::uint64_t seed) {
  Matrix xl(n, c + 1);
  for (std::size_t i = 0; i < n; ++i) xl(i, 0) = 1.0;
  for (std::size_t j = 1; j <= c; ++j) {
    Rng rng(seed, Stream::covariate, j);
    for (std::size_t i = 0; i < n; ++i) {
      xl(i, j) = j == 1 ? (rng.bernoulli(0.5) ? 1.0 : 0.0) : j == 2 ? rng.uniform(20.0, 80.0) : rng.normal();
    }
  }
  return {std::move(xl)};
}

struct TraitSpec {
  std::optional<double> sigma2;  // drawn from U(0.5, 2) when absent
  std::optional<double> h2;      // drawn from U(0.2, 0.8) when absent
  std::optional<double> causal_effect;  // drawn from N(0, 0.25) per causal SNP when absent
  bool zero_effects = false;     // beta_true = 0 for every column
};

struct PlantedTrait {
  TraitParams params;
  std::vector<double> fixed_effects;  // true beta for [1 | covariates]
  std::vector<std::uint64_t> causal_snps;
  std::vector<double> causal_effects;
};

struct GeneratedTraits {
  PhenotypeMatrix phenotypes;
  std::vector<TraitParams> params;
  std::vector<PlantedTrait> truth;
};

inline constexpr std::size_t kCausalPerTrait = 3;

/// y_j = X_L beta_L + sum_causal g_s beta_s + L_j eps, L_j L_j^T = M_j.
inline GeneratedTraits gen_traits(const KinshipMatrix& phi, const CovariateBlock& xl, BlockSource& genotypes,
                                  std::span<const TraitSpec> specs, std::uint64_t seed,
                                  kernels::Backend backend = kernels::default_backend()) {
  const std::size_t n = phi.size();
  const std::size_t t = specs.size();
  const std::size_t m = genotypes.cols();
  const std::size_t q = xl.xl.cols();
  if (xl.xl.rows() != n || genotypes.rows() != n) throw StructuralError("gen_traits: row count mismatch");
  if (m == 0) throw StructuralError("gen_traits: no genotypes");

  GeneratedTraits out;
  out.phenotypes.y = Matrix(n, t);
  Matrix g(n, 1);
  Matrix cov(n, n);
  for (std::size_t j = 0; j < t; ++j) {
    const TraitSpec& spec = specs[j];
    Rng rng(seed, Stream::trait, j);
    PlantedTrait p;
    p.params.sigma2 = spec.sigma2 ? *spec.sigma2 : rng.uniform(0.5, 2.0);
    p.params.h2 = spec.h2 ? *spec.h2 : rng.uniform(0.2, 0.8);
    check_trait_params(p.params);

    p.fixed_effects.assign(q, 0.0);
    if (!spec.zero_effects) {
      p.fixed_effects[0] = 1.0;
      for (std::size_t c = 1; c < q; ++c) p.fixed_effects[c] = 0.05 * rng.normal();
    }
    Rng pick(seed, Stream::causal, j);
    const std::size_t count = std::min(kCausalPerTrait, m);
    while (p.causal_snps.size() < count) {
      const std::uint64_t s = pick.below(m);
      if (std::find(p.causal_snps.begin(), p.causal_snps.end(), s) == p.causal_snps.end()) p.causal_snps.push_back(s);
    }
    std::sort(p.causal_snps.begin(), p.causal_snps.end());
    for (std::size_t s = 0; s < count; ++s) {
      p.causal_effects.push_back(spec.zero_effects ? 0.0 : spec.causal_effect ? *spec.causal_effect : 0.5 * rng.normal());
    }

    auto y = out.phenotypes.y.col(j);
    for (std::size_t i = 0; i < n; ++i) {
      double v = 0.0;
      for (std::size_t c = 0; c < q; ++c) v += xl.xl(i, c) * p.fixed_effects[c];
      y[i] = v;
    }
    for (std::size_t s = 0; s < count; ++s) {
      genotypes.read(p.causal_snps[s], g.view());
      for (std::size_t i = 0; i < n; ++i) y[i] += g(i, 0) * p.causal_effects[s];
    }

    // Correlated noise L eps; only the lower triangle of L is read.
    assemble_covariance_into(phi, p.params, cov.view());
    kernels::chol_factor_inplace(backend, cov.view());
    std::vector<double> eps(n);
    for (double& e : eps) e = rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
      double v = 0.0;
      for (std::size_t k = 0; k <= i; ++k) v += cov(i, k) * eps[k];
      y[i] += v;
    }
    out.params.push_back(p.params);
    out.truth.push_back(std::move(p));
  }
  return out;
}

}  // namespace glsweep::datagen
