#pragma once

// Brute-force GLS: every (SNP, trait) problem assembles its own covariance,
// factors it, whitens the full design and solves the normal equations.
// Nothing is shared between problems. This is the ground truth the fast
// engines are checked against, at O(n^3) per problem.

#include <span>
#include <string>
#include <vector>

#include "glsweep/kernels.hpp"
#include "glsweep/model.hpp"
#include "glsweep/pipeline.hpp"
#include "glsweep/results.hpp"
#include "glsweep/sweep.hpp"

namespace glsweep {

/// Scratch for one problem at a time; reused across problems by a worker.
struct NaiveWorkspace {
  Matrix covariance;  // n x n, overwritten by its Cholesky factor
  Matrix whitened;    // n x (w + 1): [X | y] then L^{-1} [X | y]
  Matrix normal;      // w x w
  std::vector<double> rhs, x, inv_diag, work;

  NaiveWorkspace(std::size_t n, std::size_t w)
      : covariance(n, n), whitened(n, w + 1), normal(w, w), rhs(w), x(w), inv_diag(w), work(w * w) {}
};

namespace detail {

inline GlsResult solve_gls_naive_with(NaiveWorkspace& ws, const KinshipMatrix& phi, const TraitParams& params,
                                      ConstMatrixView x, std::span<const double> y, kernels::Backend backend) {
  const std::size_t n = phi.size();
  const std::size_t w = x.cols;

  assemble_covariance_lower_into(phi, params, ws.covariance.view());
  try {
    kernels::chol_factor_inplace(backend, ws.covariance.view());
  } catch (const IndefiniteError& e) {
    throw IndefiniteError(std::string("trait covariance is not positive definite: ") + e.what(), e.index());
  }

  copy_into(x, ws.whitened.columns(0, w));
  std::copy(y.begin(), y.end(), ws.whitened.col(w).begin());
  kernels::tri_solve_left_inplace(backend, ws.covariance.view(), ws.whitened.view());

  const ConstMatrixView xw = ws.whitened.columns(0, w);
  kernels::cross_product_into(backend, xw, ws.normal.view());
  const auto yw = ws.whitened.col(w);
  for (std::size_t c = 0; c < w; ++c) {
    double s = 0.0;
    const auto col = xw.col(c);
    for (std::size_t i = 0; i < n; ++i) s += col[i] * yw[i];
    ws.rhs[c] = s;
  }

  const auto status = kernels::small_spd_solve_into(ws.normal.view(), ws.rhs, ws.x, ws.inv_diag, ws.work);
  if (!status.ok()) {
    throw IndefiniteError("design matrix is rank deficient (normal equations fail at pivot " +
                              std::to_string(*status.failed_pivot) + ")",
                          *status.failed_pivot);
  }

  GlsResult r;
  r.beta.assign(ws.x.begin(), ws.x.end());
  r.se.resize(w);
  for (std::size_t c = 0; c < w; ++c) r.se[c] = std::sqrt(params.sigma2 * ws.inv_diag[c]);
  return r;
}

}  // namespace detail

/// beta = (X^T M^{-1} X)^{-1} X^T M^{-1} y and se_i = sqrt(sigma2 * [(X^T M^{-1} X)^{-1}]_ii).
inline GlsResult solve_gls_naive(const KinshipMatrix& phi, const TraitParams& params, ConstMatrixView x,
                                 std::span<const double> y, kernels::Backend backend = kernels::default_backend()) {
  const std::size_t n = phi.size();
  if (x.rows != n || y.size() != n) throw StructuralError("solve_gls_naive: X and y must have n rows");
  if (x.cols < 1 || x.cols > kernels::kMaxSmallDim) throw StructuralError("solve_gls_naive: design width must be in [1, 64]");
  check_trait_params(params);
  NaiveWorkspace ws(n, x.cols);
  return detail::solve_gls_naive_with(ws, phi, params, x, y, backend);
}

/// All m * t problems, trait-major. Problems are independent; workers split
/// each block's SNPs.
inline SweepSummary sweep_naive(const Dataset& ds, BlockSource& genotypes, ResultSink& sink, const SweepOptions& opt) {
  check_source(ds, genotypes);
  const auto start = Clock::now();
  const std::size_t n = ds.dims.n;
  const std::size_t q = ds.dims.fixed_width();
  const std::size_t w = ds.dims.width();
  const unsigned workers = std::max(1u, opt.workers);

  SweepSummary summary;
  FailureLog failures(opt.policy);
  std::vector<NaiveWorkspace> spaces;
  spaces.reserve(workers);
  for (unsigned i = 0; i < workers; ++i) spaces.emplace_back(n, w);
  std::vector<Matrix> designs;
  for (unsigned i = 0; i < workers; ++i) {
    designs.emplace_back(n, w);
    copy_into(ds.covariates.xl.view(), designs.back().columns(0, q));
  }
  std::optional<kernels::ScopedKernelThreads> serial;
  if (workers > 1) serial.emplace(1);

  const auto plan = make_block_plan(n, ds.dims.m, opt.block_size);
  for (std::uint32_t trait = 0; trait < ds.dims.t; ++trait) {
    const auto& params = ds.params[trait];
    const auto y = ds.phenotype(trait);
    BlockStream stream(genotypes, plan, opt.double_buffering);
    while (auto block = stream.next()) {
      const std::size_t k = block->width();
      std::vector<GlsResult> batch(k);
      double loop_seconds = 0.0;
      {
        ScopedTimer timer(loop_seconds);
        parallel_for(k, workers, [&](std::size_t wid, std::size_t begin, std::size_t end) {
          auto& ws = spaces[wid];
          auto& x = designs[wid];
          for (std::size_t c = begin; c < end; ++c) {
            const std::uint64_t snp = block->first_snp_index + c;
            const auto g = block->xr.col(c);
            std::copy(g.begin(), g.end(), x.col(q).begin());
            try {
              batch[c] = detail::solve_gls_naive_with(ws, ds.kinship, params, x.view(), y, opt.backend);
              batch[c].snp_index = snp;
              batch[c].trait_index = trait;
              bool finite = true;
              for (std::size_t i = 0; i < w; ++i) finite = finite && std::isfinite(batch[c].beta[i]) && std::isfinite(batch[c].se[i]) && batch[c].se[i] > 0.0;
              if (!finite) {
                failures.report(snp, trait, ResultStatus::non_finite);
                batch[c] = GlsResult::failure(snp, trait, ResultStatus::non_finite, w);
              }
            } catch (const IndefiniteError& e) {
              const bool trait_level = std::string_view(e.what()).starts_with("trait covariance");
              if (opt.policy == ErrorPolicy::fail_fast) {
                throw NumericError("snp " + std::to_string(snp) + ", trait " + std::to_string(trait) + ": " + e.what(), snp);
              }
              const auto status = trait_level ? ResultStatus::trait_failure : ResultStatus::collinear;
              failures.report(snp, trait, status);
              batch[c] = GlsResult::failure(snp, trait, status, w);
            }
          }
        });
      }
      summary.times.loop += loop_seconds;
      summary.results += k;
      sink.consume(std::move(batch));
    }
    summary.times.read += stream.read_seconds();
    summary.times.read_wait += stream.wait_seconds();
  }
  failures.merge_into(summary);
  summary.times.wall = seconds_since(start);
  summary.peak_bytes = MemoryTracker::peak();
  return summary;
}

}  // namespace glsweep
