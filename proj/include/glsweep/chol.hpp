#pragma once

// Cholesky-whitening engine for one trait.
//
// M = L L^T is factored once. X_L and y are whitened once and their normal
// equations cached; genotypes are whitened a whole block at a time with one
// triangular solve. What is left per SNP is a bordered w x w system whose
// new row costs O(n w) to form.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "glsweep/kernels.hpp"
#include "glsweep/model.hpp"
#include "glsweep/pipeline.hpp"
#include "glsweep/results.hpp"
#include "glsweep/sweep.hpp"

namespace glsweep {

struct CholContext {
  kernels::LowerTriangular l;  // M = L L^T
  Matrix xl_white;             // L^{-1} X_L
  std::vector<double> y_white; // L^{-1} y
  Matrix s_tl;                 // X_L'^T X_L'
  std::vector<double> b_t;     // X_L'^T y'
  TraitParams params;

  std::size_t n() const noexcept { return l.size(); }
  std::size_t fixed_width() const noexcept { return xl_white.cols(); }
};

inline CholContext precompute_chol(const KinshipMatrix& phi, const TraitParams& params, const CovariateBlock& xl,
                                   std::span<const double> y, kernels::Backend backend = kernels::default_backend()) {
  const std::size_t n = phi.size();
  if (xl.xl.rows() != n || y.size() != n) throw StructuralError("precompute_chol: X_L and y must have n rows");
  check_trait_params(params);

  CholContext ctx;
  ctx.params = params;
  ctx.l.l = assemble_covariance(phi, params);
  kernels::chol_factor_inplace(backend, ctx.l.l.view());

  const std::size_t q = xl.xl.cols();
  Matrix fixed(n, q + 1);  // [X_L | y], whitened together
  copy_into(xl.xl.view(), fixed.columns(0, q));
  std::copy(y.begin(), y.end(), fixed.col(q).begin());
  kernels::tri_solve_left_inplace(backend, ctx.l.l.view(), fixed.view());

  ctx.xl_white = Matrix::copy_of(fixed.columns(0, q));
  ctx.y_white.assign(fixed.col(q).begin(), fixed.col(q).end());
  ctx.s_tl = kernels::cross_product(backend, ctx.xl_white.view());
  ctx.b_t.resize(q);
  for (std::size_t c = 0; c < q; ++c) {
    double s = 0.0;
    const auto col = ctx.xl_white.col(c);
    for (std::size_t i = 0; i < n; ++i) s += col[i] * ctx.y_white[i];
    ctx.b_t[c] = s;
  }
  return ctx;
}

/// X_R := L^{-1} X_R for the whole block in one kernel call.
inline void whiten_block(const CholContext& ctx, MatrixView block, kernels::Backend backend = kernels::default_backend()) {
  if (block.cols < 1) throw StructuralError("whiten_block: empty block");
  kernels::tri_solve_left_inplace(backend, ctx.l.l.view(), block);
}

/// Bordered solves for every column of an already whitened block.
/// Failed SNPs come back with a non-ok status and zero payload.
inline std::vector<GlsResult> process_block_chol(const CholContext& ctx, ConstMatrixView whitened, std::size_t first_snp,
                                                 std::uint32_t trait_index, unsigned workers = 1,
                                                 std::uint64_t* loop_flops = nullptr) {
  const std::size_t n = ctx.n();
  const std::size_t q = ctx.fixed_width();
  const std::size_t w = q + 1;
  if (whitened.rows != n) throw StructuralError("process_block_chol: block must have n rows");
  const std::size_t k = whitened.cols;
  std::vector<GlsResult> out(k);

  parallel_for(k, std::max(1u, workers), [&](std::size_t, std::size_t begin, std::size_t end) {
    BorderedSolver solver(ctx.s_tl.view(), ctx.b_t);
    std::vector<double> border(q);
    for (std::size_t c = begin; c < end; ++c) {
      const double* g = whitened.data + c * whitened.ld;
      for (std::size_t j = 0; j < q; ++j) {
        const double* xj = ctx.xl_white.data() + j * n;
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += g[i] * xj[i];
        border[j] = s;
      }
      double corner = 0.0, rhs = 0.0;
      const double* yw = ctx.y_white.data();
      for (std::size_t i = 0; i < n; ++i) {
        corner += g[i] * g[i];
        rhs += g[i] * yw[i];
      }
      GlsResult& r = out[c];
      r.snp_index = first_snp + c;
      r.trait_index = trait_index;
      r.beta.resize(w);
      r.se.resize(w);
      r.status = solver.solve(border, corner, rhs, ctx.params.sigma2, r.beta, r.se);
      if (!r.ok()) r = GlsResult::failure(r.snp_index, trait_index, r.status, w);
    }
  });
  if (loop_flops) *loop_flops += static_cast<std::uint64_t>(k) * n * (q + 2);
  return out;
}

/// One GLS problem by Cholesky whitening with no reuse.
inline GlsResult solve_single_chol(const KinshipMatrix& phi, const TraitParams& params, ConstMatrixView x,
                                   std::span<const double> y, kernels::Backend backend = kernels::default_backend()) {
  const std::size_t n = phi.size();
  const std::size_t w = x.cols;
  if (x.rows != n || y.size() != n) throw StructuralError("solve_single_chol: X and y must have n rows");
  if (w < 1 || w > kernels::kMaxSmallDim) throw StructuralError("solve_single_chol: design width must be in [1, 64]");
  check_trait_params(params);

  const auto l = kernels::chol_factor(backend, assemble_covariance(phi, params).view());
  Matrix xy(n, w + 1);
  copy_into(x, xy.columns(0, w));
  std::copy(y.begin(), y.end(), xy.col(w).begin());
  kernels::tri_solve_left_inplace(backend, l.l.view(), xy.view());

  const Matrix s = kernels::cross_product(backend, xy.columns(0, w));
  std::vector<double> b(w);
  for (std::size_t c = 0; c < w; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += xy(i, c) * xy(i, w);
    b[c] = acc;
  }
  auto solved = kernels::small_spd_solve(s.view(), b);
  GlsResult r;
  r.beta = std::move(solved.solution);
  r.se.resize(w);
  for (std::size_t c = 0; c < w; ++c) r.se[c] = std::sqrt(params.sigma2 * solved.inverse_diagonal[c]);
  return r;
}

namespace detail {

inline void emit_trait_failure(const Dataset& ds, std::uint32_t trait, ResultSink& sink, FailureLog& failures,
                               std::size_t block_size) {
  const std::size_t w = ds.dims.width();
  for (std::size_t first = 0; first < ds.dims.m; first += block_size) {
    const std::size_t k = std::min(block_size, ds.dims.m - first);
    std::vector<GlsResult> batch;
    batch.reserve(k);
    for (std::size_t c = 0; c < k; ++c) {
      failures.report(first + c, trait, ResultStatus::trait_failure);
      batch.push_back(GlsResult::failure(first + c, trait, ResultStatus::trait_failure, w));
    }
    sink.consume(std::move(batch));
  }
}

}  // namespace detail

/// All m SNPs for one trait, streaming the genotypes block by block.
inline SweepSummary sweep_chol(const Dataset& ds, std::uint32_t trait, BlockSource& genotypes, ResultSink& sink,
                               const SweepOptions& opt) {
  check_source(ds, genotypes);
  if (trait >= ds.dims.t) throw ConfigError("trait index " + std::to_string(trait) + " out of range (t=" + std::to_string(ds.dims.t) + ")");
  const auto start = Clock::now();
  SweepSummary summary;
  FailureLog failures(opt.policy);

  std::optional<CholContext> ctx;
  try {
    ScopedTimer timer(summary.times.precompute);
    ctx = precompute_chol(ds.kinship, ds.params[trait], ds.covariates, ds.phenotype(trait), opt.backend);
  } catch (const IndefiniteError& e) {
    const std::string msg = "trait " + std::to_string(trait) + ": covariance factorization failed: " + e.what();
    if (opt.policy == ErrorPolicy::fail_fast) throw NumericError(msg, trait);
    detail::emit_trait_failure(ds, trait, sink, failures, opt.block_size);
    summary.results = ds.dims.m;
    failures.merge_into(summary);
    summary.times.wall = seconds_since(start);
    summary.peak_bytes = MemoryTracker::peak();
    return summary;
  }

  const auto plan = make_block_plan(ds.dims.n, ds.dims.m, opt.block_size);
  BlockStream stream(genotypes, plan, opt.double_buffering);
  while (auto block = stream.next()) {
    {
      ScopedTimer timer(summary.times.transform);
      whiten_block(*ctx, block->xr, opt.backend);
      ++summary.whitening_calls;
    }
    std::vector<GlsResult> batch;
    {
      ScopedTimer timer(summary.times.loop);
      std::optional<kernels::ScopedKernelThreads> serial;
      if (opt.workers > 1) serial.emplace(1);
      batch = process_block_chol(*ctx, block->xr, block->first_snp_index, trait, opt.workers, &summary.loop_flops);
    }
    for (const auto& r : batch)
      if (!r.ok()) failures.report(r.snp_index, trait, r.status);
    summary.results += batch.size();
    sink.consume(std::move(batch));
  }
  summary.times.read = stream.read_seconds();
  summary.times.read_wait = stream.wait_seconds();
  failures.merge_into(summary);
  summary.times.wall = seconds_since(start);
  summary.peak_bytes = MemoryTracker::peak();
  return summary;
}

/// Sums the per-trait summaries of consecutive chol sweeps.
inline void accumulate(SweepSummary& total, const SweepSummary& s) {
  total.results += s.results;
  total.failures += s.failures;
  total.failure_log.insert(total.failure_log.end(), s.failure_log.begin(), s.failure_log.end());
  total.times.precompute += s.times.precompute;
  total.times.transform += s.times.transform;
  total.times.setup += s.times.setup;
  total.times.loop += s.times.loop;
  total.times.read += s.times.read;
  total.times.read_wait += s.times.read_wait;
  total.times.write += s.times.write;
  total.times.wall += s.times.wall;
  total.loop_flops += s.loop_flops;
  total.rotation_products += s.rotation_products;
  total.whitening_calls += s.whitening_calls;
  total.peak_bytes = std::max(total.peak_bytes, s.peak_bytes);
}

}  // namespace glsweep
