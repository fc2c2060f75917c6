#pragma once

// Pieces shared by the three engines: options, run summaries, the bordered
// normal-equation solve, and a small fork-join helper.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "glsweep/kernels.hpp"
#include "glsweep/model.hpp"
#include "glsweep/pipeline.hpp"
#include "glsweep/results.hpp"

namespace glsweep {

enum class ErrorPolicy { fail_fast, skip_and_log };

inline ErrorPolicy parse_error_policy(std::string_view s) {
  if (s == "fail_fast") return ErrorPolicy::fail_fast;
  if (s == "skip_and_log") return ErrorPolicy::skip_and_log;
  throw ConfigError("unknown error policy '" + std::string(s) + "' (expected fail_fast | skip_and_log)");
}

inline constexpr std::size_t kDefaultBlockSize = 256;

struct SweepOptions {
  std::size_t block_size = kDefaultBlockSize;
  unsigned workers = 1;
  kernels::Backend backend = kernels::default_backend();
  ErrorPolicy policy = ErrorPolicy::skip_and_log;
  bool double_buffering = true;
  SpectralOptions spectral;
};

struct PhaseTimes {
  double precompute = 0.0;  // factorization / eigendecomposition and fixed-part transforms
  double transform = 0.0;   // genotype whitening (chol) or rotation (eig)
  double setup = 0.0;       // per-trait setup (eig)
  double loop = 0.0;        // per-SNP bordered solves
  double read = 0.0;        // reader thread busy time
  double read_wait = 0.0;   // consumer blocked on the reader
  double write = 0.0;       // writer busy time
  double wall = 0.0;

  double compute() const noexcept { return precompute + transform + setup + loop; }
};

struct FailureRecord {
  std::uint64_t snp_index = 0;
  std::uint32_t trait_index = 0;
  ResultStatus status = ResultStatus::ok;
  std::string message;
};

struct SweepSummary {
  std::size_t results = 0;
  std::size_t failures = 0;
  std::vector<FailureRecord> failure_log;
  PhaseTimes times;
  std::uint64_t loop_flops = 0;          // multiply-adds performed inside the per-SNP loops
  std::uint64_t rotation_products = 0;   // products of Z^T against an n-row panel
  std::uint64_t whitening_calls = 0;     // triangular solves against genotype blocks
  std::size_t peak_bytes = 0;            // MemoryTracker peak observed during the run
  bool rotation_in_memory = false;

  OverlapReport overlap() const noexcept {
    return {times.compute(), times.read, times.write, times.wall};
  }
};

// Runs body(worker, begin, end) over [0, count) split across `workers`
// threads. Chunk boundaries do not affect per-item arithmetic.
template <class Body>
void parallel_for(std::size_t count, unsigned workers, Body&& body) {
  if (count == 0) return;
  const std::size_t nw = std::clamp<std::size_t>(workers, 1, count);
  if (nw == 1) {
    body(std::size_t{0}, std::size_t{0}, count);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(nw);
  const std::size_t chunk = (count + nw - 1) / nw;
  threads.reserve(nw);
  for (std::size_t t = 0; t < nw; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&, t, begin, end] {
      try {
        body(t, begin, end);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Per-worker scratch for assembling and solving one bordered system
///
///   S = [ S_TL   *  ]     rhs = [ b_T ]
///       [ border corner ]         [ last ]
///
/// with S_TL and b_T cached across SNPs. Only the lower triangle of S is formed.
class BorderedSolver {
 public:
  BorderedSolver(ConstMatrixView s_tl, std::span<const double> b_t)
      : q_(s_tl.rows), w_(q_ + 1), s_(w_, w_), rhs_(w_), x_(w_), inv_(w_), work_(w_ * w_) {
    if (w_ > kernels::kMaxSmallDim) throw StructuralError("design width exceeds 64");
    for (std::size_t j = 0; j < q_; ++j)
      for (std::size_t i = j; i < q_; ++i) s_(i, j) = s_tl(i, j);
    std::copy(b_t.begin(), b_t.end(), rhs_.begin());
  }

  std::size_t width() const noexcept { return w_; }

  /// Fills beta/se for the bordered system; returns the status of the SNP.
  ResultStatus solve(std::span<const double> border, double corner, double rhs_last, double sigma2,
                     std::span<double> beta, std::span<double> se) {
    for (std::size_t j = 0; j < q_; ++j) s_(q_, j) = border[j];
    s_(q_, q_) = corner;
    rhs_[q_] = rhs_last;
    const auto status = kernels::small_spd_solve_into(s_.view(), rhs_, x_, inv_, work_);
    if (!status.ok()) return ResultStatus::collinear;
    for (std::size_t i = 0; i < w_; ++i) {
      beta[i] = x_[i];
      se[i] = std::sqrt(sigma2 * inv_[i]);
      if (!std::isfinite(beta[i]) || !std::isfinite(se[i]) || !(se[i] > 0.0)) return ResultStatus::non_finite;
    }
    return ResultStatus::ok;
  }

 private:
  std::size_t q_;
  std::size_t w_;
  Matrix s_;
  std::vector<double> rhs_, x_, inv_, work_;
};

inline std::string describe_failure(ResultStatus s, std::uint64_t snp, std::uint32_t trait) {
  std::string why = s == ResultStatus::collinear ? "genotype column collinear with the fixed design (bordered system not positive definite)"
                    : s == ResultStatus::non_finite ? "non-finite estimate"
                                                    : "trait covariance could not be factored";
  return "snp " + std::to_string(snp) + ", trait " + std::to_string(trait) + ": " + why;
}

// Thread-safe collector for per-SNP failures of one run.
class FailureLog {
 public:
  explicit FailureLog(ErrorPolicy policy, std::size_t keep = 1000) : policy_(policy), keep_(keep) {}

  /// Records the failure; under fail_fast throws instead.
  void report(std::uint64_t snp, std::uint32_t trait, ResultStatus status) {
    const std::string msg = describe_failure(status, snp, trait);
    if (policy_ == ErrorPolicy::fail_fast) throw NumericError(msg, snp);
    std::lock_guard lock(mu_);
    ++count_;
    if (log_.size() < keep_) log_.push_back({snp, trait, status, msg});
  }

  void merge_into(SweepSummary& s) const {
    std::lock_guard lock(mu_);
    s.failures += count_;
    s.failure_log.insert(s.failure_log.end(), log_.begin(), log_.end());
  }

 private:
  ErrorPolicy policy_;
  std::size_t keep_;
  mutable std::mutex mu_;
  std::size_t count_ = 0;
  std::vector<FailureRecord> log_;
};

inline void check_source(const Dataset& ds, const BlockSource& genotypes) {
  if (genotypes.rows() != ds.dims.n) {
    throw StructuralError("genotype source has " + std::to_string(genotypes.rows()) + " rows, dataset has n=" +
                          std::to_string(ds.dims.n));
  }
  if (genotypes.cols() != ds.dims.m) {
    throw StructuralError("genotype source has " + std::to_string(genotypes.cols()) + " columns, dataset has m=" +
                          std::to_string(ds.dims.m));
  }
}

}  // namespace glsweep
