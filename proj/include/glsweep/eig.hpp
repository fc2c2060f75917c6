#pragma once

// Eigendecomposition engine for many traits sharing one kinship matrix.
//
// Phi = Z W Z^T is computed once and Z^T is applied once to X_L, Y and every
// genotype block. Each trait then only needs the diagonal reweighting
// K = D^{1/2}, D = (sigma2 (h2 W + (1 - h2) I))^{-1}, so a (SNP, trait)
// problem costs O(n w) on top of the shared rotation.

#include <unistd.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "glsweep/kernels.hpp"
#include "glsweep/model.hpp"
#include "glsweep/pipeline.hpp"
#include "glsweep/results.hpp"
#include "glsweep/sweep.hpp"

namespace glsweep {

// ---------------------------------------------------------------------------
// Where rotated genotypes Z^T X_R live between the rotation pass and the
// trait loop.

class RotationStore {
 public:
  virtual ~RotationStore() = default;
  virtual void append(ConstMatrixView rotated) = 0;
  virtual void finish() = 0;
  /// Valid after finish().
  virtual BlockSource& source() = 0;
  virtual bool in_memory() const noexcept = 0;
};

class MemoryRotationStore final : public RotationStore {
 public:
  MemoryRotationStore(std::size_t n, std::size_t m) : data_(n, m), source_(data_.view()) {}
  void append(ConstMatrixView rotated) override {
    if (filled_ + rotated.cols > data_.cols()) throw StructuralError("MemoryRotationStore: too many columns");
    copy_into(rotated, data_.columns(filled_, rotated.cols));
    filled_ += rotated.cols;
  }
  void finish() override {
    if (filled_ != data_.cols()) throw StructuralError("MemoryRotationStore: incomplete rotation");
  }
  BlockSource& source() override { return source_; }
  bool in_memory() const noexcept override { return true; }
  const Matrix& matrix() const noexcept { return data_; }

 private:
  Matrix data_;
  MemoryBlockSource source_;
  std::size_t filled_ = 0;
};

/// Scratch directory: explicit setting, then $GLS_SCRATCH_DIR, then the system temp dir.
inline std::filesystem::path resolve_scratch_dir(const std::filesystem::path& explicit_dir = {}) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* env = std::getenv("GLS_SCRATCH_DIR"); env && *env) return env;
  return std::filesystem::temp_directory_path();
}

/// Rotated genotypes in a matrix file with the genotype layout; removed on destruction.
class ScratchRotationStore final : public RotationStore {
 public:
  ScratchRotationStore(const std::filesystem::path& dir, std::size_t n, std::size_t m) {
    if (!std::filesystem::is_directory(dir)) throw ConfigError("scratch directory does not exist: " + dir.string());
    const std::uint64_t required = kHeaderBytes + std::uint64_t(n) * m * sizeof(double);
    std::error_code ec;
    const auto space = std::filesystem::space(dir, ec);
    if (!ec && space.available < required) {
      throw IoError("scratch space exhausted in " + dir.string() + ": rotation needs " + std::to_string(required) +
                    " bytes, " + std::to_string(space.available) + " available");
    }
    static std::atomic<unsigned> counter{0};
    path_ = dir / ("glsweep-rotated-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + ".mat");
    writer_.emplace(path_, n);
  }
  ~ScratchRotationStore() override {
    source_.reset();
    writer_.reset();
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  void append(ConstMatrixView rotated) override { writer_->append(rotated); }
  void finish() override {
    writer_->close();
    writer_.reset();
    source_.emplace(path_);
  }
  BlockSource& source() override { return *source_; }
  bool in_memory() const noexcept override { return false; }
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::optional<MatrixFileWriter> writer_;
  std::optional<FileBlockSource> source_;
};

// Hands rotated blocks to a RotationStore from a background thread, with
// two output buffers so the next rotation overlaps the previous write.
class AsyncRotationWriter {
 public:
  AsyncRotationWriter(RotationStore& store, std::size_t rows, std::size_t cols, bool double_buffering)
      : store_(store) {
    buffers_.resize(double_buffering ? 2 : 1);
    for (auto& b : buffers_) b.data = Matrix(rows, cols);
    worker_ = std::thread([this] { run(); });
  }
  ~AsyncRotationWriter() { stop(); }

  std::size_t buffer_count() const noexcept { return buffers_.size(); }

  /// Waits until buffer i is no longer being written and returns it.
  Matrix& acquire(std::size_t i) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !buffers_[i].pending || error_; });
    if (error_) std::rethrow_exception(error_);
    return buffers_[i].data;
  }

  void submit(std::size_t i, std::size_t width) {
    std::lock_guard lock(mu_);
    buffers_[i].pending = true;
    buffers_[i].width = width;
    order_.push_back(i);
    cv_.notify_all();
  }

  void finish() {
    stop();
    if (error_) std::rethrow_exception(error_);
  }

  double write_seconds() const {
    std::lock_guard lock(mu_);
    return write_seconds_;
  }

 private:
  struct Slot {
    Matrix data;
    std::size_t width = 0;
    bool pending = false;
  };

  void stop() {
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  void run() {
    for (;;) {
      std::size_t i = 0;
      std::size_t width = 0;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return !order_.empty() || stopping_; });
        if (order_.empty()) return;
        i = order_.front();
        order_.pop_front();
        width = buffers_[i].width;
      }
      double elapsed = 0.0;
      try {
        ScopedTimer timer(elapsed);
        store_.append(buffers_[i].data.columns(0, width));
      } catch (...) {
        std::lock_guard lock(mu_);
        error_ = std::current_exception();
        cv_.notify_all();
        return;
      }
      std::lock_guard lock(mu_);
      write_seconds_ += elapsed;
      buffers_[i].pending = false;
      cv_.notify_all();
    }
  }

  RotationStore& store_;
  std::vector<Slot> buffers_;
  std::deque<std::size_t> order_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  bool stopping_ = false;
  std::exception_ptr error_;
  double write_seconds_ = 0.0;
  std::thread worker_;
};

// ---------------------------------------------------------------------------

struct EigContext {
  kernels::EigenPair eig;  // Phi = Z diag(w) Z^T
  Matrix xl_rot;           // Z^T X_L
  Matrix y_rot;            // Z^T Y
  RotationStore* rotated = nullptr;  // Z^T X_R, owned by the caller
  std::uint64_t rotation_products = 0;

  std::size_t n() const noexcept { return eig.w.size(); }
};

struct TraitContext {
  std::uint32_t trait_index = 0;
  TraitParams params;
  std::vector<double> k_diag;     // K = diag(sqrt(D))
  std::vector<double> yj_scaled;  // K^T (Z^T y_j)
  Matrix wl;                      // K^T (Z^T X_L)
  Matrix s_tl;                    // W_L^T W_L
  std::vector<double> b_t;        // W_L^T y_j'
};

struct EigOptions : SweepOptions {
  std::filesystem::path scratch_dir;  // empty: see resolve_scratch_dir
  bool in_memory_rotation = false;
  std::uint64_t memory_budget_bytes = 0;  // bound for in-memory rotation, 0 = unbounded
};

struct RotationTimes {
  double eigen = 0.0;
  double rotate = 0.0;
  double read = 0.0;
  double read_wait = 0.0;
  double write = 0.0;
};

/// Width of the genotype panels in the rotation pass. It is fixed, and panels
/// start at multiples of it, so each rotated column comes out of the same
/// kernel call whatever block size the trait loop uses. OpenBLAS rounds
/// narrow products differently from wide ones.
inline constexpr std::size_t kRotationPanel = 64;

/// Eigendecomposition of phi (whose storage is consumed) and rotation of
/// X_L, Y and every genotype panel. Genotypes are rotated exactly once and
/// written to `store`.
inline EigContext precompute_eig(Matrix phi_storage, const CovariateBlock& xl, const PhenotypeMatrix& y,
                                 BlockSource& genotypes, RotationStore& store, const SweepOptions& opt,
                                 RotationTimes* times = nullptr) {
  const std::size_t n = phi_storage.rows();
  if (phi_storage.cols() != n) throw StructuralError("precompute_eig: kinship must be square");
  if (xl.xl.rows() != n || y.y.rows() != n || genotypes.rows() != n) throw StructuralError("precompute_eig: row count mismatch");
  RotationTimes local;
  RotationTimes& t = times ? *times : local;

  EigContext ctx;
  {
    ScopedTimer timer(t.eigen);
    ctx.eig.w = kernels::sym_eig_inplace(opt.backend, phi_storage.view());
    ctx.eig.z = std::move(phi_storage);
    ctx.xl_rot = kernels::gemm_t(opt.backend, ctx.eig.z.view(), xl.xl.view());
    ctx.y_rot = kernels::gemm_t(opt.backend, ctx.eig.z.view(), y.y.view());
    ctx.rotation_products += 2;
  }

  const auto plan = make_block_plan(n, genotypes.cols(), kRotationPanel);
  BlockStream stream(genotypes, plan, opt.double_buffering);
  AsyncRotationWriter writer(store, n, std::min(plan.block_size, std::max<std::size_t>(genotypes.cols(), 1)),
                             opt.double_buffering);
  std::size_t b = 0;
  while (auto block = stream.next()) {
    const std::size_t slot = b++ % writer.buffer_count();
    Matrix& out = writer.acquire(slot);
    {
      ScopedTimer timer(t.rotate);
      kernels::gemm_t_into(opt.backend, ctx.eig.z.view(), block->xr, out.columns(0, block->width()));
      ++ctx.rotation_products;
    }
    writer.submit(slot, block->width());
  }
  writer.finish();
  store.finish();
  ctx.rotated = &store;
  t.read += stream.read_seconds();
  t.read_wait += stream.wait_seconds();
  t.write += writer.write_seconds();
  return ctx;
}

/// Per-trait diagonal reweighting; O(n (c + 1)^2), no O(n^2) work.
inline TraitContext setup_trait(const EigContext& ctx, const TraitParams& params, std::uint32_t trait_index,
                                const SpectralOptions& spectral = {}, kernels::Backend backend = kernels::default_backend()) {
  check_trait_params(params);
  const std::size_t n = ctx.n();
  const std::size_t q = ctx.xl_rot.cols();
  if (trait_index >= ctx.y_rot.cols()) throw ConfigError("setup_trait: trait index out of range");

  TraitContext tc;
  tc.trait_index = trait_index;
  tc.params = params;
  const auto d = assemble_spectral_weights(ctx.eig.w, params, spectral);
  tc.k_diag.resize(n);
  for (std::size_t i = 0; i < n; ++i) tc.k_diag[i] = std::sqrt(d[i]);

  tc.yj_scaled.resize(n);
  const auto yr = ctx.y_rot.col(trait_index);
  for (std::size_t i = 0; i < n; ++i) tc.yj_scaled[i] = tc.k_diag[i] * yr[i];

  tc.wl = Matrix(n, q);
  for (std::size_t c = 0; c < q; ++c)
    for (std::size_t i = 0; i < n; ++i) tc.wl(i, c) = tc.k_diag[i] * ctx.xl_rot(i, c);
  tc.s_tl = kernels::cross_product(backend, tc.wl.view());
  tc.b_t.resize(q);
  for (std::size_t c = 0; c < q; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += tc.wl(i, c) * tc.yj_scaled[i];
    tc.b_t[c] = s;
  }
  return tc;
}

/// Bordered solves for one trait over a block of rotated genotypes.
inline std::vector<GlsResult> process_block_eig(const TraitContext& tc, ConstMatrixView rotated, std::size_t first_snp,
                                                unsigned workers = 1, std::uint64_t* loop_flops = nullptr) {
  const std::size_t n = tc.k_diag.size();
  const std::size_t q = tc.wl.cols();
  const std::size_t w = q + 1;
  if (rotated.rows != n) throw StructuralError("process_block_eig: block must have n rows");
  const std::size_t k = rotated.cols;
  std::vector<GlsResult> out(k);

  parallel_for(k, std::max(1u, workers), [&](std::size_t, std::size_t begin, std::size_t end) {
    BorderedSolver solver(tc.s_tl.view(), tc.b_t);
    std::vector<double> border(q);
    std::vector<double> scaled(n);
    const double* kd = tc.k_diag.data();
    const double* yj = tc.yj_scaled.data();
    for (std::size_t c = begin; c < end; ++c) {
      const double* g = rotated.data + c * rotated.ld;
      double corner = 0.0, rhs = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double v = kd[i] * g[i];  // W_R = K^T X_R_i
        scaled[i] = v;
        corner += v * v;
        rhs += v * yj[i];
      }
      for (std::size_t j = 0; j < q; ++j) {
        const double* wj = tc.wl.data() + j * n;
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += scaled[i] * wj[i];
        border[j] = s;
      }
      GlsResult& r = out[c];
      r.snp_index = first_snp + c;
      r.trait_index = tc.trait_index;
      r.beta.resize(w);
      r.se.resize(w);
      r.status = solver.solve(border, corner, rhs, tc.params.sigma2, r.beta, r.se);
      if (!r.ok()) r = GlsResult::failure(r.snp_index, tc.trait_index, r.status, w);
    }
  });
  if (loop_flops) *loop_flops += static_cast<std::uint64_t>(k) * n * (q + 3);
  return out;
}

/// One GLS problem through the eigendecomposition of phi, no reuse.
inline GlsResult solve_single_eig(const KinshipMatrix& phi, const TraitParams& params, ConstMatrixView x,
                                  std::span<const double> y, kernels::Backend backend = kernels::default_backend(),
                                  const SpectralOptions& spectral = {}) {
  const std::size_t n = phi.size();
  const std::size_t w = x.cols;
  if (x.rows != n || y.size() != n) throw StructuralError("solve_single_eig: X and y must have n rows");
  if (w < 1 || w > kernels::kMaxSmallDim) throw StructuralError("solve_single_eig: design width must be in [1, 64]");
  check_trait_params(params);

  const auto eig = kernels::sym_eig(backend, phi.phi.view());
  const auto d = assemble_spectral_weights(eig.w, params, spectral);

  // V^T = K Z^T X, with the rotated and scaled y appended as a last column.
  Matrix xy(n, w + 1);
  copy_into(x, xy.columns(0, w));
  std::copy(y.begin(), y.end(), xy.col(w).begin());
  Matrix v = kernels::gemm_t(backend, eig.z.view(), xy.view());
  for (std::size_t c = 0; c <= w; ++c)
    for (std::size_t i = 0; i < n; ++i) v(i, c) *= std::sqrt(d[i]);

  const Matrix s = kernels::cross_product(backend, v.columns(0, w));
  std::vector<double> b(w);
  for (std::size_t c = 0; c < w; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += v(i, c) * v(i, w);
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

inline SweepSummary sweep_eig_impl(Matrix phi_storage, const Dataset& ds, BlockSource& genotypes, ResultSink& sink,
                                   const EigOptions& opt) {
  check_source(ds, genotypes);
  const auto start = Clock::now();
  const std::size_t n = ds.dims.n;
  const std::size_t m = ds.dims.m;
  SweepSummary summary;
  FailureLog failures(opt.policy);

  std::unique_ptr<RotationStore> store;
  const std::uint64_t rotated_bytes = std::uint64_t(n) * m * sizeof(double);
  if (opt.in_memory_rotation && (opt.memory_budget_bytes == 0 || rotated_bytes <= opt.memory_budget_bytes)) {
    store = std::make_unique<MemoryRotationStore>(n, m);
  } else {
    store = std::make_unique<ScratchRotationStore>(resolve_scratch_dir(opt.scratch_dir), n, m);
  }
  summary.rotation_in_memory = store->in_memory();

  RotationTimes rt;
  EigContext ctx = precompute_eig(std::move(phi_storage), ds.covariates, ds.phenotypes, genotypes, *store, opt, &rt);
  summary.times.precompute = rt.eigen;
  summary.times.transform = rt.rotate;
  summary.times.read = rt.read;
  summary.times.read_wait = rt.read_wait;
  summary.times.write = rt.write;
  summary.rotation_products = ctx.rotation_products;

  std::vector<std::optional<TraitContext>> traits(ds.dims.t);
  {
    ScopedTimer timer(summary.times.setup);
    for (std::uint32_t j = 0; j < ds.dims.t; ++j) {
      try {
        traits[j] = setup_trait(ctx, ds.params[j], j, opt.spectral, opt.backend);
      } catch (const IndefiniteError& e) {
        const std::string msg = "trait " + std::to_string(j) + ": " + e.what();
        if (opt.policy == ErrorPolicy::fail_fast) throw NumericError(msg, j);
        detail::emit_trait_failure(ds, j, sink, failures, opt.block_size);
        summary.results += m;
      }
    }
  }

  const auto plan = make_block_plan(n, m, opt.block_size);
  BlockStream stream(store->source(), plan, opt.double_buffering);
  std::optional<kernels::ScopedKernelThreads> serial;
  if (opt.workers > 1) serial.emplace(1);
  while (auto block = stream.next()) {
    for (const auto& tc : traits) {
      if (!tc) continue;
      std::vector<GlsResult> batch;
      {
        ScopedTimer timer(summary.times.loop);
        batch = process_block_eig(*tc, block->xr, block->first_snp_index, opt.workers, &summary.loop_flops);
      }
      for (const auto& r : batch)
        if (!r.ok()) failures.report(r.snp_index, r.trait_index, r.status);
      summary.results += batch.size();
      sink.consume(std::move(batch));
    }
  }
  summary.times.read += stream.read_seconds();
  summary.times.read_wait += stream.wait_seconds();
  failures.merge_into(summary);
  summary.times.wall = seconds_since(start);
  summary.peak_bytes = MemoryTracker::peak();
  return summary;
}

}  // namespace detail

/// All m * t problems. The dataset's kinship is copied and left intact.
inline SweepSummary sweep_eig(const Dataset& ds, BlockSource& genotypes, ResultSink& sink, const EigOptions& opt) {
  return detail::sweep_eig_impl(Matrix::copy_of(ds.kinship.phi.view()), ds, genotypes, sink, opt);
}

/// As above, but the eigenvectors overwrite the kinship storage, saving n^2
/// doubles. The dataset's kinship is left empty.
inline SweepSummary sweep_eig_overwrite_kinship(Dataset& ds, BlockSource& genotypes, ResultSink& sink, const EigOptions& opt) {
  Matrix phi = std::move(ds.kinship.phi);
  ds.kinship.phi = Matrix();
  return detail::sweep_eig_impl(std::move(phi), ds, genotypes, sink, opt);
}

}  // namespace glsweep
