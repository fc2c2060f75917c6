#pragma once

// Timing sweeps along one problem dimension and log-log slope fits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "glsweep/chol.hpp"
#include "glsweep/datagen.hpp"
#include "glsweep/eig.hpp"
#include "glsweep/naive.hpp"

namespace glsweep::bench {

enum class Engine { naive, chol, eig };
enum class Axis { n, m, t };

inline Engine parse_engine(std::string_view s) {
  if (s == "naive") return Engine::naive;
  if (s == "chol") return Engine::chol;
  if (s == "eig") return Engine::eig;
  throw ConfigError("unknown engine '" + std::string(s) + "' (expected naive | chol | eig)");
}

inline const char* to_string(Engine e) noexcept {
  return e == Engine::naive ? "naive" : e == Engine::chol ? "chol" : "eig";
}

inline Axis parse_axis(std::string_view s) {
  if (s == "n") return Axis::n;
  if (s == "m") return Axis::m;
  if (s == "t") return Axis::t;
  throw ConfigError("unknown axis '" + std::string(s) + "' (expected n | m | t)");
}

inline const char* to_string(Axis a) noexcept { return a == Axis::n ? "n" : a == Axis::m ? "m" : "t"; }

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double ci_low = 0.0;   // 95% interval on the slope
  double ci_high = 0.0;
  std::size_t points = 0;
};

/// Two-sided 95% Student t quantile.
inline double t_quantile_975(std::size_t df) {
  static constexpr double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
                                     2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086};
  if (df == 0) return INFINITY;
  return df <= 20 ? table[df - 1] : 1.96 + 2.4 / static_cast<double>(df);
}

/// Least-squares fit of log(y) = a + b log(x).
inline SlopeFit fit_loglog(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw StructuralError("fit_loglog: size mismatch");
  const std::size_t k = x.size();
  if (k < 2) throw ConfigError("slope fit needs at least 2 points");
  double mx = 0.0, my = 0.0;
  std::vector<double> lx(k), ly(k);
  for (std::size_t i = 0; i < k; ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw NumericError("fit_loglog: values must be positive", i);
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
    mx += lx[i];
    my += ly[i];
  }
  mx /= double(k);
  my /= double(k);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) throw ConfigError("slope fit needs at least two distinct sizes");
  SlopeFit f;
  f.points = k;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (k > 2) {
    double rss = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double r = ly[i] - (f.intercept + f.slope * lx[i]);
      rss += r * r;
    }
    const double se = std::sqrt(rss / double(k - 2) / sxx);
    const double h = t_quantile_975(k - 2) * se;
    f.ci_low = f.slope - h;
    f.ci_high = f.slope + h;
  } else {
    f.ci_low = -INFINITY;
    f.ci_high = INFINITY;
  }
  return f;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

/// Named phases a fit can target.
inline constexpr const char* kPhases[] = {"wall", "precompute", "transform", "setup", "loop", "read"};

inline double phase_value(const SweepSummary& s, std::string_view phase) {
  if (phase == "wall") return s.times.wall;
  if (phase == "precompute") return s.times.precompute;
  if (phase == "transform") return s.times.transform;
  if (phase == "setup") return s.times.setup;
  if (phase == "loop") return s.times.loop;
  if (phase == "read") return s.times.read;
  throw ConfigError("unknown phase '" + std::string(phase) + "'");
}

struct Expectation {
  std::string phase;
  double slope;
  double tolerance;
};

inline constexpr double kLinearSlopeTolerance = 0.15;
inline constexpr double kSuperlinearSlopeTolerance = 0.3;

/// Growth predicted by the cost model for each engine and axis.
inline std::vector<Expectation> expectations(Engine e, Axis a) {
  switch (e) {
    case Engine::naive:
      if (a == Axis::n) return {{"wall", 3.0, kSuperlinearSlopeTolerance}};
      return {{"wall", 1.0, kLinearSlopeTolerance}};
    case Engine::chol:
      if (a == Axis::n) return {{"transform", 2.0, kSuperlinearSlopeTolerance}, {"loop", 1.0, kSuperlinearSlopeTolerance}};
      if (a == Axis::m) return {{"wall", 1.0, kLinearSlopeTolerance}, {"transform", 1.0, kLinearSlopeTolerance}};
      return {{"wall", 1.0, kLinearSlopeTolerance}};
    case Engine::eig:
      if (a == Axis::n) return {{"loop", 1.0, kSuperlinearSlopeTolerance}, {"transform", 2.0, kSuperlinearSlopeTolerance}};
      if (a == Axis::m) return {{"loop", 1.0, kLinearSlopeTolerance}, {"transform", 1.0, kLinearSlopeTolerance}};
      return {{"loop", 1.0, kLinearSlopeTolerance}};
  }
  return {};
}

struct BenchConfig {
  Engine engine = Engine::chol;
  Axis axis = Axis::n;
  std::vector<std::size_t> sizes;
  std::size_t n = 256, m = 1000, t = 1, c = 2;  // fixed values for the other axes
  std::size_t repetitions = 3;
  std::size_t block_size = kDefaultBlockSize;
  std::uint64_t seed = 1;
  kernels::Backend backend = kernels::default_backend();
  bool allow_drop_smallest = true;
};

struct BenchPoint {
  std::size_t size = 0;
  std::vector<SweepSummary> runs;
  double median(std::string_view phase) const {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(phase_value(r, phase));
    return bench::median(std::move(v));
  }
  std::size_t peak_bytes() const {
    std::size_t p = 0;
    for (const auto& r : runs) p = std::max(p, r.peak_bytes);
    return p;
  }
};

struct PhaseVerdict {
  Expectation expected;
  SlopeFit fit;
  bool dropped_smallest = false;
  bool pass = false;
};

struct BenchReport {
  BenchConfig config;
  std::vector<BenchPoint> points;
  std::vector<PhaseVerdict> verdicts;
  double overlap_efficiency = 0.0;  // largest point, median run

  bool pass() const {
    return std::all_of(verdicts.begin(), verdicts.end(), [](const PhaseVerdict& v) { return v.pass; });
  }
};

inline constexpr std::size_t kMinBenchPoints = 4;

/// In-memory synthetic instance of the requested size.
struct Instance {
  Dataset ds;
  Matrix genotypes;
};

inline Instance make_instance(std::size_t n, std::size_t m, std::size_t t, std::size_t c, std::uint64_t seed,
                              kernels::Backend backend) {
  auto g = datagen::gen_genotype_matrix(n, m, seed);
  auto phi = datagen::gen_kinship(n, seed, backend);
  auto xl = datagen::gen_covariates(n, c, seed);
  MemoryBlockSource src(g.view());
  std::vector<datagen::TraitSpec> specs(t);
  auto traits = datagen::gen_traits(phi, xl, src, specs, seed, backend);
  Dimensions dims{n, m, t, c};
  return {make_dataset(dims, std::move(phi), std::move(xl), std::move(traits.phenotypes), std::move(traits.params)),
          std::move(g)};
}

/// One sweep of the chosen engine over all traits, results discarded.
inline SweepSummary run_engine(Engine e, const Dataset& ds, BlockSource& genotypes, const SweepOptions& base) {
  CountingResultSink sink;
  MemoryTracker::reset_peak();
  switch (e) {
    case Engine::naive: {
      SweepOptions opt = base;
      return sweep_naive(ds, genotypes, sink, opt);
    }
    case Engine::chol: {
      SweepSummary total;
      const auto start = Clock::now();
      for (std::uint32_t j = 0; j < ds.dims.t; ++j) accumulate(total, sweep_chol(ds, j, genotypes, sink, base));
      total.times.wall = seconds_since(start);
      return total;
    }
    case Engine::eig: {
      EigOptions opt;
      static_cast<SweepOptions&>(opt) = base;
      opt.in_memory_rotation = true;
      return sweep_eig(ds, genotypes, sink, opt);
    }
  }
  return {};
}

inline PhaseVerdict judge(const Expectation& ex, const std::vector<BenchPoint>& pts, bool allow_drop) {
  auto fit_from = [&](std::size_t first) {
    std::vector<double> x, y;
    for (std::size_t i = first; i < pts.size(); ++i) {
      x.push_back(double(pts[i].size));
      y.push_back(std::max(pts[i].median(ex.phase), 1e-9));
    }
    return fit_loglog(x, y);
  };
  PhaseVerdict v{ex, fit_from(0)};
  v.pass = std::abs(v.fit.slope - ex.slope) <= ex.tolerance;
  // The smallest size is the one most distorted by fixed overheads and cache effects.
  if (!v.pass && allow_drop && pts.size() > kMinBenchPoints) {
    const auto refit = fit_from(1);
    if (std::abs(refit.slope - ex.slope) <= ex.tolerance) {
      v.fit = refit;
      v.dropped_smallest = true;
      v.pass = true;
    }
  }
  return v;
}

template <class Progress>
BenchReport run_bench(const BenchConfig& cfg, Progress&& progress) {
  if (cfg.sizes.size() < kMinBenchPoints) {
    throw ConfigError("bench needs at least " + std::to_string(kMinBenchPoints) + " sizes, got " + std::to_string(cfg.sizes.size()));
  }
  if (cfg.repetitions < 1) throw ConfigError("repetitions must be at least 1");
  auto sorted = cfg.sizes;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw ConfigError("bench sizes must be distinct");

  BenchReport report;
  report.config = cfg;
  report.config.sizes = sorted;
  SweepOptions opt;
  opt.block_size = cfg.block_size;
  opt.backend = cfg.backend;
  opt.policy = cfg.engine == Engine::naive ? ErrorPolicy::fail_fast : ErrorPolicy::skip_and_log;

  for (std::size_t s : sorted) {
    std::size_t n = cfg.n, m = cfg.m, t = cfg.t;
    (cfg.axis == Axis::n ? n : cfg.axis == Axis::m ? m : t) = s;
    auto inst = make_instance(n, m, t, cfg.c, cfg.seed, cfg.backend);
    MemoryBlockSource src(inst.genotypes.view());
    BenchPoint pt{s, {}};
    for (std::size_t r = 0; r < cfg.repetitions; ++r) pt.runs.push_back(run_engine(cfg.engine, inst.ds, src, opt));
    progress(pt);
    report.points.push_back(std::move(pt));
  }
  for (const auto& ex : expectations(cfg.engine, cfg.axis))
    report.verdicts.push_back(judge(ex, report.points, cfg.allow_drop_smallest));

  auto runs = report.points.back().runs;
  std::sort(runs.begin(), runs.end(), [](const auto& a, const auto& b) { return a.times.wall < b.times.wall; });
  report.overlap_efficiency = runs[runs.size() / 2].overlap().efficiency();
  return report;
}

inline BenchReport run_bench(const BenchConfig& cfg) {
  return run_bench(cfg, [](const BenchPoint&) {});
}

}  // namespace glsweep::bench
