#pragma once

// The four front-end operations behind the command-line tool. Each returns a
// process exit code and reports on the given streams as key=value lines.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "glsweep/bench.hpp"
#include "glsweep/chol.hpp"
#include "glsweep/dataset_io.hpp"
#include "glsweep/eig.hpp"
#include "glsweep/naive.hpp"
#include "glsweep/results.hpp"

namespace glsweep::app {

/// Exit code for a comparison or benchmark that ran cleanly but did not meet its threshold.
inline constexpr int kExitCheckFailed = 1;

/// Runs `body`, mapping library errors to their exit codes.
template <class Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::bad_alloc&) {
    err << "error: out of memory\n";
    return exit_code(ErrorKind::io);
  } catch (const std::system_error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(ErrorKind::io);
  }
}

// ---------------------------------------------------------------------------

struct DatagenConfig {
  ScenarioSpec scenario;
  std::filesystem::path out;
};

inline int run_datagen(const DatagenConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (cfg.out.empty()) throw ConfigError("datagen: --out is required");
    const auto b = gen_scenario(cfg.scenario, cfg.out);
    out << "preset=" << to_string(cfg.scenario.preset) << '\n'
        << "scale=" << cfg.scenario.scale << '\n'
        << "seed=" << cfg.scenario.seed << '\n'
        << "n=" << b.size.n << '\n'
        << "m=" << b.size.m << '\n'
        << "t=" << b.size.t << '\n'
        << "c=" << b.size.c << '\n'
        << "w=" << b.size.c + 2 << '\n'
        << "out=" << cfg.out.string() << '\n';
    return 0;
  });
}

// ---------------------------------------------------------------------------

enum class EngineName { naive, chol, eig };

inline EngineName parse_engine_name(std::string_view s) {
  switch (bench::parse_engine(s)) {
    case bench::Engine::naive: return EngineName::naive;
    case bench::Engine::chol: return EngineName::chol;
    case bench::Engine::eig: return EngineName::eig;
  }
  return EngineName::naive;
}

struct RunConfig {
  EngineName engine = EngineName::chol;
  std::filesystem::path data_dir;
  std::filesystem::path kinship, covariates, genotypes, phenotypes, params;  // override data_dir entries
  std::filesystem::path output;
  std::size_t block_size = kDefaultBlockSize;
  std::optional<std::uint32_t> trait;  // chol only
  unsigned workers = 1;
  kernels::Backend backend = kernels::default_backend();
  std::optional<ErrorPolicy> policy;   // default: fail_fast for naive, skip_and_log otherwise
  bool double_buffering = true;
  bool clamp_spectral = false;
  // eig only
  std::filesystem::path scratch_dir;
  bool in_memory_rotation = false;
  std::uint64_t memory_budget = 0;
  bool overwrite_kinship = false;
  std::size_t max_failure_lines = 20;
};

inline BundlePaths resolve_paths(const RunConfig& cfg) {
  BundlePaths p = cfg.data_dir.empty() ? BundlePaths{} : BundlePaths::in(cfg.data_dir);
  if (!cfg.kinship.empty()) p.kinship = cfg.kinship;
  if (!cfg.covariates.empty()) p.covariates = cfg.covariates;
  if (!cfg.genotypes.empty()) p.genotypes = cfg.genotypes;
  if (!cfg.phenotypes.empty()) p.phenotypes = cfg.phenotypes;
  if (!cfg.params.empty()) p.params = cfg.params;
  const std::pair<const char*, const std::filesystem::path*> all[] = {
      {"kinship", &p.kinship}, {"covariates", &p.covariates}, {"genotypes", &p.genotypes},
      {"phenotypes", &p.phenotypes}, {"params", &p.params}};
  for (const auto& [name, path] : all) {
    if (path->empty()) throw ConfigError(std::string("no ") + name + " path given (use --data or --" + name + ")");
    if (!std::filesystem::exists(*path)) throw ConfigError(std::string("missing ") + name + " file: " + path->string());
  }
  return p;
}

inline void print_summary(std::ostream& out, const SweepSummary& s) {
  const auto& t = s.times;
  out << std::setprecision(6) << "results=" << s.results << '\n'
      << "failures=" << s.failures << '\n'
      << "precompute_s=" << t.precompute << '\n'
      << "transform_s=" << t.transform << '\n'
      << "setup_s=" << t.setup << '\n'
      << "loop_s=" << t.loop << '\n'
      << "read_s=" << t.read << '\n'
      << "read_wait_s=" << t.read_wait << '\n'
      << "write_s=" << t.write << '\n'
      << "wall_s=" << t.wall << '\n'
      << "overlap_efficiency=" << s.overlap().efficiency() << '\n'
      << "peak_bytes=" << s.peak_bytes << '\n'
      << "rotation_products=" << s.rotation_products << '\n'
      << "whitening_calls=" << s.whitening_calls << '\n'
      << "rotation_in_memory=" << (s.rotation_in_memory ? 1 : 0) << '\n';
}

inline int run_solve(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (cfg.output.empty()) throw ConfigError("solve: --out is required");
    if (cfg.block_size < 1) throw ConfigError("--block-size must be at least 1");
    if (cfg.workers < 1) throw ConfigError("--workers must be at least 1");
    if (cfg.trait && cfg.engine != EngineName::chol) throw ConfigError("--trait applies to the chol engine only");
    if (cfg.engine != EngineName::eig && (cfg.in_memory_rotation || cfg.overwrite_kinship || !cfg.scratch_dir.empty())) {
      throw ConfigError("--scratch-dir, --in-memory-rotation and --overwrite-kinship apply to the eig engine only");
    }
    if (!cfg.scratch_dir.empty() && !std::filesystem::is_directory(cfg.scratch_dir)) {
      throw ConfigError("scratch directory does not exist: " + cfg.scratch_dir.string());
    }
    const auto paths = resolve_paths(cfg);
    Dataset ds = load_dataset(paths);
    FileBlockSource genotypes(paths.genotypes);

    SweepOptions opt;
    opt.block_size = cfg.block_size;
    opt.workers = cfg.workers;
    opt.backend = cfg.backend;
    opt.policy = cfg.policy.value_or(cfg.engine == EngineName::naive ? ErrorPolicy::fail_fast : ErrorPolicy::skip_and_log);
    opt.double_buffering = cfg.double_buffering;
    opt.spectral.clamp = cfg.clamp_spectral;
    const auto w = static_cast<std::uint32_t>(ds.dims.width());

    SweepSummary summary;
    std::uint64_t bytes = 0;
    const char* engine = "";
    switch (cfg.engine) {
      case EngineName::naive: {
        engine = "naive";
        ResultFileWriter writer(cfg.output, ds.dims.m, static_cast<std::uint32_t>(ds.dims.t), w);
        summary = sweep_naive(ds, genotypes, writer, opt);
        writer.finish();
        summary.times.write = writer.write_seconds();
        bytes = writer.bytes_written();
        break;
      }
      case EngineName::chol: {
        engine = "chol";
        const std::uint32_t first = cfg.trait.value_or(0);
        const std::uint32_t count = cfg.trait ? 1 : static_cast<std::uint32_t>(ds.dims.t);
        if (first >= ds.dims.t) throw ConfigError("--trait " + std::to_string(first) + " out of range (t=" + std::to_string(ds.dims.t) + ")");
        ResultFileWriter writer(cfg.output, ds.dims.m, count, w, first);
        const auto start = Clock::now();
        for (std::uint32_t j = first; j < first + count; ++j) accumulate(summary, sweep_chol(ds, j, genotypes, writer, opt));
        writer.finish();
        summary.times.wall = seconds_since(start);
        summary.times.write = writer.write_seconds();
        bytes = writer.bytes_written();
        break;
      }
      case EngineName::eig: {
        engine = "eig";
        EigOptions eo;
        static_cast<SweepOptions&>(eo) = opt;
        eo.scratch_dir = cfg.scratch_dir;
        eo.in_memory_rotation = cfg.in_memory_rotation;
        eo.memory_budget_bytes = cfg.memory_budget;
        ResultFileWriter writer(cfg.output, ds.dims.m, static_cast<std::uint32_t>(ds.dims.t), w);
        const auto start = Clock::now();
        summary = cfg.overwrite_kinship ? sweep_eig_overwrite_kinship(ds, genotypes, writer, eo)
                                        : sweep_eig(ds, genotypes, writer, eo);
        writer.finish();
        summary.times.wall = seconds_since(start);
        summary.times.write += writer.write_seconds();
        bytes = writer.bytes_written();
        break;
      }
    }
    out << "engine=" << engine << '\n'
        << "n=" << ds.dims.n << '\n'
        << "m=" << ds.dims.m << '\n'
        << "t=" << ds.dims.t << '\n'
        << "w=" << w << '\n'
        << "block_size=" << cfg.block_size << '\n'
        << "kernel_backend=" << kernels::to_string(cfg.backend) << '\n';
    print_summary(out, summary);
    out << "output=" << cfg.output.string() << '\n' << "bytes_written=" << bytes << '\n';
    for (std::size_t i = 0; i < std::min(cfg.max_failure_lines, summary.failure_log.size()); ++i) {
      err << "skipped: " << summary.failure_log[i].message << '\n';
    }
    if (summary.failures > cfg.max_failure_lines) err << "skipped: ... " << summary.failures - cfg.max_failure_lines << " more\n";
    return 0;
  });
}

// ---------------------------------------------------------------------------

struct VerifyReport {
  double max_rel_beta = 0.0;
  double max_rel_se = 0.0;
  std::uint64_t compared = 0;
  std::uint64_t status_mismatches = 0;
  std::vector<std::pair<std::uint64_t, std::uint32_t>> mismatch_examples;
};

/// |a - b| / max(|a|, |b|, floor); the floor keeps exact zeros comparable.
inline double relative_difference(double a, double b, double floor = 1e-12) {
  if (a == b) return 0.0;
  const double d = std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
  return std::isnan(d) ? INFINITY : d;
}

inline VerifyReport compare_results(const ResultFile& a, const ResultFile& b) {
  const auto& ha = a.header;
  const auto& hb = b.header;
  if (ha.m != hb.m || ha.t != hb.t || ha.w != hb.w || ha.first_trait != hb.first_trait) {
    throw FormatError("result shapes differ: (m=" + std::to_string(ha.m) + ", t=" + std::to_string(ha.t) + ", w=" +
                          std::to_string(ha.w) + ", first_trait=" + std::to_string(ha.first_trait) + ") vs (m=" +
                          std::to_string(hb.m) + ", t=" + std::to_string(hb.t) + ", w=" + std::to_string(hb.w) +
                          ", first_trait=" + std::to_string(hb.first_trait) + ")",
                      0);
  }
  VerifyReport r;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto& x = a.records[i];
    const auto& y = b.records[i];
    if (x.status != y.status) {
      ++r.status_mismatches;
      if (r.mismatch_examples.size() < 10) r.mismatch_examples.emplace_back(x.snp_index, x.trait_index);
      continue;
    }
    if (!x.ok()) continue;
    ++r.compared;
    for (std::size_t k = 0; k < ha.w; ++k) {
      r.max_rel_beta = std::max(r.max_rel_beta, relative_difference(x.beta[k], y.beta[k]));
      r.max_rel_se = std::max(r.max_rel_se, relative_difference(x.se[k], y.se[k]));
    }
  }
  return r;
}

inline int run_verify(const std::filesystem::path& file_a, const std::filesystem::path& file_b, double tolerance,
                      std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!(tolerance >= 0.0)) throw ConfigError("--tolerance must be non-negative");
    const auto a = read_results(file_a);
    const auto b = read_results(file_b);
    for (const auto* f : {&a, &b}) {
      if (!f->header.complete) throw FormatError("result file '" + (f == &a ? file_a : file_b).string() + "' is incomplete", 8);
    }
    const auto r = compare_results(a, b);
    const bool pass = r.max_rel_beta <= tolerance && r.max_rel_se <= tolerance;
    out << std::setprecision(6) << "m=" << a.header.m << '\n'
        << "t=" << a.header.t << '\n'
        << "w=" << a.header.w << '\n'
        << "compared=" << r.compared << '\n'
        << "max_rel_beta=" << r.max_rel_beta << '\n'
        << "max_rel_se=" << r.max_rel_se << '\n'
        << "status_mismatches=" << r.status_mismatches << '\n'
        << "tolerance=" << tolerance << '\n'
        << "verdict=" << (pass ? "PASS" : "FAIL") << '\n';
    for (const auto& [snp, trait] : r.mismatch_examples) {
      err << "status mismatch: snp " << snp << ", trait " << trait << '\n';
    }
    return pass ? 0 : kExitCheckFailed;
  });
}

// ---------------------------------------------------------------------------

inline int run_bench(const bench::BenchConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    out << "engine=" << bench::to_string(cfg.engine) << '\n'
        << "axis=" << bench::to_string(cfg.axis) << '\n'
        << "repetitions=" << cfg.repetitions << '\n'
        << std::setprecision(6);
    const auto report = bench::run_bench(cfg, [&](const bench::BenchPoint& p) {
      out << "point " << bench::to_string(cfg.axis) << '=' << p.size;
      for (const char* phase : bench::kPhases) out << ' ' << phase << "_s=" << p.median(phase);
      out << " peak_bytes=" << p.peak_bytes() << '\n' << std::flush;
    });
    for (const auto& v : report.verdicts) {
      out << "fit phase=" << v.expected.phase << " slope=" << v.fit.slope << " ci=[" << v.fit.ci_low << ',' << v.fit.ci_high
          << "] expected=" << v.expected.slope << " tolerance=" << v.expected.tolerance << " points=" << v.fit.points
          << " dropped_smallest=" << (v.dropped_smallest ? 1 : 0) << " verdict=" << (v.pass ? "PASS" : "FAIL") << '\n';
    }
    out << "overlap_efficiency=" << report.overlap_efficiency << '\n' << "verdict=" << (report.pass() ? "PASS" : "FAIL") << '\n';
    return report.pass() ? 0 : kExitCheckFailed;
  });
}

}  // namespace glsweep::app
