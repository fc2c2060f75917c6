#pragma once

// Argument parsing for the glsweep executable; kept in a header so the tests
// can drive the exact same entry point.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "glsweep/app.hpp"

namespace glsweep::cli {

/// "512", "64K", "3M", "2G" (binary multiples) to bytes.
inline std::uint64_t parse_bytes(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("cannot parse byte count '" + s + "'");
  }
  const std::string suffix = s.substr(used);
  double mult = 1.0;
  if (suffix.empty() || suffix == "B") mult = 1.0;
  else if (suffix == "K" || suffix == "KiB") mult = 1024.0;
  else if (suffix == "M" || suffix == "MiB") mult = 1024.0 * 1024.0;
  else if (suffix == "G" || suffix == "GiB") mult = 1024.0 * 1024.0 * 1024.0;
  else throw ConfigError("unknown byte suffix in '" + s + "'");
  if (!(v >= 0.0)) throw ConfigError("byte count must be non-negative: '" + s + "'");
  return static_cast<std::uint64_t>(v * mult);
}

inline std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t comma = std::min(s.find(',', pos), s.size());
    const std::string item = s.substr(pos, comma - pos);
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 1) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("bad size '" + item + "' in --sizes");
    }
    pos = comma + 1;
  }
  return out;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Mixed-model GWAS sweeps over sequences of generalized least-squares problems", "glsweep"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // datagen
  std::string preset = "custom";
  app::DatagenConfig dg;
  std::optional<std::size_t> dn, dm, dt, dc, dpoint;
  std::string dout;
  auto* datagen = app.add_subcommand("datagen", "Generate a synthetic dataset bundle");
  datagen->add_option("--preset", preset, "Scenario preset: A (vary n), B (vary m), C (vary t) or custom")->capture_default_str();
  datagen->add_option("--scale", dg.scenario.scale, "Divide preset sizes by this factor (n is clamped to >= 64)")->capture_default_str();
  datagen->add_option("--seed", dg.scenario.seed, "Random seed")->capture_default_str();
  datagen->add_option("--point", dpoint, "Index along the preset's varying axis (default: largest)");
  datagen->add_option("--out", dout, "Output directory")->required();
  datagen->add_option("--n", dn, "Override sample size");
  datagen->add_option("--m", dm, "Override number of SNPs");
  datagen->add_option("--t", dt, "Override number of traits");
  datagen->add_option("--c", dc, "Override number of covariates");

  // solve
  app::RunConfig rc;
  std::string engine = "chol", backend = std::string(kernels::to_string(kernels::default_backend())), policy, budget = "0";
  std::string data, kin, cov, geno, pheno, params, output, scratch;
  std::optional<std::uint32_t> trait;
  bool no_double_buffering = false;
  auto* solve = app.add_subcommand("solve", "Run one engine over a dataset bundle and write a result file");
  solve->add_option("--engine", engine, "naive | chol | eig")->capture_default_str();
  solve->add_option("--data", data, "Bundle directory (kinship.mat, covariates.mat, genotypes.mat, phenotypes.mat, params.json)");
  solve->add_option("--kinship", kin, "Kinship matrix file (overrides --data)");
  solve->add_option("--covariates", cov, "Covariate matrix file (overrides --data)");
  solve->add_option("--genotypes", geno, "Genotype matrix file (overrides --data)");
  solve->add_option("--phenotypes", pheno, "Phenotype matrix file (overrides --data)");
  solve->add_option("--params", params, "Trait parameter JSON (overrides --data)");
  solve->add_option("--out", output, "Result file to write")->required();
  solve->add_option("--block-size", rc.block_size, "SNP columns per streamed block")->capture_default_str();
  solve->add_option("--trait", trait, "Single trait index (chol only; default all traits)");
  solve->add_option("--workers", rc.workers, "Worker threads for the per-SNP loop; 1 is fully serial")->capture_default_str();
  solve->add_option("--kernel-backend", backend, "reference | optimized")->capture_default_str();
  solve->add_option("--error-policy", policy, "fail_fast | skip_and_log (default: fail_fast for naive, skip_and_log otherwise)");
  solve->add_flag("--no-double-buffering", no_double_buffering, "Read blocks serially instead of prefetching");
  solve->add_flag("--clamp-spectral", rc.clamp_spectral, "Clamp non-positive spectral weights instead of failing the trait");
  solve->add_option("--scratch-dir", scratch, "Directory for rotated genotypes (eig; default $GLS_SCRATCH_DIR, then the temp dir)");
  solve->add_flag("--in-memory-rotation", rc.in_memory_rotation, "Keep rotated genotypes in memory when they fit --memory-budget (eig)");
  solve->add_option("--memory-budget", budget, "Byte limit for --in-memory-rotation, e.g. 512M; 0 means no limit")->capture_default_str();
  solve->add_flag("--overwrite-kinship", rc.overwrite_kinship, "Let the eigenvectors reuse the kinship storage (eig)");

  // verify
  std::string file_a, file_b;
  double tolerance = 1e-8;
  auto* verify = app.add_subcommand("verify", "Compare two result files record by record");
  verify->add_option("a", file_a, "First result file")->required();
  verify->add_option("b", file_b, "Second result file")->required();
  verify->add_option("--tolerance", tolerance, "Maximum allowed relative difference")->capture_default_str();

  // bench
  bench::BenchConfig bc;
  std::string axis = "n", bengine = "chol", sizes, bbackend = std::string(kernels::to_string(kernels::default_backend()));
  auto* benchcmd = app.add_subcommand("bench", "Time an engine along one axis and fit log-log slopes");
  benchcmd->add_option("--axis", axis, "n | m | t")->capture_default_str();
  benchcmd->add_option("--sizes", sizes, "Comma-separated sizes along the axis (at least 4)")->required();
  benchcmd->add_option("--engine", bengine, "naive | chol | eig")->capture_default_str();
  benchcmd->add_option("--reps", bc.repetitions, "Repetitions per size; the median is reported")->capture_default_str();
  benchcmd->add_option("--n", bc.n, "Sample size when not the axis")->capture_default_str();
  benchcmd->add_option("--m", bc.m, "SNP count when not the axis")->capture_default_str();
  benchcmd->add_option("--t", bc.t, "Trait count when not the axis")->capture_default_str();
  benchcmd->add_option("--c", bc.c, "Covariate count")->capture_default_str();
  benchcmd->add_option("--block-size", bc.block_size, "SNP columns per block")->capture_default_str();
  benchcmd->add_option("--seed", bc.seed, "Random seed")->capture_default_str();
  benchcmd->add_option("--kernel-backend", bbackend, "reference | optimized")->capture_default_str();
  bool keep_smallest = false;
  benchcmd->add_flag("--keep-smallest", keep_smallest, "Never drop the smallest size from a failing fit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? 0 : exit_code(ErrorKind::config);
  }

  return app::guarded(err, [&]() -> int {
    if (datagen->parsed()) {
      dg.scenario.preset = parse_preset(preset);
      dg.scenario.n = dn;
      dg.scenario.m = dm;
      dg.scenario.t = dt;
      dg.scenario.c = dc;
      dg.scenario.point = dpoint;
      dg.out = dout;
      return app::run_datagen(dg, out, err);
    }
    if (solve->parsed()) {
      rc.engine = app::parse_engine_name(engine);
      rc.data_dir = data;
      rc.kinship = kin;
      rc.covariates = cov;
      rc.genotypes = geno;
      rc.phenotypes = pheno;
      rc.params = params;
      rc.output = output;
      rc.trait = trait;
      rc.backend = kernels::parse_backend(backend);
      if (!policy.empty()) rc.policy = parse_error_policy(policy);
      rc.double_buffering = !no_double_buffering;
      rc.scratch_dir = scratch;
      rc.memory_budget = parse_bytes(budget);
      return app::run_solve(rc, out, err);
    }
    if (verify->parsed()) return app::run_verify(file_a, file_b, tolerance, out, err);
    bc.engine = bench::parse_engine(bengine);
    bc.axis = bench::parse_axis(axis);
    bc.sizes = parse_sizes(sizes);
    bc.backend = kernels::parse_backend(bbackend);
    bc.allow_drop_smallest = !keep_smallest;
    return app::run_bench(bc, out, err);
  });
}

}  // namespace glsweep::cli
