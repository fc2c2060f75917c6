#pragma once

// Dataset bundles on disk and the scenario presets that generate them.
//
//   DIR/kinship.mat      n x n
//   DIR/covariates.mat   n x (1 + c), column 0 all ones
//   DIR/genotypes.mat    n x m dosages
//   DIR/phenotypes.mat   n x t
//   DIR/params.json      [{"sigma2": s, "h2": h}, ...] one entry per trait
//   DIR/manifest.json    generation parameters and planted effects

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "glsweep/datagen.hpp"
#include "glsweep/model.hpp"
#include "glsweep/stream_io.hpp"

namespace glsweep {

struct BundlePaths {
  std::filesystem::path kinship, covariates, genotypes, phenotypes, params;

  static BundlePaths in(const std::filesystem::path& dir) {
    return {dir / "kinship.mat", dir / "covariates.mat", dir / "genotypes.mat", dir / "phenotypes.mat", dir / "params.json"};
  }
};

inline nlohmann::json params_to_json(std::span<const TraitParams> params) {
  auto arr = nlohmann::json::array();
  for (const auto& p : params) arr.push_back({{"sigma2", p.sigma2}, {"h2", p.h2}});
  return arr;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("missing file: " + path.string());
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what(), e.byte);
  }
}

inline std::vector<TraitParams> read_params(const std::filesystem::path& path) {
  const auto j = read_json(path);
  if (!j.is_array()) throw FormatError(path.string() + ": expected a JSON array of {sigma2, h2}", 0);
  std::vector<TraitParams> out;
  for (const auto& e : j) {
    if (!e.is_object() || !e.contains("sigma2") || !e.contains("h2") || !e["sigma2"].is_number() || !e["h2"].is_number()) {
      throw FormatError(path.string() + ": trait " + std::to_string(out.size()) + " lacks numeric sigma2/h2", 0);
    }
    out.push_back({e["sigma2"].get<double>(), e["h2"].get<double>()});
  }
  return out;
}

/// Loads everything but the genotypes, which stay on disk for streaming.
/// Header shapes are cross-checked before any payload is read.
inline Dataset load_dataset(const BundlePaths& p) {
  const auto hk = read_header(p.kinship);
  const auto hc = read_header(p.covariates);
  const auto hg = read_header(p.genotypes);
  const auto hy = read_header(p.phenotypes);
  const std::size_t n = hk.rows;
  auto mismatch = [](const std::filesystem::path& f, const std::string& what) {
    return ConfigError("inconsistent bundle: " + f.string() + " " + what);
  };
  if (hk.cols != n) throw mismatch(p.kinship, "is " + shape_string(hk.rows, hk.cols) + ", expected square");
  if (hc.rows != n || hc.cols < 1) throw mismatch(p.covariates, "is " + shape_string(hc.rows, hc.cols) + ", expected n=" + std::to_string(n) + " rows");
  if (hg.rows != n) throw mismatch(p.genotypes, "has " + std::to_string(hg.rows) + " rows, expected " + std::to_string(n));
  if (hy.rows != n) throw mismatch(p.phenotypes, "has " + std::to_string(hy.rows) + " rows, expected " + std::to_string(n));
  auto params = read_params(p.params);
  if (params.size() != hy.cols) {
    throw mismatch(p.params, "lists " + std::to_string(params.size()) + " traits, phenotypes have " + std::to_string(hy.cols));
  }
  Dimensions dims{n, hg.cols, hy.cols, hc.cols - 1};
  return make_dataset(dims, {read_matrix(p.kinship)}, {read_matrix(p.covariates)}, {read_matrix(p.phenotypes)},
                      std::move(params));
}

// ---------------------------------------------------------------------------
// Scenario presets

enum class Preset { A, B, C, custom };

inline Preset parse_preset(std::string_view s) {
  if (s == "A" || s == "a") return Preset::A;
  if (s == "B" || s == "b") return Preset::B;
  if (s == "C" || s == "c") return Preset::C;
  if (s == "custom") return Preset::custom;
  throw ConfigError("unknown preset '" + std::string(s) + "' (expected A | B | C | custom)");
}

inline const char* to_string(Preset p) noexcept {
  switch (p) {
    case Preset::A: return "A";
    case Preset::B: return "B";
    case Preset::C: return "C";
    case Preset::custom: return "custom";
  }
  return "?";
}

/// Unscaled experiment grid: one axis varies, the others are fixed.
struct PresetGrid {
  std::vector<std::uint64_t> n, m, t;
  std::size_t c = 2;
};

inline PresetGrid preset_grid(Preset p) {
  switch (p) {
    case Preset::A: return {{1000, 5000, 10000, 20000, 40000}, {10'000'000}, {1}, 2};
    case Preset::B: return {{10000}, {1'000'000, 10'000'000, 36'000'000}, {1}, 2};
    case Preset::C: return {{1000}, {1'000'000}, {1, 10, 100, 1000, 10000, 100000}, 2};
    case Preset::custom: return {{128}, {512}, {1}, 2};
  }
  return {};
}

inline constexpr std::size_t kMinScaledN = 64;

struct ScenarioSpec {
  Preset preset = Preset::custom;
  std::uint64_t scale = 1;
  std::uint64_t seed = 1;
  std::optional<std::size_t> point;  // index along the preset's varying axis; default the largest
  std::optional<std::size_t> n, m, t, c;
};

struct ScenarioSize {
  std::size_t n, m, t, c;
};

/// Divides every preset size by the scale, then clamps n >= 64, m >= 1, t >= 1.
/// Explicit n/m/t/c override the result.
inline ScenarioSize resolve_scenario(const ScenarioSpec& s) {
  if (s.scale < 1) throw ConfigError("scale must be at least 1");
  const auto grid = preset_grid(s.preset);
  auto pick = [&](const std::vector<std::uint64_t>& v, const char* axis) {
    if (v.size() == 1) return v[0];
    const std::size_t i = s.point.value_or(v.size() - 1);
    if (i >= v.size()) {
      throw ConfigError(std::string("preset ") + to_string(s.preset) + " has " + std::to_string(v.size()) + " " + axis +
                        " values, point " + std::to_string(i) + " requested");
    }
    return v[i];
  };
  ScenarioSize out{};
  out.n = std::max<std::size_t>(kMinScaledN, pick(grid.n, "n") / s.scale);
  out.m = std::max<std::size_t>(1, pick(grid.m, "m") / s.scale);
  out.t = std::max<std::size_t>(1, pick(grid.t, "t") / s.scale);
  out.c = grid.c;
  if (s.n) out.n = *s.n;
  if (s.m) out.m = *s.m;
  if (s.t) out.t = *s.t;
  if (s.c) out.c = *s.c;
  if (out.n < out.c + 2) throw ConfigError("n=" + std::to_string(out.n) + " is smaller than the design width " + std::to_string(out.c + 2));
  if (out.m < 1 || out.t < 1) throw ConfigError("m and t must be at least 1");
  return out;
}

struct GeneratedBundle {
  ScenarioSize size;
  BundlePaths paths;
  nlohmann::json manifest;
};

/// Writes a complete bundle into `dir`, creating it if needed.
inline GeneratedBundle gen_scenario(const ScenarioSpec& spec, const std::filesystem::path& dir,
                                    std::span<const datagen::TraitSpec> traits = {}) {
  const ScenarioSize size = resolve_scenario(spec);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const auto paths = BundlePaths::in(dir);

  datagen::gen_genotypes(paths.genotypes, size.n, size.m, spec.seed);
  auto phi = datagen::gen_kinship(size.n, spec.seed);
  write_matrix(paths.kinship, phi.phi.view());
  auto xl = datagen::gen_covariates(size.n, size.c, spec.seed);
  write_matrix(paths.covariates, xl.xl.view());

  std::vector<datagen::TraitSpec> specs(traits.begin(), traits.end());
  specs.resize(size.t);
  FileBlockSource genotypes(paths.genotypes);
  auto gen = datagen::gen_traits(phi, xl, genotypes, specs, spec.seed);
  write_matrix(paths.phenotypes, gen.phenotypes.y.view());
  write_json(paths.params, params_to_json(gen.params));

  const auto grid = preset_grid(spec.preset);
  nlohmann::json truth = nlohmann::json::array();
  for (std::size_t j = 0; j < gen.truth.size(); ++j) {
    const auto& p = gen.truth[j];
    truth.push_back({{"trait", j},
                     {"sigma2", p.params.sigma2},
                     {"h2", p.params.h2},
                     {"fixed_effects", p.fixed_effects},
                     {"causal_snps", p.causal_snps},
                     {"causal_effects", p.causal_effects}});
  }
  nlohmann::json manifest = {
      {"generator", "glsweep datagen"},
      {"rng", "mt19937_64 seeded via splitmix64(seed, stream, index)"},
      {"preset", to_string(spec.preset)},
      {"preset_unscaled", {{"n", grid.n}, {"m", grid.m}, {"t", grid.t}, {"c", grid.c}}},
      {"scale", spec.scale},
      {"point", spec.point ? nlohmann::json(*spec.point) : nlohmann::json("largest")},
      {"seed", spec.seed},
      {"n", size.n},
      {"m", size.m},
      {"t", size.t},
      {"c", size.c},
      {"w", size.c + 2},
      {"kinship", "0.95 A A^T / (4n) + 0.05 I, unit diagonal"},
      {"covariates", "intercept, sex ~ Bernoulli(0.5), age ~ U(20, 80), further columns N(0, 1)"},
      {"genotypes", "binomial(2, f), f ~ U(0.05, 0.5) per SNP"},
      {"traits", truth},
  };
  write_json(dir / "manifest.json", manifest);
  return {size, paths, std::move(manifest)};
}

}  // namespace glsweep
