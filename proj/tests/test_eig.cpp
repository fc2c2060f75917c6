#include <gtest/gtest.h>

#include "support.hpp"

using namespace glsweep;
using testing_support::Gen;
using testing_support::TempDir;

namespace {

std::vector<GlsResult> run_eig(const Dataset& ds, const Matrix& geno, EigOptions opt, SweepSummary* summary = nullptr) {
  MemoryBlockSource src(geno.view());
  MemoryResultSink sink;
  auto s = sweep_eig(ds, src, sink, opt);
  if (summary) *summary = s;
  return sink.sorted();
}

EigOptions memory_options(std::size_t block = 8) {
  EigOptions opt;
  opt.block_size = block;
  opt.in_memory_rotation = true;
  return opt;
}

std::vector<GlsResult> run_naive(const Dataset& ds, const Matrix& geno) {
  MemoryBlockSource src(geno.view());
  MemoryResultSink sink;
  sweep_naive(ds, src, sink, {});
  return sink.sorted();
}

struct Precomputed {
  MemoryRotationStore store;
  EigContext ctx;
};

std::unique_ptr<Precomputed> precompute(const testing_support::Problem& p, std::size_t block = 4) {
  auto out = std::unique_ptr<Precomputed>(new Precomputed{MemoryRotationStore(p.ds.dims.n, p.ds.dims.m), {}});
  MemoryBlockSource src(p.genotypes.view());
  SweepOptions opt;
  opt.block_size = block;
  out->ctx = precompute_eig(Matrix::copy_of(p.ds.kinship.phi.view()), p.ds.covariates, p.ds.phenotypes, src, out->store, opt);
  return out;
}

}  // namespace

TEST(EigPrecompute, EigenvectorsAreOrthonormalAndReconstructKinship) {
  auto p = testing_support::make_problem(1, 40, 2, 10, 2);
  auto pc = precompute(p);
  const auto& z = pc->ctx.eig.z;
  const Matrix ztz = testing_support::multiply(z, z, true);
  for (std::size_t j = 0; j < 40; ++j)
    for (std::size_t i = 0; i < 40; ++i) EXPECT_NEAR(ztz(i, j), i == j ? 1.0 : 0.0, 1e-12);
  Matrix zw = Matrix::copy_of(z.view());
  for (std::size_t j = 0; j < 40; ++j)
    for (std::size_t i = 0; i < 40; ++i) zw(i, j) *= pc->ctx.eig.w[j];
  const Matrix rec = testing_support::multiply(zw, testing_support::transpose(z));
  EXPECT_LE(relative_frobenius_difference(rec.view(), p.ds.kinship.phi.view()), 1e-12);
}

TEST(EigPrecompute, RotatedGenotypesAreZTransposeG) {
  auto p = testing_support::make_problem(2, 30, 1, 9, 1);
  auto pc = precompute(p, 4);
  Matrix rotated(30, 9);
  pc->store.source().read(0, rotated.view());
  const Matrix expect = testing_support::multiply(pc->ctx.eig.z, p.genotypes, true);
  EXPECT_LE(relative_frobenius_difference(rotated.view(), expect.view()), 1e-12);
  EXPECT_EQ(pc->ctx.rotation_products, 2u + 1u);  // one panel for 9 SNPs
}

TEST(EigPrecompute, SpectralWeightsInvertTheCovariance) {
  auto p = testing_support::make_problem(3, 25, 1, 2, 1);
  auto pc = precompute(p);
  const TraitParams tp{1.4, 0.65};
  const auto d = assemble_spectral_weights(pc->ctx.eig.w, tp);
  const auto& z = pc->ctx.eig.z;
  Matrix zd = Matrix::copy_of(z.view());
  for (std::size_t j = 0; j < 25; ++j)
    for (std::size_t i = 0; i < 25; ++i) zd(i, j) *= d[j];
  const Matrix minv = testing_support::multiply(zd, testing_support::transpose(z));
  const Matrix expect = testing_support::inverse(assemble_covariance(p.ds.kinship, tp));
  EXPECT_LE(relative_frobenius_difference(minv.view(), expect.view()), 1e-10);
}

TEST(EigSetup, TraitQuantitiesMatchDenseForm) {
  auto p = testing_support::make_problem(4, 30, 2, 3, 2);
  auto pc = precompute(p);
  for (std::uint32_t j = 0; j < 2; ++j) {
    const auto tc = setup_trait(pc->ctx, p.ds.params[j], j);
    const auto d = assemble_spectral_weights(pc->ctx.eig.w, p.ds.params[j]);
    for (std::size_t i = 0; i < 30; ++i) EXPECT_NEAR(tc.k_diag[i] * tc.k_diag[i], d[i], 1e-12 * d[i]);
    const Matrix minv = testing_support::inverse(assemble_covariance(p.ds.kinship, p.ds.params[j]));
    const Matrix& xl = p.ds.covariates.xl;
    const Matrix s = testing_support::multiply(xl, testing_support::multiply(minv, xl), true);
    EXPECT_LE(relative_frobenius_difference(tc.s_tl.view(), s.view()), 1e-10);
    Matrix y(30, 1);
    for (std::size_t i = 0; i < 30; ++i) y(i, 0) = p.ds.phenotype(j)[i];
    const Matrix b = testing_support::multiply(xl, testing_support::multiply(minv, y), true);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(tc.b_t[c], b(c, 0), 1e-10 * std::max(1.0, std::abs(b(c, 0))));
  }
  EXPECT_THROW(setup_trait(pc->ctx, p.ds.params[0], 2), ConfigError);
}

TEST(EigSetup, IdentityKinshipGivesUniformWeights) {
  auto p = testing_support::make_problem(5, 16, 1, 2, 1);
  p.ds.kinship = {Matrix::identity(16)};
  auto pc = precompute(p);
  for (double w : pc->ctx.eig.w) EXPECT_NEAR(w, 1.0, 1e-14);
  const auto tc = setup_trait(pc->ctx, {2.0, 0.5}, 0);
  for (double k : tc.k_diag) EXPECT_NEAR(k, 1.0 / std::sqrt(2.0), 1e-14);
}

TEST(EigSweep, MatchesNaive) {
  auto p = testing_support::make_problem(6, 48, 2, 21, 4);
  const auto c = testing_support::compare(run_eig(p.ds, p.genotypes, memory_options(5)), run_naive(p.ds, p.genotypes));
  EXPECT_EQ(c.status_mismatches, 0u);
  EXPECT_LE(c.beta, 1e-8);
  EXPECT_LE(c.se, 1e-8);
}

TEST(EigSweep, MatchesExplicitInverseOracle) {
  auto p = testing_support::make_problem(7, 24, 1, 5, 2);
  for (const auto& r : run_eig(p.ds, p.genotypes, memory_options(2))) {
    ASSERT_TRUE(r.ok());
    const Matrix x = design_matrix(p.ds.covariates, p.genotypes.col(r.snp_index));
    const auto y = p.ds.phenotype(r.trait_index);
    const auto& tp = p.ds.params[r.trait_index];
    const auto o = testing_support::gls_by_inversion(p.ds.kinship.phi, tp.sigma2, tp.h2, x, {y.begin(), y.end()});
    EXPECT_LE(testing_support::max_rel_diff(r.beta, o.beta), 1e-9);
    EXPECT_LE(testing_support::max_rel_diff(r.se, o.se), 1e-9);
  }
}

TEST(EigSweep, RotationCountDoesNotDependOnTraits) {
  for (std::size_t t : {1, 4, 16}) {
    auto p = testing_support::make_problem(8, 20, 1, 30, t);
    SweepSummary s;
    run_eig(p.ds, p.genotypes, memory_options(8), &s);
    EXPECT_EQ(s.rotation_products, 2u + 1u) << "t=" << t;
    EXPECT_EQ(s.results, 30u * t);
    EXPECT_EQ(s.loop_flops, 30u * t * 20u * (2 + 3));
  }
}

TEST(EigSweep, ScratchFileAndMemoryStoreAgree) {
  auto p = testing_support::make_problem(9, 30, 2, 17, 2);
  TempDir dir;
  EigOptions scratch = memory_options(4);
  scratch.in_memory_rotation = false;
  scratch.scratch_dir = dir.path();
  SweepSummary s1, s2;
  const auto a = run_eig(p.ds, p.genotypes, scratch, &s1);
  const auto b = run_eig(p.ds, p.genotypes, memory_options(4), &s2);
  EXPECT_FALSE(s1.rotation_in_memory);
  EXPECT_TRUE(s2.rotation_in_memory);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].beta, b[i].beta);
    EXPECT_EQ(a[i].se, b[i].se);
  }
  EXPECT_TRUE(std::filesystem::is_empty(dir.path()));
}

TEST(EigSweep, BlockSizeDoesNotChangeResults) {
  auto p = testing_support::make_problem(12, 96, 2, 150, 2);
  const auto ref = run_eig(p.ds, p.genotypes, memory_options(1));
  for (std::size_t k : {7, 64, 256}) {
    const auto r = run_eig(p.ds, p.genotypes, memory_options(k));
    ASSERT_EQ(r.size(), ref.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
      EXPECT_EQ(r[i].beta, ref[i].beta) << "k=" << k << " snp=" << r[i].snp_index;
      EXPECT_EQ(r[i].se, ref[i].se) << "k=" << k << " snp=" << r[i].snp_index;
    }
  }
}

TEST(EigSweep, BudgetForcesScratch) {
  auto p = testing_support::make_problem(10, 20, 1, 10, 1);
  TempDir dir;
  EigOptions opt = memory_options();
  opt.scratch_dir = dir.path();
  opt.memory_budget_bytes = 20 * 10 * 8 - 1;
  SweepSummary s;
  run_eig(p.ds, p.genotypes, opt, &s);
  EXPECT_FALSE(s.rotation_in_memory);
}

TEST(EigSweep, MissingScratchDirectory) {
  auto p = testing_support::make_problem(11, 20, 1, 4, 1);
  EigOptions opt;
  opt.scratch_dir = "/nonexistent/glsweep-scratch";
  EXPECT_THROW(run_eig(p.ds, p.genotypes, opt), ConfigError);
}

TEST(EigSweep, OverwriteKinshipGivesSameResults) {
  auto p = testing_support::make_problem(12, 30, 1, 9, 2);
  const auto expect = run_eig(p.ds, p.genotypes, memory_options(4));
  MemoryBlockSource src(p.genotypes.view());
  MemoryResultSink sink;
  sweep_eig_overwrite_kinship(p.ds, src, sink, memory_options(4));
  EXPECT_TRUE(p.ds.kinship.phi.empty());
  const auto got = sink.sorted();
  ASSERT_EQ(got.size(), expect.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i].beta, expect[i].beta);
}

TEST(EigSweep, IndefiniteTraitIsSkippedOthersSolved) {
  // Rank-one kinship: zero eigenvalues make M singular at h2 = 1.
  auto p = testing_support::make_problem(13, 12, 1, 5, 2);
  Matrix phi(12, 12);
  for (std::size_t j = 0; j < 12; ++j)
    for (std::size_t i = 0; i < 12; ++i) phi(i, j) = 1.0;
  p.ds.kinship = {std::move(phi)};
  p.ds.params[1] = {1.0, 1.0};
  SweepSummary s;
  const auto results = run_eig(p.ds, p.genotypes, memory_options(2), &s);
  ASSERT_EQ(results.size(), 10u);
  for (const auto& r : results) EXPECT_EQ(r.ok(), r.trait_index == 0);
  EXPECT_EQ(s.failures, 5u);

  EigOptions ff = memory_options(2);
  ff.policy = ErrorPolicy::fail_fast;
  EXPECT_THROW(run_eig(p.ds, p.genotypes, ff), NumericError);

  EigOptions clamp = memory_options(2);
  clamp.spectral.clamp = true;
  for (const auto& r : run_eig(p.ds, p.genotypes, clamp)) EXPECT_NE(r.status, ResultStatus::trait_failure);
}

TEST(EigSingle, MatchesNaive) {
  auto p = testing_support::make_problem(14, 35, 2, 3, 1);
  for (std::size_t j = 0; j < 3; ++j) {
    const Matrix x = design_matrix(p.ds.covariates, p.genotypes.col(j));
    const auto a = solve_single_eig(p.ds.kinship, p.ds.params[0], x.view(), p.ds.phenotype(0));
    const auto b = solve_gls_naive(p.ds.kinship, p.ds.params[0], x.view(), p.ds.phenotype(0));
    EXPECT_LE(testing_support::max_rel_diff(a.beta, b.beta), 1e-9);
    EXPECT_LE(testing_support::max_rel_diff(a.se, b.se), 1e-9);
  }
}
