#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hslag/fourier_basis.hpp"
#include "hslag/grid.hpp"
#include "test_util.hpp"

using namespace hslag;

TEST(Grid, RejectsOddOrTinySizes) {
  EXPECT_THROW(GridDescriptor({9, 16}, {kTwoPi, kTwoPi}), Error);
  EXPECT_THROW(GridDescriptor({6, 16}, {kTwoPi, kTwoPi}), Error);
  EXPECT_THROW(GridDescriptor({8, 16}, {kTwoPi, -1.0}), Error);
  EXPECT_NO_THROW(GridDescriptor({8, 16}, {kTwoPi, 1.0}));
}

TEST(Grid, IndexRoundTrip) {
  GridDescriptor g({8, 10, 12}, {1.0, 2.0, 3.0});
  for (std::size_t i = 0; i < g.node_count(); ++i) EXPECT_EQ(g.flat_index(g.multi_index(i)), i);
  EXPECT_EQ(g.stride(2), 1u);
  EXPECT_EQ(g.stride(0), 120u);
}

TEST(SpectralDerivative, CosineIsExact) {
  auto g = GridDescriptor::uniform(2, 32);
  auto f = ScalarField::sample(g, [](const std::vector<double>& x) { return std::cos(x[0]); });
  auto df = spectral_derivative(f, 0);
  for (std::size_t i = 0; i < g.node_count(); ++i)
    EXPECT_NEAR(df.values[i], -std::sin(g.coordinates(i)[0]), 1e-12);
  auto dy = spectral_derivative(f, 1);
  EXPECT_LE(dy.max_abs(), 1e-12);
}

TEST(SpectralDerivative, ConstantGivesZero) {
  auto g = GridDescriptor::uniform(2, 16);
  auto f = ScalarField::constant(g, 3.7);
  EXPECT_LE(spectral_derivative(f, 0).max_abs(), 1e-12);
  EXPECT_LE(spectral_derivative(f, 1).max_abs(), 1e-12);
  EXPECT_THROW(spectral_derivative(f, 2), Error);
}

TEST(SpectralDerivative, NonUniformPeriod) {
  GridDescriptor g({16}, {3.0});
  auto f = ScalarField::sample(g, [](const std::vector<double>& x) { return std::sin(kTwoPi * 2 * x[0] / 3.0); });
  auto df = spectral_derivative(f, 0);
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    const double x = g.coordinates(i)[0];
    EXPECT_NEAR(df.values[i], kTwoPi * 2 / 3.0 * std::cos(kTwoPi * 2 * x / 3.0), 1e-11);
  }
}

// Centered finite differences of the same band-limited function converge to
// the spectral derivative at second order.
TEST(SpectralDerivative, FiniteDifferenceOracleSecondOrder) {
  std::mt19937_64 rng(3);
  auto coarse = GridDescriptor::uniform(2, 16);
  const ScalarField f16 = testutil::random_trig_field(coarse, 3, rng);
  std::vector<double> err;
  for (int n : {32, 64, 128}) {
    const ScalarField f = fourier_resample(f16, {n, n});
    const Vec exact = spectral_derivative(f.grid, f.values, 1);
    const double h = kTwoPi / n;
    double e = 0.0;
    for (std::size_t i = 0; i < f.grid.node_count(); ++i) {
      auto idx = f.grid.multi_index(i);
      auto ip = idx, im = idx;
      ip[1] += 1;
      im[1] -= 1;
      const double fd = (f.values[f.grid.flat_index(ip)] - f.values[f.grid.flat_index(im)]) / (2 * h);
      e = std::max(e, std::abs(fd - exact[i]));
    }
    err.push_back(e);
  }
  for (std::size_t k = 0; k + 1 < err.size(); ++k) {
    const double order = std::log2(err[k] / err[k + 1]);
    EXPECT_NEAR(order, 2.0, 0.1);
  }
}

TEST(SpectralSecondDerivative, MatchesSquaredFirstOnResolvedModes) {
  std::mt19937_64 rng(5);
  auto g = GridDescriptor::uniform(2, 24);
  const ScalarField f = testutil::random_trig_field(g, 5, rng);
  const Vec d2 = spectral_second_derivative(g, f.values, 0);
  const Vec dd = spectral_derivative(g, spectral_derivative(g, f.values, 0), 0);
  EXPECT_LE((d2 - dd).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(L2Inner, TotalVolumeOfFlatTorus) {
  auto g = GridDescriptor::uniform(2, 32);
  const double a1 = 1.0, a2 = 1.3;
  auto one = ScalarField::constant(g, 1.0);
  auto dv = ScalarField::constant(g, a1 * a2);
  EXPECT_NEAR(l2_inner(one, one, dv), kTwoPi * kTwoPi * a1 * a2, 1e-11);
}

TEST(L2Inner, Orthogonality) {
  auto g = GridDescriptor::uniform(2, 16);
  auto c = ScalarField::sample(g, [](const std::vector<double>& x) { return std::cos(x[0]); });
  auto s = ScalarField::sample(g, [](const std::vector<double>& x) { return std::sin(x[0]); });
  EXPECT_LE(std::abs(l2_inner(c, s, ScalarField::constant(g, 2.5))), 1e-12);
}

TEST(L2Inner, SymmetricBilinear) {
  std::mt19937_64 rng(11);
  auto g = GridDescriptor::uniform(2, 16);
  auto f = testutil::random_trig_field(g, 3, rng);
  auto h = testutil::random_trig_field(g, 3, rng);
  auto k = testutil::random_trig_field(g, 3, rng);
  auto dv = ScalarField::constant(g, 1.0);
  dv.values.array() += 0.3 * testutil::random_trig_field(g, 1, rng).values.array().tanh();
  EXPECT_NEAR(l2_inner(f, h, dv), l2_inner(h, f, dv), 1e-12);
  ScalarField comb(g, 2.0 * f.values - 3.0 * h.values);
  EXPECT_NEAR(l2_inner(comb, k, dv), 2.0 * l2_inner(f, k, dv) - 3.0 * l2_inner(h, k, dv), 1e-10);
}

// Rectangle quadrature of a band-limited product is exact once the grid
// resolves it; the refined grid acts as the oracle.
TEST(L2Inner, RefinementOracle) {
  std::mt19937_64 rng(13);
  auto g = GridDescriptor::uniform(2, 16);
  auto f = testutil::random_trig_field(g, 3, rng);
  auto h = testutil::random_trig_field(g, 3, rng);
  auto w = testutil::random_trig_field(g, 1, rng);
  w.values = (w.values.array() * 0.1 + 2.0).matrix();
  const double coarse = l2_inner(f, h, w);
  const double fine = l2_inner(fourier_resample(f, {64, 64}), fourier_resample(h, {64, 64}),
                               fourier_resample(w, {64, 64}));
  EXPECT_NEAR(coarse, fine, 1e-10 * std::max(1.0, std::abs(fine)));
}

TEST(L2Inner, GridMismatchThrows) {
  auto a = ScalarField::constant(GridDescriptor::uniform(2, 16), 1.0);
  auto b = ScalarField::constant(GridDescriptor::uniform(2, 8), 1.0);
  EXPECT_THROW(l2_inner(a, b, a), GridMismatch);
}

TEST(Quotient, SymmetrizeProducesInvariantField) {
  GridDescriptor g({16, 16}, {kTwoPi, kTwoPi}, QuotientRule{{true, true}});
  std::mt19937_64 rng(17);
  auto f = testutil::random_trig_field(g, 3, rng);
  EXPECT_GT(quotient_defect(f), 1e-3);
  auto s = quotient_symmetrize(f);
  EXPECT_LE(quotient_defect(s), 1e-14);
  auto inv = testutil::random_trig_field(g, 3, rng, false, true);
  EXPECT_LE(quotient_defect(inv), 1e-12);
}

TEST(FourierBasis, OrthonormalAndParityFiltered) {
  GridDescriptor g({24, 24}, {kTwoPi, kTwoPi}, QuotientRule{{true, true}});
  FourierBasis b(g, 0.5);
  const Mat gram = b.matrix().transpose() * b.matrix() * b.quad_weight();
  EXPECT_LE((gram - Mat::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff(), 1e-12);
  for (const auto& m : b.modes()) EXPECT_EQ((m.m[0] + m.m[1]) % 2, 0);
  FourierBasis full(GridDescriptor::uniform(2, 24), 1.0);
  EXPECT_EQ(full.size(), static_cast<std::size_t>(17 * 17));
}

TEST(PeriodicPoisson, InvertsAnisotropicLaplacian) {
  std::mt19937_64 rng(19);
  auto g = GridDescriptor::uniform(2, 16);
  auto u = testutil::random_trig_field(g, 4, rng, true);
  const std::vector<double> coef{1.0, 1.0 / 1.69};
  Vec r = Vec::Zero(u.values.size());
  for (int a = 0; a < 2; ++a) r += coef[a] * spectral_derivative(g, spectral_derivative(g, u.values, a), a);
  PeriodicPoisson p(g, coef);
  EXPECT_LE((p.solve(r) - u.values).cwiseAbs().maxCoeff(), 1e-10);
}
