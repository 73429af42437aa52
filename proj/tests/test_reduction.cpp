#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <random>

#include "hslag/reduction.hpp"
#include "test_util.hpp"

using namespace hslag;

namespace {

constexpr double kVol0 = 4.0 * kPi * kPi * 1.3;

const ReductionContext& flat_ctx() {
  static const ReductionContext ctx(ChartFamily{std::make_shared<FlatMetric>(4)}, ReductionConfig{});
  return ctx;
}

const ReductionContext& shear_ctx() {
  static const ReductionContext ctx(ChartFamily{std::make_shared<ShearMetric>(2, 0.05, 7)}, ReductionConfig{});
  return ctx;
}

// coarse grid for the optimizer and Hessian tests
const ReductionContext& coarse_ctx() {
  static const ReductionContext ctx = [] {
    ReductionConfig cfg;
    cfg.grid_n = 24;
    return ReductionContext(ChartFamily{std::make_shared<ShearMetric>(2, 0.05, 7)}, cfg);
  }();
  return ctx;
}

FrameState random_frame(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, kTwoPi);
  Vec p(4);
  for (int i = 0; i < 4; ++i) p[i] = u(rng);
  return FrameState(p, realify(random_unitary(2, rng)));
}

FrameState base_frame() { return FrameState::identity(Vec::Constant(4, 0.4)); }

ScalarField small_field(const ReductionContext& ctx, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  ScalarField f = testutil::random_trig_field(ctx.grid(), 2, rng, true);
  f.values *= scale / f.values.cwiseAbs().maxCoeff();
  return f;
}

// f(theta - shift) for a shift of whole grid cells
ScalarField shifted(const ScalarField& f, const std::vector<int>& cells) {
  const auto& g = f.grid;
  ScalarField out(g);
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    auto idx = g.multi_index(i);
    for (int a = 0; a < g.dim(); ++a) idx[a] = (idx[a] - cells[a] + g.sizes[a]) % g.sizes[a];
    out.values[static_cast<Eigen::Index>(i)] = f.values[static_cast<Eigen::Index>(g.flat_index(idx))];
  }
  return out;
}

Mat diagonal_rotation(const std::vector<double>& phi) {
  CMat d = CMat::Zero(2, 2);
  for (int j = 0; j < 2; ++j) d(j, j) = std::polar(1.0, phi[j]);
  return realify(d);
}

double slope(const std::vector<double>& t, const std::vector<double>& y) {
  return std::log(y.front() / y.back()) / std::log(t.front() / t.back());
}

}  // namespace

// ------------------------------------------------------------ graph immersion

TEST(GraphImmersion, ZeroSectionIsTheTorus) {
  const auto& ctx = flat_ctx();
  const Immersion a = graph_immersion(ctx.chart(), ScalarField(ctx.grid()));
  const Immersion b = clifford_torus(ctx.model());
  for (int c = 0; c < 4; ++c) EXPECT_LE((a.coords[c] - b.coords[c]).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(GraphImmersion, GraphsAreLagrangian) {
  const auto& ctx = flat_ctx();
  ScalarField f(ctx.grid());
  for (std::size_t i = 0; i < ctx.grid().node_count(); ++i) f.values[i] = 0.1 * std::cos(ctx.grid().coordinates(i)[0]);
  EXPECT_LE(lagrangian_defect(graph_immersion(ctx.chart(), f)), 1e-10);
  for (std::uint64_t s = 1; s <= 5; ++s) EXPECT_LE(lagrangian_defect(graph_immersion(ctx.chart(), small_field(ctx, s, 0.02))), 1e-10);
}

TEST(GraphImmersion, HausdorffDistanceIsLinear) {
  const auto& ctx = flat_ctx();
  std::vector<double> eps{1e-2, 1e-3, 1e-4}, dist;
  for (double e : eps) {
    ScalarField f(ctx.grid());
    for (std::size_t i = 0; i < ctx.grid().node_count(); ++i) f.values[i] = e * std::cos(ctx.grid().coordinates(i)[0]);
    const Immersion x = graph_immersion(ctx.chart(), f);
    // distance to the torus is max_j ||z_j| - a_j| pointwise
    double d = 0.0;
    for (std::size_t i = 0; i < ctx.grid().node_count(); ++i) {
      const Vec z = x.point(i);
      for (int j = 0; j < 2; ++j) d = std::max(d, std::abs(std::hypot(z[2 * j], z[2 * j + 1]) - ctx.model().radii[j]));
    }
    dist.push_back(d);
  }
  EXPECT_NEAR(slope(eps, dist), 1.0, 0.02);
  EXPECT_NEAR(dist[2] / eps[2], 1.0, 0.01);  // |sin| peaks at 1, radius 1
}

TEST(GraphImmersion, TubularBoundEnforced) {
  const auto& ctx = flat_ctx();
  ScalarField f(ctx.grid());
  for (std::size_t i = 0; i < ctx.grid().node_count(); ++i) f.values[i] = std::cos(ctx.grid().coordinates(i)[0]);
  EXPECT_THROW(graph_immersion(ctx.chart(), f), DomainError);
}

// --------------------------------------------------------------- functional

TEST(Functional, FlatZeroIsModelVolume) {
  for (double t : {0.01, 0.05, 0.1})
    for (std::uint64_t s : {1, 2})
      EXPECT_NEAR(functional_F(flat_ctx(), t, random_frame(s), ScalarField(flat_ctx().grid())), kVol0, 1e-10 * kVol0);
}

TEST(Functional, TendsToFlatVolumeLinearly) {
  const auto& ctx = shear_ctx();
  const ScalarField f = small_field(ctx, 3, 0.01);
  const double v0 = volume(graph_immersion(ctx.chart(), f), FlatMetric(4));
  std::vector<double> ts{0.08, 0.04, 0.02}, gap;
  for (double t : ts) gap.push_back(std::abs(functional_F(ctx, t, base_frame(), f) - v0));
  // the first-order term averages out on this frame, so the gap is at
  // least linear
  EXPECT_GE(slope(ts, gap), 0.9);
  EXPECT_LE(gap.back(), 1e-3);
}

TEST(Functional, EquivariantUnderDiagonalTorus) {
  const auto& ctx = shear_ctx();
  const int N = ctx.config().grid_n;
  const FrameState fr = random_frame(5);
  const ScalarField f = small_field(ctx, 4, 0.02);
  const std::vector<int> cells{3, 7};
  const Mat gamma = diagonal_rotation({kTwoPi * cells[0] / N, kTwoPi * cells[1] / N});
  const FrameState fr_gamma(fr.p, fr.rotation() * gamma);
  const double a = functional_F(ctx, 0.05, fr_gamma, f);
  const double b = functional_F(ctx, 0.05, fr, shifted(f, cells));
  EXPECT_NEAR(a, b, 1e-12 * std::abs(a));
}

TEST(Residual, FlatZeroIsStationary) {
  const auto& ctx = flat_ctx();
  const ScalarField p = residual_P(ctx, 0.05, random_frame(2), ScalarField(ctx.grid()));
  EXPECT_LE(p.values.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Residual, GradientMatchesFiniteDifferences) {
  const auto& ctx = shear_ctx();
  EXPECT_LE(verify_gradient(ctx, 0.05, random_frame(3), small_field(ctx, 6, 0.02), 10, 11), 1e-6);
}

TEST(Residual, PerturbedZeroDecaysLinearly) {
  const auto& ctx = shear_ctx();
  std::vector<double> ts{0.08, 0.04, 0.02}, norms;
  for (double t : ts) norms.push_back(l2_norm(residual_P(ctx, t, base_frame(), ScalarField(ctx.grid())), ctx.dvol()));
  EXPECT_NEAR(slope(ts, norms), 1.0, 0.2);
}

TEST(Residual, ChartExitThrows) {
  EXPECT_THROW(functional_F(shear_ctx(), 2.0, base_frame(), ScalarField(shear_ctx().grid())), DomainError);
}

// ----------------------------------------------------------- projected solve

TEST(ProjectedSolve, FlatIsImmediate) {
  const ReductionState st = projected_solve(flat_ctx(), 0.05, random_frame(1));
  EXPECT_TRUE(st.converged);
  EXPECT_LE(st.iterations, 1);
  EXPECT_LE(st.coeffs.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(st.K_value, kVol0, 1e-10 * kVol0);
  EXPECT_LE(st.H.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(ProjectedSolve, MembershipOrthogonalityAndScaling) {
  const auto& ctx = shear_ctx();
  std::vector<double> ts{0.08, 0.04, 0.02}, fn, hn;
  for (double t : ts) {
    const ReductionState st = projected_solve(ctx, t, base_frame());
    ASSERT_TRUE(st.converged);
    EXPECT_LE(st.residual_norm, 1e-10);
    const Vec proj = ctx.kernel().coeffs.transpose() * st.coeffs;
    EXPECT_LE(proj.cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE(std::abs(st.P_mean), 1e-9);
    fn.push_back(l2_norm(st.f, ctx.dvol()));
    hn.push_back(st.H.norm());
  }
  EXPECT_GT(fn[0], fn[1]);
  EXPECT_GT(fn[1], fn[2]);
  EXPECT_GT(hn[0], hn[1]);
  EXPECT_GT(hn[1], hn[2]);
  EXPECT_GE(slope(ts, fn), 0.8);
}

TEST(ProjectedSolve, UniqueFromDistinctInitialGuesses) {
  const auto& ctx = shear_ctx();
  const ReductionState a = projected_solve(ctx, 0.05, base_frame());
  SolveOptions so;
  Vec init(a.coeffs.size());
  for (Eigen::Index i = 0; i < init.size(); ++i) init[i] = 2e-3 * std::sin(1.7 * static_cast<double>(i)) / (1.0 + static_cast<double>(i));
  so.initial = init;
  const ReductionState b = projected_solve(ctx, 0.05, base_frame(), so);
  EXPECT_LE((a.coeffs - b.coeffs).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(ProjectedSolve, NewtonModeAgrees) {
  ReductionConfig cfg;
  cfg.grid_n = 24;
  cfg.newton = true;
  const ReductionContext newton(ChartFamily{std::make_shared<ShearMetric>(2, 0.05, 7)}, cfg);
  const ReductionState a = projected_solve(newton, 0.05, base_frame());
  const ReductionState b = projected_solve(coarse_ctx(), 0.05, base_frame());
  EXPECT_TRUE(a.converged);
  EXPECT_LE(a.iterations, b.iterations);
  EXPECT_LE((a.coeffs - b.coeffs).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(ProjectedSolve, DivergenceIsReported) {
  ReductionConfig cfg;
  cfg.grid_n = 16;
  cfg.max_iterations = 5;
  const ReductionContext ctx(ChartFamily{std::make_shared<ShearMetric>(2, 0.8, 7)}, cfg);
  EXPECT_THROW(projected_solve(ctx, 0.3, base_frame()), NumericalFailure);
}

// -------------------------------------------------------------------- K, H

TEST(KH, StabilizerInvariance) {
  const auto& ctx = shear_ctx();
  const FrameState fr = random_frame(8);
  const double k0 = K_eval(ctx, 0.05, fr);
  for (const std::vector<double>& phi : {std::vector<double>{0.3, -1.1}, std::vector<double>{2.0, 0.7}}) {
    const FrameState fg(fr.p, fr.rotation() * diagonal_rotation(phi));
    EXPECT_NEAR(K_eval(ctx, 0.05, fg), k0, 1e-8);
  }
}

TEST(KH, FlatIsConstant) {
  for (std::uint64_t s : {3, 4}) {
    EXPECT_NEAR(K_eval(flat_ctx(), 0.05, random_frame(s)), kVol0, 1e-10 * kVol0);
    EXPECT_EQ(H_eval(flat_ctx(), 0.05, random_frame(s)).size(), 6);
  }
}

// ----------------------------------------------------- variation potentials

TEST(VariationPotential, StabilizerDirectionsVanish) {
  const auto& ctx = shear_ctx();
  const FrameState fr = random_frame(9);
  for (int g : fr.stabilizer_coords()) {
    const VariationPotential vp = variation_potential(ctx, 0.05, fr, Vec::Unit(fr.coord_count(), g));
    EXPECT_LE(vp.exactness, 1e-6);
    EXPECT_LE(vp.chart_h.values.cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(VariationPotential, FlatMatchesMomentMap) {
  const auto& ctx = flat_ctx();
  const FrameState fr = random_frame(10);
  const double t = 0.05;
  for (int k = 0; k < fr.coord_count(); ++k) {
    const Vec x = Vec::Unit(fr.coord_count(), k);
    const VariationPotential vp = variation_potential(ctx, t, fr, x);
    const ScalarField xi = xi_map(ctx, t, fr, x);
    const double scale = std::max(l2_norm(xi, ctx.dvol()), t * t);
    EXPECT_LE(l2_norm(ScalarField(ctx.grid(), vp.h.values - xi.values), ctx.dvol()), 1e-6 * scale) << "coordinate " << k;
  }
}

TEST(VariationPotential, TranslationIsLinearMomentField) {
  const auto& ctx = flat_ctx();
  const FrameState fr = base_frame();
  const double t = 0.05;
  // x = e_1: omega0(e_1, X) = X_2 = sin(theta_1) times t
  const ScalarField xi = xi_map(ctx, t, fr, Vec::Unit(fr.coord_count(), 0));
  for (std::size_t i = 0; i < ctx.grid().node_count(); ++i)
    EXPECT_NEAR(xi.values[i], t * std::sin(ctx.grid().coordinates(i)[0]), 1e-14);
}

TEST(VariationPotential, LinearInDirection) {
  const auto& ctx = shear_ctx();
  const FrameState fr = random_frame(11);
  const int nc = fr.coord_count();
  const FrameVariation fv = frame_variation(ctx, 0.05, fr);
  Vec x = Vec::Zero(nc), y = Vec::Zero(nc);
  x[0] = 1.0, x[7] = -0.5;
  y[2] = 0.3, y[6] = 2.0;
  const auto hx = potential_from_variation(ctx, 0.05, fv, x).chart_h;
  const auto hy = potential_from_variation(ctx, 0.05, fv, y).chart_h;
  const auto hxy = potential_from_variation(ctx, 0.05, fv, 2.0 * x - 3.0 * y).chart_h;
  EXPECT_LE((hxy.values - 2.0 * hx.values + 3.0 * hy.values).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Psi, ApproximatesMomentPairingAtRateT) {
  const auto& ctx = shear_ctx();
  const FrameState fr = random_frame(12);
  std::vector<double> ts{0.08, 0.04}, dev;
  for (double t : ts) {
    const PsiReport big = Psi_map(ctx, t, fr), small = psi_map(ctx, t, fr);
    EXPECT_LE(big.max_exactness, 1e-6);
    EXPECT_TRUE(std::isfinite(big.condition));
    EXPECT_LE(big.condition, 1e3);
    dev.push_back((big.reduced - small.reduced).norm() / small.reduced.norm());
  }
  EXPECT_NEAR(slope(ts, dev), 1.0, 0.25);
  EXPECT_LE(dev.back(), 1e-2);
}

// -------------------------------------------------------------- gradient

TEST(GradientK, FlatBothZero) {
  const KGradient g = gradient_K(flat_ctx(), 0.05, random_frame(13));
  EXPECT_LE(g.fd.cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE(g.psi_H.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(GradientK, FiniteDifferencesMatchPsiH) {
  const auto& ctx = shear_ctx();
  for (std::uint64_t s : {14, 15}) {
    const FrameState fr = random_frame(s);
    const KGradient g = gradient_K(ctx, 0.05, fr);
    ASSERT_GE(g.fd.norm(), 1e-6);
    EXPECT_LE(g.relative_disagreement(), 1e-3);
    for (int k : fr.stabilizer_coords()) {
      EXPECT_LE(std::abs(g.fd[k]), 1e-8);
      EXPECT_LE(std::abs(g.psi_H[k]), 1e-8);
    }
  }
}

TEST(GradientK, RecenteringInvariant) {
  const auto& ctx = coarse_ctx();
  FrameState fr = random_frame(16);
  Vec dx = Vec::Zero(fr.coord_count());
  dx[6] = 0.2, dx[7] = -0.1;
  fr = fr.moved(dx);
  EXPECT_NEAR(K_eval(ctx, 0.05, fr), K_eval(ctx, 0.05, fr.recentered()), 1e-10);
}

// ------------------------------------------------------------ perturbed L

TEST(PerturbedL, FlatMetricGivesFlatOperator) {
  const auto& ctx = flat_ctx();
  const LinearOperator l = assemble_perturbed_L(ctx, 0.05, random_frame(17));
  EXPECT_LE((l.matrix - ctx.flat().matrix).norm(), 1e-8 * ctx.flat().matrix.norm());
}

TEST(PerturbedL, DistanceShrinksLinearly) {
  const auto& ctx = coarse_ctx();
  std::vector<double> ts{0.08, 0.04}, d;
  for (double t : ts) d.push_back((assemble_perturbed_L(ctx, t, base_frame()).matrix - ctx.flat().matrix).norm());
  EXPECT_NEAR(slope(ts, d), 1.0, 0.3);
}

TEST(PerturbedL, SpectrumEquivariantUnderStabilizer) {
  const auto& ctx = coarse_ctx();
  const FrameState fr = random_frame(18);
  const FrameState fg(fr.p, fr.rotation() * diagonal_rotation({0.4, 1.9}));
  const Vec a = eigensolve(assemble_perturbed_L(ctx, 0.05, fr)).eigenvalues;
  const Vec b = eigensolve(assemble_perturbed_L(ctx, 0.05, fg)).eigenvalues;
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-6 * a.cwiseAbs().maxCoeff());
}

// ------------------------------------------------------------- optimizer

TEST(Optimize, FlatIsAlreadyCritical) {
  const OptimizeResult r = optimize_frame(flat_ctx(), 0.05, random_frame(19));
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.grad_norm, 1e-8);
  EXPECT_LE(r.trace.size(), 1u);
  EXPECT_LE(r.geometric_residual, 1e-8);
}

TEST(Optimize, PerturbedReachesStationaryTorus) {
  const auto& ctx = coarse_ctx();
  const OptimizeResult r = optimize_frame(ctx, 0.05, random_frame(2));
  ASSERT_TRUE(r.converged) << r.verdict;
  EXPECT_LE(r.grad_norm, 1e-8);
  EXPECT_GE(r.min_hessian_eigenvalue, -1e-8);
  EXPECT_LE(r.geometric_residual, 1e-5);
  for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_LE(r.trace[i].K, r.trace[i - 1].K + 1e-12);

  // second variation at the minimum
  const ScalarField f = [&] {
    ScalarField out(ctx.grid());
    for (std::size_t i = 0; i < ctx.grid().node_count(); ++i) out.values[i] = std::cos(2.0 * ctx.grid().coordinates(i)[0]);
    return out;
  }();
  const SecondVariationReport sv = second_variation_Q(ctx, 0.05, r.frame, {f});
  EXPECT_LE(sv.direction_rel_err[0], 0.1);
  EXPECT_LE(sv.max_cross_relative, 1e-3);
  EXPECT_GE(sv.frame_min_eigenvalue, -1e-8);
  EXPECT_LE(sv.stabilizer_hessian, 1e-7);
}
