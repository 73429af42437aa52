#pragma once

// Reduction for the product torus T^n_a inside the flat symplectic torus with
// a perturbed compatible metric: the rescaled volume F^t on graphs over the
// Weinstein chart, its exact discrete gradient P^t, the projected solve, the
// reduced function K^t on frames and its gradient through the potentials Psi^t.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hslag/ambient.hpp"
#include "hslag/errors.hpp"
#include "hslag/fourier_basis.hpp"
#include "hslag/geometry.hpp"
#include "hslag/models.hpp"
#include "hslag/operator.hpp"
#include "hslag/weinstein.hpp"

namespace hslag {

struct ReductionConfig {
  std::vector<double> radii{1.0, 1.3};
  int grid_n = 32;
  double delta = -1.0;        // tubular bound; <= 0 picks 0.2 min a^2
  double kernel_tol = 1e-5;
  double min_gap_ratio = 100.0;
  double solve_tol = 1e-10;
  int max_iterations = 200;
  double frame_step = 1e-4;   // frame differencing step
  double exactness_tol = 1e-6;
  bool newton = false;        // use the linearization at the frame instead of flat L+
};

/// Immutable shared data: model, chart, flat operator, kernel and L+.
class ReductionContext {
 public:
  ReductionContext(ChartFamily family, ReductionConfig cfg)
      : cfg_(std::move(cfg)),
        family_(std::move(family)),
        model_(cfg_.radii, cfg_.grid_n),
        chart_(cfg_.delta > 0.0 ? WeinsteinChart(cfg_.radii, cfg_.delta) : WeinsteinChart::with_default_delta(cfg_.radii)) {
    if (family_.dim() != 2 * model_.n()) throw GridMismatch("ReductionContext: metric dimension differs from model");
    flat_ = assemble_flat_L(model_);
    spectrum_ = eigensolve(flat_, -1, cfg_.kernel_tol);
    kernel_ = kernel_basis(spectrum_, cfg_.min_gap_ratio);
    pinv_ = pseudo_inverse(spectrum_);
  }

  const ReductionConfig& config() const { return cfg_; }
  const ChartFamily& family() const { return family_; }
  const MetricEvaluator& metric() const { return *family_.metric; }
  const TorusModel& model() const { return model_; }
  const WeinsteinChart& chart() const { return chart_; }
  const LinearOperator& flat() const { return flat_; }
  const SpectralData& spectrum() const { return spectrum_; }
  const KernelBasis& kernel() const { return kernel_; }
  const FourierBasis& basis() const { return flat_.basis; }
  const Mat& pinv() const { return pinv_; }
  const GridDescriptor& grid() const { return model_.grid; }
  int n() const { return model_.n(); }
  /// L2 quadrature weight of dV_{g0|L}.
  double quad_weight() const { return basis().quad_weight(); }
  ScalarField dvol() const { return basis().dvol(); }

  /// Remove kernel components from basis coefficients.
  Vec project(const Vec& c) const { return c - kernel_.coeffs * (kernel_.coeffs.transpose() * c); }

 private:
  static Mat pseudo_inverse(const SpectralData& sd) {
    Mat out = Mat::Zero(sd.eigenvectors.rows(), sd.eigenvectors.rows());
    for (Eigen::Index j = 0; j < sd.eigenvalues.size(); ++j) {
      if (std::abs(sd.eigenvalues[j]) <= sd.kernel_tol) continue;
      out.noalias() += sd.eigenvectors.col(j) * sd.eigenvectors.col(j).transpose() / sd.eigenvalues[j];
    }
    return out;
  }

  ReductionConfig cfg_;
  ChartFamily family_;
  TorusModel model_;
  WeinsteinChart chart_;
  LinearOperator flat_;
  SpectralData spectrum_;
  KernelBasis kernel_;
  Mat pinv_;
};

// ------------------------------------------------------------ F^t and P^t

struct FunctionalValue {
  double value = 0.0;
  ScalarField gradient;  // L2(dV_{g0|L}) gradient; empty unless requested
};

namespace detail {

/// Discrete F(f) = sum_i w sqrt(det h_i) in the chart metric, and optionally
/// its exact gradient by the chain rule through the spectral derivatives:
///   dF/dX_m = w [1/2 s h^{ab} E_a^T d_m g E_b - sum_a (D_a Lambda_a)_m],
///   Lambda_a = s h^{ab} g E_b, X = Phi(theta, D f), grad = -sum_j D_j(dF/dY_j).
inline FunctionalValue evaluate_functional(const ReductionContext& ctx, const MetricEvaluator& g, const ScalarField& f,
                                           bool with_gradient) {
  const GridDescriptor& grid = ctx.grid();
  require_same_grid(grid, f.grid, "functional");
  const int n = ctx.n(), d = 2 * n;
  const auto y = graph_fibre(f);
  const Immersion imm = graph_immersion_from_fibre(ctx.chart(), grid, y);
  const auto e = tangent_vectors(imm);
  const std::size_t nodes = grid.node_count();
  const double w = grid.cell_volume();

  FunctionalValue out;
  std::vector<std::vector<Vec>> lam;   // [a][m]
  std::vector<Vec> dfdx;               // [m]
  if (with_gradient) {
    lam.assign(n, std::vector<Vec>(d, Vec(static_cast<Eigen::Index>(nodes))));
    dfdx.assign(d, Vec(static_cast<Eigen::Index>(nodes)));
  }
  MetricJet jet;
  Mat em(d, n);
  double total = 0.0;
  for (std::size_t i = 0; i < nodes; ++i) {
    const Vec z = imm.point(i);
    if (!g.in_domain(z)) throw DomainError("functional: graph leaves the chart domain");
    g.jet(z, with_gradient ? 1 : 0, jet);
    for (int a = 0; a < n; ++a)
      for (int m = 0; m < d; ++m) em(m, a) = e[a][m][i];
    const Mat ge = jet.g * em;
    const Mat h = em.transpose() * ge;
    const double det = h.determinant();
    if (!(det > 0.0)) throw DegenerateGeometry("functional: induced metric not positive definite");
    const double s = std::sqrt(det);
    total += s;
    if (!with_gradient) continue;
    const Mat hinv = h.inverse();
    const Mat lm = s * ge * hinv;  // column a = Lambda_a
    for (int a = 0; a < n; ++a)
      for (int m = 0; m < d; ++m) lam[a][m][i] = lm(m, a);
    const Mat sh = 0.5 * s * hinv;
    for (int m = 0; m < d; ++m) dfdx[m][i] = w * (sh.cwiseProduct(em.transpose() * jet.dg[m] * em)).sum();
  }
  out.value = total * w;
  if (!with_gradient) return out;

  for (int a = 0; a < n; ++a)
    for (int m = 0; m < d; ++m) dfdx[m] -= w * spectral_derivative(grid, lam[a][m], a);
  Vec grad = Vec::Zero(static_cast<Eigen::Index>(nodes));
  for (int j = 0; j < n; ++j) {
    Vec dfdy(static_cast<Eigen::Index>(nodes));
    const double a2 = ctx.chart().radii[j] * ctx.chart().radii[j];
    for (std::size_t i = 0; i < nodes; ++i) {
      const double th = grid.coordinates(i)[j];
      const double r = std::sqrt(a2 + 2.0 * y[j][i]);
      dfdy[i] = (dfdx[2 * j][i] * std::cos(th) + dfdx[2 * j + 1][i] * std::sin(th)) / r;
    }
    grad -= spectral_derivative(grid, dfdy, j);
  }
  out.gradient = ScalarField(grid, grad / (w * ctx.model().density()));
  return out;
}

}  // namespace detail

/// F^t(f) = t^{-n} Vol_g of the graph of df placed by the frame at scale t,
/// i.e. the volume of the graph in the chart metric g^t.
inline double functional_F(const ReductionContext& ctx, double t, const FrameState& frame, const ScalarField& f) {
  const ChartMetric g(ctx.family(), frame, t);
  return detail::evaluate_functional(ctx, g, f, false).value;
}

/// P^t(f): the L2(dV_{g0|L}) gradient of the discrete F^t.
inline ScalarField residual_P(const ReductionContext& ctx, double t, const FrameState& frame, const ScalarField& f) {
  const ChartMetric g(ctx.family(), frame, t);
  return detail::evaluate_functional(ctx, g, f, true).gradient;
}

/// Largest relative mismatch between <h, P> and central differences of F
/// over random band-limited directions; throws above `tol`.
inline double verify_gradient(const ReductionContext& ctx, double t, const FrameState& frame, const ScalarField& f,
                              int directions, std::uint64_t seed, double tol = 1e-6) {
  const ChartMetric g(ctx.family(), frame, t);
  const ScalarField p = detail::evaluate_functional(ctx, g, f, true).gradient;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  const FourierBasis& b = ctx.basis();
  double worst = 0.0;
  for (int k = 0; k < directions; ++k) {
    Vec c(static_cast<Eigen::Index>(b.size()));
    for (Eigen::Index j = 0; j < c.size(); ++j) {
      int m2 = 0;
      for (int v : b.modes()[static_cast<std::size_t>(j)].m) m2 += v * v;
      c[j] = nd(rng) / (1.0 + m2);  // smooth direction
    }
    const ScalarField h = b.field(c);
    const double an = l2_inner(h, p, ctx.dvol());
    auto fval = [&](double s) {
      return detail::evaluate_functional(ctx, g, ScalarField(f.grid, f.values + s * h.values), false).value;
    };
    const double eps = 1e-4;
    const double d1 = (fval(eps) - fval(-eps)) / (2 * eps);
    const double d2 = (fval(0.5 * eps) - fval(-0.5 * eps)) / eps;
    const double fd = (4.0 * d2 - d1) / 3.0;
    worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(an), 1e-300));
  }
  if (worst > tol) throw NumericalFailure("residual_P: gradient disagrees with finite differences");
  return worst;
}

/// Graph placed in M: p + t u X(f).
inline Immersion ambient_immersion(const ReductionContext& ctx, double t, const FrameState& frame, const ScalarField& f) {
  const Immersion x = graph_immersion(ctx.chart(), f);
  const Mat u = frame.realize(ctx.metric());
  Immersion out = x;
  for (std::size_t i = 0; i < x.grid.node_count(); ++i) {
    const Vec z = frame.p + t * (u * x.point(i));
    for (int k = 0; k < x.ambient_dim(); ++k) out.coords[k][i] = z[k];
  }
  return out;
}

// -------------------------------------------------------- projected solve

struct ReductionState {
  double t = 0.0;
  FrameState frame;
  Vec coeffs;                // f in the Fourier basis, orthogonal to the kernel
  ScalarField f;
  ScalarField P;             // P^t(f)
  double residual_norm = 0;  // |Pi P^t(f)|
  double K_value = 0.0;
  Vec H;                     // zero-mean kernel coordinates of P^t(f)
  double P_mean = 0.0;       // <P, 1> / |1|
  bool converged = false;
  int iterations = 0;
};

struct SolveOptions {
  std::optional<double> tol;  // default: config solve_tol
  std::optional<Vec> initial;
};

/// f <- f - L+ Pi P^t(f) until |Pi P^t(f)| <= tol; f stays orthogonal to Ker L.
inline ReductionState projected_solve(const ReductionContext& ctx, double t, const FrameState& frame,
                                      const SolveOptions& opt = {}) {
  const double tol = opt.tol.value_or(ctx.config().solve_tol);
  const FourierBasis& b = ctx.basis();
  const ChartMetric g(ctx.family(), frame, t);
  ReductionState st;
  st.t = t;
  st.frame = frame;
  st.coeffs = opt.initial ? ctx.project(*opt.initial) : Vec::Zero(static_cast<Eigen::Index>(b.size()));
  if (st.coeffs.size() != static_cast<Eigen::Index>(b.size())) throw Error("projected_solve: initial guess has wrong size");

  Mat inv = ctx.pinv();
  if (ctx.config().newton) {
    LinearOperator lt;
    lt.basis = b;
    lt.matrix = linearize_in_basis(
        b, [&](const ScalarField& f) { return detail::evaluate_functional(ctx, g, f, true).gradient; }, 1e-3);
    const Mat& k = ctx.kernel().coeffs;
    const Mat proj = Mat::Identity(lt.matrix.rows(), lt.matrix.cols()) - k * k.transpose();
    Mat m = proj * lt.matrix * proj;
    m = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(m);
    inv.setZero();
    for (Eigen::Index j = 0; j < es.eigenvalues().size(); ++j)
      if (std::abs(es.eigenvalues()[j]) > ctx.config().kernel_tol)
        inv.noalias() += es.eigenvectors().col(j) * es.eigenvectors().col(j).transpose() / es.eigenvalues()[j];
  }

  double first = -1.0;
  for (int it = 0;; ++it) {
    st.f = b.field(st.coeffs);
    FunctionalValue fv;
    try {
      fv = detail::evaluate_functional(ctx, g, st.f, true);
    } catch (const DomainError& e) {
      // an iterate leaving the tubular neighbourhood is divergence; a bad
      // initial guess is the caller's problem
      if (it == 0) throw;
      throw NumericalFailure(std::string("projected_solve: iterate left the chart (") + e.what() + ")");
    }
    st.K_value = fv.value;
    st.P = fv.gradient;
    const Vec pc = b.coefficients(st.P);
    const Vec proj = ctx.project(pc);
    st.residual_norm = proj.norm();
    st.H = ctx.kernel().zero_mean_coeffs.transpose() * pc;
    st.P_mean = l2_inner(st.P, ScalarField::constant(ctx.grid(), 1.0), ctx.dvol()) /
                std::sqrt(l2_inner(ScalarField::constant(ctx.grid(), 1.0), ScalarField::constant(ctx.grid(), 1.0),
                                   ctx.dvol()));
    st.iterations = it;
    if (!std::isfinite(st.residual_norm)) throw NumericalFailure("projected_solve: non-finite residual");
    if (st.residual_norm <= tol) {
      st.converged = true;
      break;
    }
    if (first < 0.0) first = st.residual_norm;
    if (it >= ctx.config().max_iterations || st.residual_norm > 1e6 * std::max(first, 1e-12))
      throw NumericalFailure("projected_solve: iteration is not contracting (t or amplitude too large)");
    st.coeffs -= inv * proj;
  }
  return st;
}

inline double K_eval(const ReductionContext& ctx, double t, const FrameState& frame) {
  return projected_solve(ctx, t, frame).K_value;
}

inline Vec H_eval(const ReductionContext& ctx, double t, const FrameState& frame) {
  return projected_solve(ctx, t, frame).H;
}

// ------------------------------------------------- frame variations

/// Displaced solves along every frame coordinate, shared by the
/// finite-difference gradient of K and the variation potentials.
struct FrameVariation {
  ReductionState center;
  Mat chart_coords_base;                     // X(f) at the frame, nodes x 2n
  std::vector<std::vector<Vec>> d_immersion;  // [coord][k]: d iota / dx in base chart coordinates
  Vec K_gradient_fd;                         // 5-point differences of K
  std::vector<std::vector<double>> K_samples;
};

namespace detail {

/// Immersion of the displaced frame expressed in the base chart coordinates:
/// (t u)^{-1}(p' - p) + u^{-1} u' X(f').
inline std::vector<Vec> chart_immersion(const ReductionContext& ctx, double t, const FrameState& base,
                                        const Mat& u_inv, const FrameState& frame, const ScalarField& f) {
  const Immersion x = graph_immersion(ctx.chart(), f);
  const Mat rel = u_inv * frame.realize(ctx.metric());
  const Vec shift = u_inv * (frame.p - base.p) / t;
  std::vector<Vec> out(x.coords.size(), Vec(static_cast<Eigen::Index>(x.grid.node_count())));
  for (std::size_t i = 0; i < x.grid.node_count(); ++i) {
    const Vec z = shift + rel * x.point(i);
    for (std::size_t k = 0; k < out.size(); ++k) out[k][i] = z[static_cast<Eigen::Index>(k)];
  }
  return out;
}

}  // namespace detail

inline FrameVariation frame_variation(const ReductionContext& ctx, double t, const FrameState& frame,
                                      const std::vector<int>& coords = {}) {
  FrameVariation fv;
  fv.center = projected_solve(ctx, t, frame);
  const int nc = frame.coord_count();
  std::vector<int> which = coords;
  if (which.empty())
    for (int k = 0; k < nc; ++k) which.push_back(k);
  const double eps = ctx.config().frame_step;
  const Mat u_inv = frame.realize(ctx.metric()).inverse();
  fv.d_immersion.assign(nc, {});
  fv.K_gradient_fd = Vec::Zero(nc);
  fv.K_samples.assign(nc, {});
  const double offsets[4] = {-2.0, -1.0, 1.0, 2.0};
  const double weights[4] = {1.0, -8.0, 8.0, -1.0};
  SolveOptions so;
  so.initial = fv.center.coeffs;
  for (int k : which) {
    std::vector<Vec> acc(2 * ctx.n(), Vec::Zero(static_cast<Eigen::Index>(ctx.grid().node_count())));
    double kd = 0.0;
    for (int s = 0; s < 4; ++s) {
      Vec dx = Vec::Zero(nc);
      dx[k] = offsets[s] * eps;
      const FrameState moved = frame.moved(dx);
      const ReductionState st = projected_solve(ctx, t, moved, so);
      fv.K_samples[k].push_back(st.K_value);
      kd += weights[s] * st.K_value;
      const auto ci = detail::chart_immersion(ctx, t, frame, u_inv, moved, st.f);
      for (std::size_t m = 0; m < acc.size(); ++m) acc[m] += weights[s] * ci[m];
    }
    for (auto& v : acc) v /= 12.0 * eps;
    fv.d_immersion[k] = std::move(acc);
    fv.K_gradient_fd[k] = kd / (12.0 * eps);
  }
  return fv;
}

struct VariationPotential {
  ScalarField h;          // M-scale potential t^2 * chart potential
  ScalarField chart_h;    // potential in the rescaled chart
  double exactness = 0;   // |dh - beta| / max(|beta|, floor)
  double beta_norm = 0;
};

/// Potential of the closed form beta = iota^* omega0(d_x iota, .) for one
/// frame coordinate: zero-mean solution of Delta h = d* beta on the flat torus.
inline VariationPotential potential_from_variation(const ReductionContext& ctx, double t, const FrameVariation& fv,
                                                   const Vec& x) {
  const GridDescriptor& grid = ctx.grid();
  const int n = ctx.n(), d = 2 * n;
  const std::size_t nodes = grid.node_count();
  const Immersion base = graph_immersion(ctx.chart(), fv.center.f);
  const auto e = tangent_vectors(base);
  std::vector<Vec> di(d, Vec::Zero(static_cast<Eigen::Index>(nodes)));
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    if (x[k] == 0.0) continue;
    if (fv.d_immersion[static_cast<std::size_t>(k)].empty())
      throw Error("potential_from_variation: coordinate not differentiated");
    for (int m = 0; m < d; ++m) di[m] += x[k] * fv.d_immersion[static_cast<std::size_t>(k)][m];
  }
  OneFormField beta(grid);
  for (std::size_t i = 0; i < nodes; ++i) {
    Vec v(d);
    for (int m = 0; m < d; ++m) v[m] = di[m][i];
    for (int a = 0; a < n; ++a) {
      Vec ea(d);
      for (int m = 0; m < d; ++m) ea[m] = e[a][m][i];
      beta.components[a][i] = omega0(v, ea);
    }
  }
  std::vector<double> coef(n);
  Vec rhs = Vec::Zero(static_cast<Eigen::Index>(nodes));
  for (int a = 0; a < n; ++a) {
    coef[a] = 1.0 / (ctx.chart().radii[a] * ctx.chart().radii[a]);
    rhs += coef[a] * spectral_derivative(grid, beta.components[a], a);
  }
  const PeriodicPoisson poisson(grid, coef);
  VariationPotential vp;
  vp.chart_h = ScalarField(grid, poisson.solve(rhs));
  vp.h = ScalarField(grid, t * t * vp.chart_h.values);
  double mis = 0.0, bn = 0.0;
  for (int a = 0; a < n; ++a) {
    const Vec dh = spectral_derivative(grid, vp.chart_h.values, a);
    mis = std::max(mis, (dh - beta.components[a]).cwiseAbs().maxCoeff());
    bn = std::max(bn, beta.components[a].cwiseAbs().maxCoeff());
  }
  vp.beta_norm = bn;
  vp.exactness = mis / std::max(bn, 1e-3);
  if (vp.exactness > ctx.config().exactness_tol)
    throw NumericalFailure("variation_potential: variation form is not exact (frame parametrization bug)");
  return vp;
}

inline VariationPotential variation_potential(const ReductionContext& ctx, double t, const FrameState& frame,
                                              const Vec& x) {
  std::vector<int> used;
  for (Eigen::Index k = 0; k < x.size(); ++k)
    if (x[k] != 0.0) used.push_back(static_cast<int>(k));
  if (used.empty()) {
    VariationPotential vp;
    vp.h = vp.chart_h = ScalarField(ctx.grid());
    return vp;
  }
  return potential_from_variation(ctx, t, frame_variation(ctx, t, frame, used), x);
}

/// xi^t(x): zero-mean restriction of the moment map of the infinitesimal
/// action to the model torus, on M scale:
/// t omega0(u^{-1} dp, X) + t^2 1/2 omega0(A X, X).
inline ScalarField xi_map(const ReductionContext& ctx, double t, const FrameState& frame, const Vec& x) {
  const int n = ctx.n(), d = 2 * n;
  if (x.size() != frame.coord_count()) throw Error("xi_map: wrong coordinate count");
  const Mat u = frame.realize(ctx.metric());
  const Vec w = u.inverse() * x.head(d);
  // generator of the xi motion at the current xi
  const double h = 1e-6;
  const Vec dxi = x.tail(n * n);
  const Mat ex = FrameState::exp_xi(frame.xi, n);
  const Mat a = ex.transpose() *
                (FrameState::exp_xi(frame.xi + h * dxi, n) - FrameState::exp_xi(frame.xi - h * dxi, n)) / (2 * h);
  const Immersion x0 = graph_immersion(ctx.chart(), ScalarField(ctx.grid()));
  ScalarField out(ctx.grid());
  for (std::size_t i = 0; i < ctx.grid().node_count(); ++i) {
    const Vec z = x0.point(i);
    out.values[i] = t * omega0(w, z) + t * t * 0.5 * omega0(a * z, z);
  }
  out.values.array() -= out.values.mean();
  return out;
}

struct PsiReport {
  Mat full;       // rows: all frame coordinates; cols: zero-mean kernel basis
  Mat reduced;    // rows off the stabilizer directions
  double condition = 0.0;
  std::vector<int> active;
  double max_exactness = 0.0;
};

namespace detail {

inline std::vector<int> active_coords(const FrameState& frame) {
  const auto g = frame.stabilizer_coords();
  std::vector<int> out;
  for (int k = 0; k < frame.coord_count(); ++k)
    if (std::find(g.begin(), g.end(), k) == g.end()) out.push_back(k);
  return out;
}

inline PsiReport finish_psi(Mat full, const FrameState& frame) {
  PsiReport r;
  r.full = std::move(full);
  r.active = active_coords(frame);
  r.reduced.resize(static_cast<Eigen::Index>(r.active.size()), r.full.cols());
  for (std::size_t k = 0; k < r.active.size(); ++k) r.reduced.row(static_cast<Eigen::Index>(k)) = r.full.row(r.active[k]);
  if (r.reduced.rows() == r.reduced.cols() && r.reduced.size() > 0) {
    Eigen::JacobiSVD<Mat> svd(r.reduced);
    const Vec sv = svd.singularValues();
    r.condition = sv[sv.size() - 1] > 0.0 ? sv[0] / sv[sv.size() - 1] : std::numeric_limits<double>::infinity();
  }
  return r;
}

}  // namespace detail

/// Psi^t: rows x_i, columns b_j, entries t^{-2} <h^t(x_i), b_j>.
inline PsiReport psi_from_variation(const ReductionContext& ctx, double t, const FrameState& frame,
                                    const FrameVariation& fv) {
  const int nc = frame.coord_count();
  const auto& zb = ctx.kernel().zero_mean_fields;
  Mat full(nc, static_cast<Eigen::Index>(zb.size()));
  double worst = 0.0;
  for (int k = 0; k < nc; ++k) {
    const VariationPotential vp = potential_from_variation(ctx, t, fv, Vec::Unit(nc, k));
    worst = std::max(worst, vp.exactness);
    for (std::size_t j = 0; j < zb.size(); ++j)
      full(k, static_cast<Eigen::Index>(j)) = l2_inner(vp.chart_h, zb[j], ctx.dvol());
  }
  PsiReport r = detail::finish_psi(std::move(full), frame);
  r.max_exactness = worst;
  return r;
}

inline PsiReport Psi_map(const ReductionContext& ctx, double t, const FrameState& frame) {
  return psi_from_variation(ctx, t, frame, frame_variation(ctx, t, frame));
}

/// psi^t: the same pairing built from xi^t alone.
inline PsiReport psi_map(const ReductionContext& ctx, double t, const FrameState& frame) {
  const int nc = frame.coord_count();
  const auto& zb = ctx.kernel().zero_mean_fields;
  Mat full(nc, static_cast<Eigen::Index>(zb.size()));
  for (int k = 0; k < nc; ++k) {
    const ScalarField xi = xi_map(ctx, t, frame, Vec::Unit(nc, k));
    for (std::size_t j = 0; j < zb.size(); ++j)
      full(k, static_cast<Eigen::Index>(j)) = l2_inner(xi, zb[j], ctx.dvol()) / (t * t);
  }
  return detail::finish_psi(std::move(full), frame);
}

struct KGradient {
  Vec fd;       // central differences of K over all frame coordinates
  Vec psi_H;    // Psi^t H^t
  ReductionState state;
  PsiReport psi;
  double relative_disagreement() const {
    const double s = fd.norm();
    return s > 0.0 ? (fd - psi_H).norm() / s : psi_H.norm();
  }
};

inline KGradient gradient_K(const ReductionContext& ctx, double t, const FrameState& frame) {
  const FrameVariation fv = frame_variation(ctx, t, frame);
  KGradient g;
  g.fd = fv.K_gradient_fd;
  g.state = fv.center;
  g.psi = psi_from_variation(ctx, t, frame, fv);
  g.psi_H = g.psi.full * fv.center.H;
  return g;
}

/// Gradient of K through Psi H only (the optimizer's gradient), restricted
/// to the listed coordinates. Cheaper: one displaced stencil per coordinate.
inline Vec gradient_psi_H(const ReductionContext& ctx, double t, const FrameState& frame, const std::vector<int>& coords,
                          ReductionState* center = nullptr) {
  const FrameVariation fv = frame_variation(ctx, t, frame, coords);
  Vec out(static_cast<Eigen::Index>(coords.size()));
  const ScalarField pk = ctx.kernel().basis.field(ctx.kernel().zero_mean_coeffs * fv.center.H);
  for (std::size_t k = 0; k < coords.size(); ++k) {
    const VariationPotential vp = potential_from_variation(ctx, t, fv, Vec::Unit(frame.coord_count(), coords[k]));
    out[static_cast<Eigen::Index>(k)] = l2_inner(vp.chart_h, pk, ctx.dvol());
  }
  if (center) *center = fv.center;
  return out;
}

// ------------------------------------------------------------- Hessian of K

/// 5-point Hessian of K over the listed coordinates (all if empty).
inline Mat hessian_K(const ReductionContext& ctx, double t, const FrameState& frame, double step,
                     const std::vector<int>& coords = {}) {
  std::vector<int> which = coords;
  if (which.empty())
    for (int k = 0; k < frame.coord_count(); ++k) which.push_back(k);
  const int nc = frame.coord_count();
  const ReductionState center = projected_solve(ctx, t, frame);
  SolveOptions so;
  so.initial = center.coeffs;
  auto K = [&](const Vec& dx) { return projected_solve(ctx, t, frame.moved(dx), so).K_value; };
  const int m = static_cast<int>(which.size());
  Mat hs(m, m);
  for (int a = 0; a < m; ++a) {
    const Vec ea = Vec::Unit(nc, which[a]) * step;
    hs(a, a) = (-K(2 * ea) + 16 * K(ea) - 30 * center.K_value + 16 * K(-ea) - K(-2 * ea)) / (12 * step * step);
    for (int b = a + 1; b < m; ++b) {
      const Vec eb = Vec::Unit(nc, which[b]) * step;
      hs(a, b) = hs(b, a) = (K(ea + eb) - K(ea - eb) - K(eb - ea) + K(-ea - eb)) / (4 * step * step);
    }
  }
  return hs;
}

// ------------------------------------------------------------- optimizer

struct OptimizeOptions {
  double grad_tol = 1e-8;
  double target_tol = 1e-11;  // keep going below grad_tol while progress is possible
  int max_steps = 100;
  int max_restarts = 3;
  double hessian_step = 1e-2;
  double saddle_tol = 1e-8;
  double restart_step = 0.05;
  double initial_step = 0.1;  // coordinate length of steepest-descent trials
  double max_step = 0.5;
};

struct OptimizeTraceRow {
  int step;
  double K;
  double residual_norm;
  double grad_norm;
};

struct OptimizeResult {
  FrameState frame;
  ReductionState state;
  Vec gradient;              // Psi H over the active coordinates
  double grad_norm = 0.0;
  bool converged = false;
  bool saddle = false;
  int restarts = 0;
  std::string verdict;
  std::vector<OptimizeTraceRow> trace;
  Mat hessian;               // active-coordinate Hessian of K at the end
  double min_hessian_eigenvalue = 0.0;
  double geometric_residual = 0.0;  // |d* alpha_H| / |alpha_H| of the placed torus in (M, g)
};

/// |d* alpha_H|_{L2} / |alpha_H|_{L2} of an immersion in an ambient metric.
inline double relative_geometric_residual(const Immersion& imm, const MetricEvaluator& g) {
  const MetricField h = induced_metric(imm, g);
  const OneFormField alpha = mean_curvature_one_form(imm, g);
  const ScalarField r = codifferential(alpha, h);
  const double an = std::sqrt(one_form_inner(alpha, alpha, h));
  return l2_norm(r, volume_density(h)) / std::max(an, 1e-300);
}

/// BFGS with Armijo backtracking on the frame coordinates off the
/// stabilizer. The frame is recentered after every accepted step so the
/// stabilizer directions stay the diagonal xi coordinates.
inline OptimizeResult optimize_frame(const ReductionContext& ctx, double t, const FrameState& init,
                                     const OptimizeOptions& opt = {}) {
  OptimizeResult res;
  FrameState cur = init.recentered();
  const std::vector<int> active = detail::active_coords(cur);
  const int na = static_cast<int>(active.size());
  const int nc = cur.coord_count();
  auto embed = [&](const Vec& v) {
    Vec dx = Vec::Zero(nc);
    for (int k = 0; k < na; ++k) dx[active[k]] = v[k];
    return dx;
  };

  int step = 0;
  for (int round = 0;; ++round) {
    ReductionState st;
    Vec g = gradient_psi_H(ctx, t, cur, active, &st);
    Mat hinv = Mat::Identity(na, na);
    bool scaled = false;
    while (step < opt.max_steps) {
      res.trace.push_back({step, st.K_value, st.residual_norm, g.norm()});
      if (g.norm() <= opt.target_tol) break;
      Vec dir = -hinv * g;
      if (!scaled || g.dot(dir) >= 0.0) {
        // no usable curvature yet: steepest descent with a fixed trial length
        hinv.setIdentity();
        scaled = false;
        dir = -g * (opt.initial_step / g.norm());
      }
      if (dir.norm() > opt.max_step) dir *= opt.max_step / dir.norm();
      double alpha = 1.0;
      const double slope = g.dot(dir);
      const double noise = 1e-14 * std::abs(st.K_value);
      bool accepted = false;
      FrameState trial;
      ReductionState tst;
      SolveOptions so;
      so.initial = st.coeffs;
      while (alpha > 1e-12) {
        trial = cur.moved(embed(alpha * dir)).recentered();
        try {
          tst = projected_solve(ctx, t, trial, so);
          if (tst.K_value <= st.K_value + 1e-4 * alpha * slope + noise) {
            accepted = true;
            break;
          }
        } catch (const DomainError&) {
        } catch (const NumericalFailure&) {
        }
        alpha *= 0.5;
      }
      if (!accepted) break;  // step underflow
      ReductionState nst;
      const Vec gn = gradient_psi_H(ctx, t, trial, active, &nst);
      const Vec s = alpha * dir, y = gn - g;
      const double sy = s.dot(y);
      if (sy > 1e-300) {
        if (!scaled) {
          hinv *= sy / y.squaredNorm();
          scaled = true;
        }
        const double rho = 1.0 / sy;
        const Mat id = Mat::Identity(na, na);
        hinv = (id - rho * s * y.transpose()) * hinv * (id - rho * y * s.transpose()) + rho * s * s.transpose();
      }
      cur = trial;
      st = nst;
      g = gn;
      ++step;
    }
    res.frame = cur;
    res.state = st;
    res.gradient = g;
    res.grad_norm = g.norm();
    res.converged = res.grad_norm <= opt.grad_tol;
    if (!res.converged) break;
    res.hessian = hessian_K(ctx, t, cur, opt.hessian_step, active);
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (res.hessian + res.hessian.transpose()));
    res.min_hessian_eigenvalue = es.eigenvalues()[0];
    if (res.min_hessian_eigenvalue >= -opt.saddle_tol) break;
    if (res.restarts >= opt.max_restarts) {
      res.saddle = true;
      break;
    }
    // leave the saddle along the most negative direction
    ++res.restarts;
    cur = cur.moved(embed(opt.restart_step * es.eigenvectors().col(0))).recentered();
    (void)round;
  }
  if (res.converged) {
    const ChartFamily& fam = ctx.family();
    res.geometric_residual =
        relative_geometric_residual(ambient_immersion(ctx, t, res.frame, res.state.f), *fam.metric);
  }
  res.verdict = !res.converged ? "not converged" : (res.saddle ? "saddle" : "local minimum");
  return res;
}

// ---------------------------------------------------------- second variation

struct SecondVariationReport {
  // all quantities in the rescaled normalization F^t = t^{-n} Vol_g
  std::vector<double> direction_Q;       // d^2/ds^2 F^t(f^t + s f_i)
  std::vector<double> direction_L;       // <f_i, L f_i>
  std::vector<double> direction_rel_err;
  Mat frame_hessian;                     // active frame coordinates
  double frame_min_eigenvalue = 0.0;
  Mat cross;                             // (direction, active coordinate) mixed derivatives
  double max_cross_relative = 0.0;       // |Q_fx| / sqrt(|Q_ff Q_xx|)
  double stabilizer_hessian = 0.0;       // largest |Hessian| entry touching a stabilizer direction
  double scale_t_n = 1.0;                // multiply by this for Vol_g itself
};

struct SecondVariationOptions {
  double s_step = 1e-2;
  double frame_step = 1e-2;
};

inline SecondVariationReport second_variation_Q(const ReductionContext& ctx, double t, const FrameState& frame,
                                                const std::vector<ScalarField>& directions,
                                                const SecondVariationOptions& opt = {}) {
  SecondVariationReport rep;
  rep.scale_t_n = std::pow(t, ctx.n());
  const ReductionState center = projected_solve(ctx, t, frame);
  const std::vector<int> active = detail::active_coords(frame);
  const int nc = frame.coord_count();
  SolveOptions so;
  so.initial = center.coeffs;

  // V(s, x) = F^t_{frame + x}(f^t_{frame + x} + s f)
  auto V = [&](const ScalarField& f, double s, const Vec& dx) {
    const FrameState fr = frame.moved(dx);
    const ReductionState st = dx.isZero() ? center : projected_solve(ctx, t, fr, so);
    return functional_F(ctx, t, fr, ScalarField(ctx.grid(), st.f.values + s * f.values));
  };

  const Mat full = hessian_K(ctx, t, frame, opt.frame_step);
  rep.frame_hessian.resize(static_cast<Eigen::Index>(active.size()), static_cast<Eigen::Index>(active.size()));
  for (std::size_t a = 0; a < active.size(); ++a)
    for (std::size_t b = 0; b < active.size(); ++b)
      rep.frame_hessian(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = full(active[a], active[b]);
  for (int g : frame.stabilizer_coords())
    rep.stabilizer_hessian = std::max(rep.stabilizer_hessian, full.row(g).cwiseAbs().maxCoeff());
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (rep.frame_hessian + rep.frame_hessian.transpose()));
  rep.frame_min_eigenvalue = es.eigenvalues()[0];

  rep.cross = Mat::Zero(static_cast<Eigen::Index>(directions.size()), static_cast<Eigen::Index>(active.size()));
  const double s = opt.s_step, e = opt.frame_step;
  for (std::size_t i = 0; i < directions.size(); ++i) {
    const ScalarField& f = directions[i];
    const Vec z = Vec::Zero(nc);
    const double q = (-V(f, 2 * s, z) + 16 * V(f, s, z) - 30 * V(f, 0, z) + 16 * V(f, -s, z) - V(f, -2 * s, z)) /
                     (12 * s * s);
    const double l = ctx.flat().quadratic_form(f);
    rep.direction_Q.push_back(q);
    rep.direction_L.push_back(l);
    rep.direction_rel_err.push_back(std::abs(q - l) / std::max(std::abs(l), 1e-300));
    for (std::size_t a = 0; a < active.size(); ++a) {
      const Vec dx = Vec::Unit(nc, active[a]) * e;
      const double c = (V(f, s, dx) - V(f, s, -dx) - V(f, -s, dx) + V(f, -s, -dx)) / (4 * s * e);
      rep.cross(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) = c;
      const double diag = std::sqrt(std::abs(q * rep.frame_hessian(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a))));
      rep.max_cross_relative = std::max(rep.max_cross_relative, std::abs(c) / std::max(diag, 1e-300));
    }
  }
  return rep;
}

// ------------------------------------------------------- perturbed operator

/// Linearization of P^t at f = 0 in the Fourier basis.
inline LinearOperator assemble_perturbed_L(const ReductionContext& ctx, double t, const FrameState& frame,
                                           const OperatorOptions& opt = {}) {
  const ChartMetric g(ctx.family(), frame, t);
  LinearOperator op;
  op.basis = ctx.basis();
  op.matrix = linearize_in_basis(
      op.basis, [&](const ScalarField& f) { return detail::evaluate_functional(ctx, g, f, true).gradient; },
      opt.fd_step);
  finish_symmetric(op, opt.symmetry_tol);
  return op;
}

}  // namespace hslag
