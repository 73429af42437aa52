#pragma once

// Induced geometry of immersed Lagrangians sampled on periodic grids.

#include <cmath>
#include <string>
#include <vector>

#include "hslag/errors.hpp"
#include "hslag/grid.hpp"
#include "hslag/linalg.hpp"
#include "hslag/metric.hpp"

namespace hslag {

struct Immersion {
  GridDescriptor grid;
  std::vector<Vec> coords;  // 2n arrays of node values

  Immersion() = default;
  Immersion(GridDescriptor g, std::vector<Vec> c) : grid(std::move(g)), coords(std::move(c)) {
    for (const auto& v : coords)
      if (static_cast<std::size_t>(v.size()) != grid.node_count())
        throw GridMismatch("immersion coordinate count does not match the grid");
  }

  int ambient_dim() const { return static_cast<int>(coords.size()); }

  Vec point(std::size_t node) const {
    Vec z(ambient_dim());
    for (int k = 0; k < ambient_dim(); ++k) z[k] = coords[k][node];
    return z;
  }

  Immersion scaled(double t) const {
    Immersion out = *this;
    for (auto& c : out.coords) c *= t;
    return out;
  }
};

/// Spectral Jacobian: tangent[a][k] = d X^k / d x_a.
inline std::vector<std::vector<Vec>> tangent_vectors(const Immersion& imm) {
  const int n = imm.grid.dim();
  std::vector<std::vector<Vec>> e(n);
  for (int a = 0; a < n; ++a) {
    e[a].reserve(imm.coords.size());
    for (const auto& c : imm.coords) e[a].push_back(spectral_derivative(imm.grid, c, a));
  }
  return e;
}

namespace detail {

inline Mat tangent_matrix(const std::vector<std::vector<Vec>>& e, std::size_t node, int amb) {
  const int n = static_cast<int>(e.size());
  Mat m(amb, n);
  for (int a = 0; a < n; ++a)
    for (int k = 0; k < amb; ++k) m(k, a) = e[a][k][node];
  return m;
}

inline void check_immersion(const Immersion& imm, const MetricEvaluator& g) {
  if (imm.ambient_dim() != g.dim()) throw GridMismatch("immersion and metric ambient dimensions differ");
  if (imm.ambient_dim() != 2 * imm.grid.dim()) throw Error("immersion must have ambient dimension 2n");
}

inline void check_domain(const Vec& z, const MetricEvaluator& g) {
  if (!g.in_domain(z)) throw DomainError("immersion point outside the metric chart domain");
}

// Relative threshold on det(h) below which the Jacobian counts as rank-deficient.
inline constexpr double kRankTol = 1e-12;

inline void check_rank(const Mat& h, const Mat& e) {
  const double scale = std::pow(e.squaredNorm() / e.cols(), static_cast<double>(e.cols()));
  if (!(h.determinant() > kRankTol * scale)) throw DegenerateGeometry("rank-deficient Jacobian");
}

}  // namespace detail

inline MetricField induced_metric(const Immersion& imm, const MetricEvaluator& g) {
  detail::check_immersion(imm, g);
  const auto e = tangent_vectors(imm);
  const int amb = imm.ambient_dim();
  MetricField h(imm.grid);
  MetricJet jet;
  for (std::size_t i = 0; i < imm.grid.node_count(); ++i) {
    const Vec z = imm.point(i);
    detail::check_domain(z, g);
    g.jet(z, 0, jet);
    const Mat em = detail::tangent_matrix(e, i, amb);
    const Mat hi = em.transpose() * jet.g * em;
    detail::check_rank(hi, em);
    h.set(i, 0.5 * (hi + hi.transpose()));
  }
  return h;
}

/// sqrt(det h) nodewise.
inline ScalarField volume_density(const MetricField& h) {
  ScalarField s(h.grid);
  for (std::size_t i = 0; i < h.grid.node_count(); ++i) {
    const double d = h.at(i).determinant();
    if (!(d > 0.0)) throw DegenerateGeometry("induced metric not positive definite");
    s.values[i] = std::sqrt(d);
  }
  return s;
}

/// Quadrature weight factor of the underlying manifold: 1/2 on a double cover.
inline double quotient_factor(const GridDescriptor& g) { return g.quotient ? 0.5 : 1.0; }

inline double volume(const Immersion& imm, const MetricEvaluator& g) {
  const ScalarField s = volume_density(induced_metric(imm, g));
  return s.values.sum() * imm.grid.cell_volume() * quotient_factor(imm.grid);
}

/// Largest |omega0(d_a X, d_b X)| over nodes and pairs a < b.
inline double lagrangian_defect(const Immersion& imm) {
  const auto e = tangent_vectors(imm);
  const int n = imm.grid.dim();
  const int amb = imm.ambient_dim();
  double m = 0.0;
  for (std::size_t i = 0; i < imm.grid.node_count(); ++i) {
    const Mat em = detail::tangent_matrix(e, i, amb);
    for (int a = 0; a < n; ++a)
      for (int b = a + 1; b < n; ++b) m = std::max(m, std::abs(omega0(em.col(a), em.col(b))));
  }
  return m;
}

/// alpha_H(d_a) = omega0(H, d_a X), H the mean curvature vector of the
/// immersion in the ambient metric g (trace of the second fundamental form).
inline OneFormField mean_curvature_one_form(const Immersion& imm, const MetricEvaluator& g) {
  detail::check_immersion(imm, g);
  const int n = imm.grid.dim();
  const int amb = imm.ambient_dim();
  const auto e = tangent_vectors(imm);
  // second[b][c][k] = d_b d_c X^k
  std::vector<std::vector<std::vector<Vec>>> second(n, std::vector<std::vector<Vec>>(n));
  for (int b = 0; b < n; ++b)
    for (int c = b; c < n; ++c) {
      for (int k = 0; k < amb; ++k) second[b][c].push_back(spectral_derivative(imm.grid, e[c][k], b));
      if (c != b) second[c][b] = second[b][c];
    }
  const Mat w0 = omega0_matrix(n);
  OneFormField alpha(imm.grid);
  MetricJet jet;
  Vec hvec(amb), s(amb);
  for (std::size_t i = 0; i < imm.grid.node_count(); ++i) {
    const Vec z = imm.point(i);
    detail::check_domain(z, g);
    const bool flat = g.is_flat();
    g.jet(z, flat ? 0 : 1, jet);
    const Mat em = detail::tangent_matrix(e, i, amb);
    const Mat ge = jet.g * em;
    const Mat h = em.transpose() * ge;
    detail::check_rank(h, em);
    const Mat hinv = h.inverse();
    std::vector<Mat> gamma;
    if (!flat) gamma = christoffel(jet);
    hvec.setZero();
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c) {
        for (int k = 0; k < amb; ++k) s[k] = second[b][c][k][i];
        if (!flat)
          for (int k = 0; k < amb; ++k) s[k] += em.col(b).dot(gamma[k] * em.col(c));
        hvec += hinv(b, c) * s;
      }
    // Normal projection (tangential part pairs to zero with omega0 on a
    // Lagrangian anyway, but keep H honest).
    hvec -= em * (hinv * (ge.transpose() * hvec));
    const Vec oh = hvec.transpose() * w0;
    for (int a = 0; a < n; ++a) alpha.components[a][i] = oh.dot(em.col(a));
  }
  return alpha;
}

/// d*alpha = -(1/sqrt(det h)) sum_b d_b( sqrt(det h) h^{ab} alpha_a ).
/// Discretely the exact adjoint of spectral d under the dV_h quadrature.
inline ScalarField codifferential(const OneFormField& alpha, const MetricField& h) {
  require_same_grid(alpha.grid, h.grid, "codifferential(alpha, h)");
  const GridDescriptor& grid = alpha.grid;
  const int n = grid.dim();
  const std::size_t nodes = grid.node_count();
  std::vector<Vec> flux(n, Vec(static_cast<Eigen::Index>(nodes)));
  Vec sq(static_cast<Eigen::Index>(nodes));
  for (std::size_t i = 0; i < nodes; ++i) {
    const Mat hi = h.at(i);
    const double d = hi.determinant();
    if (!(d > 0.0)) throw DegenerateGeometry("codifferential: singular metric");
    const Mat hinv = hi.inverse();
    sq[i] = std::sqrt(d);
    for (int b = 0; b < n; ++b) {
      double v = 0.0;
      for (int a = 0; a < n; ++a) v += hinv(a, b) * alpha.components[a][i];
      flux[b][i] = sq[i] * v;
    }
  }
  Vec div = Vec::Zero(static_cast<Eigen::Index>(nodes));
  for (int b = 0; b < n; ++b) div += spectral_derivative(grid, flux[b], b);
  return ScalarField(grid, -div.cwiseQuotient(sq));
}

inline OneFormField exterior_derivative(const ScalarField& f) {
  OneFormField df(f.grid);
  for (int a = 0; a < f.grid.dim(); ++a) df.components[a] = spectral_derivative(f.grid, f.values, a);
  return df;
}

/// L2 inner product of one-forms: integral of h^{ab} alpha_a beta_b dV_h.
inline double one_form_inner(const OneFormField& alpha, const OneFormField& beta, const MetricField& h) {
  require_same_grid(alpha.grid, beta.grid, "one_form_inner");
  require_same_grid(alpha.grid, h.grid, "one_form_inner(metric)");
  const int n = alpha.grid.dim();
  double sum = 0.0;
  for (std::size_t i = 0; i < alpha.grid.node_count(); ++i) {
    const Mat hi = h.at(i);
    const Mat hinv = hi.inverse();
    double v = 0.0;
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) v += hinv(a, b) * alpha.components[a][i] * beta.components[b][i];
    sum += v * std::sqrt(hi.determinant());
  }
  return sum * alpha.grid.cell_volume();
}

/// Hamiltonian stationarity residual d*alpha_H.
inline ScalarField hs_residual(const Immersion& imm, const MetricEvaluator& g) {
  ScalarField r = codifferential(mean_curvature_one_form(imm, g), induced_metric(imm, g));
  // on a double cover the residual descends; project away roundoff asymmetry
  if (imm.grid.quotient) r = quotient_symmetrize(r);
  return r;
}

}  // namespace hslag
