#pragma once

// Model Lagrangians: product tori |z_j| = a_j and L_n = {(x e^{is}) : |x| = 1},
// plus the space W_n of quadratic moment maps.

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "hslag/errors.hpp"
#include "hslag/geometry.hpp"
#include "hslag/grid.hpp"
#include "hslag/linalg.hpp"

namespace hslag {

struct TorusModel {
  std::vector<double> radii;
  GridDescriptor grid;

  TorusModel(std::vector<double> r, int nodes_per_axis) : radii(std::move(r)) {
    if (radii.empty()) throw Error("torus: need at least one radius");
    for (double a : radii)
      if (!(a > 0.0)) throw Error("torus: radii must be positive");
    grid = GridDescriptor::uniform(static_cast<int>(radii.size()), nodes_per_axis);
  }

  int n() const { return static_cast<int>(radii.size()); }

  bool distinct_radii(double tol = 1e-12) const {
    for (std::size_t j = 0; j < radii.size(); ++j)
      for (std::size_t k = j + 1; k < radii.size(); ++k)
        if (std::abs(radii[j] - radii[k]) <= tol) return false;
    return true;
  }

  /// Constant volume density of the flat induced metric.
  double density() const {
    double p = 1.0;
    for (double a : radii) p *= a;
    return p;
  }

  double total_volume() const { return std::pow(kTwoPi, n()) * density(); }

  ScalarField dvol() const { return ScalarField::constant(grid, density()); }
};

struct LnModel {
  int n = 2;
  std::optional<GridDescriptor> grid;  // only for n = 2

  explicit LnModel(int n_, int nodes_per_axis = 0) : n(n_) {
    if (n < 2) throw Error("L_n: n must be at least 2");
    if (nodes_per_axis > 0) {
      if (n != 2) throw Unsupported("L_n grid output only for n = 2");
      grid = GridDescriptor({nodes_per_axis, nodes_per_axis}, {kTwoPi, kTwoPi}, QuotientRule{{true, true}});
    }
  }

  const GridDescriptor& require_grid() const {
    if (!grid) throw Unsupported("L_n model has no grid (analytic only)");
    return *grid;
  }

  /// Induced metric is the identity; the double-cover weight 1/2 makes grid
  /// inner products equal to integrals over L_2 itself.
  ScalarField dvol() const { return ScalarField::constant(require_grid(), 0.5); }
};

inline Immersion clifford_torus(const std::vector<double>& radii, const GridDescriptor& grid) {
  if (static_cast<int>(radii.size()) != grid.dim()) throw GridMismatch("one radius per grid axis required");
  for (double a : radii)
    if (!(a > 0.0)) throw Error("clifford_torus: radii must be positive");
  const int n = grid.dim();
  std::vector<Vec> c(2 * n, Vec(static_cast<Eigen::Index>(grid.node_count())));
  for (std::size_t i = 0; i < grid.node_count(); ++i) {
    const auto x = grid.coordinates(i);
    for (int j = 0; j < n; ++j) {
      c[2 * j][i] = radii[j] * std::cos(x[j]);
      c[2 * j + 1][i] = radii[j] * std::sin(x[j]);
    }
  }
  return Immersion(grid, std::move(c));
}

inline Immersion clifford_torus(const TorusModel& m) { return clifford_torus(m.radii, m.grid); }

/// (s, phi) -> (cos phi e^{is}, sin phi e^{is}) on the double cover.
inline Immersion ln_lagrangian(const LnModel& m) {
  if (m.n != 2) throw Unsupported("ln_lagrangian grid output only for n = 2");
  const GridDescriptor& grid = m.require_grid();
  std::vector<Vec> c(4, Vec(static_cast<Eigen::Index>(grid.node_count())));
  for (std::size_t i = 0; i < grid.node_count(); ++i) {
    const auto x = grid.coordinates(i);
    const double s = x[0], phi = x[1];
    c[0][i] = std::cos(phi) * std::cos(s);
    c[1][i] = std::cos(phi) * std::sin(s);
    c[2][i] = std::sin(phi) * std::cos(s);
    c[3][i] = std::sin(phi) * std::sin(s);
  }
  return Immersion(grid, std::move(c));
}

/// Q(z) = a + sum (b_j z_j + conj(b_j z_j)) + sum c_jk z_j conj(z_k).
struct MomentPolynomial {
  double a = 0.0;
  CVec b;
  CMat c;

  explicit MomentPolynomial(int n) : b(CVec::Zero(n)), c(CMat::Zero(n, n)) {}

  int n() const { return static_cast<int>(b.size()); }

  bool hermitian(double tol = 1e-14) const { return (c - c.adjoint()).cwiseAbs().maxCoeff() <= tol; }

  double operator()(const Vec& z) const {
    const CVec w = complexify(z);
    std::complex<double> q = a;
    for (int j = 0; j < n(); ++j) q += 2.0 * (b[j] * w[j]).real();
    for (int j = 0; j < n(); ++j)
      for (int k = 0; k < n(); ++k) q += c(j, k) * w[j] * std::conj(w[k]);
    return q.real();
  }

  /// Imaginary part of the raw sum; zero for a Hermitian c.
  double imaginary_part(const Vec& z) const {
    const CVec w = complexify(z);
    std::complex<double> q = 0.0;
    for (int j = 0; j < n(); ++j)
      for (int k = 0; k < n(); ++k) q += c(j, k) * w[j] * std::conj(w[k]);
    return q.imag();
  }
};

/// Real basis of W_n, dimension n^2 + 2n + 1.
inline std::vector<MomentPolynomial> moment_basis(int n) {
  if (n < 1) throw Error("moment_basis: n must be positive");
  std::vector<MomentPolynomial> out;
  MomentPolynomial one(n);
  one.a = 1.0;
  out.push_back(one);
  for (int j = 0; j < n; ++j) {
    MomentPolynomial re(n), im(n);
    re.b[j] = 1.0;
    im.b[j] = {0.0, 1.0};
    out.push_back(re);
    out.push_back(im);
  }
  for (int j = 0; j < n; ++j) {
    MomentPolynomial d(n);
    d.c(j, j) = 1.0;
    out.push_back(d);
  }
  for (int j = 0; j < n; ++j)
    for (int k = j + 1; k < n; ++k) {
      MomentPolynomial re(n), im(n);
      re.c(j, k) = re.c(k, j) = 1.0;
      im.c(j, k) = {0.0, 1.0};
      im.c(k, j) = {0.0, -1.0};
      out.push_back(re);
      out.push_back(im);
    }
  return out;
}

inline ScalarField restrict_moment(const MomentPolynomial& q, const Immersion& imm) {
  if (imm.ambient_dim() != 2 * q.n()) throw GridMismatch("moment polynomial and immersion dimensions differ");
  ScalarField f(imm.grid);
  for (std::size_t i = 0; i < imm.grid.node_count(); ++i) f.values[i] = q(imm.point(i));
  return f;
}

struct LnMode {
  int k;
  int l;
  int multiplicity;
  double eigenvalue;
};

inline double binomial(int n, int k) {
  if (k < 0 || n < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// Dimension of degree-l spherical harmonics on S^{n-1}.
inline int spherical_harmonic_dim(int n, int l) {
  return static_cast<int>(std::lround(binomial(l + n - 1, n - 1) - binomial(l + n - 3, n - 1)));
}

inline double ln_eigenvalue(int n, int k, int l) {
  const double lam = static_cast<double>(l) * (l + n - 2);
  const double k2 = static_cast<double>(k) * k;
  return (k2 + lam - n) * (k2 + lam - n) + n * n * (k2 - 1.0);
}

inline std::vector<LnMode> ln_spectrum(int n, int k_max, int l_max) {
  if (n < 2) throw Error("ln_spectrum: n must be at least 2");
  std::vector<LnMode> out;
  for (int k = 0; k <= k_max; ++k)
    for (int l = 0; l <= l_max; ++l) {
      if ((k + l) % 2 != 0) continue;
      const int mult = (k == 0 ? 1 : 2) * spherical_harmonic_dim(n, l);
      out.push_back({k, l, mult, ln_eigenvalue(n, k, l)});
    }
  return out;
}

/// Predicted dim Ker L = n^2 + 2n + 1 - dim G.
inline int rigidity_prediction(const TorusModel& m) {
  if (!m.distinct_radii()) throw Unsupported("torus with repeated radii has a larger symmetry group");
  const int n = m.n();
  return n * n + n + 1;
}

inline int rigidity_prediction(const LnModel& m) {
  const int n = m.n;
  return n * n + 2 * n - n * (n - 1) / 2;
}

}  // namespace hslag
