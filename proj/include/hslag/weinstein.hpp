#pragma once

// Action-angle Lagrangian neighbourhood of a product torus:
// Phi(theta, y) = (sqrt(a_j^2 + 2 y_j) e^{i theta_j})_j, Phi^* omega0 = sum dy_j ^ dtheta_j.

#include <cmath>
#include <vector>

#include "hslag/errors.hpp"
#include "hslag/geometry.hpp"
#include "hslag/grid.hpp"

namespace hslag {

struct WeinsteinChart {
  std::vector<double> radii;
  double delta;  // bound on |y_j| for admissible graphs

  WeinsteinChart(std::vector<double> r, double d) : radii(std::move(r)), delta(d) {
    double amin = radii.at(0);
    for (double a : radii) {
      if (!(a > 0.0)) throw Error("WeinsteinChart: radii must be positive");
      amin = std::min(amin, a);
    }
    if (!(delta > 0.0) || delta >= 0.5 * amin * amin) throw Error("WeinsteinChart: need 0 < delta < min a^2 / 2");
  }

  /// Default tubular bound 0.4 * min(a_j^2) / 2.
  static WeinsteinChart with_default_delta(const std::vector<double>& r) {
    double amin = r.at(0);
    for (double a : r) amin = std::min(amin, a);
    return WeinsteinChart(r, 0.2 * amin * amin);
  }

  int n() const { return static_cast<int>(radii.size()); }
};

/// Fibre coordinates y_j = d f / d theta_j of the graph of df.
inline std::vector<Vec> graph_fibre(const ScalarField& f) {
  std::vector<Vec> y;
  for (int a = 0; a < f.grid.dim(); ++a) y.push_back(spectral_derivative(f.grid, f.values, a));
  return y;
}

inline double max_fibre(const std::vector<Vec>& y) {
  double m = 0.0;
  for (const auto& v : y) m = std::max(m, v.cwiseAbs().maxCoeff());
  return m;
}

inline Immersion graph_immersion_from_fibre(const WeinsteinChart& chart, const GridDescriptor& grid,
                                           const std::vector<Vec>& y) {
  const int n = chart.n();
  if (grid.dim() != n) throw GridMismatch("graph_immersion: grid dimension differs from chart");
  if (max_fibre(y) >= chart.delta) throw DomainError("graph_immersion: |df| exceeds the tubular bound delta");
  std::vector<Vec> c(2 * n, Vec(static_cast<Eigen::Index>(grid.node_count())));
  for (std::size_t i = 0; i < grid.node_count(); ++i) {
    const auto x = grid.coordinates(i);
    for (int j = 0; j < n; ++j) {
      const double r = std::sqrt(chart.radii[j] * chart.radii[j] + 2.0 * y[j][i]);
      c[2 * j][i] = r * std::cos(x[j]);
      c[2 * j + 1][i] = r * std::sin(x[j]);
    }
  }
  return Immersion(grid, std::move(c));
}

inline Immersion graph_immersion(const WeinsteinChart& chart, const ScalarField& f) {
  return graph_immersion_from_fibre(chart, f.grid, graph_fibre(f));
}

}  // namespace hslag
