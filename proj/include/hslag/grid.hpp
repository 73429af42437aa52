#pragma once

// Periodic structured grids, fields sampled on them, and Fourier
// (trigonometric-interpolant) calculus.

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hslag/errors.hpp"

namespace hslag {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Z2 identification x ~ x + shift on the flagged axes (shift = half period).
struct QuotientRule {
  std::vector<bool> shifted_axes;

  bool operator==(const QuotientRule&) const = default;
};

struct GridDescriptor {
  std::vector<int> sizes;
  std::vector<double> periods;
  std::optional<QuotientRule> quotient;

  GridDescriptor() = default;
  GridDescriptor(std::vector<int> sizes_, std::vector<double> periods_,
                 std::optional<QuotientRule> quotient_ = std::nullopt)
      : sizes(std::move(sizes_)), periods(std::move(periods_)), quotient(std::move(quotient_)) {
    validate();
  }

  /// Uniform n-dimensional grid with N nodes and period 2*pi per axis.
  static GridDescriptor uniform(int dim, int n_per_axis, double period = kTwoPi) {
    return GridDescriptor(std::vector<int>(dim, n_per_axis), std::vector<double>(dim, period));
  }

  void validate() const {
    if (sizes.empty() || sizes.size() != periods.size()) {
      throw Error("grid: sizes and periods must be non-empty and of equal length");
    }
    for (std::size_t a = 0; a < sizes.size(); ++a) {
      if (sizes[a] < 8 || sizes[a] % 2 != 0) {
        throw Error("grid: axis sizes must be even and >= 8");
      }
      if (!(periods[a] > 0.0)) throw Error("grid: periods must be positive");
    }
    if (quotient && quotient->shifted_axes.size() != sizes.size()) {
      throw Error("grid: quotient rule must flag every axis");
    }
  }

  int dim() const { return static_cast<int>(sizes.size()); }

  std::size_t node_count() const {
    std::size_t n = 1;
    for (int s : sizes) n *= static_cast<std::size_t>(s);
    return n;
  }

  /// Lebesgue measure of one grid cell in coordinate space.
  double cell_volume() const {
    double w = 1.0;
    for (int a = 0; a < dim(); ++a) w *= periods[a] / sizes[a];
    return w;
  }

  /// Row-major stride of an axis (axis 0 is slowest).
  std::size_t stride(int axis) const {
    std::size_t s = 1;
    for (int b = dim() - 1; b > axis; --b) s *= static_cast<std::size_t>(sizes[b]);
    return s;
  }

  std::vector<int> multi_index(std::size_t node) const {
    std::vector<int> idx(dim());
    for (int a = dim() - 1; a >= 0; --a) {
      idx[a] = static_cast<int>(node % sizes[a]);
      node /= sizes[a];
    }
    return idx;
  }

  std::size_t flat_index(const std::vector<int>& idx) const {
    std::size_t node = 0;
    for (int a = 0; a < dim(); ++a) {
      const int i = ((idx[a] % sizes[a]) + sizes[a]) % sizes[a];
      node = node * sizes[a] + static_cast<std::size_t>(i);
    }
    return node;
  }

  double coordinate(int axis, int i) const { return periods[axis] * i / sizes[axis]; }

  std::vector<double> coordinates(std::size_t node) const {
    const auto idx = multi_index(node);
    std::vector<double> x(dim());
    for (int a = 0; a < dim(); ++a) x[a] = coordinate(a, idx[a]);
    return x;
  }

  /// Image of a node under the Z2 identification.
  std::size_t quotient_partner(std::size_t node) const {
    if (!quotient) return node;
    auto idx = multi_index(node);
    for (int a = 0; a < dim(); ++a) {
      if (quotient->shifted_axes[a]) idx[a] += sizes[a] / 2;
    }
    return flat_index(idx);
  }

  bool operator==(const GridDescriptor& o) const {
    return sizes == o.sizes && periods == o.periods && quotient == o.quotient;
  }
};

inline void require_same_grid(const GridDescriptor& a, const GridDescriptor& b, const char* what) {
  if (!(a == b)) throw GridMismatch(what);
}

struct ScalarField {
  GridDescriptor grid;
  Vec values;

  ScalarField() = default;
  explicit ScalarField(GridDescriptor g) : grid(std::move(g)), values(Vec::Zero(grid.node_count())) {}
  ScalarField(GridDescriptor g, Vec v) : grid(std::move(g)), values(std::move(v)) {
    if (static_cast<std::size_t>(values.size()) != grid.node_count()) {
      throw GridMismatch("scalar field value count does not match the grid");
    }
  }

  static ScalarField constant(const GridDescriptor& g, double c) {
    return ScalarField(g, Vec::Constant(static_cast<Eigen::Index>(g.node_count()), c));
  }

  template <typename Fn>
  static ScalarField sample(const GridDescriptor& g, Fn&& fn) {
    ScalarField f(g);
    for (std::size_t i = 0; i < g.node_count(); ++i) f.values[i] = fn(g.coordinates(i));
    return f;
  }

  double max_abs() const { return values.size() ? values.cwiseAbs().maxCoeff() : 0.0; }
};

/// Coefficients alpha_a in the coordinate coframe; components[a] is one
/// scalar array per axis.
struct OneFormField {
  GridDescriptor grid;
  std::vector<Vec> components;

  OneFormField() = default;
  explicit OneFormField(GridDescriptor g) : grid(std::move(g)) {
    components.assign(grid.dim(), Vec::Zero(static_cast<Eigen::Index>(grid.node_count())));
  }

  double max_abs() const {
    double m = 0.0;
    for (const auto& c : components) m = std::max(m, c.cwiseAbs().maxCoeff());
    return m;
  }
};

/// Symmetric n x n matrix per node; entries[a*n+b] holds h_ab.
struct MetricField {
  GridDescriptor grid;
  std::vector<Vec> entries;

  MetricField() = default;
  explicit MetricField(GridDescriptor g) : grid(std::move(g)) {
    const int n = grid.dim();
    entries.assign(static_cast<std::size_t>(n * n), Vec::Zero(static_cast<Eigen::Index>(grid.node_count())));
  }

  Mat at(std::size_t node) const {
    const int n = grid.dim();
    Mat h(n, n);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) h(a, b) = entries[static_cast<std::size_t>(a * n + b)][node];
    return h;
  }

  void set(std::size_t node, const Mat& h) {
    const int n = grid.dim();
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) entries[static_cast<std::size_t>(a * n + b)][node] = h(a, b);
  }
};

namespace detail {

/// First-derivative Fourier matrix on N equispaced nodes of [0, 2*pi).
/// Antisymmetric; annihilates the Nyquist mode.
inline Mat fourier_d1(int n) {
  Mat d = Mat::Zero(n, n);
  const double h = kTwoPi / n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const int k = i - j;
      const double sign = (k % 2 == 0) ? 1.0 : -1.0;
      d(i, j) = 0.5 * sign / std::tan(k * h / 2.0);
    }
  return d;
}

/// Second-derivative Fourier matrix; the Nyquist mode maps to -(N/2)^2.
inline Mat fourier_d2(int n) {
  Mat d = Mat::Zero(n, n);
  const double h = kTwoPi / n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) {
        d(i, j) = -kPi * kPi / (3.0 * h * h) - 1.0 / 6.0;
      } else {
        const int k = i - j;
        const double sign = (k % 2 == 0) ? 1.0 : -1.0;
        const double s = std::sin(k * h / 2.0);
        d(i, j) = -0.5 * sign / (s * s);
      }
    }
  return d;
}

struct DiffCacheKey {
  int n;
  int order;
  double period;
  bool operator<(const DiffCacheKey& o) const {
    if (n != o.n) return n < o.n;
    if (order != o.order) return order < o.order;
    return period < o.period;
  }
};

inline const Mat& diff_matrix(int n, int order, double period) {
  static std::mutex mutex;
  static std::map<DiffCacheKey, std::unique_ptr<Mat>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[DiffCacheKey{n, order, period}];
  if (!slot) {
    const double scale = kTwoPi / period;
    if (order == 1) {
      slot = std::make_unique<Mat>(fourier_d1(n) * scale);
    } else {
      slot = std::make_unique<Mat>(fourier_d2(n) * (scale * scale));
    }
  }
  return *slot;
}

/// Applies a 1-D matrix along one axis of a row-major n-D array.
inline Vec apply_along_axis(const GridDescriptor& g, const Vec& v, int axis, const Mat& m) {
  const int n = g.sizes[axis];
  const std::size_t stride = g.stride(axis);
  const std::size_t outer = g.node_count() / (stride * static_cast<std::size_t>(n));
  Vec out(v.size());
  if (stride == 1) {
    // contiguous lines
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>> in(
        v.data(), n, static_cast<Eigen::Index>(outer));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>> res(
        out.data(), n, static_cast<Eigen::Index>(outer));
    res.noalias() = m * in;
    return out;
  }
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * stride * static_cast<std::size_t>(n);
    // block of n rows x stride columns, row-major
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> in(
        v.data() + base, n, static_cast<Eigen::Index>(stride));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> res(
        out.data() + base, n, static_cast<Eigen::Index>(stride));
    res.noalias() = m * in;
  }
  return out;
}

}  // namespace detail

/// Derivative of the trigonometric interpolant of raw nodal values.
inline Vec spectral_derivative(const GridDescriptor& g, const Vec& v, int axis) {
  if (axis < 0 || axis >= g.dim()) throw Error("spectral_derivative: axis out of range");
  return detail::apply_along_axis(g, v, axis, detail::diff_matrix(g.sizes[axis], 1, g.periods[axis]));
}

inline ScalarField spectral_derivative(const ScalarField& f, int axis) {
  return ScalarField(f.grid, spectral_derivative(f.grid, f.values, axis));
}

/// Second derivative along one axis (keeps the Nyquist mode).
inline Vec spectral_second_derivative(const GridDescriptor& g, const Vec& v, int axis) {
  if (axis < 0 || axis >= g.dim()) throw Error("spectral_second_derivative: axis out of range");
  return detail::apply_along_axis(g, v, axis, detail::diff_matrix(g.sizes[axis], 2, g.periods[axis]));
}

/// Rectangle-rule quadrature of f*g*dvol; exact for band-limited integrands.
inline double l2_inner(const ScalarField& f, const ScalarField& g, const ScalarField& dvol) {
  require_same_grid(f.grid, g.grid, "l2_inner(f, g)");
  require_same_grid(f.grid, dvol.grid, "l2_inner(f, dvol)");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < f.values.size(); ++i) sum += f.values[i] * g.values[i] * dvol.values[i];
  return sum * f.grid.cell_volume();
}

inline double l2_norm(const ScalarField& f, const ScalarField& dvol) { return std::sqrt(l2_inner(f, f, dvol)); }

/// Average of a field with its image under the Z2 identification.
inline ScalarField quotient_symmetrize(const ScalarField& f) {
  if (!f.grid.quotient) return f;
  ScalarField out(f.grid);
  for (std::size_t i = 0; i < f.grid.node_count(); ++i) {
    out.values[i] = 0.5 * (f.values[i] + f.values[f.grid.quotient_partner(i)]);
  }
  return out;
}

/// Largest nodewise violation of Z2 invariance.
inline double quotient_defect(const ScalarField& f) {
  if (!f.grid.quotient) return 0.0;
  double m = 0.0;
  for (std::size_t i = 0; i < f.grid.node_count(); ++i) {
    m = std::max(m, std::abs(f.values[i] - f.values[f.grid.quotient_partner(i)]));
  }
  return m;
}

/// Spectral (zero-padding) interpolation of a periodic field onto a grid
/// with the given per-axis sizes. Band-limited fields are reproduced exactly.
inline ScalarField fourier_resample(const ScalarField& f, const std::vector<int>& new_sizes) {
  const GridDescriptor& g = f.grid;
  if (static_cast<int>(new_sizes.size()) != g.dim()) throw Error("fourier_resample: dimension mismatch");
  GridDescriptor out_grid(new_sizes, g.periods, g.quotient);
  Vec cur = f.values;
  std::vector<int> sizes = g.sizes;
  for (int axis = 0; axis < g.dim(); ++axis) {
    const int n = sizes[axis];
    const int m = new_sizes[axis];
    // Interpolation matrix m x n from the trigonometric interpolant with the
    // Nyquist mode split evenly.
    Mat interp(m, n);
    for (int i = 0; i < m; ++i) {
      const double x = kTwoPi * i / m;
      for (int j = 0; j < n; ++j) {
        const double xj = kTwoPi * j / n;
        double s = 1.0;
        for (int k = 1; k < n / 2; ++k) s += 2.0 * std::cos(k * (x - xj));
        s += std::cos((n / 2) * (x - xj));
        interp(i, j) = s / n;
      }
    }
    std::vector<int> next_sizes = sizes;
    next_sizes[axis] = m;
    std::size_t stride = 1;
    for (int b = g.dim() - 1; b > axis; --b) stride *= static_cast<std::size_t>(next_sizes[b]);
    std::size_t outer = 1;
    for (int b = 0; b < axis; ++b) outer *= static_cast<std::size_t>(sizes[b]);
    Vec next(static_cast<Eigen::Index>(outer * stride * m));
    for (std::size_t o = 0; o < outer; ++o) {
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> in(
          cur.data() + o * stride * n, n, static_cast<Eigen::Index>(stride));
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> res(
          next.data() + o * stride * m, m, static_cast<Eigen::Index>(stride));
      res.noalias() = interp * in;
    }
    cur = std::move(next);
    sizes = next_sizes;
  }
  return ScalarField(out_grid, cur);
}

}  // namespace hslag
