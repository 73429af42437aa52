#pragma once

// Orthonormal real trigonometric basis on a periodic grid, truncated at
// |m_a| <= cutoff per axis (2/3 rule by default so products of two basis
// functions are still resolved and the Nyquist mode never enters).

#include <cmath>
#include <vector>

#include "hslag/errors.hpp"
#include "hslag/grid.hpp"

namespace hslag {

struct FourierMode {
  std::vector<int> m;
  bool sine;
};

class FourierBasis {
 public:
  FourierBasis() = default;

  /// weight: constant volume density; inner products are
  /// cell_volume * weight * sum(f g).
  FourierBasis(const GridDescriptor& grid, double weight, int cutoff = -1) : grid_(grid), weight_(weight) {
    if (!(weight > 0.0)) throw Error("FourierBasis: weight must be positive");
    const int n = grid.dim();
    cutoff_ = cutoff;
    if (cutoff_ < 0) {
      cutoff_ = grid.sizes[0];
      for (int s : grid.sizes) cutoff_ = std::min(cutoff_, s);
      cutoff_ /= 3;
    }
    for (int s : grid.sizes)
      if (2 * cutoff_ >= s) throw Error("FourierBasis: cutoff must stay below the Nyquist index");

    // Enumerate wave vectors with the first non-zero entry positive.
    std::vector<int> m(n, -cutoff_);
    while (true) {
      int first = 0;
      for (int v : m)
        if (v != 0) {
          first = v;
          break;
        }
      bool invariant = true;
      if (grid.quotient) {
        int parity = 0;
        for (int a = 0; a < n; ++a)
          if (grid.quotient->shifted_axes[a]) parity += m[a];
        invariant = (parity % 2 == 0);
      }
      if (first >= 0 && invariant) {
        modes_.push_back({m, false});
        if (first > 0) modes_.push_back({m, true});
      }
      int a = n - 1;
      while (a >= 0 && m[a] == cutoff_) m[a--] = -cutoff_;
      if (a < 0) break;
      ++m[a];
    }

    const auto nodes = static_cast<Eigen::Index>(grid.node_count());
    matrix_.resize(nodes, static_cast<Eigen::Index>(modes_.size()));
    for (std::size_t j = 0; j < modes_.size(); ++j) {
      const auto& md = modes_[j];
      for (Eigen::Index i = 0; i < nodes; ++i) {
        const auto x = grid.coordinates(static_cast<std::size_t>(i));
        double arg = 0.0;
        for (int a = 0; a < n; ++a) arg += md.m[a] * x[a] * kTwoPi / grid.periods[a];
        matrix_(i, static_cast<Eigen::Index>(j)) = md.sine ? std::sin(arg) : std::cos(arg);
      }
      const double nrm2 = matrix_.col(static_cast<Eigen::Index>(j)).squaredNorm() * quad_weight();
      matrix_.col(static_cast<Eigen::Index>(j)) /= std::sqrt(nrm2);
    }
  }

  const GridDescriptor& grid() const { return grid_; }
  double weight() const { return weight_; }
  int cutoff() const { return cutoff_; }
  std::size_t size() const { return modes_.size(); }
  const std::vector<FourierMode>& modes() const { return modes_; }
  const Mat& matrix() const { return matrix_; }
  double quad_weight() const { return grid_.cell_volume() * weight_; }

  ScalarField dvol() const { return ScalarField::constant(grid_, weight_); }

  /// Orthogonal projection coefficients of a grid field.
  Vec coefficients(const ScalarField& f) const {
    require_same_grid(f.grid, grid_, "FourierBasis::coefficients");
    return matrix_.transpose() * f.values * quad_weight();
  }

  ScalarField field(const Vec& c) const { return ScalarField(grid_, matrix_ * c); }

  ScalarField function(std::size_t j) const { return ScalarField(grid_, matrix_.col(static_cast<Eigen::Index>(j))); }

  /// Index of the constant function.
  std::size_t constant_index() const {
    for (std::size_t j = 0; j < modes_.size(); ++j) {
      bool zero = !modes_[j].sine;
      for (int v : modes_[j].m) zero = zero && v == 0;
      if (zero) return j;
    }
    throw Error("FourierBasis: constant mode missing");
  }

 private:
  GridDescriptor grid_;
  double weight_ = 1.0;
  int cutoff_ = 0;
  std::vector<FourierMode> modes_;
  Mat matrix_;
};

/// Solves sum_a c_a d_a d_a u = r for zero-mean u with spectral d_a
/// (diagonalized per axis in a real Fourier basis). Modes annihilated by
/// the operator (mean, Nyquist) are set to zero in u.
class PeriodicPoisson {
 public:
  PeriodicPoisson(const GridDescriptor& grid, std::vector<double> coef) : grid_(grid), coef_(std::move(coef)) {
    const int n = grid.dim();
    if (static_cast<int>(coef_.size()) != n) throw Error("PeriodicPoisson: one coefficient per axis");
    for (int a = 0; a < n; ++a) {
      const Mat d = detail::diff_matrix(grid.sizes[a], 1, grid.periods[a]);
      Mat dd = d * d;
      dd = 0.5 * (dd + dd.transpose());
      Eigen::SelfAdjointEigenSolver<Mat> es(dd);
      vecs_.push_back(es.eigenvectors());
      vals_.push_back(es.eigenvalues());
    }
  }

  Vec solve(const Vec& r) const {
    const int n = grid_.dim();
    Vec w = r;
    for (int a = 0; a < n; ++a) w = detail::apply_along_axis(grid_, w, a, Mat(vecs_[a].transpose()));
    double scale = 0.0;
    for (int a = 0; a < n; ++a) scale = std::max(scale, vals_[a].cwiseAbs().maxCoeff() * std::abs(coef_[a]));
    for (std::size_t i = 0; i < grid_.node_count(); ++i) {
      const auto idx = grid_.multi_index(i);
      double lam = 0.0;
      for (int a = 0; a < n; ++a) lam += coef_[a] * vals_[a][idx[a]];
      w[static_cast<Eigen::Index>(i)] = std::abs(lam) > 1e-10 * scale ? w[static_cast<Eigen::Index>(i)] / lam : 0.0;
    }
    for (int a = 0; a < n; ++a) w = detail::apply_along_axis(grid_, w, a, vecs_[a]);
    return w;
  }

 private:
  GridDescriptor grid_;
  std::vector<double> coef_;
  std::vector<Mat> vecs_;
  std::vector<Vec> vals_;
};

}  // namespace hslag
