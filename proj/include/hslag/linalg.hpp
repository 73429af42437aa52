#pragma once

// Small dense helpers for the standard symplectic structure on R^{2n}.
// Coordinates are interleaved: (x_1, y_1, ..., x_n, y_n), z_j = x_j + i y_j.

#include <cmath>
#include <complex>
#include <random>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "hslag/errors.hpp"
#include "hslag/grid.hpp"

namespace hslag {

using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

/// Matrix of the standard symplectic form: omega0(u, v) = u^T Omega0 v.
inline Mat omega0_matrix(int n) {
  Mat w = Mat::Zero(2 * n, 2 * n);
  for (int j = 0; j < n; ++j) {
    w(2 * j, 2 * j + 1) = 1.0;
    w(2 * j + 1, 2 * j) = -1.0;
  }
  return w;
}

/// Multiplication by i.
inline Mat j0_matrix(int n) { return -omega0_matrix(n); }

inline double omega0(const Vec& u, const Vec& v) {
  double s = 0.0;
  for (Eigen::Index j = 0; j + 1 < u.size(); j += 2) s += u[j] * v[j + 1] - u[j + 1] * v[j];
  return s;
}

/// Real 2n x 2n realization of a complex n x n matrix.
inline Mat realify(const CMat& a) {
  const Eigen::Index n = a.rows();
  Mat r(2 * n, 2 * n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index k = 0; k < n; ++k) {
      const double re = a(j, k).real(), im = a(j, k).imag();
      r(2 * j, 2 * k) = re;
      r(2 * j, 2 * k + 1) = -im;
      r(2 * j + 1, 2 * k) = im;
      r(2 * j + 1, 2 * k + 1) = re;
    }
  return r;
}

inline CVec complexify(const Vec& z) {
  CVec c(z.size() / 2);
  for (Eigen::Index j = 0; j < c.size(); ++j) c[j] = {z[2 * j], z[2 * j + 1]};
  return c;
}

inline Vec decomplexify(const CVec& c) {
  Vec z(2 * c.size());
  for (Eigen::Index j = 0; j < c.size(); ++j) {
    z[2 * j] = c[j].real();
    z[2 * j + 1] = c[j].imag();
  }
  return z;
}

/// Anti-Hermitian matrix from n^2 real coordinates. The first n coordinates
/// are the imaginary diagonal; then (re, im) of each strict upper entry.
inline CMat anti_hermitian(const Vec& xi, int n) {
  if (xi.size() != n * n) throw Error("anti_hermitian: expected n^2 coordinates");
  CMat a = CMat::Zero(n, n);
  for (int j = 0; j < n; ++j) a(j, j) = {0.0, xi[j]};
  int idx = n;
  for (int j = 0; j < n; ++j)
    for (int k = j + 1; k < n; ++k) {
      const std::complex<double> v{xi[idx], xi[idx + 1]};
      a(j, k) = v;
      a(k, j) = -std::conj(v);
      idx += 2;
    }
  return a;
}

/// Real orthogonal-symplectic matrix exp(realify(A)) for anti-Hermitian A.
inline Mat unitary_from_coords(const Vec& xi, int n) {
  const Mat a = realify(anti_hermitian(xi, n));
  return a.exp();
}

inline Mat sym_sqrt(const Mat& s) {
  Eigen::SelfAdjointEigenSolver<Mat> es(s);
  if (es.eigenvalues().minCoeff() <= 0.0) throw DegenerateGeometry("sym_sqrt of non-positive matrix");
  return es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

inline Mat sym_inv_sqrt(const Mat& s) {
  Eigen::SelfAdjointEigenSolver<Mat> es(s);
  if (es.eigenvalues().minCoeff() <= 0.0) throw DegenerateGeometry("sym_inv_sqrt of non-positive matrix");
  return es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

/// Complex structure determined by a metric matrix G and omega0:
/// omega0(u, v) = G(J u, v).
inline Mat complex_structure(const Mat& g) {
  const int n2 = static_cast<int>(g.rows());
  return -g.ldlt().solve(omega0_matrix(n2 / 2));
}

/// max |J^2 + I| for the structure induced by G.
inline double compatibility_defect(const Mat& g) {
  const Mat j = complex_structure(g);
  return (j * j + Mat::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff();
}

/// Haar-distributed n x n unitary (QR of a complex Gaussian matrix).
inline CMat random_unitary(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  CMat z(n, n);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) z(j, k) = {nd(rng), nd(rng)};
  Eigen::HouseholderQR<CMat> qr(z);
  CMat q = qr.householderQ();
  const CMat r = qr.matrixQR();
  for (int j = 0; j < n; ++j) {
    const auto d = r(j, j);
    q.col(j) *= d / std::abs(d);
  }
  return q;
}

}  // namespace hslag
