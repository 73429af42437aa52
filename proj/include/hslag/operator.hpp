#pragma once

// The linearized operator L, its spectral data, kernel and projections.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "hslag/errors.hpp"
#include "hslag/fourier_basis.hpp"
#include "hslag/geometry.hpp"
#include "hslag/models.hpp"
#include "hslag/weinstein.hpp"

namespace hslag {

/// Self-adjoint operator represented by its matrix in an orthonormal
/// Fourier basis. Grid fields are projected onto the basis before applying.
struct LinearOperator {
  FourierBasis basis;
  Mat matrix;
  bool symmetric = true;
  double asymmetry = 0.0;  // relative |M - M^T| before symmetrization

  const GridDescriptor& grid() const { return basis.grid(); }
  Vec apply_coeffs(const Vec& c) const { return matrix * c; }
  ScalarField apply(const ScalarField& f) const { return basis.field(matrix * basis.coefficients(f)); }
  double quadratic_form(const ScalarField& f) const {
    const Vec c = basis.coefficients(f);
    return c.dot(matrix * c);
  }
};

struct SpectralData {
  Vec eigenvalues;    // ascending
  Mat eigenvectors;   // basis coefficients, one column per eigenpair
  Vec residuals;      // |L v - lambda v| per pair
  double kernel_tol = 1e-5;
  FourierBasis basis;

  ScalarField eigenfield(Eigen::Index j) const { return basis.field(eigenvectors.col(j)); }
};

struct OperatorOptions {
  double fd_step = 1e-3;            // directional-derivative step (for unit basis functions)
  double symmetry_tol = 1e-6;       // relative asymmetry accepted before symmetrizing
};

/// Matrix <b_i, J b_j> of the derivative J of `map` at zero, by central
/// differences with one Richardson step. `map` takes and returns grid fields.
inline Mat linearize_in_basis(const FourierBasis& basis, const std::function<ScalarField(const ScalarField&)>& map,
                              double step) {
  const std::size_t nb = basis.size();
  Mat cols(static_cast<Eigen::Index>(basis.grid().node_count()), static_cast<Eigen::Index>(nb));
  for (std::size_t j = 0; j < nb; ++j) {
    const ScalarField b = basis.function(j);
    // high modes carry large derivatives, so shrink the amplitude with |m|
    int mmax = 0;
    for (int c : basis.modes()[j].m) mmax = std::max(mmax, std::abs(c));
    const double hj = step / (1.0 + mmax);
    auto central = [&](double h) {
      ScalarField fp(b.grid, b.values * h), fm(b.grid, -b.values * h);
      return Vec((map(fp).values - map(fm).values) / (2.0 * h));
    };
    const Vec d1 = central(hj);
    const Vec d2 = central(0.5 * hj);
    cols.col(static_cast<Eigen::Index>(j)) = (4.0 * d2 - d1) / 3.0;
  }
  return basis.matrix().transpose() * cols * basis.quad_weight();
}

inline void finish_symmetric(LinearOperator& op, double tol) {
  const double nrm = op.matrix.norm();
  op.asymmetry = nrm > 0.0 ? (op.matrix - op.matrix.transpose()).norm() / nrm : 0.0;
  if (op.asymmetry > tol) {
    throw NumericalFailure("assembled operator is not self-adjoint (relative asymmetry " +
                           std::to_string(op.asymmetry) + ")");
  }
  op.matrix = 0.5 * (op.matrix + op.matrix.transpose());
  op.symmetric = true;
}

/// Flat-space L for a product torus: exact linearization of
/// f -> -d*alpha_H(graph(df)) at f = 0.
inline LinearOperator assemble_flat_L(const TorusModel& model, const OperatorOptions& opt = {}) {
  LinearOperator op;
  op.basis = FourierBasis(model.grid, model.density());
  const WeinsteinChart chart = WeinsteinChart::with_default_delta(model.radii);
  const FlatMetric g0(2 * model.n());
  auto map = [&](const ScalarField& f) {
    ScalarField r = hs_residual(graph_immersion(chart, f), g0);
    r.values = -r.values;
    return r;
  };
  op.matrix = linearize_in_basis(op.basis, map, opt.fd_step);
  finish_symmetric(op, opt.symmetry_tol);
  return op;
}

/// L = Delta^2 - 4 Delta - 4 d^2/ds^2 on L_2 (Delta = d*d), with spectral
/// second derivatives, on Z2-invariant modes.
inline LinearOperator assemble_flat_L(const LnModel& model, const OperatorOptions& opt = {}) {
  if (model.n != 2) throw Unsupported("assemble_flat_L: L_n only for n = 2");
  LinearOperator op;
  const GridDescriptor& grid = model.require_grid();
  op.basis = FourierBasis(grid, 0.5);
  const Mat& b = op.basis.matrix();
  Mat lb(b.rows(), b.cols());
  for (Eigen::Index j = 0; j < b.cols(); ++j) {
    const Vec v = b.col(j);
    const Vec ss = spectral_second_derivative(grid, v, 0);
    const Vec pp = spectral_second_derivative(grid, v, 1);
    const Vec lap = -(ss + pp);  // positive Laplacian
    const Vec lap2 = -(spectral_second_derivative(grid, lap, 0) + spectral_second_derivative(grid, lap, 1));
    lb.col(j) = lap2 - 4.0 * lap - 4.0 * ss;
  }
  op.matrix = b.transpose() * lb * op.basis.quad_weight();
  finish_symmetric(op, opt.symmetry_tol);
  return op;
}

inline SpectralData eigensolve(const LinearOperator& op, Eigen::Index count = -1, double kernel_tol = 1e-5) {
  if (!op.symmetric) throw NumericalFailure("eigensolve: operator is not self-adjoint");
  Eigen::SelfAdjointEigenSolver<Mat> es(op.matrix);
  if (es.info() != Eigen::Success) throw NumericalFailure("eigensolve: dense solver failed");
  const Eigen::Index total = op.matrix.rows();
  if (count < 0 || count > total) count = total;
  SpectralData sd;
  sd.eigenvalues = es.eigenvalues().head(count);
  sd.eigenvectors = es.eigenvectors().leftCols(count);
  sd.residuals.resize(count);
  for (Eigen::Index j = 0; j < count; ++j) {
    sd.residuals[j] = (op.matrix * sd.eigenvectors.col(j) - sd.eigenvalues[j] * sd.eigenvectors.col(j)).norm();
  }
  sd.kernel_tol = kernel_tol;
  sd.basis = op.basis;
  return sd;
}

struct KernelBasis {
  Mat coeffs;             // orthonormal kernel, basis coefficients
  Mat zero_mean_coeffs;   // orthonormal, orthogonal to constants
  std::vector<ScalarField> fields;
  std::vector<ScalarField> zero_mean_fields;
  double gap_ratio = 0.0;
  FourierBasis basis;

  int dim() const { return static_cast<int>(coeffs.cols()); }
};

inline KernelBasis kernel_basis(const SpectralData& sd, double min_gap_ratio = 100.0) {
  std::vector<Eigen::Index> idx;
  double next = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < sd.eigenvalues.size(); ++j) {
    const double lam = std::abs(sd.eigenvalues[j]);
    if (lam <= sd.kernel_tol) {
      idx.push_back(j);
    } else {
      next = std::min(next, lam);
    }
  }
  KernelBasis kb;
  kb.basis = sd.basis;
  kb.gap_ratio = next / sd.kernel_tol;
  if (idx.empty() || kb.gap_ratio < min_gap_ratio) throw NumericalFailure("kernel_basis: no clear spectral gap");
  kb.coeffs.resize(sd.eigenvectors.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) kb.coeffs.col(static_cast<Eigen::Index>(j)) = sd.eigenvectors.col(idx[j]);

  // Remove the constant direction and re-orthonormalize.
  const auto c0 = static_cast<Eigen::Index>(sd.basis.constant_index());
  Mat p = kb.coeffs;
  p.row(c0).setZero();
  Eigen::SelfAdjointEigenSolver<Mat> es(p.transpose() * p);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < es.eigenvalues().size(); ++j)
    if (es.eigenvalues()[j] > 0.5) keep.push_back(j);
  kb.zero_mean_coeffs.resize(p.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    const Vec v = p * es.eigenvectors().col(keep[j]);
    kb.zero_mean_coeffs.col(static_cast<Eigen::Index>(j)) = v / v.norm();
  }
  for (Eigen::Index j = 0; j < kb.coeffs.cols(); ++j) kb.fields.push_back(sd.basis.field(kb.coeffs.col(j)));
  for (Eigen::Index j = 0; j < kb.zero_mean_coeffs.cols(); ++j)
    kb.zero_mean_fields.push_back(sd.basis.field(kb.zero_mean_coeffs.col(j)));
  return kb;
}

inline ScalarField project_out_kernel(const ScalarField& f, const std::vector<ScalarField>& basis,
                                      const ScalarField& dvol) {
  ScalarField out = f;
  for (const auto& b : basis) out.values -= l2_inner(f, b, dvol) * b.values;
  return out;
}

struct StabilityVerdict {
  bool stable;
  double min_eigenvalue;
};

inline StabilityVerdict stability_check(const SpectralData& sd) {
  const double mn = sd.eigenvalues.size() ? sd.eigenvalues.minCoeff() : 0.0;
  return {mn >= -sd.kernel_tol, mn};
}

/// Largest relative residual |L q| / |q| over the restrictions of a W_n basis.
inline double moment_kernel_residual(const LinearOperator& op, const Immersion& imm) {
  double worst = 0.0;
  const ScalarField dv = op.basis.dvol();
  for (const auto& q : moment_basis(imm.ambient_dim() / 2)) {
    const ScalarField f = restrict_moment(q, imm);
    const double nf = l2_norm(f, dv);
    if (nf < 1e-10) continue;  // restriction vanishes, e.g. a stabilizer generator
    const Vec c = op.basis.coefficients(f);
    worst = std::max(worst, (op.matrix * c).norm() / nf);
  }
  return worst;
}

/// Residual of the W_n restrictions outside the span of the kernel basis,
/// relative to their norms.
inline double moment_subspace_residual(const KernelBasis& kb, const Immersion& imm) {
  double worst = 0.0;
  const ScalarField dv = kb.basis.dvol();
  for (const auto& q : moment_basis(imm.ambient_dim() / 2)) {
    const ScalarField f = restrict_moment(q, imm);
    const double nf = l2_norm(f, dv);
    if (nf < 1e-10) continue;
    const ScalarField r = project_out_kernel(f, kb.fields, dv);
    worst = std::max(worst, l2_norm(r, dv) / nf);
  }
  return worst;
}

struct SecondVariation {
  double quadratic_form;   // finite-difference d^2/ds^2 Vol
  double operator_value;   // <L f, f>
  double relative_difference() const {
    const double scale = std::max(std::abs(operator_value), 1e-300);
    return std::abs(quadratic_form - operator_value) / scale;
  }
};

inline double five_point_second(const std::function<double(double)>& v, double eps) {
  return (-v(2 * eps) + 16 * v(eps) - 30 * v(0.0) + 16 * v(-eps) - v(-2 * eps)) / (12 * eps * eps);
}

/// Second variation of Vol along graphs of s df on a product torus.
inline SecondVariation second_variation_consistency(const TorusModel& model, const LinearOperator& op,
                                                    const ScalarField& f, double eps = 1e-2) {
  const WeinsteinChart chart = WeinsteinChart::with_default_delta(model.radii);
  const FlatMetric g0(2 * model.n());
  const double ymax = max_fibre(graph_fibre(f));
  if (2 * eps * ymax >= chart.delta) throw DomainError("second_variation: step leaves the tubular neighbourhood");
  if (eps < 1e-4) throw NumericalFailure("second_variation: step too small for double precision");
  auto vol = [&](double s) {
    ScalarField fs(f.grid, f.values * s);
    return volume(graph_immersion(chart, fs), g0);
  };
  return {five_point_second(vol, eps), op.quadratic_form(f)};
}

/// Exact time-s flow of the linear Hamiltonian vector field of the quadratic
/// F(z) = 1/2 z^T S z + c^T z, with omega0(v, .) = dF.
inline Mat quadratic_flow(const Mat& s, const Vec& c, double time) {
  const auto d = s.rows();
  const Mat w0 = omega0_matrix(static_cast<int>(d / 2));
  Mat aug = Mat::Zero(d + 1, d + 1);
  aug.topLeftCorner(d, d) = w0 * s;
  aug.topRightCorner(d, 1) = w0 * c;
  return (aug * time).exp();
}

/// Second variation of Vol along the Hamiltonian flow of a quadratic F on
/// any model immersion (used for L_2, where no graph chart is implemented).
inline SecondVariation second_variation_flow(const Immersion& imm, const LinearOperator& op, const Mat& s,
                                             const Vec& c, double eps = 1e-2) {
  const FlatMetric g0(imm.ambient_dim());
  auto vol = [&](double time) {
    const Mat phi = quadratic_flow(s, c, time);
    const auto d = s.rows();
    Immersion moved = imm;
    for (std::size_t i = 0; i < imm.grid.node_count(); ++i) {
      const Vec z = phi.topLeftCorner(d, d) * imm.point(i) + phi.topRightCorner(d, 1);
      for (Eigen::Index k = 0; k < d; ++k) moved.coords[k][i] = z[k];
    }
    return volume(moved, g0);
  };
  ScalarField f(imm.grid);
  for (std::size_t i = 0; i < imm.grid.node_count(); ++i) {
    const Vec z = imm.point(i);
    f.values[i] = 0.5 * z.dot(s * z) + c.dot(z);
  }
  return {five_point_second(vol, eps), op.quadratic_form(f)};
}

}  // namespace hslag
