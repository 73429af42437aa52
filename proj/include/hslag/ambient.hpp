#pragma once

// Ambient side of the reduction: affine Darboux charts z -> p + u z on the
// flat symplectic torus, unitary frames, the rescaled chart metrics g^t, and a
// standalone Moser-flow normalizer on a ball.

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "hslag/errors.hpp"
#include "hslag/linalg.hpp"
#include "hslag/metric.hpp"

namespace hslag {

struct ChartFamily {
  MetricPtr metric;
  double radius = 3.0;    // R: charts are used on B_R
  double epsilon = kPi;   // need t R <= epsilon

  int dim() const { return metric->dim(); }
  int n() const { return metric->dim() / 2; }
};

/// Frame at p realized as u = G(p)^{-1/2} U exp(xi), U a realified unitary
/// (xi split as exp(off-diagonal) exp(diagonal), see exp_xi).
/// G(p)^{-1/2} is symplectic and orthonormalizes G(p), so every realized
/// frame satisfies u^T G(p) u = I and u^T Omega0 u = Omega0.
struct FrameState {
  Vec p;
  Mat unitary;
  Vec xi;

  FrameState() = default;
  FrameState(Vec point, Mat u) : p(std::move(point)), unitary(std::move(u)) {
    xi = Vec::Zero(static_cast<Eigen::Index>(n()) * n());
    if (unitary.rows() != p.size() || unitary.cols() != p.size()) throw Error("FrameState: shape mismatch");
  }
  static FrameState identity(const Vec& point) {
    return FrameState(point, Mat::Identity(point.size(), point.size()));
  }

  int n() const { return static_cast<int>(p.size() / 2); }
  /// Number of frame coordinates: 2n for p, n^2 for xi.
  int coord_count() const { return 2 * n() + n() * n(); }
  /// The first n xi coordinates (imaginary diagonal) rotate each factor and
  /// span the stabilizer of a product torus.
  std::vector<int> stabilizer_coords() const {
    std::vector<int> g;
    for (int j = 0; j < n(); ++j) g.push_back(2 * n() + j);
    return g;
  }

  /// exp of the off-diagonal part, then the diagonal (stabilizer) factor on
  /// the right, so the stabilizer acts exactly by its own coordinates.
  static Mat exp_xi(const Vec& xi, int n) {
    Vec off = xi, diag = Vec::Zero(xi.size());
    off.head(n).setZero();
    diag.head(n) = xi.head(n);
    return unitary_from_coords(off, n) * unitary_from_coords(diag, n);
  }

  Mat rotation() const { return unitary * exp_xi(xi, n()); }

  Mat realize(const MetricEvaluator& g) const { return sym_inv_sqrt(g.value(p)) * rotation(); }

  /// Displace by dx = (dp, dxi) in frame coordinates.
  FrameState moved(const Vec& dx) const {
    if (dx.size() != coord_count()) throw Error("FrameState::moved: wrong coordinate count");
    FrameState out = *this;
    out.p += dx.head(2 * n());
    out.xi += dx.tail(n() * n());
    return out;
  }

  /// Fold exp(xi) into U so that xi = 0; the realized frame is unchanged.
  FrameState recentered() const {
    FrameState out = *this;
    out.unitary = rotation();
    out.xi.setZero();
    return out;
  }
};

/// Frame at p by complex Gram-Schmidt against J_p = -G(p)^{-1} Omega0 from
/// a seeded random start. Columns (e_j, J e_j) for j = 1..n.
inline Mat unitary_frame(const MetricEvaluator& g, const Vec& p, std::uint64_t seed) {
  const int d = g.dim();
  if (p.size() != d) throw Error("unitary_frame: point has wrong dimension");
  const Mat gp = g.value(p);
  const Mat j = complex_structure(gp);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Mat frame(d, d);
  for (int k = 0; k < d / 2; ++k) {
    for (int attempt = 0;; ++attempt) {
      Vec v(d);
      for (int i = 0; i < d; ++i) v[i] = nd(rng);
      // two passes of orthogonalization for stability
      for (int pass = 0; pass < 2; ++pass)
        for (int c = 0; c < 2 * k; ++c) v -= (frame.col(c).dot(gp * v)) * frame.col(c);
      const double nrm = std::sqrt(v.dot(gp * v));
      if (nrm > 1e-8) {
        frame.col(2 * k) = v / nrm;
        frame.col(2 * k + 1) = j * frame.col(2 * k);
        break;
      }
      if (attempt > 10) throw NumericalFailure("unitary_frame: Gram-Schmidt breakdown");
    }
  }
  return frame;
}

/// FrameState whose realized frame equals a given unitary frame at p.
inline FrameState frame_state_from(const MetricEvaluator& g, const Vec& p, const Mat& frame) {
  return FrameState(p, sym_sqrt(g.value(p)) * frame);
}

inline double frame_defect(const MetricEvaluator& g, const Vec& p, const Mat& frame) {
  const Mat om = omega0_matrix(g.dim() / 2);
  const Mat id = Mat::Identity(g.dim(), g.dim());
  return std::max((frame.transpose() * g.value(p) * frame - id).cwiseAbs().maxCoeff(),
                  (frame.transpose() * om * frame - om).cwiseAbs().maxCoeff());
}

/// g^t(z) = u^T G(p + t u z) u: the metric seen in the rescaled chart.
class ChartMetric final : public CompatibleMetric {
 public:
  ChartMetric(const ChartFamily& family, const FrameState& frame, double t)
      : metric_(family.metric), p_(frame.p), u_(frame.realize(*family.metric)), t_(t), radius_(family.radius) {
    if (!(t > 0.0)) throw DomainError("ChartMetric: t must be positive");
    if (t * family.radius > family.epsilon) throw DomainError("ChartMetric: t R exceeds the chart bound epsilon");
  }

  int dim() const override { return metric_->dim(); }
  bool is_flat() const override { return metric_->is_flat(); }
  std::string describe() const override { return "chart(" + metric_->describe() + ")"; }
  bool in_domain(const Vec& z) const override { return z.norm() <= radius_ && metric_->in_domain(ambient(z)); }

  const Mat& frame() const { return u_; }
  const Vec& origin() const { return p_; }
  double t() const { return t_; }

  Vec ambient(const Vec& z) const { return p_ + t_ * (u_ * z); }

  void jet(const Vec& z, int order, MetricJet& out) const override {
    check_order(order);
    const int d = dim();
    base_.reset(d, order);
    metric_->jet(ambient(z), order, base_);
    out.reset(d, order);
    out.g.noalias() = u_.transpose() * base_.g * u_;
    if (order == 0) return;
    // chain rule: d/dz_k = t sum_m u_mk d/dw_m
    std::vector<Mat> tmp(d);
    for (int m = 0; m < d; ++m) tmp[m].noalias() = u_.transpose() * base_.dg[m] * u_;
    for (int k = 0; k < d; ++k)
      for (int m = 0; m < d; ++m) out.dg[k] += (t_ * u_(m, k)) * tmp[m];
    if (order == 1) return;
    std::vector<Mat> second(static_cast<std::size_t>(d * d));
    for (int m = 0; m < d; ++m)
      for (int l = 0; l < d; ++l)
        second[m * d + l].noalias() = u_.transpose() * base_.d2g[static_cast<std::size_t>(m * d + l)] * u_;
    for (int k = 0; k < d; ++k)
      for (int q = 0; q < d; ++q) {
        Mat& o = out.d2g[static_cast<std::size_t>(k * d + q)];
        for (int m = 0; m < d; ++m)
          for (int l = 0; l < d; ++l) {
            const double c = t_ * t_ * u_(m, k) * u_(l, q);
            if (c != 0.0) o += c * second[m * d + l];
          }
      }
  }

 private:
  MetricPtr metric_;
  Vec p_;
  Mat u_;
  double t_;
  double radius_;
  mutable MetricJet base_;  // scratch; evaluators are used from one thread each
};

/// Lattice points of [-R, R]^dim with `per_axis` points per axis, kept if
/// inside the closed ball.
inline std::vector<Vec> ball_samples(int dim, double radius, int per_axis) {
  if (per_axis < 2) throw Error("ball_samples: need at least 2 points per axis");
  std::vector<Vec> out;
  std::vector<int> idx(dim, 0);
  while (true) {
    Vec z(dim);
    for (int a = 0; a < dim; ++a) z[a] = -radius + 2.0 * radius * idx[a] / (per_axis - 1);
    if (z.norm() <= radius * (1.0 + 1e-12)) out.push_back(z);
    int a = dim - 1;
    while (a >= 0 && idx[a] == per_axis - 1) idx[a--] = 0;
    if (a < 0) break;
    ++idx[a];
  }
  return out;
}

inline std::vector<Mat> chart_pullback_metric(const ChartFamily& family, const FrameState& frame, double t,
                                              const std::vector<Vec>& samples) {
  const ChartMetric g(family, frame, t);
  std::vector<Mat> out;
  out.reserve(samples.size());
  for (const auto& z : samples) {
    if (z.norm() > family.radius * (1.0 + 1e-12)) throw DomainError("chart_pullback_metric: sample outside B_R");
    out.push_back(g.value(z));
  }
  return out;
}

struct EstimateSweep {
  std::vector<double> ts;
  Mat normalized;  // (k, t index): sup |d^k g^t| / t^k, with g^t - g0 for k = 0
  Vec ratio;       // per k: largest / smallest over t
  double bound = 2.0;
  bool bounded() const { return (ratio.array() <= bound).all(); }
};

inline EstimateSweep estimate_sweep(const ChartFamily& family, const std::vector<FrameState>& frames,
                                    const std::vector<double>& ts, int k_max, const std::vector<Vec>& samples) {
  if (k_max < 0 || k_max > 2) throw Unsupported("estimate_sweep: derivatives available up to order 2");
  EstimateSweep out;
  out.ts = ts;
  out.normalized = Mat::Zero(k_max + 1, static_cast<Eigen::Index>(ts.size()));
  const int d = family.dim();
  const Mat id = Mat::Identity(d, d);
  MetricJet jet;
  for (std::size_t it = 0; it < ts.size(); ++it) {
    const double t = ts[it];
    for (const auto& fr : frames) {
      const ChartMetric g(family, fr, t);
      for (const auto& z : samples) {
        g.jet(z, k_max, jet);
        double sup[3] = {(jet.g - id).cwiseAbs().maxCoeff(), 0.0, 0.0};
        if (k_max >= 1)
          for (const auto& m : jet.dg) sup[1] = std::max(sup[1], m.cwiseAbs().maxCoeff());
        if (k_max >= 2)
          for (const auto& m : jet.d2g) sup[2] = std::max(sup[2], m.cwiseAbs().maxCoeff());
        for (int k = 0; k <= k_max; ++k) {
          const double scaled = sup[k] / std::pow(t, k == 0 ? 1 : k);
          out.normalized(k, static_cast<Eigen::Index>(it)) =
              std::max(out.normalized(k, static_cast<Eigen::Index>(it)), scaled);
        }
      }
    }
  }
  out.ratio.resize(k_max + 1);
  for (int k = 0; k <= k_max; ++k) {
    const double hi = out.normalized.row(k).maxCoeff(), lo = out.normalized.row(k).minCoeff();
    out.ratio[k] = hi == 0.0 ? 1.0 : (lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity());
  }
  return out;
}

// ---------------------------------------------------------------- Moser flow

/// A 2-form on a ball: w(z) is the antisymmetric matrix with
/// omega_z(u, v) = u^T w(z) v.
struct TwoForm {
  int dim = 0;
  std::function<Mat(const Vec&)> matrix;
};

/// omega0 + c d(|z|^2 lambda0), lambda0 = 1/2 omega0(z, .): closed, equal to
/// omega0 at the origin, and nondegenerate for small c |z|^2.
inline TwoForm radial_perturbation(int n, double c) {
  TwoForm f;
  f.dim = 2 * n;
  const Mat om = omega0_matrix(n);
  f.matrix = [om, c](const Vec& z) {
    const Vec mz = -om * z;
    return Mat(om + c * (z * mz.transpose() - mz * z.transpose() + z.squaredNorm() * om));
  };
  return f;
}

/// Max |d sigma| over the samples, by central differences of the matrix field
/// (cyclic sum d_i w_jk + d_j w_ki + d_k w_ij).
inline double exterior_derivative_defect(const TwoForm& f, const std::vector<Vec>& samples, double h = 1e-4) {
  const int d = f.dim;
  double worst = 0.0;
  for (const auto& z : samples) {
    std::vector<Mat> dw(d);
    for (int i = 0; i < d; ++i) {
      Vec zp = z, zm = z;
      zp[i] += h;
      zm[i] -= h;
      dw[i] = (f.matrix(zp) - f.matrix(zm)) / (2 * h);
    }
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int k = 0; k < d; ++k)
          worst = std::max(worst, std::abs(dw[i](j, k) + dw[j](k, i) + dw[k](i, j)));
  }
  return worst;
}

/// Gauss-Legendre nodes and weights on [0, 1].
inline void gauss_legendre01(int m, std::vector<double>& x, std::vector<double>& w) {
  x.assign(m, 0.0);
  w.assign(m, 0.0);
  for (int i = 0; i < m; ++i) {
    double r = std::cos(kPi * (i + 0.75) / (m + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = r;
      for (int k = 2; k <= m; ++k) {
        const double p2 = ((2 * k - 1) * r * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = m * (r * p1 - p0) / (r * r - 1.0);
      const double dr = p1 / dp;
      r -= dr;
      if (std::abs(dr) < 1e-16) break;
    }
    x[i] = 0.5 * (1.0 - r);
    w[i] = 1.0 / ((1.0 - r * r) * dp * dp);
  }
}

struct MoserOptions {
  double radius = 1.0;      // R; samples are taken on B_{R/2}
  int per_axis = 5;         // lattice density of the samples
  int fixed_steps = 0;      // > 0: classical RK4 with this many steps
  double tol = 1e-12;       // adaptive step-doubling tolerance
  int quad_nodes = 8;
  double jac_step = 1e-5;   // differencing step for dv
  double min_det = 1e-8;    // nondegeneracy threshold for omega^s
};

struct MoserResult {
  std::vector<Vec> samples;
  std::vector<Vec> images;
  std::vector<Mat> jacobians;
  double pullback_residual = 0.0;  // max |Dphi^T w(phi) Dphi - Omega0|
  double origin_error = 0.0;       // |phi(0)|
  double origin_jacobian_error = 0.0;
  long steps = 0;
};

namespace detail {

class MoserField {
 public:
  MoserField(const TwoForm& f, const MoserOptions& opt) : f_(f), opt_(opt), om_(omega0_matrix(f.dim / 2)) {
    gauss_legendre01(opt.quad_nodes, gx_, gw_);
  }

  /// Primitive of sigma = w - Omega0 by the radial homotopy formula:
  /// zeta_k(z) = int_0^1 s (z^T sigma(s z))_k ds, so d zeta = sigma.
  Vec primitive(const Vec& z) const {
    Vec zeta = Vec::Zero(z.size());
    for (std::size_t q = 0; q < gx_.size(); ++q) {
      const double s = gx_[q];
      const Mat sig = f_.matrix(s * z) - om_;
      zeta += gw_[q] * s * (sig.transpose() * z);
    }
    return zeta;
  }

  /// Moser vector field: v -| omega^s = -zeta, omega^s = Omega0 + s sigma.
  Vec velocity(double s, const Vec& z) const {
    const Mat ws = om_ + s * (f_.matrix(z) - om_);
    Eigen::PartialPivLU<Mat> lu(ws);
    if (std::abs(lu.determinant()) < opt_.min_det) throw NumericalFailure("moser_flow: omega^s degenerate");
    return lu.solve(primitive(z));
  }

  Mat jacobian(double s, const Vec& z) const {
    const int d = static_cast<int>(z.size());
    Mat j(d, d);
    for (int k = 0; k < d; ++k) {
      Vec zp = z, zm = z;
      zp[k] += opt_.jac_step;
      zm[k] -= opt_.jac_step;
      j.col(k) = (velocity(s, zp) - velocity(s, zm)) / (2 * opt_.jac_step);
    }
    return j;
  }

 private:
  const TwoForm& f_;
  MoserOptions opt_;
  Mat om_;
  std::vector<double> gx_, gw_;
};

struct MoserPoint {
  Vec z;
  Mat y;
};

inline MoserPoint rk4_step(const MoserField& v, double s, double h, const MoserPoint& x) {
  auto rhs = [&](double ss, const MoserPoint& p) { return MoserPoint{v.velocity(ss, p.z), v.jacobian(ss, p.z) * p.y}; };
  auto axpy = [](const MoserPoint& a, double c, const MoserPoint& b) { return MoserPoint{a.z + c * b.z, a.y + c * b.y}; };
  const MoserPoint k1 = rhs(s, x);
  const MoserPoint k2 = rhs(s + 0.5 * h, axpy(x, 0.5 * h, k1));
  const MoserPoint k3 = rhs(s + 0.5 * h, axpy(x, 0.5 * h, k2));
  const MoserPoint k4 = rhs(s + h, axpy(x, h, k3));
  return MoserPoint{x.z + h / 6.0 * (k1.z + 2 * k2.z + 2 * k3.z + k4.z),
                    x.y + h / 6.0 * (k1.y + 2 * k2.y + 2 * k3.y + k4.y)};
}

}  // namespace detail

struct MoserTrajectory {
  Vec image;
  Mat jacobian;
  long steps = 0;
};

/// phi^1(z0) and dphi^1(z0) for omega^s = (1 - s) Omega0 + s w, by RK4 on
/// the flow and its variational equation.
inline MoserTrajectory moser_trajectory(const TwoForm& form, const Vec& z0, const MoserOptions& opt = {}) {
  const int d = form.dim;
  const detail::MoserField field(form, opt);
  detail::MoserPoint x{z0, Mat::Identity(d, d)};
  MoserTrajectory out;
  auto check = [&](const Vec& z) {
    if (z.norm() > opt.radius) throw DomainError("moser_flow: trajectory left B_R");
  };
  if (opt.fixed_steps > 0) {
    const double h = 1.0 / opt.fixed_steps;
    for (int k = 0; k < opt.fixed_steps; ++k) {
      x = detail::rk4_step(field, k * h, h, x);
      check(x.z);
      ++out.steps;
    }
  } else {
    double s = 0.0, h = 0.125;
    while (s < 1.0) {
      h = std::min(h, 1.0 - s);
      const detail::MoserPoint full = detail::rk4_step(field, s, h, x);
      const detail::MoserPoint half =
          detail::rk4_step(field, s + 0.5 * h, 0.5 * h, detail::rk4_step(field, s, 0.5 * h, x));
      const double err = std::max((full.z - half.z).cwiseAbs().maxCoeff(), (full.y - half.y).cwiseAbs().maxCoeff());
      if (err <= opt.tol || h < 1e-6) {
        x = half;
        s += h;
        check(x.z);
        ++out.steps;
        if (err < 0.1 * opt.tol) h *= 2.0;
      } else {
        h *= 0.5;
      }
    }
  }
  out.image = x.z;
  out.jacobian = x.y;
  return out;
}

/// Integrates the Moser flow on samples of B_{R/2} and checks the pullback.
inline MoserResult moser_flow(const TwoForm& form, const MoserOptions& opt = {}) {
  const int d = form.dim;
  const Mat om = omega0_matrix(d / 2);
  if ((form.matrix(Vec::Zero(d)) - om).cwiseAbs().maxCoeff() > 1e-12)
    throw DomainError("moser_flow: perturbed form must equal omega0 at the origin");
  MoserResult res;
  res.samples = ball_samples(d, 0.5 * opt.radius, opt.per_axis);
  if (exterior_derivative_defect(form, res.samples) > 1e-8) throw DomainError("moser_flow: form is not closed");
  for (const auto& z : res.samples) {
    const MoserTrajectory tr = moser_trajectory(form, z, opt);
    res.steps += tr.steps;
    res.images.push_back(tr.image);
    res.jacobians.push_back(tr.jacobian);
    const Mat pulled = tr.jacobian.transpose() * form.matrix(tr.image) * tr.jacobian;
    res.pullback_residual = std::max(res.pullback_residual, (pulled - om).cwiseAbs().maxCoeff());
  }
  const MoserTrajectory origin = moser_trajectory(form, Vec::Zero(d), opt);
  res.origin_error = origin.image.norm();
  res.origin_jacobian_error = (origin.jacobian - Mat::Identity(d, d)).cwiseAbs().maxCoeff();
  return res;
}

}  // namespace hslag
