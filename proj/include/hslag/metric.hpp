#pragma once

// Ambient metric evaluators: value plus derivatives at a point.

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "hslag/errors.hpp"
#include "hslag/grid.hpp"
#include "hslag/linalg.hpp"

namespace hslag {

/// Metric value and coordinate derivatives at one point.
/// dg[m] = dG/dz_m, d2g[m*dim + l] = d^2 G/dz_m dz_l.
struct MetricJet {
  Mat g;
  std::vector<Mat> dg;
  std::vector<Mat> d2g;

  void reset(int dim, int order) {
    g.setZero(dim, dim);
    if (order >= 1) {
      dg.resize(dim);
      for (auto& m : dg) m.setZero(dim, dim);
    }
    if (order >= 2) {
      d2g.resize(static_cast<std::size_t>(dim * dim));
      for (auto& m : d2g) m.setZero(dim, dim);
    }
  }
};

/// Any symmetric positive definite metric on a coordinate domain.
class MetricEvaluator {
 public:
  virtual ~MetricEvaluator() = default;
  virtual int dim() const = 0;
  /// Fills value and derivatives up to `order` (at most 2).
  virtual void jet(const Vec& z, int order, MetricJet& out) const = 0;
  virtual bool in_domain(const Vec&) const { return true; }
  virtual bool is_flat() const { return false; }
  virtual std::string describe() const = 0;

  Mat value(const Vec& z) const {
    MetricJet j;
    jet(z, 0, j);
    return j.g;
  }

 protected:
  void check_order(int order) const {
    if (order < 0 || order > 2) throw Unsupported("metric derivatives beyond order 2");
  }
};

/// Marker base: implementations guarantee omega0-compatibility.
class CompatibleMetric : public MetricEvaluator {};

using MetricPtr = std::shared_ptr<const CompatibleMetric>;
using RawMetricPtr = std::shared_ptr<const MetricEvaluator>;

class FlatMetric final : public CompatibleMetric {
 public:
  explicit FlatMetric(int dim) : dim_(dim) {
    if (dim <= 0 || dim % 2 != 0) throw Error("FlatMetric: dimension must be even and positive");
  }
  int dim() const override { return dim_; }
  bool is_flat() const override { return true; }
  std::string describe() const override { return "flat"; }
  void jet(const Vec&, int order, MetricJet& out) const override {
    check_order(order);
    out.reset(dim_, order);
    out.g.setIdentity();
  }

 private:
  int dim_;
};

/// Sum of cosines amp * sum_t c_t cos(k_t . z + phase_t), with small
/// integer wave vectors so the field is 2*pi periodic.
struct TrigField {
  std::vector<Vec> wave;
  std::vector<double> coef;
  std::vector<double> phase;

  static TrigField random(int dim, int terms, double amplitude, std::mt19937_64& rng) {
    TrigField f;
    std::uniform_int_distribution<int> kd(-1, 1);
    std::uniform_real_distribution<double> cd(-1.0, 1.0);
    std::uniform_real_distribution<double> pd(0.0, kTwoPi);
    double total = 0.0;
    for (int t = 0; t < terms; ++t) {
      Vec k(dim);
      do {
        for (int m = 0; m < dim; ++m) k[m] = kd(rng);
      } while (k.cwiseAbs().sum() == 0.0);
      f.wave.push_back(k);
      const double c = cd(rng);
      f.coef.push_back(c);
      f.phase.push_back(pd(rng));
      total += std::abs(c);
    }
    for (auto& c : f.coef) c *= amplitude / total;
    return f;
  }

  /// Value, gradient and Hessian.
  void eval(const Vec& z, int order, double& v, Vec& grad, Mat& hess) const {
    const auto dim = z.size();
    v = 0.0;
    if (order >= 1) grad.setZero(dim);
    if (order >= 2) hess.setZero(dim, dim);
    for (std::size_t t = 0; t < coef.size(); ++t) {
      const double arg = wave[t].dot(z) + phase[t];
      const double c = std::cos(arg), s = std::sin(arg);
      v += coef[t] * c;
      if (order >= 1) grad -= coef[t] * s * wave[t];
      if (order >= 2) hess -= coef[t] * c * wave[t] * wave[t].transpose();
    }
  }
};

/// G = Phi^T Phi with Phi = (I + N(A(z))) (I + M(B(z))), where N shears
/// x += A y and M shears y += B x for symmetric trigonometric fields A, B.
/// Each factor is symplectic, so G is symmetric, positive and symplectic,
/// i.e. compatible with omega0, and every derivative is closed-form.
class ShearMetric final : public CompatibleMetric {
 public:
  ShearMetric(int n, double amplitude, std::uint64_t seed, int terms = 2)
      : n_(n), amplitude_(amplitude), seed_(seed) {
    if (n <= 0) throw Error("ShearMetric: n must be positive");
    std::mt19937_64 rng(seed);
    for (int j = 0; j < n; ++j)
      for (int k = j; k < n; ++k) {
        a_.push_back(TrigField::random(2 * n, terms, amplitude, rng));
        b_.push_back(TrigField::random(2 * n, terms, amplitude, rng));
      }
  }

  int dim() const override { return 2 * n_; }
  bool is_flat() const override { return amplitude_ == 0.0; }
  std::string describe() const override {
    return "shear(amplitude=" + std::to_string(amplitude_) + ", seed=" + std::to_string(seed_) + ")";
  }
  double amplitude() const { return amplitude_; }

  void jet(const Vec& z, int order, MetricJet& out) const override {
    check_order(order);
    const int d = 2 * n_;
    if (z.size() != d) throw Error("ShearMetric: point has wrong dimension");
    out.reset(d, order);

    // Shear matrices and their derivatives in interleaved coordinates.
    Mat na = Mat::Zero(d, d), mb = Mat::Zero(d, d);
    std::vector<Mat> dna, dmb, d2na, d2mb;
    if (order >= 1) {
      dna.assign(d, Mat::Zero(d, d));
      dmb.assign(d, Mat::Zero(d, d));
    }
    if (order >= 2) {
      d2na.assign(static_cast<std::size_t>(d * d), Mat::Zero(d, d));
      d2mb.assign(static_cast<std::size_t>(d * d), Mat::Zero(d, d));
    }
    double v;
    Vec grad;
    Mat hess;
    int idx = 0;
    for (int j = 0; j < n_; ++j)
      for (int k = j; k < n_; ++k, ++idx) {
        for (int which = 0; which < 2; ++which) {
          const TrigField& f = which == 0 ? a_[idx] : b_[idx];
          f.eval(z, order, v, grad, hess);
          // N(A): x_j += A_jk y_k ; M(B): y_j += B_jk x_k
          auto place = [&](Mat& m, double val) {
            if (which == 0) {
              m(2 * j, 2 * k + 1) = val;
              m(2 * k, 2 * j + 1) = val;
            } else {
              m(2 * j + 1, 2 * k) = val;
              m(2 * k + 1, 2 * j) = val;
            }
          };
          place(which == 0 ? na : mb, v);
          if (order >= 1)
            for (int m = 0; m < d; ++m) place(which == 0 ? dna[m] : dmb[m], grad[m]);
          if (order >= 2)
            for (int m = 0; m < d; ++m)
              for (int l = 0; l < d; ++l) place(which == 0 ? d2na[m * d + l] : d2mb[m * d + l], hess(m, l));
        }
      }

    const Mat id = Mat::Identity(d, d);
    const Mat phi = (id + na) * (id + mb);
    out.g.noalias() = phi.transpose() * phi;
    if (order == 0) return;
    std::vector<Mat> dphi(d);
    for (int m = 0; m < d; ++m) {
      dphi[m] = dna[m] + dmb[m] + dna[m] * mb + na * dmb[m];
      out.dg[m].noalias() = dphi[m].transpose() * phi + phi.transpose() * dphi[m];
    }
    if (order == 1) return;
    for (int m = 0; m < d; ++m)
      for (int l = 0; l < d; ++l) {
        const std::size_t ml = static_cast<std::size_t>(m * d + l);
        const Mat d2phi = d2na[ml] + d2mb[ml] + d2na[ml] * mb + dna[m] * dmb[l] + dna[l] * dmb[m] + na * d2mb[ml];
        out.d2g[ml].noalias() = d2phi.transpose() * phi + dphi[m].transpose() * dphi[l] +
                                dphi[l].transpose() * dphi[m] + phi.transpose() * d2phi;
      }
  }

 private:
  int n_;
  double amplitude_;
  std::uint64_t seed_;
  std::vector<TrigField> a_, b_;
};

/// H(z) = I + S(z) with S a symmetric trigonometric field; positive for
/// amplitude < 1 / dim but in general not compatible with omega0.
class TrigMetric final : public MetricEvaluator {
 public:
  TrigMetric(int dim, double amplitude, std::uint64_t seed, int terms = 2) : dim_(dim), amplitude_(amplitude) {
    std::mt19937_64 rng(seed);
    for (int j = 0; j < dim; ++j)
      for (int k = j; k < dim; ++k) s_.push_back(TrigField::random(dim, terms, amplitude, rng));
  }
  int dim() const override { return dim_; }
  std::string describe() const override { return "trig(amplitude=" + std::to_string(amplitude_) + ")"; }

  void jet(const Vec& z, int order, MetricJet& out) const override {
    check_order(order);
    out.reset(dim_, order);
    out.g.setIdentity();
    double v;
    Vec grad;
    Mat hess;
    int idx = 0;
    for (int j = 0; j < dim_; ++j)
      for (int k = j; k < dim_; ++k, ++idx) {
        s_[idx].eval(z, order, v, grad, hess);
        out.g(j, k) += v;
        if (k != j) out.g(k, j) += v;
        for (int m = 0; order >= 1 && m < dim_; ++m) {
          out.dg[m](j, k) = out.dg[m](k, j) = grad[m];
          for (int l = 0; order >= 2 && l < dim_; ++l) out.d2g[m * dim_ + l](j, k) = out.d2g[m * dim_ + l](k, j) = hess(m, l);
        }
      }
  }

 private:
  int dim_;
  double amplitude_;
  std::vector<TrigField> s_;
};

/// Pointwise compatible retraction of an arbitrary metric H:
/// G = H^{1/2} |K| H^{1/2}, K = H^{-1/2} Omega0 H^{-1/2}. This is the
/// metric omega0(., J .) of the polar part J of H^{-1} Omega0^T.
inline Mat compatibilize_matrix(const Mat& h) {
  const int d = static_cast<int>(h.rows());
  const Mat hs = sym_sqrt(h);
  const Mat his = sym_inv_sqrt(h);
  const Mat k = his * omega0_matrix(d / 2) * his;
  Mat ktk = k.transpose() * k;
  ktk = 0.5 * (ktk + ktk.transpose());
  Mat g = hs * sym_sqrt(ktk) * hs;
  return 0.5 * (g + g.transpose());
}

/// Compatible metric obtained from any metric by compatibilize_matrix.
/// Derivatives are fourth-order central differences of the retracted value.
class CompatibilizedMetric final : public CompatibleMetric {
 public:
  explicit CompatibilizedMetric(RawMetricPtr base, double step = 1e-3) : base_(std::move(base)), step_(step) {}
  int dim() const override { return base_->dim(); }
  bool in_domain(const Vec& z) const override { return base_->in_domain(z); }
  std::string describe() const override { return "compatibilized(" + base_->describe() + ")"; }

  void jet(const Vec& z, int order, MetricJet& out) const override {
    check_order(order);
    const int d = dim();
    out.reset(d, order);
    out.g = retract(z);
    if (order >= 1)
      for (int m = 0; m < d; ++m) out.dg[m] = first(z, m);
    if (order >= 2) {
      const double h = 2.0 * step_;
      for (int m = 0; m < d; ++m)
        for (int l = m; l < d; ++l) {
          Vec e = Vec::Zero(d);
          e[l] = h;
          const Mat v = (-first(z + 2 * e, m) + 8 * first(z + e, m) - 8 * first(z - e, m) + first(z - 2 * e, m)) / (12 * h);
          const Mat s = 0.5 * (v + v.transpose());
          out.d2g[m * d + l] = s;
          out.d2g[l * d + m] = s;
        }
    }
  }

 private:
  Mat retract(const Vec& z) const { return compatibilize_matrix(base_->value(z)); }
  Mat first(const Vec& z, int m) const {
    Vec e = Vec::Zero(z.size());
    e[m] = step_;
    return (-retract(z + 2 * e) + 8 * retract(z + e) - 8 * retract(z - e) + retract(z - 2 * e)) / (12 * step_);
  }

  RawMetricPtr base_;
  double step_;
};

inline MetricPtr compatibilize(RawMetricPtr h) { return std::make_shared<CompatibilizedMetric>(std::move(h)); }

/// Christoffel symbols Gamma^k_ij of G at a point; result[k](i, j).
inline std::vector<Mat> christoffel(const MetricJet& jet) {
  const auto d = jet.g.rows();
  const Mat ginv = jet.g.inverse();
  // lower-index Gamma_{l,ij} = 1/2 (d_i G_lj + d_j G_li - d_l G_ij)
  std::vector<Mat> lower(d, Mat::Zero(d, d));
  for (Eigen::Index l = 0; l < d; ++l)
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j)
        lower[l](i, j) = 0.5 * (jet.dg[i](l, j) + jet.dg[j](l, i) - jet.dg[l](i, j));
  std::vector<Mat> out(d, Mat::Zero(d, d));
  for (Eigen::Index k = 0; k < d; ++k)
    for (Eigen::Index l = 0; l < d; ++l) out[k] += ginv(k, l) * lower[l];
  return out;
}

}  // namespace hslag
