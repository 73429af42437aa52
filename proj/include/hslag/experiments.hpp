#pragma once

// Acceptance checks and the experiment suites built from them. The CLI and
// the acceptance binary share everything here.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "hslag/ambient.hpp"
#include "hslag/io.hpp"
#include "hslag/operator.hpp"
#include "hslag/reduction.hpp"

namespace hslag {

// ------------------------------------------------------------ configuration

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config: " + what) {}
};

struct Tolerances {
  double stationarity = 1e-8;       // 1: max |hs_residual|
  double spectrum_rel = 1e-4;       // 2
  double kernel_eig = 1e-5;         // 3
  double gap_ratio = 100.0;         // 3
  double subspace = 1e-5;           // 3
  double stability = 1e-6;          // 4: min eigenvalue >= -this
  double second_variation = 1e-4;   // 5
  double estimate_ratio = 2.0;      // 6
  double moser_pullback = 1e-6;     // 7
  double moser_origin = 1e-8;       // 7
  double solve = 1e-10;             // 8
  double orthogonality = 1e-10;     // 8
  double slope = 0.8;               // 8
  double uniqueness = 1e-9;         // 8
  double gradient_rel = 1e-3;       // 9
  double g_directions = 1e-8;       // 9
  double grad_norm = 1e-8;          // 10
  double geometric = 1e-5;          // 10
  double q_rel = 0.1;               // 11
  double cross = 1e-3;              // 11
  double frame_block = 1e-8;        // 11: min eigenvalue >= -this
};

struct MetricDescriptor {
  std::string type = "shear";  // shear | trig | flat
  double amplitude = 0.05;
  std::uint64_t seed = 7;
  int terms = 2;
};

struct ExperimentConfig {
  std::string suite;
  std::string model = "torus";  // spectrum table: torus | ln
  int n = 2;
  std::vector<double> radii{1.0, 1.3};
  int grid = 32;
  MetricDescriptor metric;
  double t = 0.05;
  std::vector<double> t_list{0.08, 0.04, 0.02};
  std::vector<double> estimate_t{0.1, 0.05, 0.025};
  double t0 = 0.1;
  std::uint64_t seed = 7;
  int starts = 3;
  int frames = 5;
  int directions = 10;
  Tolerances tol;
  std::string out_dir = "run";
};

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> s{"verify-models", "spectrum", "estimates", "reduce", "sweep"};
  return s;
}

inline void validate(const ExperimentConfig& c) {
  if (c.suite != "all" && std::find(suite_names().begin(), suite_names().end(), c.suite) == suite_names().end())
    throw ConfigError("unknown suite '" + c.suite + "'");
  if (c.model != "torus" && c.model != "ln") throw ConfigError("model must be torus or ln");
  if (c.n != 2) throw ConfigError("only n = 2 has a discretization");
  if (c.radii.size() != 2) throw ConfigError("radii must have n = 2 entries");
  for (double a : c.radii)
    if (!(a > 0.0)) throw ConfigError("radii must be positive");
  if (c.grid < 8 || c.grid % 2) throw ConfigError("grid must be even and >= 8");
  if (c.metric.type != "shear" && c.metric.type != "trig" && c.metric.type != "flat")
    throw ConfigError("metric type must be shear, trig or flat");
  if (!(c.metric.amplitude >= 0.0)) throw ConfigError("metric amplitude must be >= 0");
  if (!(c.t0 > 0.0)) throw ConfigError("t0 must be positive");
  auto check_t = [&](double t) {
    if (!(t > 0.0) || t > c.t0) throw ConfigError("t values must lie in (0, t0]");
  };
  check_t(c.t);
  for (double t : c.t_list) check_t(t);
  for (double t : c.estimate_t) check_t(t);
  if (c.t_list.size() < 2 || c.estimate_t.size() < 2) throw ConfigError("t lists need at least two values");
  if (c.starts < 1 || c.frames < 1 || c.directions < 1) throw ConfigError("counts must be positive");
  const Tolerances& t = c.tol;
  for (double v : {t.stationarity, t.spectrum_rel, t.kernel_eig, t.gap_ratio, t.subspace, t.stability,
                   t.second_variation, t.estimate_ratio, t.moser_pullback, t.moser_origin, t.solve, t.orthogonality,
                   t.slope, t.uniqueness, t.gradient_rel, t.g_directions, t.grad_norm, t.geometric, t.q_rel, t.cross,
                   t.frame_block})
    if (!(v > 0.0)) throw ConfigError("all tolerances must be positive");
}

inline nlohmann::json to_json(const Tolerances& t) {
  return {{"stationarity", t.stationarity}, {"spectrum_rel", t.spectrum_rel}, {"kernel_eig", t.kernel_eig},
          {"gap_ratio", t.gap_ratio}, {"subspace", t.subspace}, {"stability", t.stability},
          {"second_variation", t.second_variation}, {"estimate_ratio", t.estimate_ratio},
          {"moser_pullback", t.moser_pullback}, {"moser_origin", t.moser_origin}, {"solve", t.solve},
          {"orthogonality", t.orthogonality}, {"slope", t.slope}, {"uniqueness", t.uniqueness},
          {"gradient_rel", t.gradient_rel}, {"g_directions", t.g_directions}, {"grad_norm", t.grad_norm},
          {"geometric", t.geometric}, {"q_rel", t.q_rel}, {"cross", t.cross}, {"frame_block", t.frame_block}};
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"suite", c.suite},
          {"model", c.model},
          {"n", c.n},
          {"radii", c.radii},
          {"grid", c.grid},
          {"metric", {{"type", c.metric.type}, {"amplitude", c.metric.amplitude}, {"seed", c.metric.seed}, {"terms", c.metric.terms}}},
          {"t", c.t},
          {"t_list", c.t_list},
          {"estimate_t", c.estimate_t},
          {"t0", c.t0},
          {"seed", c.seed},
          {"starts", c.starts},
          {"frames", c.frames},
          {"directions", c.directions},
          {"tolerances", to_json(c.tol)}};
}

namespace detail {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

}  // namespace detail

/// Parse a JSON config document; missing keys keep their defaults.
inline ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("JSON parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("top level must be an object");
  detail::reject_unknown(j, {"suite", "model", "n", "radii", "grid", "metric", "t", "t_list", "estimate_t", "t0", "seed",
                             "starts", "frames", "directions", "tolerances", "out_dir"},
                         "config");
  ExperimentConfig c;
  using detail::read_opt;
  read_opt(j, "suite", c.suite);
  read_opt(j, "model", c.model);
  read_opt(j, "n", c.n);
  read_opt(j, "radii", c.radii);
  read_opt(j, "grid", c.grid);
  read_opt(j, "t", c.t);
  read_opt(j, "t_list", c.t_list);
  read_opt(j, "estimate_t", c.estimate_t);
  read_opt(j, "t0", c.t0);
  read_opt(j, "seed", c.seed);
  read_opt(j, "starts", c.starts);
  read_opt(j, "frames", c.frames);
  read_opt(j, "directions", c.directions);
  read_opt(j, "out_dir", c.out_dir);
  if (j.contains("metric")) {
    const auto& m = j.at("metric");
    if (!m.is_object()) throw ConfigError("metric must be an object");
    detail::reject_unknown(m, {"type", "amplitude", "seed", "terms"}, "metric");
    read_opt(m, "type", c.metric.type);
    read_opt(m, "amplitude", c.metric.amplitude);
    read_opt(m, "seed", c.metric.seed);
    read_opt(m, "terms", c.metric.terms);
  }
  if (j.contains("tolerances")) {
    const auto& t = j.at("tolerances");
    if (!t.is_object()) throw ConfigError("tolerances must be an object");
    nlohmann::json known = to_json(Tolerances{});
    std::vector<std::string> keys;
    for (auto it = known.begin(); it != known.end(); ++it) keys.push_back(it.key());
    detail::reject_unknown(t, keys, "tolerances");
    Tolerances& o = c.tol;
    std::map<std::string, double*> slot{
        {"stationarity", &o.stationarity}, {"spectrum_rel", &o.spectrum_rel}, {"kernel_eig", &o.kernel_eig},
        {"gap_ratio", &o.gap_ratio}, {"subspace", &o.subspace}, {"stability", &o.stability},
        {"second_variation", &o.second_variation}, {"estimate_ratio", &o.estimate_ratio},
        {"moser_pullback", &o.moser_pullback}, {"moser_origin", &o.moser_origin}, {"solve", &o.solve},
        {"orthogonality", &o.orthogonality}, {"slope", &o.slope}, {"uniqueness", &o.uniqueness},
        {"gradient_rel", &o.gradient_rel}, {"g_directions", &o.g_directions}, {"grad_norm", &o.grad_norm},
        {"geometric", &o.geometric}, {"q_rel", &o.q_rel}, {"cross", &o.cross}, {"frame_block", &o.frame_block}};
    for (auto& [k, p] : slot) read_opt(t, k.c_str(), *p);
  }
  return c;
}

inline MetricPtr make_metric(const MetricDescriptor& m, int dim) {
  if (m.type == "flat" || m.amplitude == 0.0) return std::make_shared<FlatMetric>(dim);
  if (m.type == "shear") return std::make_shared<ShearMetric>(dim / 2, m.amplitude, m.seed, m.terms);
  if (m.type == "trig") return compatibilize(std::make_shared<TrigMetric>(dim, m.amplitude, m.seed, m.terms));
  throw ConfigError("unknown metric type " + m.type);
}

// ------------------------------------------------------------- criteria

struct Criterion {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string summary;     // one-line measured vs required
  nlohmann::json details;
};

inline nlohmann::json to_json(const Criterion& c) {
  return {{"id", c.id}, {"name", c.name}, {"pass", c.pass}, {"summary", c.summary}, {"details", c.details}};
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t m = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx, sy += ly, sxx += lx * lx, sxy += lx * ly;
  }
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

/// Random frame: p uniform on the period cell, unitary Haar-distributed.
inline FrameState draw_frame(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, kTwoPi);
  Vec p(4);
  for (int i = 0; i < 4; ++i) p[i] = u(rng);
  return FrameState(p, realify(random_unitary(2, rng)));
}

/// Zero-mean trigonometric polynomial with |m_a| <= max_mode.
inline ScalarField band_limited_field(const GridDescriptor& g, int max_mode, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  ScalarField f(g);
  for (int m0 = -max_mode; m0 <= max_mode; ++m0)
    for (int m1 = 0; m1 <= max_mode; ++m1) {
      if (m1 == 0 && m0 <= 0) continue;
      const double c = nd(rng), s = nd(rng);
      for (std::size_t i = 0; i < g.node_count(); ++i) {
        const auto x = g.coordinates(i);
        const double arg = m0 * x[0] + m1 * x[1];
        f.values[static_cast<Eigen::Index>(i)] += c * std::cos(arg) + s * std::sin(arg);
      }
    }
  return f;
}

inline nlohmann::json frame_json(const FrameState& f) {
  const Mat r = f.rotation();
  std::vector<std::vector<double>> rows;
  for (Eigen::Index i = 0; i < r.rows(); ++i) rows.emplace_back(r.row(i).data(), r.row(i).data() + r.cols());
  std::vector<double> rr;
  for (Eigen::Index i = 0; i < r.rows(); ++i)
    for (Eigen::Index j = 0; j < r.cols(); ++j) rr.push_back(r(i, j));
  return {{"p", std::vector<double>(f.p.data(), f.p.data() + f.p.size())},
          {"rotation_row_major", rr},
          {"xi", std::vector<double>(f.xi.data(), f.xi.data() + f.xi.size())}};
}

inline std::vector<double> to_std(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

/// Shared state for one run: assembled operators, the reduction context and
/// the random stream. Every criterion draws from the stream in a fixed order.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) { validate(cfg_); }

  const ExperimentConfig& config() const { return cfg_; }
  const std::map<std::string, CsvTable>& tables() const { return tables_; }
  const nlohmann::json& extra() const { return extra_; }

  // --------------------------------------------------------- model suite

  Criterion model_stationarity() {
    Criterion c{1, "stationarity of models", false, {}, {}};
    const FlatMetric g0(4);
    const TorusModel tm(cfg_.radii, cfg_.grid);
    const LnModel lm(2, cfg_.grid);
    const Immersion ti = clifford_torus(tm), li = ln_lagrangian(lm);
    const double rt = hs_residual(ti, g0).max_abs(), rl = hs_residual(li, g0).max_abs();
    const double vt = volume(ti, g0), vl = volume(li, g0);
    const double vt_exact = tm.total_volume(), vl_exact = kTwoPi * kPi;  // |L_2| = 2 pi^2
    const double lag_t = lagrangian_defect(ti), lag_l = lagrangian_defect(li);
    CsvTable tab;
    tab.header = {"model", "hs_residual_max", "volume", "volume_exact", "lagrangian_defect"};
    tab.add({rt, vt, vt_exact, lag_t}, "torus");
    tab.add({rl, vl, vl_exact, lag_l}, "ln");
    tables_["models.csv"] = tab;
    c.pass = rt <= cfg_.tol.stationarity && rl <= cfg_.tol.stationarity;
    c.summary = "max|hs_residual| torus " + fmt(rt) + ", L2 " + fmt(rl) + " (<= " + fmt(cfg_.tol.stationarity) + ")";
    c.details = {{"torus_residual", rt}, {"ln_residual", rl}, {"torus_volume", vt}, {"ln_volume", vl},
                 {"torus_volume_exact", vt_exact}, {"ln_volume_exact", vl_exact}};
    return c;
  }

  Criterion ln_spectrum() {
    Criterion c{2, "L_n spectrum", false, {}, {}};
    const SpectralData& sd = ln_spectral();
    struct Entry {
      double lam;
      int k, l;
    };
    std::vector<Entry> analytic;
    for (const auto& md : ln_op().basis.modes()) {
      const int k = std::abs(md.m[0]), l = std::abs(md.m[1]);
      analytic.push_back({ln_eigenvalue(2, k, l), k, l});
    }
    std::stable_sort(analytic.begin(), analytic.end(), [](const Entry& a, const Entry& b) { return a.lam < b.lam; });
    CsvTable tab;
    tab.header = {"k", "l", "analytic", "numeric", "abs_diff"};
    double worst = 0.0;
    int checked = 0;
    for (std::size_t j = 0; j < analytic.size(); ++j) {
      const Entry& e = analytic[j];
      if (e.k > 4 || e.l > 4 || (e.k + e.l) % 2) continue;
      const double num = sd.eigenvalues[static_cast<Eigen::Index>(j)];
      const double diff = std::abs(num - e.lam);
      tab.add({double(e.k), double(e.l), e.lam, num, diff});
      worst = std::max(worst, diff / std::max(1.0, std::abs(e.lam)));
      ++checked;
    }
    tables_["ln_modes.csv"] = tab;
    c.pass = checked > 0 && worst <= cfg_.tol.spectrum_rel;
    c.summary = std::to_string(checked) + " modes, worst relative error " + fmt(worst) + " (<= " +
                fmt(cfg_.tol.spectrum_rel) + ")";
    c.details = {{"modes", checked}, {"worst_relative", worst}};
    return c;
  }

  Criterion rigidity() {
    Criterion c{3, "rigidity counts", false, {}, {}};
    nlohmann::json d;
    bool ok = true;
    std::string s;
    for (const std::string name : {"torus", "ln"}) {
      const bool torus = name == "torus";
      const SpectralData& sd = torus ? torus_spectral() : ln_spectral();
      int dim = -1;
      double gap = 0.0, sub = 1e300;
      try {
        const KernelBasis kb = kernel_basis(sd, cfg_.tol.gap_ratio);
        dim = kb.dim();
        gap = kb.gap_ratio;
        sub = moment_subspace_residual(
            kb, torus ? clifford_torus(TorusModel(cfg_.radii, cfg_.grid)) : ln_lagrangian(LnModel(2, cfg_.grid)));
      } catch (const NumericalFailure& e) {
        d[name + "_error"] = e.what();
      }
      const bool pass = dim == 7 && sub <= cfg_.tol.subspace;
      ok = ok && pass;
      d[name] = {{"kernel_dim", dim}, {"gap_ratio", gap}, {"subspace_residual", sub}};
      s += (s.empty() ? "" : "; ") + name + " dim " + std::to_string(dim) + " gap " + fmt(gap) + " moment residual " +
           fmt(sub);
    }
    c.pass = ok;
    c.summary = s + " (dim 7, residual <= " + fmt(cfg_.tol.subspace) + ")";
    c.details = d;
    return c;
  }

  Criterion stability() {
    Criterion c{4, "stability", false, {}, {}};
    const double mt = torus_spectral().eigenvalues.minCoeff(), ml = ln_spectral().eigenvalues.minCoeff();
    c.pass = mt >= -cfg_.tol.stability && ml >= -cfg_.tol.stability;
    c.summary = "min eigenvalue torus " + fmt(mt) + ", L2 " + fmt(ml) + " (>= " + fmt(-cfg_.tol.stability) + ")";
    c.details = {{"torus_min", mt}, {"ln_min", ml}};
    return c;
  }

  Criterion second_variation_identity() {
    Criterion c{5, "second-variation identity", false, {}, {}};
    const TorusModel tm(cfg_.radii, cfg_.grid);
    const ScalarField dv = tm.dvol();
    CsvTable tab;
    tab.header = {"index", "finite_difference", "operator", "relative"};
    double worst = 0.0;
    for (int i = 0; i < cfg_.directions; ++i) {
      ScalarField f = band_limited_field(tm.grid, 3, rng_);
      f.values /= l2_norm(f, dv);
      const SecondVariation sv = second_variation_consistency(tm, torus_op(), f);
      tab.add({double(i), sv.quadratic_form, sv.operator_value, sv.relative_difference()});
      worst = std::max(worst, sv.relative_difference());
    }
    tables_["second_variation.csv"] = tab;
    c.pass = worst <= cfg_.tol.second_variation;
    c.summary = std::to_string(cfg_.directions) + " random fields, worst relative error " + fmt(worst) + " (<= " +
                fmt(cfg_.tol.second_variation) + ")";
    c.details = {{"worst_relative", worst}};
    return c;
  }

  // ------------------------------------------------------ estimates suite

  Criterion scaling_estimates() {
    Criterion c{6, "scaling estimates", false, {}, {}};
    std::vector<FrameState> frames;
    for (int k = 0; k < 3; ++k) frames.push_back(draw_frame(rng_));
    const EstimateSweep sw = estimate_sweep(family(), frames, cfg_.estimate_t, 2, ball_samples(4, family().radius, 4));
    CsvTable tab;
    tab.header = {"t", "k", "sup_norm", "ratio"};
    for (int k = 0; k <= 2; ++k)
      for (std::size_t i = 0; i < sw.ts.size(); ++i) {
        const double scaled = sw.normalized(k, static_cast<Eigen::Index>(i));
        tab.add({sw.ts[i], double(k), scaled * std::pow(sw.ts[i], k == 0 ? 1 : k), sw.ratio[k]});
      }
    tables_["estimates.csv"] = tab;
    const double worst = sw.ratio.maxCoeff();
    c.pass = worst <= cfg_.tol.estimate_ratio;
    c.summary = "ratios k=0,1,2: " + fmt(sw.ratio[0]) + ", " + fmt(sw.ratio[1]) + ", " + fmt(sw.ratio[2]) + " (<= " +
                fmt(cfg_.tol.estimate_ratio) + ")";
    c.details = {{"ratios", to_std(sw.ratio)}};
    return c;
  }

  Criterion moser() {
    Criterion c{7, "Moser verifier", false, {}, {}};
    MoserOptions opt;
    opt.per_axis = 4;
    const MoserResult r = moser_flow(radial_perturbation(2, 0.1), opt);
    double moved = 0.0;
    CsvTable tab;
    tab.header = {"index", "displacement"};
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
      const double m = (r.images[i] - r.samples[i]).norm();
      moved = std::max(moved, m);
      tab.add({double(i), m});
    }
    tables_["moser.csv"] = tab;
    c.pass = r.pullback_residual <= cfg_.tol.moser_pullback && r.origin_error <= cfg_.tol.moser_origin &&
             r.origin_jacobian_error <= cfg_.tol.moser_origin && moved > 0.0;
    c.summary = "pullback " + fmt(r.pullback_residual) + " (<= " + fmt(cfg_.tol.moser_pullback) + "), origin " +
                fmt(r.origin_error) + ", Jacobian " + fmt(r.origin_jacobian_error) + " (<= " +
                fmt(cfg_.tol.moser_origin) + ")";
    c.details = {{"pullback", r.pullback_residual}, {"origin", r.origin_error},
                 {"origin_jacobian", r.origin_jacobian_error}, {"samples", r.samples.size()}, {"max_displacement", moved},
                 {"steps", r.steps}};
    return c;
  }

  // ---------------------------------------------------- reduction suites

  Criterion projected_solve_check() {
    Criterion c{8, "projected solve", false, {}, {}};
    const ReductionContext& ctx = reduction();
    const FrameState fr = draw_frame(rng_);
    std::vector<double> fn;
    double worst_res = 0.0, worst_orth = 0.0, worst_uniq = 0.0;
    bool converged = true;
    CsvTable tab;
    tab.header = {"t", "f_norm", "H_norm", "P0_norm", "K", "iterations"};
    nlohmann::json rows = nlohmann::json::array();
    std::normal_distribution<double> nd(0.0, 1.0);
    for (double t : cfg_.t_list) {
      const ReductionState a = projected_solve(ctx, t, fr);
      // second initial guess: random low-order coefficients
      Vec init = Vec::Zero(a.coeffs.size());
      for (std::size_t j = 0; j < ctx.basis().size(); ++j) {
        int order = 0;
        for (int m : ctx.basis().modes()[j].m) order = std::max(order, std::abs(m));
        if (order <= 3) init[static_cast<Eigen::Index>(j)] = 1e-3 * nd(rng_);
      }
      SolveOptions so;
      so.initial = init;
      const ReductionState b = projected_solve(ctx, t, fr, so);
      converged = converged && a.converged && b.converged;
      worst_res = std::max({worst_res, a.residual_norm, b.residual_norm});
      worst_orth = std::max(worst_orth, (ctx.kernel().coeffs.transpose() * a.coeffs).cwiseAbs().maxCoeff());
      const double uniq = (a.coeffs - b.coeffs).cwiseAbs().maxCoeff();
      worst_uniq = std::max(worst_uniq, uniq);
      const double f_norm = l2_norm(a.f, ctx.dvol());
      const double p0 = l2_norm(residual_P(ctx, t, fr, ScalarField(ctx.grid())), ctx.dvol());
      fn.push_back(f_norm);
      tab.add({t, f_norm, a.H.norm(), p0, a.K_value, double(a.iterations)});
      rows.push_back({{"t", t}, {"f_norm", f_norm}, {"H_norm", a.H.norm()}, {"P0_norm", p0}, {"K", a.K_value},
                      {"iterations", a.iterations}, {"residual", a.residual_norm}, {"uniqueness", uniq}});
    }
    tables_["sweep.csv"] = tab;
    const double s = loglog_slope(cfg_.t_list, fn);
    c.pass = converged && worst_res <= cfg_.tol.solve && worst_orth <= cfg_.tol.orthogonality &&
             s >= cfg_.tol.slope && worst_uniq <= cfg_.tol.uniqueness;
    c.summary = "residual " + fmt(worst_res) + ", orthogonality " + fmt(worst_orth) + ", slope " + fmt(s) +
                ", uniqueness " + fmt(worst_uniq) + " (<= " + fmt(cfg_.tol.solve) + ", " +
                fmt(cfg_.tol.orthogonality) + ", >= " + fmt(cfg_.tol.slope) + ", <= " + fmt(cfg_.tol.uniqueness) + ")";
    c.details = {{"frame", frame_json(fr)}, {"rows", rows}, {"slope", s}};
    return c;
  }

  Criterion gradient_identity() {
    Criterion c{9, "gradient identity", false, {}, {}};
    const ReductionContext& ctx = reduction();
    double worst_rel = 0.0, worst_g = 0.0;
    bool ok = true;
    nlohmann::json rows = nlohmann::json::array();
    CsvTable tab;
    tab.header = {"frame", "fd_norm", "psi_H_norm", "relative", "max_G_component"};
    for (int i = 0; i < cfg_.frames; ++i) {
      const FrameState fr = draw_frame(rng_);
      const KGradient g = gradient_K(ctx, cfg_.t, fr);
      double gmax = 0.0;
      for (int k : fr.stabilizer_coords()) gmax = std::max({gmax, std::abs(g.fd[k]), std::abs(g.psi_H[k])});
      const double fdn = g.fd.norm();
      double rel = 0.0;
      if (fdn >= 1e-6) {
        rel = g.relative_disagreement();
        ok = ok && rel <= cfg_.tol.gradient_rel;
      } else {
        ok = ok && g.psi_H.norm() <= 1e-6;
      }
      ok = ok && gmax <= cfg_.tol.g_directions;
      worst_rel = std::max(worst_rel, rel);
      worst_g = std::max(worst_g, gmax);
      tab.add({double(i), fdn, g.psi_H.norm(), rel, gmax});
      rows.push_back({{"frame", frame_json(fr)}, {"fd", to_std(g.fd)}, {"psi_H", to_std(g.psi_H)}, {"relative", rel},
                      {"psi_condition", g.psi.condition}, {"exactness", g.psi.max_exactness}});
    }
    tables_["gradient.csv"] = tab;
    c.pass = ok;
    c.summary = std::to_string(cfg_.frames) + " frames, worst relative " + fmt(worst_rel) + " (<= " +
                fmt(cfg_.tol.gradient_rel) + "), G components " + fmt(worst_g) + " (<= " +
                fmt(cfg_.tol.g_directions) + ")";
    c.details = {{"rows", rows}};
    return c;
  }

  Criterion end_to_end() {
    Criterion c{10, "end-to-end existence", false, {}, {}};
    const ReductionContext& ctx = reduction();
    optima_.clear();
    bool ok = true;
    double worst_grad = 0.0, worst_geo = 0.0;
    nlohmann::json runs = nlohmann::json::array();
    CsvTable trace;
    trace.header = {"series", "step", "K", "residual_norm", "grad_norm"};
    for (int s = 0; s < cfg_.starts; ++s) {
      const FrameState init = draw_frame(rng_);
      OptimizeResult r;
      nlohmann::json run{{"start", s}, {"initial_frame", frame_json(init)}};
      try {
        r = optimize_frame(ctx, cfg_.t, init);
      } catch (const Error& e) {
        ok = false;
        run["error"] = e.what();
        runs.push_back(run);
        continue;
      }
      const bool pass = r.converged && r.grad_norm <= cfg_.tol.grad_norm && r.geometric_residual <= cfg_.tol.geometric;
      ok = ok && pass;
      worst_grad = std::max(worst_grad, r.grad_norm);
      worst_geo = std::max(worst_geo, r.geometric_residual);
      nlohmann::json tr = nlohmann::json::array();
      for (const auto& row : r.trace) {
        trace.add({double(row.step), row.K, row.residual_norm, row.grad_norm}, "start" + std::to_string(s));
        tr.push_back({{"step", row.step}, {"K", row.K}, {"residual_norm", row.residual_norm}, {"grad_norm", row.grad_norm}});
      }
      run.update({{"converged", r.converged}, {"verdict", r.verdict}, {"grad_norm", r.grad_norm},
                  {"K", r.state.K_value}, {"residual_norm", r.state.residual_norm},
                  {"geometric_residual", r.geometric_residual}, {"restarts", r.restarts},
                  {"min_hessian_eigenvalue", r.min_hessian_eigenvalue}, {"final_frame", frame_json(r.frame)},
                  {"trace", tr}, {"pass", pass}});
      runs.push_back(run);
      optima_.push_back(r);
    }
    tables_["trace.csv"] = trace;
    extra_["optimization"] = runs;
    c.pass = ok && static_cast<int>(optima_.size()) == cfg_.starts;
    c.summary = std::to_string(cfg_.starts) + " starts, worst |dK| " + fmt(worst_grad) + " (<= " +
                fmt(cfg_.tol.grad_norm) + "), worst geometric residual " + fmt(worst_geo) + " (<= " +
                fmt(cfg_.tol.geometric) + ")";
    c.details = {{"runs", runs.size()}, {"worst_grad", worst_grad}, {"worst_geometric", worst_geo}};
    return c;
  }

  /// Needs end_to_end() first; checks every local minimum it found.
  Criterion minimum_stability() {
    Criterion c{11, "stability of the found Lagrangian", false, {}, {}};
    const ReductionContext& ctx = reduction();
    const GridDescriptor& g = ctx.grid();
    // kernel-orthogonal directions (cos t1 is a kernel field on this torus)
    std::vector<ScalarField> dirs;
    for (auto fn : {+[](const std::vector<double>& x) { return std::cos(2 * x[0]); },
                    +[](const std::vector<double>& x) { return std::cos(x[0] + x[1]); },
                    +[](const std::vector<double>& x) { return std::sin(2 * x[1]); }}) {
      ScalarField f = ScalarField::sample(g, fn);
      f.values /= l2_norm(f, ctx.dvol());
      dirs.push_back(f);
    }
    int checked = 0;
    bool ok = true;
    double worst_q = 0.0, worst_cross = 0.0, min_frame = 1e300;
    nlohmann::json reps = nlohmann::json::array();
    for (const auto& r : optima_) {
      if (r.verdict != "local minimum") continue;
      const SecondVariationReport sv = second_variation_Q(ctx, cfg_.t, r.frame, dirs);
      double q = 0.0;
      for (double e : sv.direction_rel_err) q = std::max(q, e);
      worst_q = std::max(worst_q, q);
      worst_cross = std::max(worst_cross, sv.max_cross_relative);
      min_frame = std::min(min_frame, sv.frame_min_eigenvalue);
      ok = ok && q <= cfg_.tol.q_rel && sv.max_cross_relative <= cfg_.tol.cross &&
           sv.frame_min_eigenvalue >= -cfg_.tol.frame_block;
      ++checked;
      reps.push_back({{"direction_Q", sv.direction_Q}, {"direction_L", sv.direction_L},
                      {"direction_rel_err", sv.direction_rel_err}, {"frame_min_eigenvalue", sv.frame_min_eigenvalue},
                      {"max_cross_relative", sv.max_cross_relative}, {"stabilizer_hessian", sv.stabilizer_hessian},
                      {"scale_t_n", sv.scale_t_n}});
    }
    extra_["second_variation"] = reps;
    c.pass = ok && checked > 0;
    c.summary = std::to_string(checked) + " minima, Q vs L " + fmt(worst_q) + " (<= " + fmt(cfg_.tol.q_rel) +
                "), cross " + fmt(worst_cross) + " (<= " + fmt(cfg_.tol.cross) + "), frame block " +
                (checked ? fmt(min_frame) : std::string("n/a")) + " (>= " + fmt(-cfg_.tol.frame_block) + ")";
    c.details = {{"minima", checked}, {"reports", reps}};
    return c;
  }

  // ---------------------------------------------------------------- suites

  /// Spectrum of the selected model as (index, eigenvalue, residual).
  void spectrum_table() {
    const SpectralData& sd = cfg_.model == "ln" ? ln_spectral() : torus_spectral();
    CsvTable tab;
    tab.header = {"index", "eigenvalue", "residual"};
    for (Eigen::Index j = 0; j < sd.eigenvalues.size(); ++j)
      tab.add({double(j), sd.eigenvalues[j], sd.residuals.size() ? sd.residuals[j] : 0.0});
    tables_["spectrum.csv"] = tab;
  }

  std::vector<Criterion> run_suite(const std::function<void(const Criterion&)>& report = {}) {
    std::vector<Criterion> out;
    auto add = [&](Criterion c) {
      if (report) report(c);
      out.push_back(std::move(c));
    };
    const std::string& s = cfg_.suite;
    if (s == "verify-models") {
      add(model_stationarity());
      add(second_variation_identity());
    } else if (s == "spectrum") {
      spectrum_table();
      add(ln_spectrum());
      add(rigidity());
      add(stability());
    } else if (s == "estimates") {
      add(scaling_estimates());
      add(moser());
    } else if (s == "sweep") {
      add(projected_solve_check());
    } else if (s == "reduce") {
      add(gradient_identity());
      add(end_to_end());
      add(minimum_stability());
    }
    return out;
  }

  /// All acceptance criteria in order.
  std::vector<Criterion> run_all(const std::function<void(const Criterion&)>& report = {}) {
    std::vector<Criterion> out;
    auto add = [&](Criterion c) {
      if (report) report(c);
      out.push_back(std::move(c));
    };
    add(model_stationarity());
    add(ln_spectrum());
    add(rigidity());
    add(stability());
    add(second_variation_identity());
    add(scaling_estimates());
    add(moser());
    add(projected_solve_check());
    add(gradient_identity());
    add(end_to_end());
    add(minimum_stability());
    return out;
  }

  nlohmann::json manifest(const std::vector<Criterion>& results) const {
    nlohmann::json crit = nlohmann::json::array();
    bool pass = true;
    for (const auto& c : results) {
      crit.push_back(to_json(c));
      pass = pass && c.pass;
    }
    std::vector<std::string> names;
    for (const auto& [k, v] : tables_) names.push_back(k);
    nlohmann::json m{{"tool", "hslag"}, {"suite", cfg_.suite}, {"seed", cfg_.seed}, {"config", to_json(cfg_)},
                     {"criteria", crit}, {"tables", names}, {"passed", pass}};
    for (auto it = extra_.begin(); it != extra_.end(); ++it) m[it.key()] = it.value();
    if (cfg_.suite == "reduce" && extra_.contains("optimization")) {
      bool conv = !extra_["optimization"].empty();
      double geo = 0.0;
      for (const auto& r : extra_["optimization"]) {
        conv = conv && r.value("converged", false);
        geo = std::max(geo, r.value("geometric_residual", 1e300));
      }
      m["converged"] = conv;
      m["geometric_residual"] = geo;
    }
    return m;
  }

 private:
  const ChartFamily& family() {
    if (!family_) family_ = ChartFamily{make_metric(cfg_.metric, 4)};
    return *family_;
  }
  const LinearOperator& torus_op() {
    if (!torus_op_) torus_op_ = assemble_flat_L(TorusModel(cfg_.radii, cfg_.grid));
    return *torus_op_;
  }
  const LinearOperator& ln_op() {
    if (!ln_op_) ln_op_ = assemble_flat_L(LnModel(2, cfg_.grid));
    return *ln_op_;
  }
  const SpectralData& torus_spectral() {
    if (!torus_sd_) torus_sd_ = eigensolve(torus_op(), -1, cfg_.tol.kernel_eig);
    return *torus_sd_;
  }
  const SpectralData& ln_spectral() {
    if (!ln_sd_) ln_sd_ = eigensolve(ln_op(), -1, cfg_.tol.kernel_eig);
    return *ln_sd_;
  }
  const ReductionContext& reduction() {
    if (!reduction_) {
      ReductionConfig rc;
      rc.radii = cfg_.radii;
      rc.grid_n = cfg_.grid;
      rc.kernel_tol = cfg_.tol.kernel_eig;
      rc.min_gap_ratio = cfg_.tol.gap_ratio;
      rc.solve_tol = cfg_.tol.solve;
      reduction_ = std::make_unique<ReductionContext>(family(), rc);
    }
    return *reduction_;
  }

  ExperimentConfig cfg_;
  std::mt19937_64 rng_;
  std::optional<ChartFamily> family_;
  std::optional<LinearOperator> torus_op_, ln_op_;
  std::optional<SpectralData> torus_sd_, ln_sd_;
  std::unique_ptr<ReductionContext> reduction_;
  std::vector<OptimizeResult> optima_;
  std::map<std::string, CsvTable> tables_;
  nlohmann::json extra_ = nlohmann::json::object();
};

// -------------------------------------------------------------- plot data

/// Long-format (series, x, y) rows from the CSV tables of a run directory.
inline CsvTable plot_data(const std::filesystem::path& run_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(run_dir)) throw Error("plot-data: no run directory " + run_dir.string());
  CsvTable out;
  out.header = {"series", "x", "y"};
  auto emit = [&](const std::string& prefix, const CsvTable& t, const std::string& x,
                  const std::vector<std::string>& ys) {
    const std::size_t xc = t.column(x);
    std::vector<std::size_t> order(t.rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return t.rows[a][xc] < t.rows[b][xc]; });
    for (const auto& y : ys) {
      const std::size_t yc = t.column(y);
      for (std::size_t i : order) {
        std::string series = prefix + y;
        if (!t.labels.empty()) series = prefix + t.labels[i] + "/" + y;
        out.add({t.rows[i][xc], t.rows[i][yc]}, series);
      }
    }
  };
  bool any = false;
  if (fs::exists(run_dir / "sweep.csv")) {
    emit("scaling/", read_csv(run_dir / "sweep.csv"), "t", {"f_norm", "H_norm", "P0_norm"});
    any = true;
  }
  if (fs::exists(run_dir / "spectrum.csv")) {
    emit("spectrum/", read_csv(run_dir / "spectrum.csv"), "index", {"eigenvalue"});
    any = true;
  }
  if (fs::exists(run_dir / "ln_modes.csv")) {
    emit("ln_modes/", read_csv(run_dir / "ln_modes.csv"), "analytic", {"numeric"});
    any = true;
  }
  if (fs::exists(run_dir / "trace.csv")) {
    emit("trace/", read_csv(run_dir / "trace.csv", true), "step", {"K", "grad_norm"});
    any = true;
  }
  if (fs::exists(run_dir / "estimates.csv")) {
    const CsvTable e = read_csv(run_dir / "estimates.csv");
    for (int k = 0; k <= 2; ++k) {
      CsvTable part;
      part.header = e.header;
      for (const auto& r : e.rows)
        if (r[1] == k) part.add(r);
      emit("estimates/k" + std::to_string(k) + "/", part, "t", {"sup_norm"});
    }
    any = true;
  }
  if (!any) throw Error("plot-data: no trace files in " + run_dir.string());
  return out;
}

}  // namespace hslag
