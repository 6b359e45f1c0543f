#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mtlrelu/dataset.hpp"
#include "mtlrelu/error.hpp"
#include "mtlrelu/io.hpp"
#include "mtlrelu/kernel.hpp"
#include "mtlrelu/network.hpp"
#include "mtlrelu/rng.hpp"

namespace mtlrelu {

/// Single-task view of a trained multi-task net: the features of its active
/// neurons are frozen and only task s's output weights vary.
///
/// `labels_s` is task s's label column minus the (frozen) residual
/// contribution A_s x + c_s, so that phi * v_star.col(s) is the net's own
/// neuron prediction for it.
struct FeatureProblem {
  Eigen::MatrixXd phi;              // N x K'
  Eigen::VectorXd labels_s;         // N
  Eigen::MatrixXd v_star;           // K' x T
  Eigen::Index s = 0;
  double lambda = 0.0;              // path-norm penalty weight
  Eigen::VectorXd rest_norms;       // |v*_{k\s}|
  Eigen::VectorXd gamma_s;          // 1 / |v*_{k\s}|; +inf where the rest norm is 0
  std::vector<Eigen::Index> active; // neuron indices in the source net (empty for synthetic problems)
  Eigen::MatrixXd neuron_weights;   // K' x d, unit rows
  Eigen::VectorXd neuron_biases;

  Eigen::Index num_features() const noexcept { return phi.cols(); }
  Eigen::Index num_tasks() const noexcept { return v_star.cols(); }
  bool h_defined() const { return gamma_s.allFinite(); }
};

/// Assembles a problem from raw parts (synthetic instances and tests).
inline FeatureProblem make_feature_problem(Eigen::MatrixXd phi, Eigen::VectorXd labels_s, Eigen::MatrixXd v_star,
                                           Eigen::Index s, double lambda) {
  require(phi.rows() == labels_s.size(), ErrorCode::dimension_mismatch, "phi and labels disagree on N");
  require(v_star.rows() == phi.cols(), ErrorCode::dimension_mismatch, "v_star must have one row per feature");
  require(s >= 0 && s < v_star.cols(), ErrorCode::invalid_argument, "task index out of range");
  require(lambda >= 0.0 && std::isfinite(lambda), ErrorCode::invalid_argument, "lambda must be finite and >= 0");
  FeatureProblem fp;
  fp.phi = std::move(phi);
  fp.labels_s = std::move(labels_s);
  fp.v_star = std::move(v_star);
  fp.s = s;
  fp.lambda = lambda;
  const auto K = fp.v_star.rows();
  fp.rest_norms.resize(K);
  fp.gamma_s.resize(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const double total = fp.v_star.row(k).squaredNorm();
    const double own = fp.v_star(k, s) * fp.v_star(k, s);
    fp.rest_norms(k) = std::sqrt(std::max(0.0, total - own));
    fp.gamma_s(k) = fp.rest_norms(k) > 0.0 ? 1.0 / fp.rest_norms(k) : std::numeric_limits<double>::infinity();
  }
  return fp;
}

/// Unit-normalizes the net, keeps neurons with |v_k| > threshold and
/// snapshots their features on the data. A negative threshold selects the
/// scale-free default.
inline FeatureProblem build_feature_problem(const ShallowReLUNet& trained, const MultiTaskDataset& data, Eigen::Index s,
                                            double lambda, double threshold = -1.0) {
  require(trained.input_dim() == data.input_dim() && trained.num_tasks() == data.num_tasks(),
          ErrorCode::dimension_mismatch, "net does not match dataset");
  const ShallowReLUNet net = unit_normalize(trained);
  if (threshold < 0.0) threshold = default_active_threshold(net);
  const auto active = active_neurons(net, threshold);
  require(!active.empty(), ErrorCode::empty_active_set,
          "no neuron has output-weight norm above " + io::format_double(threshold));
  const auto Kp = static_cast<Eigen::Index>(active.size());
  Eigen::MatrixXd w(Kp, net.input_dim());
  Eigen::VectorXd b(Kp);
  Eigen::MatrixXd v(Kp, net.num_tasks());
  for (Eigen::Index j = 0; j < Kp; ++j) {
    const auto k = active[static_cast<std::size_t>(j)];
    w.row(j) = net.input_weights.row(k);
    b(j) = net.biases(k);
    v.row(j) = net.output_weights.row(k);
  }
  Eigen::MatrixXd phi = data.inputs() * w.transpose();
  phi.rowwise() += b.transpose();
  phi = phi.cwiseMax(0.0);
  const Eigen::VectorXd residual =
      (data.inputs() * net.residual_matrix.row(s).transpose()).array() + net.residual_offset(s);
  auto fp = make_feature_problem(std::move(phi), data.labels().col(s) - residual, std::move(v), s, lambda);
  fp.active = active;
  fp.neuron_weights = std::move(w);
  fp.neuron_biases = std::move(b);
  return fp;
}

inline double feature_loss(const FeatureProblem& fp, const Eigen::VectorXd& v) {
  require(v.size() == fp.num_features(), ErrorCode::dimension_mismatch, "coefficient vector length mismatch");
  return (fp.labels_s - fp.phi * v).squaredNorm();
}

/// J(v) = |y_s - Phi v|^2 + lambda sum_k sqrt(v_k^2 + |v*_{k\s}|^2)
inline double objective_J(const FeatureProblem& fp, const Eigen::VectorXd& v) {
  require(v.size() == fp.num_features(), ErrorCode::dimension_mismatch, "coefficient vector length mismatch");
  double reg = 0.0;
  for (Eigen::Index k = 0; k < v.size(); ++k) reg += std::hypot(v(k), fp.rest_norms(k));
  return feature_loss(fp, v) + fp.lambda * reg;
}

/// H(v) = |y_s - Phi v|^2 + lambda sum_k (|v*_{k\s}| + v_k^2 / (2 |v*_{k\s}|))
inline double objective_H(const FeatureProblem& fp, const Eigen::VectorXd& v) {
  require(fp.h_defined(), ErrorCode::undefined_objective,
          "H is undefined: some active neuron has v*_{k\\s} = 0");
  const double reg = (fp.rest_norms.array() + v.array().square() / (2.0 * fp.rest_norms.array())).sum();
  return feature_loss(fp, v) + fp.lambda * reg;
}

enum class GammaMode { per_task, common };

inline GammaMode gamma_mode_from_string(const std::string& s) {
  if (s == "per_task") return GammaMode::per_task;
  if (s == "common") return GammaMode::common;
  throw Error(ErrorCode::invalid_argument, "gamma mode must be 'per_task' or 'common', got '" + s + "'");
}

/// gamma_ks = 1 / |v*_{k\s}| or the common value gamma_k = 1 / |v*_k|.
inline Eigen::VectorXd gamma_weights(const FeatureProblem& fp, GammaMode mode) {
  if (mode == GammaMode::per_task) return fp.gamma_s;
  return fp.v_star.rowwise().norm().cwiseInverse();
}

/// Minimizer of |y - Phi v|^2 + (lambda / 2) sum_k gamma_k v_k^2 from
/// (Phi^T Phi + (lambda / 2) diag(gamma)) v = Phi^T y.
inline Eigen::VectorXd solve_weighted_l2(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y, double lambda,
                                         const Eigen::VectorXd& gamma) {
  require(phi.rows() == y.size() && phi.cols() == gamma.size(), ErrorCode::dimension_mismatch,
          "weighted l2 shapes disagree");
  require(gamma.allFinite() && (gamma.array() >= 0.0).all(), ErrorCode::undefined_objective,
          "weighted l2 needs finite nonnegative gamma");
  Eigen::MatrixXd m = phi.transpose() * phi;
  m.diagonal() += 0.5 * lambda * gamma;
  return solve_psd_with_jitter(m, phi.transpose() * y, 1e-11).x;
}

inline Eigen::VectorXd solve_weighted_l2(const FeatureProblem& fp, GammaMode mode = GammaMode::per_task) {
  return solve_weighted_l2(fp.phi, fp.labels_s, fp.lambda, gamma_weights(fp, mode));
}

/// Neuron kernel of the frozen features with Q = diag(gamma / 2).
inline NeuronKernel neuron_kernel_for(const FeatureProblem& fp, GammaMode mode = GammaMode::per_task) {
  require(fp.neuron_weights.rows() == fp.num_features(), ErrorCode::invalid_argument,
          "feature problem carries no neuron parameters");
  NeuronKernel k{fp.neuron_weights, fp.neuron_biases, 0.5 * gamma_weights(fp, mode)};
  k.validate();
  return k;
}

/// Kernel of the active neurons of a trained net with Q = diag(gamma / 2),
/// gamma_k = 1 / |v_k| (common) or 1 / |v_{k\s}| (per task s).
inline NeuronKernel neuron_kernel_from_net(const ShallowReLUNet& trained, GammaMode mode, Eigen::Index s = 0,
                                           double threshold = -1.0) {
  const ShallowReLUNet net = unit_normalize(trained);
  if (threshold < 0.0) threshold = default_active_threshold(net);
  const auto active = active_neurons(net, threshold);
  require(!active.empty(), ErrorCode::empty_active_set,
          "no neuron has output-weight norm above " + io::format_double(threshold));
  require(s >= 0 && s < net.num_tasks(), ErrorCode::invalid_argument, "task index out of range");
  const auto Kp = static_cast<Eigen::Index>(active.size());
  NeuronKernel k{Eigen::MatrixXd(Kp, net.input_dim()), Eigen::VectorXd(Kp), Eigen::VectorXd(Kp)};
  for (Eigen::Index j = 0; j < Kp; ++j) {
    const auto idx = active[static_cast<std::size_t>(j)];
    k.weights.row(j) = net.input_weights.row(idx);
    k.biases(j) = net.biases(idx);
    double norm = net.output_weights.row(idx).norm();
    if (mode == GammaMode::per_task)
      norm = std::sqrt(std::max(0.0, norm * norm - net.output_weights(idx, s) * net.output_weights(idx, s)));
    require(norm > 0.0, ErrorCode::undefined_objective, "neuron " + std::to_string(idx) + " has zero weight outside task s");
    k.q_diag(j) = 0.5 / norm;
  }
  return k;
}

struct L1Options {
  long max_iters = 100000;
  double rel_tol = 1e-12;  // stop when the KKT residual is below rel_tol * lambda_max
  int power_iters = 50;
  double lipschitz_safety = 1.05;  // power iteration approaches the top eigenvalue from below
  bool throw_on_nonconvergence = true;
};

struct L1Result {
  Eigen::VectorXd v;
  double objective = 0.0;
  long iterations = 0;
  bool converged = false;
  double lipschitz = 0.0;
  std::vector<double> objective_trace;  // every 100 iterations
};

/// Largest eigenvalue of 2 Phi^T Phi by power iteration.
inline double lipschitz_estimate(const Eigen::MatrixXd& phi, int iters) {
  Eigen::VectorXd u = Eigen::VectorXd::Ones(phi.cols()) / std::sqrt(static_cast<double>(phi.cols()));
  double est = 0.0;
  for (int i = 0; i < iters; ++i) {
    const Eigen::VectorXd next = 2.0 * (phi.transpose() * (phi * u));
    est = next.norm();
    if (est == 0.0) return 0.0;
    u = next / est;
  }
  return est;
}

inline double l1_objective(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y, double lambda,
                           const Eigen::VectorXd& v) {
  return (y - phi * v).squaredNorm() + lambda * v.lpNorm<1>();
}

/// Largest lambda with a nonzero lasso solution: 2 |Phi^T y|_inf.
inline double lambda_max(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y) {
  return 2.0 * (phi.transpose() * y).cwiseAbs().maxCoeff();
}

inline double l1_kkt_residual(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y, double lambda,
                              const Eigen::VectorXd& v) {
  const Eigen::VectorXd g = 2.0 * phi.transpose() * (phi * v - y);
  double worst = 0.0;
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (v(k) == 0.0)
      worst = std::max(worst, std::abs(g(k)) - lambda);
    else
      worst = std::max(worst, std::abs(g(k) + lambda * (v(k) > 0 ? 1.0 : -1.0)));
  }
  return worst;
}

/// min |y - Phi v|^2 + lambda |v|_1 by FISTA with soft-thresholding and
/// function-value restart.
inline L1Result solve_l1(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y, double lambda, L1Options opt = {}) {
  require(phi.rows() == y.size(), ErrorCode::dimension_mismatch, "phi and labels disagree on N");
  require(lambda >= 0.0 && std::isfinite(lambda), ErrorCode::invalid_argument, "lambda must be finite and >= 0");
  L1Result out;
  const auto K = phi.cols();
  out.lipschitz = opt.lipschitz_safety * lipschitz_estimate(phi, opt.power_iters);
  out.v = Eigen::VectorXd::Zero(K);
  out.objective = l1_objective(phi, y, lambda, out.v);
  if (out.lipschitz == 0.0) {
    out.converged = true;
    return out;
  }
  const double step = 1.0 / out.lipschitz;
  const Eigen::VectorXd pty = phi.transpose() * y;
  const Eigen::MatrixXd gram = phi.transpose() * phi;
  Eigen::VectorXd x = out.v, z = out.v;
  double t = 1.0, f_prev = out.objective;
  const double kkt_tol = opt.rel_tol * std::max(2.0 * pty.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  for (long it = 1; it <= opt.max_iters; ++it) {
    const Eigen::VectorXd grad = 2.0 * (gram * z - pty);
    Eigen::VectorXd x_next = z - step * grad;
    const double thr = step * lambda;
    x_next = x_next.unaryExpr([thr](double a) { return a > thr ? a - thr : (a < -thr ? a + thr : 0.0); });
    const double f = l1_objective(phi, y, lambda, x_next);
    if (f > f_prev && z != x) {
      // restart momentum; the plain proximal step from x is a descent step
      t = 1.0;
      z = x;
      continue;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    z = x_next + ((t - 1.0) / t_next) * (x_next - x);
    x = std::move(x_next);
    t = t_next;
    out.iterations = it;
    if (it % 100 == 0) out.objective_trace.push_back(f);
    f_prev = f;
    if (l1_kkt_residual(phi, y, lambda, x) <= kkt_tol) {
      out.converged = true;
      break;
    }
  }
  out.v = x;
  out.objective = l1_objective(phi, y, lambda, x);
  if (!out.converged && opt.throw_on_nonconvergence) {
    std::string tail;
    const auto n = out.objective_trace.size();
    for (std::size_t i = n > 5 ? n - 5 : 0; i < n; ++i) tail += " " + io::format_double(out.objective_trace[i]);
    throw Error(ErrorCode::not_converged, "l1 solver hit " + std::to_string(opt.max_iters) +
                                              " iterations; last objectives (every 100 iterations):" + tail);
  }
  return out;
}


/// Largest violation of the lasso optimality conditions at v.

struct GapReport {
  double j_at_star;
  double j_at_prime;
  double h_at_star;  // NaN when H is undefined
  double gap;        // J(v') - J(v*)
};

inline GapReport gap_report(const FeatureProblem& fp, const Eigen::VectorXd& v_star_s, const Eigen::VectorXd& v_prime) {
  GapReport r{};
  r.j_at_star = objective_J(fp, v_star_s);
  r.j_at_prime = objective_J(fp, v_prime);
  r.h_at_star = fp.h_defined() ? objective_H(fp, v_star_s) : std::numeric_limits<double>::quiet_NaN();
  r.gap = r.j_at_prime - r.j_at_star;
  return r;
}

/// Uniform sample with |v_k| <= T^{1/16} |v*_k| per coordinate.
inline Eigen::VectorXd sample_t16_ball(const Eigen::VectorXd& v_star_s, Eigen::Index num_tasks, Rng& rng) {
  const double radius = std::pow(static_cast<double>(num_tasks), 1.0 / 16.0);
  Eigen::VectorXd v(v_star_s.size());
  for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = rng.uniform(-1.0, 1.0) * radius * std::abs(v_star_s(k));
  return v;
}

struct ExchangeabilityReport {
  double beta = 2.0 / 3.0;
  double slack = 0.10;
  Eigen::Index rows_used = 0;
  Eigen::Index rows_excluded = 0;  // zero rows of v*
  Eigen::Index infinite_ratios = 0;
  double frac_ratio_large = 0.0;   // fraction of (k, s) with r_ks >= T^-beta
  double bound_ratio_large = 0.0;  // (T^beta + 1) / T
  bool pass_ratio = false;
  double frac_subvector = 0.0;     // fraction with (1 - T^(beta-1)) |v_k|^2 <= |v_{k\s}|^2
  double bound_subvector = 0.0;    // 1 - T^-beta
  bool pass_subvector = false;
  double max_exp_one_error = 0.0;  // max_k |mean_s v_ks^2 / (mean_t v_kt^2) - 1|
};

/// Empirical check of the probability bounds that exchangeable tasks give
/// for the per-task shares of a neuron's output weights. Frequencies are
/// pooled over (k, s); `slack` is additive.
inline ExchangeabilityReport exchangeability_diagnostics(const Eigen::MatrixXd& v_star, double beta = 2.0 / 3.0,
                                                         double slack = 0.10) {
  require(beta > 0.0 && beta < 1.0, ErrorCode::invalid_argument, "beta must lie in (0, 1)");
  require(v_star.cols() >= 2, ErrorCode::invalid_argument, "exchangeability diagnostics need T >= 2");
  ExchangeabilityReport r;
  r.beta = beta;
  r.slack = slack;
  const double T = static_cast<double>(v_star.cols());
  const double thr = std::pow(T, -beta);
  long large = 0, sub = 0, count = 0;
  for (Eigen::Index k = 0; k < v_star.rows(); ++k) {
    const Eigen::ArrayXd sq = v_star.row(k).array().square().transpose();
    const double total = sq.sum();
    if (total == 0.0) {
      ++r.rows_excluded;
      continue;
    }
    ++r.rows_used;
    r.max_exp_one_error = std::max(r.max_exp_one_error, std::abs((sq / (total / T)).mean() - 1.0));
    for (Eigen::Index s = 0; s < sq.size(); ++s) {
      const double rest = std::max(0.0, total - sq(s));
      const double ratio = rest > 0.0 ? sq(s) / rest : std::numeric_limits<double>::infinity();
      if (std::isinf(ratio)) ++r.infinite_ratios;
      if (ratio >= thr) ++large;
      if ((1.0 - std::pow(T, beta - 1.0)) * total <= rest) ++sub;
      ++count;
    }
  }
  require(count > 0, ErrorCode::empty_active_set, "v_star has no nonzero rows");
  r.frac_ratio_large = static_cast<double>(large) / static_cast<double>(count);
  r.bound_ratio_large = (std::pow(T, beta) + 1.0) / T;
  r.pass_ratio = r.frac_ratio_large <= r.bound_ratio_large + slack;
  r.frac_subvector = static_cast<double>(sub) / static_cast<double>(count);
  r.bound_subvector = 1.0 - thr;
  r.pass_subvector = r.frac_subvector >= r.bound_subvector - slack;
  return r;
}

struct GammaDispersion {
  double max_rel = 0.0;     // max_{k,s} |gamma_ks - gamma_k| / gamma_k
  double median_rel = 0.0;  // median over k of max_s |gamma_ks - gamma_k| / gamma_k
};

/// Spread of the per-task weights around the common value. Neurons whose
/// rest norm vanishes for some task count as infinite dispersion.
inline GammaDispersion gamma_dispersion(const Eigen::MatrixXd& v_star) {
  std::vector<double> per_row;
  for (Eigen::Index k = 0; k < v_star.rows(); ++k) {
    const double total = v_star.row(k).squaredNorm();
    if (total == 0.0) continue;
    double worst = 0.0;
    for (Eigen::Index s = 0; s < v_star.cols(); ++s) {
      const double rest = total - v_star(k, s) * v_star(k, s);
      // |gamma_ks - gamma_k| / gamma_k = sqrt(total / rest) - 1
      worst = std::max(worst, rest > 0.0 ? std::sqrt(total / rest) - 1.0 : std::numeric_limits<double>::infinity());
    }
    per_row.push_back(worst);
  }
  GammaDispersion d;
  if (per_row.empty()) return d;
  d.max_rel = *std::max_element(per_row.begin(), per_row.end());
  std::nth_element(per_row.begin(), per_row.begin() + static_cast<std::ptrdiff_t>(per_row.size() / 2), per_row.end());
  d.median_rel = per_row[per_row.size() / 2];
  return d;
}

inline io::json to_json(const GapReport& g) {
  return {{"j_at_star", g.j_at_star},
          {"j_at_prime", g.j_at_prime},
          {"h_at_star", std::isnan(g.h_at_star) ? io::json(nullptr) : io::json(g.h_at_star)},
          {"gap", g.gap}};
}

inline io::json to_json(const ExchangeabilityReport& r) {
  return {{"beta", r.beta},
          {"slack", r.slack},
          {"rows_used", r.rows_used},
          {"rows_excluded", r.rows_excluded},
          {"infinite_ratios", r.infinite_ratios},
          {"frac_ratio_large", r.frac_ratio_large},
          {"bound_ratio_large", r.bound_ratio_large},
          {"pass_ratio", r.pass_ratio},
          {"frac_subvector", r.frac_subvector},
          {"bound_subvector", r.bound_subvector},
          {"pass_subvector", r.pass_subvector},
          {"max_exp_one_error", r.max_exp_one_error}};
}

}  // namespace mtlrelu
