#pragma once

// Property sweeps behind the acceptance criteria. Each returns counts and
// worst-case values; the caller decides pass/fail at the stated tolerance.

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>

#include "mtlrelu/cpwl.hpp"
#include "mtlrelu/kernel.hpp"
#include "mtlrelu/mtl_analysis.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

namespace mtlrelu::testing {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

struct KnotRemovalSweep {
  long samples = 0;
  double worst_decrease = 0.0;  // max(cost_without - cost_with), should stay <= 1e-12
  long equality_cases = 0;
  double worst_equality_gap = 0.0;  // max |cost_with - cost_without| over constructed equality cases
};

/// Random (a, b, c, delta, tau) with T cycling through {1, 2, 5}, plus one
/// constructed equality case per sample: a - b and b - c along a common
/// direction u, delta = r u with r below the bound.
inline KnotRemovalSweep knot_removal_sweep(Rng& rng, long samples) {
  KnotRemovalSweep out;
  const Eigen::Index dims[] = {1, 2, 5};
  for (long i = 0; i < samples; ++i) {
    const auto T = dims[i % 3];
    const Eigen::VectorXd a = normal_vector(rng, T), b = normal_vector(rng, T), c = normal_vector(rng, T);
    const Eigen::VectorXd delta = normal_vector(rng, T, std::exp(rng.uniform(-3.0, 1.0)));
    const double tau = rng.uniform(0.01, 0.99);
    const auto r = knot_removal_delta(a, b, c, delta, tau);
    out.worst_decrease = std::max(out.worst_decrease, r.cost_without_knot - r.cost_with_knot);
    ++out.samples;

    const Eigen::VectorXd u = normal_vector(rng, T).normalized();
    const double p = rng.uniform(0.1, 2.0), q = rng.uniform(0.1, 2.0);
    const Eigen::VectorXd b2 = normal_vector(rng, T);
    const Eigen::VectorXd a2 = b2 + p * u, c2 = b2 - q * u;
    const double bound = std::min(p, (1.0 - tau) / tau * q);
    const auto e = knot_removal_delta(a2, b2, c2, rng.uniform(0.0, 1.0) * bound * u, tau);
    out.worst_equality_gap = std::max(out.worst_equality_gap, std::abs(e.cost_with_knot - e.cost_without_knot));
    ++out.equality_cases;
  }
  return out;
}

struct OptimalitySweep {
  long datasets = 0;
  long interpolants = 0;
  long cost_violations = 0;     // R(g) < R(f_D) beyond rounding
  long strict_expected = 0;
  long strict_failures = 0;     // expected strict but gap <= 1e-8
  double min_strict_gap = std::numeric_limits<double>::infinity();
  long equal_cost_found = 0;
  long equal_cost_unique_mismatch = 0;  // equal-cost g differing from f_D on a unique dataset
  long non_uniqueness_witnesses = 0;    // equal-cost g differing from f_D on a non-unique dataset
};

/// Sup distance between two CPWLs on a grid over [lo, hi] plus the
/// extrapolation slopes (which decide agreement outside the interval).
inline double sup_distance(const CPWLFunction& f, const CPWLFunction& g, double lo, double hi, int points = 1000) {
  const Eigen::VectorXd xs = Eigen::VectorXd::LinSpaced(points, lo, hi);
  return (evaluate(f, xs) - evaluate(g, xs)).cwiseAbs().maxCoeff();
}

/// For random datasets (N in 4..8, T in 1..4) compares R(f_D) against
/// structured perturbations of f_D. A perturbation is expected to cost
/// strictly more unless every bumped interval satisfies the alignment
/// condition and no tail was changed.
inline OptimalitySweep optimality_sweep(Rng& rng, long datasets, int perturbations_per_dataset) {
  OptimalitySweep out;
  for (long d = 0; d < datasets; ++d) {
    const auto N = static_cast<Eigen::Index>(4 + rng.below(5));
    const auto T = static_cast<Eigen::Index>(1 + rng.below(4));
    const auto data = random_univariate(rng, N, T);
    const auto fd = connect_the_dots(data);
    const double rd = representational_cost(fd);
    const bool unique = uniqueness_report(data).verdict == Verdict::unique;
    const double x1 = data.inputs()(0, 0), xn = data.inputs()(N - 1, 0);
    ++out.datasets;
    for (int p = 0; p < perturbations_per_dataset; ++p) {
      const auto pert = perturb(data, rng, p % 4);
      const double rg = representational_cost(pert.function);
      ++out.interpolants;
      if (rg < rd - 1e-12 * (1.0 + rd)) ++out.cost_violations;
      bool strict = pert.tails;
      for (auto i : pert.intervals) strict = strict || !interval_alignment_holds(data, i);
      if (strict) {
        ++out.strict_expected;
        out.min_strict_gap = std::min(out.min_strict_gap, rg - rd);
        if (rg - rd <= 1e-8) ++out.strict_failures;
      }
      if (rg <= rd + 1e-12 * (1.0 + rd)) {
        ++out.equal_cost_found;
        const double span = xn - x1;
        const bool same = sup_distance(fd, pert.function, x1 - span, xn + span) <= 1e-8;
        if (unique && !same) ++out.equal_cost_unique_mismatch;
        if (!unique && !same) ++out.non_uniqueness_witnesses;
      }
    }
  }
  return out;
}

struct SobolevSweep {
  long fits = 0;
  double worst_scaled_error = 0.0;  // max |k-interpolant - f_D| / label scale
};

inline SobolevSweep sobolev_sweep(Rng& rng, long datasets) {
  SobolevSweep out;
  for (long d = 0; d < datasets; ++d) {
    const auto N = static_cast<Eigen::Index>(2 + rng.below(9));
    const auto T = static_cast<Eigen::Index>(1 + rng.below(3));
    const auto data = random_univariate(rng, N, T);
    const auto fd = connect_the_dots(data);
    const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(1000, data.inputs()(0, 0), data.inputs()(N - 1, 0));
    const Eigen::MatrixXd ref = evaluate(fd, grid);
    for (Eigen::Index t = 0; t < T; ++t) {
      const auto model = kernel_interpolate(sobolev_for(data), data, t);
      const Eigen::VectorXd pred = predict_batch(model, grid);
      const double scale = std::max(data.labels().col(t).cwiseAbs().maxCoeff(), 1e-300);
      out.worst_scaled_error = std::max(out.worst_scaled_error, (pred - ref.col(t)).cwiseAbs().maxCoeff() / scale);
      ++out.fits;
    }
  }
  return out;
}

struct GradientSweep {
  long instances = 0;
  double worst_rel_error = 0.0;
};

inline GradientSweep gradient_sweep(Rng& rng, long instances) {
  GradientSweep out;
  for (long i = 0; i < instances; ++i) {
    const auto [net, x, y] = random_smooth_instance(rng, 1e-3);
    const double lambda = rng.uniform(0.0, 0.5);
    const auto chk = gradient_check(net, x, y, lambda, i % 2 == 0 ? LossForm::mean : LossForm::sum);
    out.worst_rel_error = std::max(out.worst_rel_error, chk.rel_error);
    ++out.instances;
  }
  return out;
}

/// Random neuron kernel, inputs, labels and lambda.
struct DualityInstance {
  NeuronKernel kernel;
  Eigen::MatrixXd inputs;
  Eigen::VectorXd y;
  double lambda;
};

inline DualityInstance random_duality_instance(Rng& rng) {
  const auto K = static_cast<Eigen::Index>(1 + rng.below(30));
  const auto d = static_cast<Eigen::Index>(1 + rng.below(4));
  const auto N = static_cast<Eigen::Index>(2 + rng.below(15));
  NeuronKernel k{normal_matrix(rng, K, d), normal_vector(rng, K), Eigen::VectorXd(K)};
  for (Eigen::Index j = 0; j < K; ++j) k.q_diag(j) = std::exp(rng.uniform(-2.0, 2.0));
  return {k, normal_matrix(rng, N, d), normal_vector(rng, N), std::exp(rng.uniform(std::log(1e-3), std::log(10.0)))};
}

struct DualitySweep {
  long instances = 0;
  double worst_rel_diff = 0.0;
};

/// v' from the weighted-l2 normal equations (gamma = 2 Q) against
/// Q^{-1} Phi^T alpha from kernel ridge.
inline DualitySweep duality_sweep(Rng& rng, long instances) {
  DualitySweep out;
  for (long i = 0; i < instances; ++i) {
    const auto inst = random_duality_instance(rng);
    const Eigen::MatrixXd phi = inst.kernel.features_batch(inst.inputs);
    const Eigen::VectorXd direct = solve_weighted_l2(phi, inst.y, inst.lambda, 2.0 * inst.kernel.q_diag);
    const Eigen::VectorXd dual = neuron_output_weights(kernel_ridge(inst.kernel, inst.inputs, inst.y, inst.lambda));
    const double scale = std::max(direct.norm(), 1e-300);
    out.worst_rel_diff = std::max(out.worst_rel_diff, (direct - dual).norm() / scale);
    ++out.instances;
  }
  return out;
}

struct LassoSweep {
  long instances = 0;
  double worst_kkt = 0.0;
  long zero_checks = 0;
  long zero_failures = 0;
};

inline LassoSweep lasso_sweep(Rng& rng, long instances) {
  LassoSweep out;
  for (long i = 0; i < instances; ++i) {
    const auto N = static_cast<Eigen::Index>(5 + rng.below(20));
    const auto K = static_cast<Eigen::Index>(1 + rng.below(20));
    const Eigen::MatrixXd phi = normal_matrix(rng, N, K);
    const Eigen::VectorXd y = normal_vector(rng, N);
    const double lmax = lambda_max(phi, y);
    const double lambda = rng.uniform(0.01, 0.9) * lmax;
    const auto res = solve_l1(phi, y, lambda);
    out.worst_kkt = std::max(out.worst_kkt, l1_kkt_residual(phi, y, lambda, res.v));
    ++out.instances;
    const auto zero = solve_l1(phi, y, lmax * rng.uniform(1.0001, 3.0));
    ++out.zero_checks;
    if (zero.v.cwiseAbs().maxCoeff() != 0.0) ++out.zero_failures;
  }
  return out;
}

/// Largest |mean_s v_ks^2 / (T^-1 sum_t v_kt^2) - 1| over random matrices
/// with widely varying row scales and some zero entries.
inline double exp_one_sweep(Rng& rng, long matrices) {
  double worst = 0.0;
  for (long i = 0; i < matrices; ++i) {
    const auto K = static_cast<Eigen::Index>(1 + rng.below(20));
    const auto T = static_cast<Eigen::Index>(2 + rng.below(100));
    Eigen::MatrixXd v = normal_matrix(rng, K, T);
    for (Eigen::Index k = 0; k < K; ++k) v.row(k) *= std::exp(rng.uniform(-20.0, 20.0));
    for (Eigen::Index k = 0; k < K; ++k)
      if (rng.uniform() < 0.2) v(k, static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(T)))) = 0.0;
    worst = std::max(worst, exchangeability_diagnostics(v).max_exp_one_error);
  }
  return worst;
}

}  // namespace mtlrelu::testing
