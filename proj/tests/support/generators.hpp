#pragma once

// Random instances and structured interpolant perturbations shared by the
// unit tests and the acceptance runner.

#include <Eigen/Dense>
#include <algorithm>
#include <vector>

#include "mtlrelu/cpwl.hpp"
#include "mtlrelu/dataset.hpp"
#include "mtlrelu/network.hpp"
#include "mtlrelu/rng.hpp"

namespace mtlrelu::testing {

inline Eigen::VectorXd normal_vector(Rng& rng, Eigen::Index n, double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

inline Eigen::MatrixXd normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

/// Sorted x with gaps in [0.5, 1.5) starting near 0, Gaussian labels.
inline MultiTaskDataset random_univariate(Rng& rng, Eigen::Index n, Eigen::Index tasks) {
  Eigen::MatrixXd x(n, 1);
  double pos = rng.uniform(-1.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = pos;
    pos += rng.uniform(0.5, 1.5);
  }
  return MultiTaskDataset(x, normal_matrix(rng, n, tasks));
}

inline ShallowReLUNet random_net(Rng& rng, Eigen::Index width, Eigen::Index dim, Eigen::Index tasks) {
  ShallowReLUNet net(width, dim, tasks);
  net.input_weights = normal_matrix(rng, width, dim);
  net.biases = normal_vector(rng, width);
  net.output_weights = normal_matrix(rng, width, tasks);
  net.residual_matrix = normal_matrix(rng, tasks, dim);
  net.residual_offset = normal_vector(rng, tasks);
  return net;
}

/// Node form of the connect-the-dots interpolant.
inline NodeFunction ctd_nodes(const MultiTaskDataset& data) {
  NodeFunction g;
  for (Eigen::Index i = 0; i < data.num_points(); ++i) {
    g.xs.push_back(data.inputs()(i, 0));
    g.values.push_back(data.labels().row(i).transpose());
  }
  g.left_slope = g.segment_slope(0);
  g.right_slope = g.segment_slope(g.xs.size() - 2);
  return g;
}

/// Inserts a node at x_i + tau (x_{i+1} - x_i) (0-based interval i of the
/// data) so the slope just left of it becomes b + delta, where b is the
/// secant slope of the interval. The result still interpolates.
inline void add_interval_bump(NodeFunction& g, const MultiTaskDataset& data, Eigen::Index interval, double tau,
                              const Eigen::VectorXd& delta) {
  const double x0 = data.inputs()(interval, 0), x1 = data.inputs()(interval + 1, 0);
  const Eigen::VectorXd y0 = data.labels().row(interval).transpose();
  const Eigen::VectorXd y1 = data.labels().row(interval + 1).transpose();
  const double h = x1 - x0;
  const Eigen::VectorXd b = (y1 - y0) / h;
  const double xm = x0 + tau * h;
  const Eigen::VectorXd ym = y0 + tau * h * (b + delta);
  const auto it = std::upper_bound(g.xs.begin(), g.xs.end(), xm);
  const auto pos = it - g.xs.begin();
  g.xs.insert(it, xm);
  g.values.insert(g.values.begin() + pos, ym);
}

/// Replaces the left extrapolation by a node at x_1 - offset with the given
/// slope beyond it; changes nothing on [x_1, x_N].
inline void add_left_tail(NodeFunction& g, double offset, const Eigen::VectorXd& slope_mid,
                          const Eigen::VectorXd& slope_far) {
  const double x = g.xs.front() - offset;
  g.values.insert(g.values.begin(), g.values.front() - offset * slope_mid);
  g.xs.insert(g.xs.begin(), x);
  g.left_slope = slope_far;
}

inline void add_right_tail(NodeFunction& g, double offset, const Eigen::VectorXd& slope_mid,
                           const Eigen::VectorXd& slope_far) {
  g.values.push_back(g.values.back() + offset * slope_mid);
  g.xs.push_back(g.xs.back() + offset);
  g.right_slope = slope_far;
}

/// Secant slope s of 0-based interval i; out-of-range intervals take the
/// extrapolation slope of f_D, which equals the nearest secant.
inline Eigen::VectorXd secant(const MultiTaskDataset& data, Eigen::Index i) {
  i = std::clamp<Eigen::Index>(i, 0, data.num_points() - 2);
  return ((data.labels().row(i + 1) - data.labels().row(i)) / (data.inputs()(i + 1, 0) - data.inputs()(i, 0)))
      .transpose();
}

/// True when a - b and b - c are both nonzero and aligned for the slopes
/// around interval i, i.e. a knot can be inserted there at no cost.
inline bool interval_alignment_holds(const MultiTaskDataset& data, Eigen::Index i, double cos_tol = 1e-9) {
  const Eigen::VectorXd a = secant(data, i - 1), b = secant(data, i), c = secant(data, i + 1);
  if (i == 0 || i == data.num_points() - 2) return false;  // the outer slope equals b
  const Eigen::VectorXd u1 = a - b, u2 = b - c;
  const double scale = 1e-9 * std::max(1.0, data.labels().cwiseAbs().maxCoeff());
  return u1.norm() > scale && u2.norm() > scale && aligned(u1, u2, cos_tol);
}

/// Perturbation delta with knot-removal equality for interval i (requires
/// alignment): a fraction `frac` of the largest admissible step toward a.
inline Eigen::VectorXd equality_delta(const MultiTaskDataset& data, Eigen::Index i, double tau, double frac) {
  const Eigen::VectorXd a = secant(data, i - 1), b = secant(data, i), c = secant(data, i + 1);
  const Eigen::VectorXd u = (a - b).normalized();
  const double bound = std::min((a - b).norm(), (1.0 - tau) / tau * (b - c).norm());
  return frac * bound * u;
}

struct Perturbed {
  CPWLFunction function;
  std::vector<Eigen::Index> intervals;  // 0-based data intervals that received a bump
  bool tails = false;                   // extrapolation changed
};

/// One structured perturbation of f_D: kind 0 bumps one interval, kind 1
/// bumps two, kind 2 changes an extrapolation tail, kind 3 combines a bump
/// with a tail.
inline Perturbed perturb(const MultiTaskDataset& data, Rng& rng, int kind) {
  NodeFunction g = ctd_nodes(data);
  Perturbed p;
  const auto T = data.num_tasks();
  const auto intervals = data.num_points() - 1;
  auto bump = [&] {
    const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(intervals)));
    if (std::find(p.intervals.begin(), p.intervals.end(), i) != p.intervals.end()) return;
    add_interval_bump(g, data, i, rng.uniform(0.05, 0.95), normal_vector(rng, T));
    p.intervals.push_back(i);
  };
  auto tail = [&] {
    const double off = rng.uniform(0.1, 2.0);
    if (rng.bernoulli())
      add_left_tail(g, off, secant(data, 0) + normal_vector(rng, T, 0.5), normal_vector(rng, T));
    else
      add_right_tail(g, off, secant(data, intervals - 1) + normal_vector(rng, T, 0.5), normal_vector(rng, T));
    p.tails = true;
  };
  switch (kind) {
    case 0: bump(); break;
    case 1: bump(); bump(); break;
    case 2: tail(); break;
    default: bump(); tail(); break;
  }
  p.function = to_cpwl(g);
  return p;
}

}  // namespace mtlrelu::testing
